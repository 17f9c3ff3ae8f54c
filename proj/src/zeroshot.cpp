#include "partwhole/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "partwhole/data.hpp"
#include "partwhole/error.hpp"
#include "partwhole/rng.hpp"

namespace partwhole {

std::vector<float> embed_patch(const Encoder& encoder, const Image& image, int cx, int cy, int side) {
  const Patch patch = render_patch(image, cx, cy, side);
  const int g = encoder.config.input_size;
  if (side == g) return encode(encoder, patch.image);
  return encode(encoder, resize_bilinear(patch.image, g, g));
}

LandmarkEmbeddingSet extract_landmark_embeddings(const Encoder& encoder, const std::vector<LabeledImage>& images,
                                                 int patch_size, const std::vector<int>& levels) {
  require(!levels.empty(), "levels", "must be non-empty");
  for (int l : levels) require(l >= 1 && patch_size >> (l - 1) >= 1, "levels", "level must be >= 1 and leave a non-empty patch");
  LandmarkEmbeddingSet set;
  for (const auto& img : images) {
    require(!img.landmarks.empty(), "landmarks", "image " + std::to_string(img.subject_id) + " has no landmarks");
    for (const auto& lm : img.landmarks)
      for (int level : levels) {
        const int side = patch_size >> (level - 1);
        set.entries.push_back({lm.class_id, img.subject_id, level, embed_patch(encoder, img.pixels, lm.x, lm.y, side)});
      }
  }
  return set;
}

nlohmann::json ClusterStats::to_json() const {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [c, s] : per_class) classes[std::to_string(c)] = s.to_json();
  return {{"silhouette", silhouette}, {"degenerate", degenerate}, {"per_class", classes}};
}

ClusterStats intra_cluster_stats(const LandmarkEmbeddingSet& set) {
  std::map<int, std::vector<const LandmarkEmbedding*>> by_class;
  for (const auto& e : set.entries) by_class[e.class_id].push_back(&e);
  for (const auto& [c, members] : by_class)
    require(members.size() >= 2, "class " + std::to_string(c), "needs at least two entries");
  require(!set.entries.empty(), "entries", "must be non-empty");
  const std::size_t d = set.entries.front().embedding.size();
  for (const auto& e : set.entries) require(e.embedding.size() == d, "embedding", "all embeddings must share a length");

  ClusterStats out;
  for (const auto& [c, members] : by_class) {
    std::vector<double> dists;
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j)
        dists.push_back(euclidean(members[i]->embedding, members[j]->embedding));
    out.per_class[c] = summarize(dists);
    out.distances[c] = std::move(dists);
  }
  if (by_class.size() < 2) {
    out.degenerate = true;
    return out;
  }
  std::vector<std::vector<float>> points;
  std::vector<int> labels;
  for (const auto& e : set.entries) {
    points.push_back(e.embedding);
    labels.push_back(e.class_id);
  }
  const auto s = silhouette(points, labels);
  out.silhouette = s.score;
  out.degenerate = s.degenerate;
  return out;
}

double cross_level_distance(const LandmarkEmbeddingSet& set, int level_a, int level_b) {
  std::map<std::pair<int, int>, const LandmarkEmbedding*> a;
  for (const auto& e : set.entries)
    if (e.level == level_a) a[{e.subject_id, e.class_id}] = &e;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& e : set.entries) {
    if (e.level != level_b) continue;
    auto it = a.find({e.subject_id, e.class_id});
    if (it == a.end()) continue;
    total += euclidean(it->second->embedding, e.embedding);
    ++count;
  }
  require(count > 0, "levels", "no landmark has embeddings at both levels");
  return total / static_cast<double>(count);
}

nlohmann::json SimilarityDistribution::to_json() const {
  return {{"grouping", grouping}, {"summary", summary().to_json()}, {"values", values}};
}

std::vector<SimilarityDistribution> composition_similarity(const ModelState& model,
                                                           const std::vector<LabeledImage>& images,
                                                           const CompositionOptions& options) {
  require(options.trials >= 1, "trials", "must be >= 1");
  require(!images.empty(), "images", "must be non-empty");
  const int n = model.config.n_parts;
  const int d = model.config.encoder.feature_dim;
  const int g = model.config.encoder.input_size;
  std::vector<SimilarityDistribution> out;
  for (int k : options.parts_options) {
    require(k >= 1 && k <= n, "parts_options", "part counts must lie in [1, " + std::to_string(n) + "]");
    SimilarityDistribution dist{"parts=" + std::to_string(k), {}};
    // Same stream for every k so the wholes are shared across part counts.
    Rng rng(Rng::mix(options.seed));
    for (int trial = 0; trial < options.trials; ++trial) {
      const auto& img = images[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(images.size()) - 1))];
      const int s = std::min(img.pixels.width, img.pixels.height);
      const int lo = std::max(k * 2, static_cast<int>(options.min_whole_fraction * s));
      const int side = rng.uniform_int(lo, s);
      const int x = rng.uniform_int(0, img.pixels.width - side);
      const int y = rng.uniform_int(0, img.pixels.height - side);
      const Image whole = crop_replicate(img.pixels, {x, y, side, side});
      Rng part_rng = rng.split();
      const auto parts = partition_parts(whole, k, options.part_jitter, part_rng, g);
      const auto whole_embedding = encode(model.teacher.encoder, resize_bilinear(whole, g, g));
      std::vector<std::vector<float>> part_features;
      for (const auto& p : parts) part_features.push_back(encode(model.teacher.encoder, p.image));
      const auto aggregate = compose_padded(model.student.comp_head, part_features, d);
      dist.values.push_back(cosine(whole_embedding, aggregate));
    }
    out.push_back(std::move(dist));
  }
  return out;
}

namespace {

std::string t_label(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "t=%g", t);
  return buf;
}

int clamp_coord(double v, int size) {
  return std::clamp(static_cast<int>(std::lround(v)), 0, size - 1);
}

}  // namespace

InterpolationResult interpolate_extrapolate(const Encoder& encoder, const std::vector<LabeledImage>& images,
                                            const InterpolationOptions& options) {
  require(options.trials >= 1, "trials", "must be >= 1");
  require(!images.empty(), "images", "must be non-empty");
  InterpolationResult out;
  for (double t : options.t_values) {
    out.interpolation.push_back({t_label(t), {}});
    out.extrapolation.push_back({t_label(t), {}});
  }
  Rng rng(Rng::mix(options.seed ^ 0x51ED270B27A4F3C1ULL));
  const int p = options.patch_size;
  for (int trial = 0; trial < options.trials; ++trial) {
    const auto& img = images[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(images.size()) - 1))];
    const int w = img.pixels.width;
    const int h = img.pixels.height;
    int ax, ay, bx, by;
    do {
      ax = rng.uniform_int(0, w - 1);
      ay = rng.uniform_int(0, h - 1);
      bx = rng.uniform_int(0, w - 1);
      by = rng.uniform_int(0, h - 1);
    } while (ax == bx && ay == by);
    const auto ea = embed_patch(encoder, img.pixels, ax, ay, p);
    const auto eb = embed_patch(encoder, img.pixels, bx, by, p);
    for (std::size_t ti = 0; ti < options.t_values.size(); ++ti) {
      const double t = options.t_values[ti];
      // C = A + t (B - A); the predicted embedding is the matching affine
      // combination, written so that t = 0 and t = 1 reproduce E_A and E_B.
      const int cx = clamp_coord(ax + t * (bx - ax), w);
      const int cy = clamp_coord(ay + t * (by - ay), h);
      std::vector<float> pred(ea.size());
      for (std::size_t i = 0; i < ea.size(); ++i)
        pred[i] = static_cast<float>((1.0 - t) * ea[i] + t * static_cast<double>(eb[i]));
      out.interpolation[ti].values.push_back(cosine(pred, embed_patch(encoder, img.pixels, cx, cy, p)));

      // D = B + t (B - A), clamped to the image.
      const int dx = clamp_coord(bx + t * (bx - ax), w);
      const int dy = clamp_coord(by + t * (by - ay), h);
      for (std::size_t i = 0; i < ea.size(); ++i)
        pred[i] = static_cast<float>((1.0 + t) * eb[i] - t * static_cast<double>(ea[i]));
      out.extrapolation[ti].values.push_back(cosine(pred, embed_patch(encoder, img.pixels, dx, dy, p)));
    }
  }
  return out;
}

std::vector<std::pair<int, int>> window_origins(int side, int window, int stride) {
  require(window >= 1 && window <= side, "window", "must lie in [1, image side]");
  require(stride >= 1, "stride", "must be >= 1");
  std::vector<int> starts;
  for (int s = 0; s + window <= side; s += stride) starts.push_back(s);
  std::vector<std::pair<int, int>> out;
  for (int y : starts)
    for (int x : starts) out.emplace_back(y, x);
  return out;
}

std::vector<MatchPoint> match_landmarks(const Encoder& encoder, const LabeledImage& query, const Image& key,
                                        int window, int stride, const std::vector<MatchPoint>& points) {
  require(key.width == key.height, "key", "must be square");
  std::vector<MatchPoint> targets = points;
  if (targets.empty()) {
    require(!query.landmarks.empty(), "query", "has no landmarks");
    for (const auto& lm : query.landmarks) targets.push_back({lm.class_id, lm.x, lm.y});
  }
  const auto origins = window_origins(key.width, window, stride);
  const int g = encoder.config.input_size;
  std::vector<std::vector<float>> key_embeddings;
  key_embeddings.reserve(origins.size());
  for (const auto& [y, x] : origins) {
    Image view = crop_replicate(key, {x, y, window, window});
    if (window != g) view = resize_bilinear(view, g, g);
    key_embeddings.push_back(encode(encoder, view));
  }
  std::vector<MatchPoint> out;
  for (const auto& q : targets) {
    const auto e = embed_patch(encoder, query.pixels, q.x, q.y, window);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < origins.size(); ++i) {
      const double dist = euclidean(e, key_embeddings[i]);
      if (dist < best) {
        best = dist;
        best_i = i;
      }
    }
    out.push_back({q.class_id, origins[best_i].second + window / 2, origins[best_i].first + window / 2});
  }
  return out;
}

}  // namespace partwhole
