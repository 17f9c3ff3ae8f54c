#include "partwhole/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "partwhole/error.hpp"
#include "partwhole/io.hpp"
#include "partwhole/rng.hpp"

namespace partwhole {

void SceneSpec::validate() const {
  require(image_size >= 64, "image_size", "must be >= 64");
  require(structure_depth >= 1 && structure_depth <= 6, "structure_depth", "must be in [1, 6]");
  require(image_size % (1 << structure_depth) == 0, "image_size",
          "must be divisible by 2^structure_depth");
  require(n_landmark_classes >= 2, "n_landmark_classes", "must be >= 2");
  require(n_landmark_classes <= 16, "n_landmark_classes", "must be <= 16");
  require(noise_level >= 0.0 && noise_level <= 1.0, "noise_level", "must be in [0, 1]");
}

const Landmark& LabeledImage::landmark(int class_id) const {
  for (const auto& l : landmarks)
    if (l.class_id == class_id) return l;
  throw PreconditionError("class_id", "no landmark of class " + std::to_string(class_id));
}

namespace {

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

struct Box {
  double cx, cy, hw, hh;
  bool contains(double x, double y) const { return std::abs(x - cx) <= hw && std::abs(y - cy) <= hh; }
};

// Canonical landmark positions relative to the body center, in units of the
// image side. Classes fill a near-square grid row by row.
std::vector<std::pair<double, double>> canonical_layout(int n) {
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  std::vector<std::pair<double, double>> out;
  for (int c = 0; c < n; ++c) {
    const int r = c / cols;
    const int k = c % cols;
    const double fx = cols == 1 ? 0.0 : -0.3 + 0.6 * k / (cols - 1);
    const double fy = rows == 1 ? 0.0 : -0.32 + 0.64 * r / (rows - 1);
    out.emplace_back(fx, fy);
  }
  return out;
}

// Class-specific texture of a landmark feature; value at offset (dx, dy) from
// the feature center, or negative when outside the feature footprint.
double feature_value(int class_id, int n_classes, double dx, double dy, double radius, double scale) {
  const bool square = class_id % 2 == 1;
  const bool inside = square ? (std::abs(dx) <= radius * 0.9 && std::abs(dy) <= radius * 0.9)
                             : (dx * dx + dy * dy <= radius * radius);
  if (!inside) return -1.0;
  const double theta = std::numbers::pi * class_id / n_classes;
  const double period = (6.0 + 2.0 * (class_id % 3)) * scale;
  const double u = dx * std::cos(theta) + dy * std::sin(theta);
  const double base = 0.35 + 0.5 * static_cast<double>((class_id * 3) % n_classes) / (n_classes - 1);
  return std::clamp(base + 0.3 * std::sin(2.0 * std::numbers::pi * u / period), 0.0, 1.0);
}

LabeledImage render_subject(const SceneSpec& spec, int index) {
  const int S = spec.image_size;
  const double s = S;
  const double scale = s / 224.0;
  Rng rng(Rng::mix(spec.seed * 0x100000001b3ULL + static_cast<std::uint64_t>(index)));

  const double shift_x = rng.uniform(-0.015, 0.015) * s;
  const double shift_y = rng.uniform(-0.015, 0.015) * s;
  const double zoom = rng.uniform(0.98, 1.02);
  const double cx = s / 2.0 + shift_x;
  const double cy = s / 2.0 + shift_y;
  auto place = [&](double fx, double fy) { return std::pair{cx + fx * s * zoom, cy + fy * s * zoom}; };

  const Ellipse body{cx, cy, 0.42 * s * zoom, 0.46 * s * zoom};
  const auto [llx, lly] = place(-0.2, -0.05);
  const auto [rlx, rly] = place(0.2, -0.05);
  const auto [hx, hy] = place(0.05, 0.14);
  const auto [spx, spy] = place(0.0, 0.0);
  const std::vector<Ellipse> lungs{{llx, lly, 0.13 * s * zoom, 0.28 * s * zoom},
                                   {rlx, rly, 0.13 * s * zoom, 0.28 * s * zoom}};
  const Ellipse heart{hx, hy, 0.12 * s * zoom, 0.10 * s * zoom};
  const Box spine{spx, spy, 0.03 * s * zoom, 0.40 * s * zoom};
  const bool organs = spec.structure_depth >= 2;
  const bool fine_detail = spec.structure_depth >= 4;
  const double rib_period = s / (1 << spec.structure_depth) * 2.0;

  const auto layout = canonical_layout(spec.n_landmark_classes);
  const double radius = 14.0 * scale;
  std::vector<Landmark> landmarks;
  std::vector<std::pair<double, double>> feature_centers;
  for (int c = 0; c < spec.n_landmark_classes; ++c) {
    auto [px, py] = place(layout[c].first, layout[c].second);
    px += rng.uniform(-0.008, 0.008) * s;
    py += rng.uniform(-0.008, 0.008) * s;
    const int ix = std::clamp(static_cast<int>(std::lround(px)), 1, S - 2);
    const int iy = std::clamp(static_cast<int>(std::lround(py)), 1, S - 2);
    landmarks.push_back({c, ix, iy});
    feature_centers.emplace_back(ix, iy);
  }

  const bool variant = rng.uniform() < 0.5;
  const Ellipse& host = lungs[rng.uniform() < 0.5 ? 0 : 1];
  const double nod_r = 6.0 * scale;
  const double nod_x = host.cx + rng.uniform(-0.5, 0.5) * host.rx;
  const double nod_y = host.cy + rng.uniform(-0.6, 0.6) * host.ry;

  LabeledImage out;
  out.pixels = Image(S, S, 1);
  out.organ_mask = Image(S, S, 1);
  out.subject_id = index;
  out.variant = variant;
  out.landmarks = landmarks;

  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      double v = 0.08 + 0.06 * py / s;
      bool organ = false;
      if (body.contains(px, py)) {
        v = 0.5;
        if (organs) {
          for (const auto& lung : lungs) {
            if (lung.contains(px, py)) {
              v = 0.22;
              if (fine_detail && std::fmod(py - lung.cy + 4.0 * s, rib_period) < rib_period * 0.25) v = 0.3;
              organ = true;
            }
          }
          if (spine.contains(px, py)) {
            v = 0.85;
            organ = true;
          }
          if (heart.contains(px, py)) {
            v = 0.72;
            organ = true;
          }
        }
        if (variant) {
          const double dx = px - nod_x;
          const double dy = py - nod_y;
          if (dx * dx + dy * dy <= nod_r * nod_r) v = 0.95;
        }
      }
      for (int c = 0; c < spec.n_landmark_classes; ++c) {
        const double f = feature_value(c, spec.n_landmark_classes, px - (feature_centers[c].first + 0.5),
                                       py - (feature_centers[c].second + 0.5), radius, scale);
        if (f >= 0.0) v = f;
      }
      if (spec.noise_level > 0.0) v += rng.normal(0.0, 0.1 * spec.noise_level);
      v = std::clamp(v, 0.0, 1.0);
      // Quantize to 8-bit levels so the on-disk corpus round-trips exactly.
      out.pixels.at(y, x) = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
      out.organ_mask.at(y, x) = organ ? 1.0f : 0.0f;
    }
  }
  return out;
}

}  // namespace

std::vector<LabeledImage> generate_corpus(const SceneSpec& spec, int count) {
  spec.validate();
  require(count >= 1, "count", "must be >= 1");
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(render_subject(spec, i));
  return out;
}

long Padding::padded_pixels(int size) const {
  const long inner_w = std::max(0, size - left - right);
  const long inner_h = std::max(0, size - top - bottom);
  return static_cast<long>(size) * size - inner_w * inner_h;
}

Patch render_patch(const Image& image, int center_x, int center_y, int size) {
  require(size > 0, "size", "must be positive");
  require(!image.empty(), "image", "must be non-empty");
  Patch p;
  p.window = Rect{center_x - size / 2, center_y - size / 2, size, size};
  const Rect inside = intersect(p.window, Rect{0, 0, image.width, image.height});
  require(inside.area() > 0, "center", "window does not overlap the image");
  p.padding.left = std::clamp(-p.window.x, 0, size);
  p.padding.top = std::clamp(-p.window.y, 0, size);
  p.padding.right = std::clamp(p.window.x + size - image.width, 0, size);
  p.padding.bottom = std::clamp(p.window.y + size - image.height, 0, size);
  p.image = crop_replicate(image, p.window);
  return p;
}

namespace {

std::string image_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05d.pgm", i);
  return buf;
}

std::string mask_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "mask_%05d.pgm", i);
  return buf;
}

}  // namespace

void write_corpus(const std::filesystem::path& dir, const SceneSpec& spec,
                  const std::vector<LabeledImage>& images) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema"] = 1;
  manifest["spec"] = {{"image_size", spec.image_size},
                      {"n_landmark_classes", spec.n_landmark_classes},
                      {"structure_depth", spec.structure_depth},
                      {"noise_level", spec.noise_level},
                      {"seed", spec.seed}};
  auto& samples = manifest["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    write_pnm(dir / image_name(static_cast<int>(i)), im.pixels);
    write_pnm(dir / mask_name(static_cast<int>(i)), im.organ_mask);
    nlohmann::json lm = nlohmann::json::array();
    for (const auto& l : im.landmarks) lm.push_back({l.class_id, l.x, l.y});
    samples.push_back({{"file", image_name(static_cast<int>(i))},
                       {"mask", mask_name(static_cast<int>(i))},
                       {"subject_id", im.subject_id},
                       {"variant", im.variant},
                       {"landmarks", lm}});
  }
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw PreconditionError("corpus", "no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(is);
  Corpus corpus;
  const auto& sp = manifest.at("spec");
  corpus.spec.image_size = sp.at("image_size").get<int>();
  corpus.spec.n_landmark_classes = sp.at("n_landmark_classes").get<int>();
  corpus.spec.structure_depth = sp.at("structure_depth").get<int>();
  corpus.spec.noise_level = sp.at("noise_level").get<double>();
  corpus.spec.seed = sp.at("seed").get<std::uint64_t>();
  for (const auto& s : manifest.at("samples")) {
    LabeledImage im;
    im.pixels = read_pnm(dir / s.at("file").get<std::string>());
    if (s.contains("mask")) im.organ_mask = read_pnm(dir / s.at("mask").get<std::string>());
    im.subject_id = s.at("subject_id").get<int>();
    im.variant = s.value("variant", false);
    for (const auto& l : s.at("landmarks"))
      im.landmarks.push_back({l.at(0).get<int>(), l.at(1).get<int>(), l.at(2).get<int>()});
    std::sort(im.landmarks.begin(), im.landmarks.end(),
              [](const Landmark& a, const Landmark& b) { return a.class_id < b.class_id; });
    corpus.images.push_back(std::move(im));
  }
  require(!corpus.images.empty(), "corpus", "manifest lists no samples");
  return corpus;
}

}  // namespace partwhole
