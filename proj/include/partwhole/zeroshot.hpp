#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "partwhole/model.hpp"
#include "partwhole/stats.hpp"
#include "partwhole/synthgen.hpp"

namespace partwhole {

struct LandmarkEmbedding {
  int class_id = 0;
  int subject_id = 0;
  int level = 1;
  std::vector<float> embedding;
};

struct LandmarkEmbeddingSet {
  std::vector<LandmarkEmbedding> entries;
};

/// Frozen teacher embedding of a square patch centered on (cx, cy), resized to
/// the encoder input size.
std::vector<float> embed_patch(const Encoder& encoder, const Image& image, int cx, int cy, int side);

/// One entry per (image, landmark, level). Level l uses a patch of side
/// patch_size / 2^(l - 1).
LandmarkEmbeddingSet extract_landmark_embeddings(const Encoder& encoder, const std::vector<LabeledImage>& images,
                                                 int patch_size, const std::vector<int>& levels);

struct ClusterStats {
  std::map<int, Summary> per_class;  // pairwise Euclidean distances within each class
  std::map<int, std::vector<double>> distances;
  double silhouette = 0.0;
  bool degenerate = false;

  nlohmann::json to_json() const;
};

/// Throws PreconditionError naming any class with fewer than two entries.
ClusterStats intra_cluster_stats(const LandmarkEmbeddingSet& set);

/// Mean distance between the level-a and level-b embeddings of the same
/// (subject, landmark).
double cross_level_distance(const LandmarkEmbeddingSet& set, int level_a, int level_b);

struct SimilarityDistribution {
  std::string grouping;
  std::vector<double> values;

  Summary summary() const { return summarize(values); }
  nlohmann::json to_json() const;
};

struct CompositionOptions {
  std::vector<int> parts_options{2, 3, 4};
  int trials = 200;
  double part_jitter = 0.2;
  double min_whole_fraction = 0.25;  // whole side drawn from [fraction * S, S]
  std::uint64_t seed = 0;
};

/// cosine(teacher(whole), compose(teacher(parts))) for random wholes. Part
/// counts below the trained n are zero-padded.
std::vector<SimilarityDistribution> composition_similarity(const ModelState& model,
                                                           const std::vector<LabeledImage>& images,
                                                           const CompositionOptions& options);

struct InterpolationOptions {
  std::vector<double> t_values{0.25, 0.5, 0.75};
  int trials = 200;
  int patch_size = 64;
  std::uint64_t seed = 0;
};

struct InterpolationResult {
  std::vector<SimilarityDistribution> interpolation;
  std::vector<SimilarityDistribution> extrapolation;
};

InterpolationResult interpolate_extrapolate(const Encoder& encoder, const std::vector<LabeledImage>& images,
                                            const InterpolationOptions& options);

struct MatchPoint {
  int class_id = 0;
  int x = 0;
  int y = 0;

  friend bool operator==(const MatchPoint&, const MatchPoint&) = default;
};

/// Every window origin (multiples of stride, plus none past side - window)
/// scanned in (y, x) order.
std::vector<std::pair<int, int>> window_origins(int side, int window, int stride);

/// For each query point, the center of the key window whose embedding is
/// closest in L2 to the query patch embedding. Ties keep the smallest (y, x).
/// When `points` is empty the query's labeled landmarks are used.
std::vector<MatchPoint> match_landmarks(const Encoder& encoder, const LabeledImage& query, const Image& key,
                                        int window = 96, int stride = 16,
                                        const std::vector<MatchPoint>& points = {});

}  // namespace partwhole
