#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "partwhole/image.hpp"
#include "partwhole/rng.hpp"
#include "partwhole/synthgen.hpp"

namespace partwhole {

/// Parameters of the stochastic view transform (color jitter, blur, rotation).
struct AugmentConfig {
  double jitter_strength = 0.4;
  double blur_sigma_min = 0.0;
  double blur_sigma_max = 1.0;
  double rotation_range = 10.0;  // degrees, symmetric

  void validate() const;
  static AugmentConfig identity() { return {0.0, 0.0, 0.0, 0.0}; }
};

struct Crop {
  Image image;
  Rect rect;  // in global-view coordinates, before resizing
};

struct Part {
  Image image;
  Rect rect;  // in whole coordinates
};

/// One training example: a whole sampled at scale H / 2^level, its
/// multi-scale crops, and an exact-cover partition into parts.
struct AnchorSample {
  Image whole;
  int level = 0;
  Rect region;  // whole's footprint in the source image
  std::vector<Crop> crops;
  std::vector<Part> parts;
  int source_id = 0;
  std::uint64_t aug_seed = 0;  // seed of this anchor's augmentation stream
};

/// Side of the anchor whole at `level`: floor(side / 2^level).
int anchor_side(int image_side, int level);

/// Uniformly placed square whole of side floor(H / 2^level). Level 0 returns
/// the whole image.
AnchorSample sample_anchor(const Image& image, int level, Rng& rng);

/// Resizes `whole` to global_size^2 and draws `count` square crops whose side is
/// uniform in [crop_size, global_size / 2] and whose center is the view center
/// shifted by at most center_jitter * global_size per axis. Each crop is
/// resized to crop_size^2.
std::vector<Crop> multi_scale_crops(const Image& whole, int count, int crop_size, double center_jitter,
                                    Rng& rng, int global_size = 224);

/// Exact-cover partition of a width x height rectangle into n parts, ordered
/// row-major by origin. Square n (4, 9, 16) uses a jittered grid; other n use
/// recursive guillotine cuts.
std::vector<Rect> partition_rects(int width, int height, int n, double jitter, Rng& rng);

/// partition_rects applied to `whole`, each part resized to part_size^2.
std::vector<Part> partition_parts(const Image& whole, int n, double jitter, Rng& rng, int part_size = 224);

Image color_jitter(const Image& view, double contrast, double brightness);
Image gaussian_blur(const Image& view, double sigma);
/// Counterclockwise (as displayed) rotation about the image center with edge
/// replication.
Image rotate(const Image& view, double degrees);

/// Color jitter, then blur, then rotation; output has the input's shape.
Image augment(const Image& view, const AugmentConfig& config, Rng& rng);

struct SamplerConfig {
  int global_size = 224;
  int crop_size = 96;
  int crops_per_anchor = 8;
  double center_jitter = 0.125;
  int n_parts = 4;
  double part_jitter = 0.2;

  void validate() const;
};

/// Full anchor (whole, crops, parts) for one image at `level`.
AnchorSample make_anchor(const Image& image, int source_id, int level, const SamplerConfig& config,
                         Rng& rng, bool with_parts = true);

/// Iterates one epoch over a corpus in shuffled order, yielding batches of
/// anchors at a fixed level. Every anchor draws from its own child stream.
class BatchIterator {
 public:
  BatchIterator(const std::vector<LabeledImage>& images, int level, int batch_size,
                const SamplerConfig& config, Rng& rng, bool with_parts = true);

  /// False once the epoch is exhausted.
  bool next(std::vector<AnchorSample>& batch);
  int batches_per_epoch() const;

 private:
  const std::vector<LabeledImage>* images_;
  int level_;
  int batch_size_;
  SamplerConfig config_;
  Rng* rng_;
  bool with_parts_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
};

}  // namespace partwhole
