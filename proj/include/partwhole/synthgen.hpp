#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "partwhole/image.hpp"

namespace partwhole {

/// Parameters of the synthetic "structured anatomy" scene family.
struct SceneSpec {
  int image_size = 224;
  int n_landmark_classes = 10;
  int structure_depth = 3;
  double noise_level = 0.02;
  std::uint64_t seed = 0;

  /// Throws PreconditionError naming the first invalid field.
  void validate() const;
};

struct Landmark {
  int class_id = 0;
  int x = 0;
  int y = 0;

  friend bool operator==(const Landmark&, const Landmark&) = default;
};

struct LabeledImage {
  Image pixels;
  std::vector<Landmark> landmarks;  // sorted by class_id, one per class
  int subject_id = 0;
  Image organ_mask;                 // 1 inside organ regions, 0 elsewhere
  bool variant = false;             // nodule present (classification target)

  const Landmark& landmark(int class_id) const;
};

/// Renders `count` images. Image i depends only on (spec, i), so a prefix of a
/// larger corpus is identical to a smaller one.
std::vector<LabeledImage> generate_corpus(const SceneSpec& spec, int count);

struct Padding {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;
  std::string policy = "replicate";

  long padded_pixels(int size) const;
};

struct Patch {
  Image image;
  Rect window;  // requested window in source coordinates
  Padding padding;
};

/// size x size window whose pixel (size/2, size/2) is the source pixel at
/// `center`; out-of-bounds pixels replicate the nearest edge.
Patch render_patch(const Image& image, int center_x, int center_y, int size);

struct Corpus {
  SceneSpec spec;
  std::vector<LabeledImage> images;
};

/// One PGM per image plus one per organ mask, and `manifest.json`.
void write_corpus(const std::filesystem::path& dir, const SceneSpec& spec,
                  const std::vector<LabeledImage>& images);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace partwhole
