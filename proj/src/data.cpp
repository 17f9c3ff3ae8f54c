#include "partwhole/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "partwhole/error.hpp"

namespace partwhole {

void AugmentConfig::validate() const {
  require(jitter_strength >= 0.0 && jitter_strength < 1.0, "jitter_strength", "must be in [0, 1)");
  require(blur_sigma_min >= 0.0 && blur_sigma_max >= blur_sigma_min, "blur_sigma_range",
          "must satisfy 0 <= min <= max");
  require(rotation_range >= 0.0 && rotation_range <= 180.0, "rotation_range", "must be in [0, 180]");
}

void SamplerConfig::validate() const {
  require(global_size >= 16, "global_size", "must be >= 16");
  require(crop_size >= 8 && crop_size <= global_size, "crop_size", "must be in [8, global_size]");
  require(crops_per_anchor >= 1, "crops_per_anchor", "must be >= 1");
  require(center_jitter >= 0.0 && center_jitter <= 0.25, "center_jitter", "must be in [0, 0.25]");
  require(n_parts >= 1 && n_parts <= 16, "n_parts", "must be in [1, 16]");
  require(part_jitter >= 0.0 && part_jitter < 0.5, "part_jitter", "must be in [0, 0.5)");
}

int anchor_side(int image_side, int level) {
  require(level >= 0 && level < 30, "level", "must be in [0, 30)");
  return image_side >> level;
}

AnchorSample sample_anchor(const Image& image, int level, Rng& rng) {
  require(level >= 0, "level", "must be >= 0");
  const int side_limit = std::min(image.height, image.width);
  require(level < 30 && (side_limit >> level) >= 1, "level", "too large for image of side " + std::to_string(side_limit));
  AnchorSample a;
  a.level = level;
  if (level == 0) {
    a.whole = image;
    a.region = Rect{0, 0, image.width, image.height};
    return a;
  }
  const int side = side_limit >> level;
  const int x = rng.uniform_int(0, image.width - side);
  const int y = rng.uniform_int(0, image.height - side);
  a.region = Rect{x, y, side, side};
  a.whole = crop_replicate(image, a.region);
  return a;
}

std::vector<Crop> multi_scale_crops(const Image& whole, int count, int crop_size, double center_jitter,
                                    Rng& rng, int global_size) {
  require(count >= 1, "count", "must be >= 1");
  require(crop_size >= 1 && crop_size <= global_size, "crop_size", "must be in [1, global_size]");
  require(center_jitter >= 0.0, "center_jitter", "must be non-negative");
  const Image global = resize_bilinear(whole, global_size, global_size);
  const int max_side = std::max(crop_size, global_size / 2);
  std::vector<Crop> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int side = rng.uniform_int(crop_size, max_side);
    const double shift = center_jitter * global_size;
    const double cx = global_size / 2.0 + rng.uniform(-shift, shift);
    const double cy = global_size / 2.0 + rng.uniform(-shift, shift);
    const int x = std::clamp(static_cast<int>(std::lround(cx - side / 2.0)), 0, global_size - side);
    const int y = std::clamp(static_cast<int>(std::lround(cy - side / 2.0)), 0, global_size - side);
    Crop c;
    c.rect = Rect{x, y, side, side};
    c.image = resize_bilinear(crop_replicate(global, c.rect), crop_size, crop_size);
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

// Split position along an extent, jittered by up to `jitter * extent` around
// `ratio * extent`, leaving at least `lo` and `hi` pixels on either side.
int jittered_cut(int extent, double ratio, double jitter, int lo, int hi, Rng& rng) {
  const double pos = extent * (ratio + rng.uniform(-jitter, jitter));
  return std::clamp(static_cast<int>(std::lround(pos)), lo, extent - hi);
}

void guillotine(const Rect& r, int n, double jitter, Rng& rng, std::vector<Rect>& out) {
  if (n == 1) {
    out.push_back(r);
    return;
  }
  const bool vertical = r.width == r.height ? rng.uniform() < 0.5 : r.width > r.height;
  int first = n / 2;
  int second = n - first;
  if (first != second && rng.uniform() < 0.5) std::swap(first, second);
  if (vertical) {
    const int cut = jittered_cut(r.width, 0.5, jitter, first, second, rng);
    guillotine(Rect{r.x, r.y, cut, r.height}, first, jitter, rng, out);
    guillotine(Rect{r.x + cut, r.y, r.width - cut, r.height}, second, jitter, rng, out);
  } else {
    const int cut = jittered_cut(r.height, 0.5, jitter, first, second, rng);
    guillotine(Rect{r.x, r.y, r.width, cut}, first, jitter, rng, out);
    guillotine(Rect{r.x, r.y + cut, r.width, r.height - cut}, second, jitter, rng, out);
  }
}

std::vector<int> jittered_lines(int extent, int cells, double jitter, Rng& rng) {
  std::vector<int> lines{0};
  const double amplitude = jitter / (cells - 1);
  for (int i = 1; i < cells; ++i) {
    const int lo = lines.back() + 1;
    const int hi = extent - (cells - i);
    const double pos = extent * (static_cast<double>(i) / cells + rng.uniform(-amplitude, amplitude));
    lines.push_back(std::clamp(static_cast<int>(std::lround(pos)), lo, hi));
  }
  lines.push_back(extent);
  return lines;
}

}  // namespace

std::vector<Rect> partition_rects(int width, int height, int n, double jitter, Rng& rng) {
  require(n >= 1 && n <= 16, "n", "must be in [1, 16]");
  require(jitter >= 0.0 && jitter < 0.5, "jitter", "must be in [0, 0.5)");
  require(width >= n && height >= n, "whole", "too small to hold " + std::to_string(n) + " parts");
  std::vector<Rect> out;
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (n > 1 && grid * grid == n) {
    const auto xs = jittered_lines(width, grid, jitter, rng);
    const auto ys = jittered_lines(height, grid, jitter, rng);
    for (int r = 0; r < grid; ++r)
      for (int c = 0; c < grid; ++c) out.push_back(Rect{xs[c], ys[r], xs[c + 1] - xs[c], ys[r + 1] - ys[r]});
  } else {
    guillotine(Rect{0, 0, width, height}, n, jitter, rng, out);
  }
  std::sort(out.begin(), out.end(), [](const Rect& a, const Rect& b) {
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  });
  return out;
}

std::vector<Part> partition_parts(const Image& whole, int n, double jitter, Rng& rng, int part_size) {
  require(n >= 1 && n <= 16, "n", "must be in [1, 16]");
  const auto rects = partition_rects(whole.width, whole.height, n, jitter, rng);
  std::vector<Part> out;
  out.reserve(rects.size());
  for (const auto& r : rects) out.push_back(Part{resize_bilinear(crop_replicate(whole, r), part_size, part_size), r});
  return out;
}

Image color_jitter(const Image& view, double contrast, double brightness) {
  double mean = 0.0;
  for (float v : view.pixels) mean += v;
  mean /= static_cast<double>(view.pixels.size());
  Image out = view;
  for (auto& v : out.pixels)
    v = static_cast<float>(std::clamp((v - mean) * contrast + mean + brightness, 0.0, 1.0));
  return out;
}

Image gaussian_blur(const Image& view, double sigma) {
  if (sigma <= 0.0) return view;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= total;
  Image tmp(view.height, view.width, view.channels);
  for (int y = 0; y < view.height; ++y)
    for (int x = 0; x < view.width; ++x)
      for (int c = 0; c < view.channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * view.clamped(y, x + i, c);
        tmp.at(y, x, c) = static_cast<float>(acc);
      }
  Image out(view.height, view.width, view.channels);
  for (int y = 0; y < view.height; ++y)
    for (int x = 0; x < view.width; ++x)
      for (int c = 0; c < view.channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp.clamped(y + i, x, c);
        out.at(y, x, c) = static_cast<float>(acc);
      }
  return out;
}

Image rotate(const Image& view, double degrees) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cx = (view.width - 1) / 2.0;
  const double cy = (view.height - 1) / 2.0;
  Image out(view.height, view.width, view.channels);
  for (int y = 0; y < view.height; ++y)
    for (int x = 0; x < view.width; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      const double sx = cx + cs * dx - sn * dy;
      const double sy = cy + sn * dx + cs * dy;
      for (int c = 0; c < view.channels; ++c) out.at(y, x, c) = sample_bilinear(view, sx, sy, c);
    }
  return out;
}

Image augment(const Image& view, const AugmentConfig& config, Rng& rng) {
  require(!view.empty(), "view", "must be non-empty");
  Image out = view;
  if (config.jitter_strength > 0.0) {
    const double s = config.jitter_strength;
    const double contrast = rng.uniform(1.0 - s, 1.0 + s);
    const double brightness = rng.uniform(-0.5 * s, 0.5 * s);
    out = color_jitter(out, contrast, brightness);
  }
  if (config.blur_sigma_max > 0.0) {
    const double sigma = rng.uniform(config.blur_sigma_min, config.blur_sigma_max);
    if (sigma > 1e-3) out = gaussian_blur(out, sigma);
  }
  if (config.rotation_range > 0.0) {
    const double angle = rng.uniform(-config.rotation_range, config.rotation_range);
    out = rotate(out, angle);
  }
  return out;
}

AnchorSample make_anchor(const Image& image, int source_id, int level, const SamplerConfig& config,
                         Rng& rng, bool with_parts) {
  AnchorSample a = sample_anchor(image, level, rng);
  a.source_id = source_id;
  a.crops = multi_scale_crops(a.whole, config.crops_per_anchor, config.crop_size, config.center_jitter, rng,
                              config.global_size);
  if (with_parts) a.parts = partition_parts(a.whole, config.n_parts, config.part_jitter, rng, config.global_size);
  a.aug_seed = rng.next();
  return a;
}

BatchIterator::BatchIterator(const std::vector<LabeledImage>& images, int level, int batch_size,
                             const SamplerConfig& config, Rng& rng, bool with_parts)
    : images_(&images), level_(level), batch_size_(batch_size), config_(config), rng_(&rng),
      with_parts_(with_parts) {
  require(!images.empty(), "corpus", "must be non-empty");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  order_.resize(images.size());
  std::iota(order_.begin(), order_.end(), 0);
  for (std::size_t i = order_.size(); i > 1; --i)
    std::swap(order_[i - 1], order_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
}

int BatchIterator::batches_per_epoch() const {
  return static_cast<int>((order_.size() + batch_size_ - 1) / batch_size_);
}

bool BatchIterator::next(std::vector<AnchorSample>& batch) {
  batch.clear();
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
  for (; cursor_ < end; ++cursor_) {
    const int idx = order_[cursor_];
    Rng anchor_rng = rng_->split();
    batch.push_back(make_anchor((*images_)[idx].pixels, idx, level_, config_, anchor_rng, with_parts_));
  }
  return true;
}

}  // namespace partwhole
