#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace partwhole {

/// Axis-aligned integer rectangle; (x, y) is the top-left corner.
struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  long area() const { return static_cast<long>(width) * height; }
  bool contains(int px, int py) const {
    return px >= x && px < x + width && py >= y && py < y + height;
  }
  bool contains(const Rect& r) const {
    return r.x >= x && r.y >= y && r.x + r.width <= x + width && r.y + r.height <= y + height;
  }
  double center_x() const { return x + width / 2.0; }
  double center_y() const { return y + height / 2.0; }

  friend bool operator==(const Rect&, const Rect&) = default;
};

Rect intersect(const Rect& a, const Rect& b);

/// H x W x C array of floats in [0, 1], stored row-major with interleaved
/// channels.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c = 1, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  bool empty() const { return pixels.empty(); }

  float& at(int y, int x, int c = 0) { return pixels[index(y, x, c)]; }
  float at(int y, int x, int c = 0) const { return pixels[index(y, x, c)]; }

  /// Edge-replicating read.
  float clamped(int y, int x, int c = 0) const;

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

Image resize_bilinear(const Image& src, int height, int width);

/// Extracts `r` from `src`; out-of-bounds pixels replicate the nearest edge.
Image crop_replicate(const Image& src, const Rect& r);

/// Bilinear sample with edge replication; (x, y) in pixel-center coordinates.
float sample_bilinear(const Image& src, double x, double y, int c);

/// Binary PGM (1 channel) or PPM (3 channels), 8-bit.
void write_pnm(const std::filesystem::path& path, const Image& img);
Image read_pnm(const std::filesystem::path& path);

}  // namespace partwhole
