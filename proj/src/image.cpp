#include "partwhole/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "partwhole/error.hpp"

namespace partwhole {

Rect intersect(const Rect& a, const Rect& b) {
  const int x0 = std::max(a.x, b.x);
  const int y0 = std::max(a.y, b.y);
  const int x1 = std::min(a.x + a.width, b.x + b.width);
  const int y1 = std::min(a.y + a.height, b.y + b.height);
  if (x1 <= x0 || y1 <= y0) return Rect{x0, y0, 0, 0};
  return Rect{x0, y0, x1 - x0, y1 - y0};
}

float Image::clamped(int y, int x, int c) const {
  y = std::clamp(y, 0, height - 1);
  x = std::clamp(x, 0, width - 1);
  return at(y, x, c);
}

float sample_bilinear(const Image& src, double x, double y, int c) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = x - fx;
  const double ay = y - fy;
  const double top = (1.0 - ax) * src.clamped(y0, x0, c) + ax * src.clamped(y0, x0 + 1, c);
  const double bottom = (1.0 - ax) * src.clamped(y0 + 1, x0, c) + ax * src.clamped(y0 + 1, x0 + 1, c);
  return static_cast<float>((1.0 - ay) * top + ay * bottom);
}

Image resize_bilinear(const Image& src, int height, int width) {
  require(height > 0 && width > 0, "size", "resize target must be positive");
  require(!src.empty(), "image", "cannot resize an empty image");
  if (height == src.height && width == src.width) return src;
  Image out(height, width, src.channels);
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  for (int y = 0; y < height; ++y) {
    const double ys = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < width; ++x) {
      const double xs = (x + 0.5) * sx - 0.5;
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = sample_bilinear(src, xs, ys, c);
    }
  }
  return out;
}

Image crop_replicate(const Image& src, const Rect& r) {
  require(r.width > 0 && r.height > 0, "size", "crop must be non-empty");
  Image out(r.height, r.width, src.channels);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.clamped(r.y + y, r.x + x, c);
  return out;
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
  require(img.channels == 1 || img.channels == 3, "channels", "PNM supports 1 or 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  std::string bytes(img.pixels.size(), '\0');
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const float v = std::clamp(img.pixels[i], 0.0f, 1.0f);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

namespace {

std::string next_token(std::istream& is) {
  std::string tok;
  while (is >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(is, rest);
      continue;
    }
    return tok;
  }
  throw std::runtime_error("truncated PNM header");
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const std::string magic = next_token(is);
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw std::runtime_error(path.string() + ": unsupported PNM magic " + magic);
  const int width = std::stoi(next_token(is));
  const int height = std::stoi(next_token(is));
  const int maxval = std::stoi(next_token(is));
  if (maxval != 255) throw std::runtime_error(path.string() + ": only 8-bit PNM supported");
  is.get();
  Image img(height, width, channels);
  std::string bytes(img.pixels.size(), '\0');
  is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size())
    throw std::runtime_error(path.string() + ": truncated pixel data");
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[i])) / 255.0f;
  return img;
}

}  // namespace partwhole
