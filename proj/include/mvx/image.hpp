#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvx {

// Dense H x W x C raster, row-major with channel innermost, values expected
// in [0, 1] for dataset images (not enforced here; helpers clamp on write).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pix;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c),
        pix(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c = 0) {
    return pix[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c = 0) const {
    return pix[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t size() const { return pix.size(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  void clamp01() {
    for (double& v : pix) v = std::clamp(v, 0.0, 1.0);
  }

  double mean_channel(int c) const {
    double s = 0.0;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) s += at(y, x, c);
    return s / (static_cast<double>(height) * width);
  }
};

inline Image to_grayscale(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3)
    throw std::invalid_argument("to_grayscale: expected 1 or 3 channels");
  Image out(img.height, img.width, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(y, x) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                     0.114 * img.at(y, x, 2);
  return out;
}

inline Image to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  if (img.channels != 1)
    throw std::invalid_argument("to_rgb: expected 1 or 3 channels");
  Image out(img.height, img.width, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x);
  return out;
}

// Bilinear resize; identity when the target shape already matches.
inline Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0)
    throw std::invalid_argument("resize_bilinear: non-positive target shape");
  if (img.height == out_h && img.width == out_w) return img;
  Image out(out_h, out_w, img.channels);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
        const double bot = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

}  // namespace mvx
