#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mvx/image.hpp"
#include "mvx/rng.hpp"

namespace mvx {

// Partition of an image into superpixel-style segments. Ids run 0..S-1 and
// every id owns at least one pixel.
struct SegmentMask {
  int height = 0;
  int width = 0;
  int num_segments = 0;
  std::vector<int> ids;  // row-major, ids[y*width + x]

  int at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }

  std::vector<int> segment_sizes() const {
    std::vector<int> sizes(static_cast<std::size_t>(num_segments), 0);
    for (int id : ids) ++sizes[static_cast<std::size_t>(id)];
    return sizes;
  }

  void validate() const {
    if (height <= 0 || width <= 0) throw std::invalid_argument("segment mask: empty geometry");
    if (num_segments <= 0) throw std::invalid_argument("segment mask: no segments");
    if (ids.size() != static_cast<std::size_t>(height) * width)
      throw std::invalid_argument("segment mask: id buffer size mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(num_segments), false);
    for (int id : ids) {
      if (id < 0 || id >= num_segments)
        throw std::invalid_argument("segment mask: id out of range");
      seen[static_cast<std::size_t>(id)] = true;
    }
    for (int s = 0; s < num_segments; ++s)
      if (!seen[static_cast<std::size_t>(s)])
        throw std::invalid_argument("segment mask: segment " + std::to_string(s) + " is empty");
  }
};

struct SegmentOptions {
  int num_segments = 40;
  int refine_iters = 5;
  // Relative weight of intensity distance against spatial distance; zero
  // reduces the procedure to a plain grid.
  double compactness = 10.0;
  // Optional seed jitter radius in pixels. The default keeps the procedure
  // fully input-deterministic; the seed argument only matters when this is
  // nonzero.
  double jitter = 0.0;
};

namespace detail {

// Largest factor pair r*c == s with r <= sqrt(s); favors near-square grids
// and degrades to strips for primes.
inline void grid_shape(int s, int height, int width, int& rows, int& cols) {
  int r = static_cast<int>(std::sqrt(static_cast<double>(s)));
  if (height < width) {
    while (r > 1 && s % r != 0) --r;
    rows = r;
    cols = s / r;
  } else {
    while (r > 1 && s % r != 0) --r;
    rows = s / r;
    cols = r;
  }
}

inline double pixel_gradient(const Image& img, int y, int x) {
  const int y0 = std::max(0, y - 1), y1 = std::min(img.height - 1, y + 1);
  const int x0 = std::max(0, x - 1), x1 = std::min(img.width - 1, x + 1);
  double g = 0.0;
  for (int c = 0; c < img.channels; ++c) {
    const double dy = img.at(y1, x, c) - img.at(y0, x, c);
    const double dx = img.at(y, x1, c) - img.at(y, x0, c);
    g += dy * dy + dx * dx;
  }
  return g;
}

}  // namespace detail

// Grid-seeded superpixels: seeds start at cell centers, snap to the locally
// flattest pixel in a 3x3 window, then a few rounds of SLIC-style assignment
// and centroid updates. On a uniform image nothing snaps or moves, so the
// result is the exact rectangular grid.
inline SegmentMask segment(const Image& img, const SegmentOptions& opt = {},
                           std::uint64_t seed = 0) {
  if (opt.num_segments < 1) throw std::invalid_argument("segment: num_segments must be >= 1");
  const int HxW = img.height * img.width;
  if (opt.num_segments > HxW)
    throw std::invalid_argument("segment: more segments than pixels");

  const int S = opt.num_segments;
  int rows = 1, cols = S;
  detail::grid_shape(S, img.height, img.width, rows, cols);
  const double cell_h = static_cast<double>(img.height) / rows;
  const double cell_w = static_cast<double>(img.width) / cols;
  const double step = std::sqrt(cell_h * cell_w);

  struct Center {
    double y, x;
    std::vector<double> color;
  };
  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(S));
  Rng rng(seed);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double cy = (r + 0.5) * cell_h - 0.5;
      double cx = (c + 0.5) * cell_w - 0.5;
      if (opt.jitter > 0.0) {
        cy += rng.uniform(-opt.jitter, opt.jitter);
        cx += rng.uniform(-opt.jitter, opt.jitter);
      }
      cy = std::min<double>(img.height - 1, std::max(0.0, cy));
      cx = std::min<double>(img.width - 1, std::max(0.0, cx));
      // Snap to the lowest-gradient neighbor; strict improvement only, so a
      // flat region leaves the seed in place.
      int by = static_cast<int>(std::lround(cy)), bx = static_cast<int>(std::lround(cx));
      double best = detail::pixel_gradient(img, by, bx);
      int sy = by, sx = bx;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = by + dy, nx = bx + dx;
          if (ny < 0 || ny >= img.height || nx < 0 || nx >= img.width) continue;
          const double g = detail::pixel_gradient(img, ny, nx);
          if (g < best) {
            best = g;
            sy = ny;
            sx = nx;
          }
        }
      Center ctr;
      ctr.y = (sy == by && sx == bx) ? cy : static_cast<double>(sy);
      ctr.x = (sy == by && sx == bx) ? cx : static_cast<double>(sx);
      ctr.color.resize(static_cast<std::size_t>(img.channels));
      for (int ch = 0; ch < img.channels; ++ch)
        ctr.color[static_cast<std::size_t>(ch)] = img.at(sy, sx, ch);
      centers.push_back(std::move(ctr));
    }

  SegmentMask mask;
  mask.height = img.height;
  mask.width = img.width;
  mask.num_segments = S;
  mask.ids.assign(static_cast<std::size_t>(HxW), 0);

  const double spatial_scale = opt.compactness / step;
  for (int iter = 0; iter <= opt.refine_iters; ++iter) {
    // Assignment: nearest center in joint (color, scaled space) distance.
    // Full scan over centers keeps ties globally consistent; image sizes
    // here are small enough that the simplicity wins.
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double best = std::numeric_limits<double>::infinity();
        int best_s = 0;
        for (int s = 0; s < S; ++s) {
          const Center& ctr = centers[static_cast<std::size_t>(s)];
          const double dy = (y - ctr.y) * spatial_scale;
          const double dx = (x - ctr.x) * spatial_scale;
          double d = dy * dy + dx * dx;
          for (int ch = 0; ch < img.channels; ++ch) {
            const double dc = img.at(y, x, ch) - ctr.color[static_cast<std::size_t>(ch)];
            d += dc * dc;
          }
          if (d < best) {
            best = d;
            best_s = s;
          }
        }
        mask.ids[static_cast<std::size_t>(y) * img.width + x] = best_s;
      }
    if (iter == opt.refine_iters) break;
    // Update centers to the mean of their pixels; empty centers stay put.
    std::vector<double> sy(static_cast<std::size_t>(S), 0.0), sx(sy), cnt(sy);
    std::vector<std::vector<double>> scol(static_cast<std::size_t>(S),
                                          std::vector<double>(img.channels, 0.0));
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const auto s = static_cast<std::size_t>(mask.at(y, x));
        sy[s] += y;
        sx[s] += x;
        cnt[s] += 1.0;
        for (int ch = 0; ch < img.channels; ++ch) scol[s][static_cast<std::size_t>(ch)] += img.at(y, x, ch);
      }
    for (int s = 0; s < S; ++s) {
      const auto us = static_cast<std::size_t>(s);
      if (cnt[us] == 0.0) continue;
      centers[us].y = sy[us] / cnt[us];
      centers[us].x = sx[us] / cnt[us];
      for (int ch = 0; ch < img.channels; ++ch)
        centers[us].color[static_cast<std::size_t>(ch)] = scol[us][static_cast<std::size_t>(ch)] / cnt[us];
    }
  }

  // Guarantee every id owns a pixel: hand each empty segment the pixel
  // closest to its center, provided the donor keeps at least one pixel.
  auto sizes = mask.segment_sizes();
  for (int s = 0; s < S; ++s) {
    if (sizes[static_cast<std::size_t>(s)] > 0) continue;
    const Center& ctr = centers[static_cast<std::size_t>(s)];
    double best = std::numeric_limits<double>::infinity();
    int best_flat = -1;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const int owner = mask.at(y, x);
        if (sizes[static_cast<std::size_t>(owner)] < 2) continue;
        const double dy = y - ctr.y, dx = x - ctr.x;
        const double d = dy * dy + dx * dx;
        if (d < best) {
          best = d;
          best_flat = y * img.width + x;
        }
      }
    if (best_flat < 0) throw std::runtime_error("segment: cannot repair empty segment");
    --sizes[static_cast<std::size_t>(mask.ids[static_cast<std::size_t>(best_flat)])];
    mask.ids[static_cast<std::size_t>(best_flat)] = s;
    ++sizes[static_cast<std::size_t>(s)];
  }

  mask.validate();
  return mask;
}

}  // namespace mvx
