#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mvx/image.hpp"
#include "mvx/png_io.hpp"
#include "mvx/train.hpp"

namespace mvx {

namespace plot_detail {

struct Rgb {
  double r, g, b;
};

inline void put(Image& img, int y, int x, Rgb c) {
  if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
  img.at(y, x, 0) = c.r;
  img.at(y, x, 1) = c.g;
  img.at(y, x, 2) = c.b;
}

inline void line(Image& img, double y0, double x0, double y1, double x1, Rgb c) {
  const double steps = std::max(std::abs(y1 - y0), std::abs(x1 - x0)) + 1.0;
  const int n = static_cast<int>(std::ceil(steps)) * 2;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    put(img, static_cast<int>(std::lround(y0 + t * (y1 - y0))),
        static_cast<int>(std::lround(x0 + t * (x1 - x0))), c);
  }
}

inline void polyline(Image& img, const std::vector<double>& values, double vmax, int top,
                     int bottom, int left, int right, Rgb c) {
  if (values.size() < 2 || vmax <= 0.0) return;
  const double span_x = static_cast<double>(right - left);
  const double span_y = static_cast<double>(bottom - top);
  auto px = [&](std::size_t i) {
    return left + span_x * static_cast<double>(i) / static_cast<double>(values.size() - 1);
  };
  auto py = [&](double v) { return bottom - span_y * std::min(1.0, std::max(0.0, v / vmax)); };
  for (std::size_t i = 0; i + 1 < values.size(); ++i)
    line(img, py(values[i]), px(i), py(values[i + 1]), px(i + 1), c);
}

}  // namespace plot_detail

// Accuracy curves (train solid blue, test solid green, both on a 0..1 axis)
// and the loss curve (red, scaled to its own maximum) over epochs.
inline void save_learning_curve_png(const std::string& path, const TrainReport& report) {
  using plot_detail::Rgb;
  const int H = 320, W = 480;
  Image img(H, W, 3, 1.0);  // white canvas

  const int top = 20, bottom = H - 30, left = 40, right = W - 20;
  const Rgb axis{0.2, 0.2, 0.2};
  plot_detail::line(img, bottom, left, bottom, right, axis);
  plot_detail::line(img, top, left, bottom, left, axis);
  // horizontal guides every 0.25 of the accuracy axis
  for (int q = 1; q <= 4; ++q) {
    const double y = bottom - (bottom - top) * 0.25 * q;
    plot_detail::line(img, y, left, y, right, Rgb{0.88, 0.88, 0.88});
  }

  double loss_max = 0.0;
  for (double v : report.train_loss) loss_max = std::max(loss_max, v);

  plot_detail::polyline(img, report.train_loss, loss_max, top, bottom, left, right,
                        Rgb{0.85, 0.2, 0.15});
  plot_detail::polyline(img, report.train_acc, 1.0, top, bottom, left, right,
                        Rgb{0.15, 0.3, 0.85});
  if (!report.test_acc.empty())
    plot_detail::polyline(img, report.test_acc, 1.0, top, bottom, left, right,
                          Rgb{0.1, 0.6, 0.25});

  write_png(path, img);
}

}  // namespace mvx
