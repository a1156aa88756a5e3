#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvx/explain/segment.hpp"
#include "mvx/image.hpp"

namespace mvx {

enum class ExplainMethod { lime, kernel_shap, exact_shapley };

inline const char* to_string(ExplainMethod m) {
  switch (m) {
    case ExplainMethod::lime: return "lime";
    case ExplainMethod::kernel_shap: return "kernel_shap";
    default: return "exact_shapley";
  }
}

inline ExplainMethod explain_method_from_string(const std::string& s) {
  if (s == "lime") return ExplainMethod::lime;
  if (s == "kernel_shap") return ExplainMethod::kernel_shap;
  if (s == "exact_shapley") return ExplainMethod::exact_shapley;
  throw std::invalid_argument("unknown explanation method: " + s +
                              " (expected lime, kernel_shap or exact_shapley)");
}

// Signed per-segment scores for one view and one target class, plus the
// per-pixel broadcast. Positive scores push the model toward the target
// class, negative away; the consumer owns any further interpretation.
struct AttributionMap {
  int view_index = 0;
  int target_class = 0;
  ExplainMethod method = ExplainMethod::lime;
  SegmentMask segments;
  Eigen::VectorXd per_segment;
  Eigen::MatrixXd per_pixel;  // height x width

  void broadcast() {
    per_pixel.resize(segments.height, segments.width);
    for (int y = 0; y < segments.height; ++y)
      for (int x = 0; x < segments.width; ++x)
        per_pixel(y, x) = per_segment(segments.at(y, x));
  }

  void validate() const {
    segments.validate();
    if (per_segment.size() != segments.num_segments)
      throw std::invalid_argument("attribution: segment score length mismatch");
    if (per_pixel.rows() != segments.height || per_pixel.cols() != segments.width)
      throw std::invalid_argument("attribution: pixel grid shape mismatch");
    for (int y = 0; y < segments.height; ++y)
      for (int x = 0; x < segments.width; ++x)
        if (per_pixel(y, x) != per_segment(segments.at(y, x)))
          throw std::invalid_argument("attribution: pixel grid out of sync with segment scores");
  }
};

// Plain numeric grid: one row of comma-separated scores per pixel row.
inline void save_grid_csv(const std::string& path, const Eigen::MatrixXd& grid) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write grid file: " + path);
  char buf[64];
  for (Eigen::Index y = 0; y < grid.rows(); ++y) {
    for (Eigen::Index x = 0; x < grid.cols(); ++x) {
      std::snprintf(buf, sizeof(buf), "%.17g", grid(y, x));
      if (x) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

inline Eigen::MatrixXd load_grid_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open grid file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error("ragged grid file: " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty grid file: " + path);
  Eigen::MatrixXd grid(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index y = 0; y < grid.rows(); ++y)
    for (Eigen::Index x = 0; x < grid.cols(); ++x)
      grid(y, x) = rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)];
  return grid;
}

// Original view with the top-q fraction of positive-score pixels tinted
// orange. Ties resolve toward the lower flat index; with no positive scores
// the image passes through untouched.
inline Image render_overlay(const Image& view, const AttributionMap& attr, double q = 0.2) {
  if (view.height != attr.segments.height || view.width != attr.segments.width)
    throw std::invalid_argument("overlay: view and attribution shapes differ");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("overlay: q must be in (0, 1]");

  std::vector<int> positive;
  for (int y = 0; y < view.height; ++y)
    for (int x = 0; x < view.width; ++x)
      if (attr.per_pixel(y, x) > 0.0) positive.push_back(y * view.width + x);

  Image out = to_rgb(view);
  if (positive.empty()) return out;

  const std::size_t k =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(q * positive.size())));
  std::stable_sort(positive.begin(), positive.end(), [&](int a, int b) {
    const double va = attr.per_pixel(a / view.width, a % view.width);
    const double vb = attr.per_pixel(b / view.width, b % view.width);
    if (va != vb) return va > vb;
    return a < b;
  });
  positive.resize(std::min(k, positive.size()));

  const double orange[3] = {1.0, 0.647, 0.0};
  for (int flat : positive) {
    const int y = flat / view.width, x = flat % view.width;
    for (int c = 0; c < 3; ++c)
      out.at(y, x, c) = 0.45 * out.at(y, x, c) + 0.55 * orange[c];
  }
  return out;
}

// Dataset-level aggregate: mean of absolute per-pixel scores over a set of
// maps sharing one geometry.
inline Eigen::MatrixXd mean_abs_attribution(const std::vector<AttributionMap>& maps) {
  if (maps.empty()) throw std::invalid_argument("aggregate: no attribution maps");
  Eigen::MatrixXd acc =
      Eigen::MatrixXd::Zero(maps.front().per_pixel.rows(), maps.front().per_pixel.cols());
  for (const auto& m : maps) {
    if (m.per_pixel.rows() != acc.rows() || m.per_pixel.cols() != acc.cols())
      throw std::invalid_argument("aggregate: mixed grid shapes");
    acc += m.per_pixel.cwiseAbs();
  }
  return acc / static_cast<double>(maps.size());
}

}  // namespace mvx
