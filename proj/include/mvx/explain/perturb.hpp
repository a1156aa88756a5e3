#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvx/explain/segment.hpp"
#include "mvx/image.hpp"

namespace mvx {

// Black-box interface shared by every explanation method: an image in, a
// probability vector over classes out.
using ModelFn = std::function<Eigen::VectorXd(const Image&)>;

// One coalition: kept-segment flags, length num_segments.
using Coalition = std::vector<std::uint8_t>;

enum class BaselineMode { mean_color, zeros };

inline const char* to_string(BaselineMode b) {
  return b == BaselineMode::mean_color ? "mean_color" : "zeros";
}

inline BaselineMode baseline_from_string(const std::string& s) {
  if (s == "mean_color") return BaselineMode::mean_color;
  if (s == "zeros") return BaselineMode::zeros;
  throw std::invalid_argument("unknown baseline mode: " + s);
}

// The stand-in content for dropped segments.
inline Image make_baseline(const Image& img, BaselineMode mode) {
  Image out(img.height, img.width, img.channels);
  if (mode == BaselineMode::mean_color)
    for (int c = 0; c < img.channels; ++c) {
      const double m = img.mean_channel(c);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.at(y, x, c) = m;
    }
  return out;
}

// Kept segments show the original pixels, dropped ones the baseline.
inline Image apply_coalition(const Image& img, const Image& baseline, const SegmentMask& mask,
                             const Coalition& coalition) {
  if (static_cast<int>(coalition.size()) != mask.num_segments)
    throw std::invalid_argument("coalition length does not match segment count");
  if (img.height != mask.height || img.width != mask.width)
    throw std::invalid_argument("image and segment mask shapes differ");
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (!coalition[static_cast<std::size_t>(mask.at(y, x))])
        for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = baseline.at(y, x, c);
  return out;
}

// Evaluates the model on every coalition in order. Pure given a pure
// model_fn, so repeated calls agree.
inline std::vector<Eigen::VectorXd> perturb_and_predict(const ModelFn& model_fn, const Image& img,
                                                        const SegmentMask& mask,
                                                        const std::vector<Coalition>& coalitions,
                                                        BaselineMode baseline_mode) {
  const Image baseline = make_baseline(img, baseline_mode);
  std::vector<Eigen::VectorXd> out;
  out.reserve(coalitions.size());
  for (const auto& z : coalitions)
    out.push_back(model_fn(apply_coalition(img, baseline, mask, z)));
  return out;
}

}  // namespace mvx
