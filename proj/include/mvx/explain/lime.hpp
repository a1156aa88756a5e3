#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "mvx/explain/attribution.hpp"
#include "mvx/explain/perturb.hpp"
#include "mvx/explain/segment.hpp"
#include "mvx/rng.hpp"

namespace mvx {

struct LimeOptions {
  int n_samples = 1000;
  double kernel_width = -1.0;  // <= 0 picks 0.25 * sqrt(S)
  double ridge = 1.0;
  BaselineMode baseline = BaselineMode::mean_color;
};

namespace lime_detail {

// Exponential kernel on the cosine distance between the coalition and the
// all-ones vector. A coalition keeping k of S segments has cosine
// similarity sqrt(k/S); the empty coalition gets similarity 0.
inline double coalition_weight(int kept, int S, double width) {
  const double sim = kept == 0 ? 0.0 : std::sqrt(static_cast<double>(kept) / S);
  const double dist = 1.0 - sim;
  return std::exp(-(dist * dist) / (width * width));
}

}  // namespace lime_detail

// Fits a weighted ridge regression of the target-class probability on the
// coalition indicators; the fitted slope per segment is its attribution. The
// intercept is left unpenalized, so a constant model yields exactly zero
// slopes. The first drawn coalition is always all-ones, anchoring the fit at
// the unperturbed image.
inline Eigen::VectorXd lime_weights(const std::vector<Coalition>& coalitions,
                                    const std::vector<double>& targets, int S, double width,
                                    double ridge) {
  const auto n = static_cast<Eigen::Index>(coalitions.size());
  bool all_same = true;
  for (const auto& z : coalitions)
    if (z != coalitions.front()) {
      all_same = false;
      break;
    }
  if (all_same)
    throw std::runtime_error("degenerate coalition design: all sampled coalitions are identical");

  Eigen::MatrixXd A(n, S + 1);  // last column is the intercept
  Eigen::VectorXd y(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    int kept = 0;
    for (int s = 0; s < S; ++s) {
      const double z = coalitions[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
      A(i, s) = z;
      kept += static_cast<int>(z);
    }
    A(i, S) = 1.0;
    y(i) = targets[static_cast<std::size_t>(i)];
    w(i) = lime_detail::coalition_weight(kept, S, width);
  }

  const Eigen::MatrixXd Aw = w.asDiagonal() * A;
  Eigen::MatrixXd lhs = A.transpose() * Aw;
  for (int s = 0; s < S; ++s) lhs(s, s) += ridge;  // intercept stays free
  const Eigen::VectorXd rhs = A.transpose() * (w.asDiagonal() * y);
  const Eigen::VectorXd beta = lhs.ldlt().solve(rhs);
  return beta.head(S);
}

inline AttributionMap lime_explain(const ModelFn& model_fn, const Image& img,
                                   const SegmentMask& mask, int target_class,
                                   const LimeOptions& opt, std::uint64_t seed) {
  const int S = mask.num_segments;
  if (opt.n_samples < S)
    throw std::invalid_argument("lime: n_samples must be at least the segment count");
  if (opt.ridge < 0.0) throw std::invalid_argument("lime: ridge must be non-negative");
  const double width = opt.kernel_width > 0.0 ? opt.kernel_width : 0.25 * std::sqrt(S);

  Rng rng(seed);
  std::vector<Coalition> coalitions;
  coalitions.reserve(static_cast<std::size_t>(opt.n_samples));
  coalitions.emplace_back(static_cast<std::size_t>(S), std::uint8_t{1});
  for (int i = 1; i < opt.n_samples; ++i) {
    Coalition z(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) z[static_cast<std::size_t>(s)] = rng.bernoulli(0.5) ? 1 : 0;
    coalitions.push_back(std::move(z));
  }

  const auto probs = perturb_and_predict(model_fn, img, mask, coalitions, opt.baseline);
  std::vector<double> targets;
  targets.reserve(probs.size());
  for (const auto& p : probs) targets.push_back(p(target_class));

  AttributionMap attr;
  attr.target_class = target_class;
  attr.method = ExplainMethod::lime;
  attr.segments = mask;
  attr.per_segment = lime_weights(coalitions, targets, S, width, opt.ridge);
  attr.broadcast();
  return attr;
}

}  // namespace mvx
