#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvx/explain/attribution.hpp"
#include "mvx/explain/perturb.hpp"
#include "mvx/explain/segment.hpp"
#include "mvx/rng.hpp"

namespace mvx {

// Characteristic function of a coalition game over S segments.
using GameFn = std::function<double(const Coalition&)>;

namespace shap_detail {

inline Coalition from_bits(std::uint32_t bits, int S) {
  Coalition z(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) z[static_cast<std::size_t>(s)] = (bits >> s) & 1u;
  return z;
}

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace shap_detail

// Brute-force Shapley values: phi_i = sum over coalitions T excluding i of
// |T|!(S-1-|T|)!/S! * (v(T+i) - v(T)). Evaluates the game on all 2^S
// coalitions once.
inline Eigen::VectorXd exact_shapley_game(const GameFn& game, int S) {
  if (S < 1) throw std::invalid_argument("exact shapley: need at least one segment");
  if (S > 20) throw std::invalid_argument("exact shapley: refusing " + std::to_string(S) +
                                          " segments (2^S coalition enumeration)");
  const std::uint32_t n = 1u << S;
  std::vector<double> value(n);
  for (std::uint32_t bits = 0; bits < n; ++bits)
    value[bits] = game(shap_detail::from_bits(bits, S));

  // w[t] = t!(S-1-t)!/S!, built by the ratio w[t]/w[t-1] = t/(S-t)
  std::vector<double> w(static_cast<std::size_t>(S));
  w[0] = 1.0 / S;
  for (int t = 1; t < S; ++t)
    w[static_cast<std::size_t>(t)] =
        w[static_cast<std::size_t>(t - 1)] * t / static_cast<double>(S - t);

  Eigen::VectorXd phi = Eigen::VectorXd::Zero(S);
  for (int i = 0; i < S; ++i) {
    const std::uint32_t bit = 1u << i;
    double acc = 0.0;
    for (std::uint32_t bits = 0; bits < n; ++bits) {
      if (bits & bit) continue;
      const int t = std::popcount(bits);
      acc += w[static_cast<std::size_t>(t)] * (value[bits | bit] - value[bits]);
    }
    phi(i) = acc;
  }
  return phi;
}

enum class ShapMode { automatic, full_enumeration, sampled };

// Shapley-kernel weighted least squares with the efficiency constraint
// folded in by variable elimination: attributions always sum to
// v(full) - v(empty). Full enumeration (all 2^S - 2 proper coalitions with
// analytic kernel weights) reproduces exact Shapley values; sampled mode
// draws coalition sizes from the kernel distribution.
inline Eigen::VectorXd kernel_shap_game(const GameFn& game, int S, int n_samples,
                                        std::uint64_t seed, ShapMode mode = ShapMode::automatic) {
  if (S < 1) throw std::invalid_argument("kernel shap: need at least one segment");
  if (mode == ShapMode::full_enumeration && S > 25)
    throw std::invalid_argument(
        "kernel shap: full enumeration over " + std::to_string(S) +
        " segments means 2^" + std::to_string(S) +
        " coalitions; use sampled mode or fewer segments");

  const double v_empty = game(Coalition(static_cast<std::size_t>(S), 0));
  const double v_full = game(Coalition(static_cast<std::size_t>(S), 1));
  const double delta = v_full - v_empty;
  if (S == 1) {
    Eigen::VectorXd phi(1);
    phi(0) = delta;
    return phi;
  }

  const bool full = mode == ShapMode::full_enumeration ||
                    (mode == ShapMode::automatic && S <= 25 &&
                     (std::uint64_t{1} << S) <= static_cast<std::uint64_t>(n_samples));
  if (!full && n_samples < S + 2)
    throw std::invalid_argument("kernel shap: sampled mode needs n_samples >= S + 2");

  // Eliminate phi_{S-1} via the efficiency constraint; regress
  // y - v_empty - z_last*delta on features z_i - z_last, i < S-1.
  const int d = S - 1;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd g(d);
  auto accumulate = [&](const Coalition& z, double weight) {
    const double y = game(z);
    const double z_last = z[static_cast<std::size_t>(S - 1)];
    for (int i = 0; i < d; ++i) g(i) = z[static_cast<std::size_t>(i)] - z_last;
    const double target = y - v_empty - z_last * delta;
    G.noalias() += weight * g * g.transpose();
    b.noalias() += weight * g * target;
  };

  if (full) {
    const std::uint32_t n = 1u << S;
    for (std::uint32_t bits = 1; bits + 1 < n; ++bits) {
      const int t = std::popcount(bits);
      const double weight =
          (S - 1.0) / (shap_detail::binomial(S, t) * t * (S - t));
      accumulate(shap_detail::from_bits(bits, S), weight);
    }
  } else {
    // p(t) proportional to (S-1)/(t(S-t)); subsets of a size drawn uniformly
    std::vector<double> cdf(static_cast<std::size_t>(S - 1));
    double total = 0.0;
    for (int t = 1; t < S; ++t) {
      total += (S - 1.0) / (static_cast<double>(t) * (S - t));
      cdf[static_cast<std::size_t>(t - 1)] = total;
    }
    Rng rng(seed);
    std::vector<int> idx(static_cast<std::size_t>(S));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n_samples; ++i) {
      const double u = rng.uniform() * total;
      int t = 1;
      while (t < S - 1 && u > cdf[static_cast<std::size_t>(t - 1)]) ++t;
      for (int j = 0; j < t; ++j) {
        const auto pick = static_cast<std::size_t>(j) + rng.below(static_cast<std::uint64_t>(S - j));
        std::swap(idx[static_cast<std::size_t>(j)], idx[pick]);
      }
      Coalition z(static_cast<std::size_t>(S), 0);
      for (int j = 0; j < t; ++j) z[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])] = 1;
      accumulate(z, 1.0);
    }
  }

  const Eigen::LDLT<Eigen::MatrixXd> solver(G);
  const Eigen::VectorXd head = solver.solve(b);
  if (!head.allFinite())
    throw std::runtime_error("kernel shap: singular coalition system; draw more samples");
  Eigen::VectorXd phi(S);
  phi.head(d) = head;
  phi(S - 1) = delta - head.sum();
  return phi;
}

struct ShapOptions {
  int n_samples = 2048;
  ShapMode mode = ShapMode::automatic;
  BaselineMode baseline = BaselineMode::mean_color;
};

namespace shap_detail {

inline GameFn image_game(const ModelFn& model_fn, const Image& img, const SegmentMask& mask,
                         int target_class, BaselineMode baseline_mode) {
  // The baseline is captured once so every coalition sees the same stand-in.
  Image baseline = make_baseline(img, baseline_mode);
  return [model_fn, img, baseline = std::move(baseline), mask,
          target_class](const Coalition& z) {
    return model_fn(apply_coalition(img, baseline, mask, z))(target_class);
  };
}

}  // namespace shap_detail

inline AttributionMap kernel_shap_explain(const ModelFn& model_fn, const Image& img,
                                          const SegmentMask& mask, int target_class,
                                          const ShapOptions& opt, std::uint64_t seed) {
  AttributionMap attr;
  attr.target_class = target_class;
  attr.method = ExplainMethod::kernel_shap;
  attr.segments = mask;
  attr.per_segment =
      kernel_shap_game(shap_detail::image_game(model_fn, img, mask, target_class, opt.baseline),
                       mask.num_segments, opt.n_samples, seed, opt.mode);
  attr.broadcast();
  return attr;
}

inline AttributionMap exact_shapley_explain(const ModelFn& model_fn, const Image& img,
                                            const SegmentMask& mask, int target_class,
                                            BaselineMode baseline_mode = BaselineMode::mean_color) {
  if (mask.num_segments > 12)
    throw std::invalid_argument(
        "exact_shapley supports at most 12 segments, got " +
        std::to_string(mask.num_segments) +
        "; lower the segment count or switch to kernel_shap");
  AttributionMap attr;
  attr.target_class = target_class;
  attr.method = ExplainMethod::exact_shapley;
  attr.segments = mask;
  attr.per_segment = exact_shapley_game(
      shap_detail::image_game(model_fn, img, mask, target_class, baseline_mode),
      mask.num_segments);
  attr.broadcast();
  return attr;
}

}  // namespace mvx
