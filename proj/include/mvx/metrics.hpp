#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvx/dataset.hpp"
#include "mvx/explain/attribution.hpp"
#include "mvx/image.hpp"
#include "mvx/mvarch.hpp"
#include "mvx/rng.hpp"

namespace mvx {

// Probability that a uniformly drawn positive outscores a uniformly drawn
// negative, ties worth half. Computed with midranks, which matches the
// brute-force pairwise count exactly.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

struct SampleScore {
  std::string sample_id;
  int label = 0;
  int predicted = 0;
  double p_positive = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  double auc_value = std::numeric_limits<double>::quiet_NaN();  // NaN when one class absent
  int positive_class = 1;
  std::vector<std::vector<int>> confusion;  // confusion[truth][prediction]
  std::vector<double> precision;            // per class; 0/0 reported as 0
  std::vector<double> recall;
  std::vector<SampleScore> scores;

  bool has_explanation_metrics = false;
  double pointing_game_hit_rate = 0.0;
  double pointing_game_baseline = 0.0;
  double mean_topq_iou = 0.0;
  int explained_count = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{
        {"accuracy", accuracy},
        {"positive_class", positive_class},
        {"confusion", confusion},
        {"precision", precision},
        {"recall", recall},
    };
    if (std::isfinite(auc_value)) j["auc"] = auc_value;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : scores)
      rows.push_back({{"sample_id", s.sample_id},
                      {"label", s.label},
                      {"predicted", s.predicted},
                      {"p_positive", s.p_positive}});
    j["samples"] = rows;
    if (has_explanation_metrics)
      j["explanation"] = {{"pointing_game_hit_rate", pointing_game_hit_rate},
                          {"pointing_game_baseline", pointing_game_baseline},
                          {"mean_topq_iou", mean_topq_iou},
                          {"explained_count", explained_count}};
    return j;
  }

  void save_json(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << to_json().dump(2) << "\n";
  }
};

// Runs the model over the set and fills accuracy, confusion, per-class
// precision/recall and (when both classes occur) AUC over the positive-class
// probability.
inline EvalReport evaluate_model(const MultiViewModel& model, const Dataset& ds,
                                 int positive_class = -1) {
  if (ds.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const int C = model.schema().num_classes();
  if (positive_class < 0) {
    positive_class = 1;
    for (int c = 0; c < C; ++c)
      if (model.schema().class_names[static_cast<std::size_t>(c)] == "Defective")
        positive_class = c;
  }

  EvalReport rep;
  rep.positive_class = positive_class;
  rep.confusion.assign(static_cast<std::size_t>(C), std::vector<int>(static_cast<std::size_t>(C), 0));

  std::vector<double> pos_scores;
  std::vector<int> binary_labels;
  int correct = 0;
  for (const auto& s : ds.samples) {
    const Eigen::VectorXd probs = model.predict_proba(s.views);
    Eigen::Index best;
    probs.maxCoeff(&best);
    const int pred = static_cast<int>(best);
    if (pred == s.label) ++correct;
    ++rep.confusion[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(pred)];
    rep.scores.push_back({s.sample_id, s.label, pred, probs(positive_class)});
    pos_scores.push_back(probs(positive_class));
    binary_labels.push_back(s.label == positive_class ? 1 : 0);
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(ds.samples.size());

  const bool both = std::count(binary_labels.begin(), binary_labels.end(), 1) > 0 &&
                    std::count(binary_labels.begin(), binary_labels.end(), 0) > 0;
  if (both) rep.auc_value = auc(pos_scores, binary_labels);

  rep.precision.assign(static_cast<std::size_t>(C), 0.0);
  rep.recall.assign(static_cast<std::size_t>(C), 0.0);
  for (int c = 0; c < C; ++c) {
    int tp = rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    int pred_c = 0, true_c = 0;
    for (int o = 0; o < C; ++o) {
      pred_c += rep.confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
      true_c += rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
    }
    rep.precision[static_cast<std::size_t>(c)] = pred_c ? static_cast<double>(tp) / pred_c : 0.0;
    rep.recall[static_cast<std::size_t>(c)] = true_c ? static_cast<double>(tp) / true_c : 0.0;
  }
  return rep;
}

namespace detail {

inline int mask_pixel_count(const Image& mask) {
  int n = 0;
  for (double v : mask.pix)
    if (v > 0.5) ++n;
  return n;
}

}  // namespace detail

// Binary dilation with a square (Chebyshev) structuring element.
inline Image dilate_mask(const Image& mask, int radius) {
  if (mask.channels != 1) throw std::invalid_argument("dilate: mask must be single-channel");
  Image out = mask;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      bool hit = false;
      for (int dy = -radius; dy <= radius && !hit; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= mask.height || nx < 0 || nx >= mask.width) continue;
          if (mask.at(ny, nx, 0) > 0.5) {
            hit = true;
            break;
          }
        }
      out.at(y, x, 0) = hit ? 1.0 : 0.0;
    }
  return out;
}

// Hit iff the maximal positive-attribution pixel falls inside the mask
// dilated by `dilate_px`. Ties resolve to the lowest flat index; a map with
// no positive scores is a miss.
inline bool pointing_game(const AttributionMap& attr, const Image& gt_mask, int dilate_px = 3) {
  if (gt_mask.channels != 1 || gt_mask.height != attr.segments.height ||
      gt_mask.width != attr.segments.width)
    throw std::invalid_argument("pointing game: mask and attribution shapes differ");
  if (detail::mask_pixel_count(gt_mask) == 0)
    throw std::invalid_argument("pointing game: empty ground-truth mask");

  double best = 0.0;
  int best_flat = -1;
  for (int y = 0; y < gt_mask.height; ++y)
    for (int x = 0; x < gt_mask.width; ++x) {
      const double v = attr.per_pixel(y, x);
      if (v > best) {
        best = v;
        best_flat = y * gt_mask.width + x;
      }
    }
  if (best_flat < 0) return false;

  const Image wide = dilate_mask(gt_mask, dilate_px);
  return wide.at(best_flat / gt_mask.width, best_flat % gt_mask.width, 0) > 0.5;
}

// Chance rate of the pointing game: fraction of uniformly drawn pixels that
// land inside the dilated mask.
inline double random_pixel_hit_rate(const Image& gt_mask, int n_draws, std::uint64_t seed,
                                    int dilate_px = 3) {
  const Image wide = dilate_mask(gt_mask, dilate_px);
  Rng rng(seed);
  int hits = 0;
  for (int i = 0; i < n_draws; ++i) {
    const int y = rng.uniform_int(0, gt_mask.height - 1);
    const int x = rng.uniform_int(0, gt_mask.width - 1);
    if (wide.at(y, x, 0) > 0.5) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n_draws);
}

// IoU between the top-q fraction of pixels by attribution score and the
// ground-truth mask. The cut keeps k = max(1, round(q*H*W)) pixels; ties
// resolve to the lower flat index.
inline double topq_iou(const AttributionMap& attr, const Image& gt_mask, double q = 0.2) {
  if (gt_mask.channels != 1 || gt_mask.height != attr.segments.height ||
      gt_mask.width != attr.segments.width)
    throw std::invalid_argument("topq_iou: mask and attribution shapes differ");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("topq_iou: q must be in (0, 1]");
  if (detail::mask_pixel_count(gt_mask) == 0)
    throw std::invalid_argument("topq_iou: empty ground-truth mask");

  const int n = gt_mask.height * gt_mask.width;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double va = attr.per_pixel(a / gt_mask.width, a % gt_mask.width);
    const double vb = attr.per_pixel(b / gt_mask.width, b % gt_mask.width);
    if (va != vb) return va > vb;
    return a < b;
  });
  const int k = std::max(1, static_cast<int>(std::lround(q * n)));

  int inter = 0, top_count = 0;
  std::vector<bool> in_top(static_cast<std::size_t>(n), false);
  for (int i = 0; i < k; ++i) {
    in_top[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
    ++top_count;
  }
  int mask_count = 0;
  for (int flat = 0; flat < n; ++flat) {
    const bool m = gt_mask.at(flat / gt_mask.width, flat % gt_mask.width, 0) > 0.5;
    if (m) ++mask_count;
    if (m && in_top[static_cast<std::size_t>(flat)]) ++inter;
  }
  const int uni = top_count + mask_count - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace mvx
