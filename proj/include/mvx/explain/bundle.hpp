#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvx/dataset.hpp"
#include "mvx/explain/attribution.hpp"
#include "mvx/explain/lime.hpp"
#include "mvx/explain/perturb.hpp"
#include "mvx/explain/segment.hpp"
#include "mvx/explain/shapley.hpp"
#include "mvx/mvarch.hpp"
#include "mvx/train.hpp"

namespace mvx {

struct ExplainOptions {
  ExplainMethod method = ExplainMethod::lime;
  int num_segments = 40;
  int lime_samples = 1000;
  double lime_kernel_width = -1.0;  // <= 0 picks 0.25 * sqrt(S)
  double lime_ridge = 1.0;
  int shap_samples = 2048;
  BaselineMode baseline = BaselineMode::mean_color;
  int target_class = -1;  // < 0 explains the model's own prediction
};

// A trained model with frozen extractors plus the per-scope one-view heads
// that the attribution methods probe. Building the bundle freezes the
// extractors; nothing afterwards writes to them.
struct ExplainerBundle {
  MultiViewModel model;
  std::map<std::string, OneViewHead> heads;

  static ExplainerBundle build(MultiViewModel trained, const Dataset& head_train_set,
                               const TrainConfig& head_cfg, std::uint64_t seed) {
    ExplainerBundle b;
    b.model = std::move(trained);
    b.model.freeze_extractors();
    b.heads = train_heads(explainer_scopes(b.model), head_train_set, head_cfg, seed);
    return b;
  }

  HeadScope scope_for_view(int view) const {
    for (const auto& sc : explainer_scopes(model))
      for (int v : sc.views)
        if (v == view) return sc;
    throw std::invalid_argument("view index " + std::to_string(view) +
                                " outside the model's schema");
  }

  const OneViewHead& head_for_view(int view) const {
    const auto scope = scope_for_view(view);
    const auto it = heads.find(scope.scope);
    if (it == heads.end())
      throw std::runtime_error("no trained head for scope '" + scope.scope +
                               "'; run head training first");
    return it->second;
  }

  // The black box the explainers see: one view image in, the one-view
  // head's class probabilities out.
  ModelFn one_view_fn(int view) const {
    const auto scope = scope_for_view(view);
    const auto it = heads.find(scope.scope);
    if (it == heads.end())
      throw std::runtime_error("no trained head for scope '" + scope.scope +
                               "'; run head training first");
    const FeatureExtractor* fe = scope.extractor;
    const Dense* head = &it->second.layer;
    return [fe, head](const Image& img) { return softmax(head->forward(fe->forward(img))); };
  }
};

inline AttributionMap explain_view(const ExplainerBundle& bundle, const Sample& sample,
                                   int view, const ExplainOptions& opt, std::uint64_t seed) {
  if (view < 0 || view >= bundle.model.schema().num_views)
    throw std::invalid_argument("view index " + std::to_string(view) +
                                " outside the model's schema");
  const Image& img = sample.views[static_cast<std::size_t>(view)];
  const int target =
      opt.target_class >= 0 ? opt.target_class : bundle.model.predict(sample.views);
  if (target >= bundle.model.schema().num_classes())
    throw std::invalid_argument("target class out of range");

  SegmentOptions seg_opt;
  seg_opt.num_segments = opt.num_segments;
  const SegmentMask mask = segment(img, seg_opt, derive_seed(seed, 1));
  const ModelFn fn = bundle.one_view_fn(view);

  AttributionMap attr;
  switch (opt.method) {
    case ExplainMethod::lime: {
      LimeOptions lo;
      lo.n_samples = opt.lime_samples;
      lo.kernel_width = opt.lime_kernel_width;
      lo.ridge = opt.lime_ridge;
      lo.baseline = opt.baseline;
      attr = lime_explain(fn, img, mask, target, lo, derive_seed(seed, 2));
      break;
    }
    case ExplainMethod::kernel_shap: {
      ShapOptions so;
      so.n_samples = opt.shap_samples;
      so.baseline = opt.baseline;
      attr = kernel_shap_explain(fn, img, mask, target, so, derive_seed(seed, 3));
      break;
    }
    case ExplainMethod::exact_shapley:
      attr = exact_shapley_explain(fn, img, mask, target, opt.baseline);
      break;
  }
  attr.view_index = view;
  return attr;
}

}  // namespace mvx
