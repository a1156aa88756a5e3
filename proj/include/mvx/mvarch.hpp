#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mvx/backbone.hpp"
#include "mvx/dataset.hpp"
#include "mvx/layers.hpp"
#include "mvx/schema.hpp"
#include "mvx/serialize.hpp"

namespace mvx {

// The four fusion topologies: a shared extractor over all views (CSV), one
// extractor per visually similar sub-group (SSG), per-view extractors with
// per-group classifiers cascaded into a combiner (PSG), and per-view
// extractors with global pooling (CDV).
enum class ArchKind { CSV, SSG, PSG, CDV };

inline const char* to_string(ArchKind k) {
  switch (k) {
    case ArchKind::CSV: return "csv";
    case ArchKind::SSG: return "ssg";
    case ArchKind::PSG: return "psg";
    default: return "cdv";
  }
}

inline ArchKind arch_from_string(const std::string& s) {
  if (s == "csv") return ArchKind::CSV;
  if (s == "ssg") return ArchKind::SSG;
  if (s == "psg") return ArchKind::PSG;
  if (s == "cdv") return ArchKind::CDV;
  throw std::invalid_argument("unknown architecture kind: " + s +
                              " (expected csv, ssg, psg or cdv)");
}

enum class PoolMode { max, mean };

inline const char* to_string(PoolMode m) { return m == PoolMode::max ? "max" : "mean"; }

inline PoolMode pool_from_string(const std::string& s) {
  if (s == "max") return PoolMode::max;
  if (s == "mean") return PoolMode::mean;
  throw std::invalid_argument("unknown pool mode: " + s);
}

// Elementwise aggregation of per-view feature vectors. Permutation-invariant
// in its inputs.
inline Eigen::VectorXd view_pool(const std::vector<Eigen::VectorXd>& features, PoolMode mode) {
  if (features.empty()) throw std::invalid_argument("view_pool: empty feature list");
  const Eigen::Index d = features.front().size();
  for (const auto& f : features)
    if (f.size() != d) throw std::invalid_argument("view_pool: ragged feature lengths");
  Eigen::VectorXd out = features.front();
  if (mode == PoolMode::max) {
    for (std::size_t k = 1; k < features.size(); ++k) out = out.cwiseMax(features[k]);
  } else {
    for (std::size_t k = 1; k < features.size(); ++k) out += features[k];
    out /= static_cast<double>(features.size());
  }
  return out;
}

// Small dense stack: hidden layers with activation, linear output layer.
// Default depth is a single dense layer.
struct Mlp {
  std::vector<Dense> layers;
  Activation act = Activation::relu;

  Mlp() = default;
  Mlp(int in_dim, const std::vector<int>& hidden, int out_dim, Rng& rng,
      Activation activation = Activation::relu)
      : act(activation) {
    int d = in_dim;
    for (int h : hidden) {
      layers.emplace_back(d, h, rng);
      d = h;
    }
    layers.emplace_back(d, out_dim, rng);
  }

  struct Trace {
    std::vector<Eigen::VectorXd> inputs;  // input to each layer
    std::vector<Eigen::VectorXd> pre;     // pre-activation of hidden layers
  };

  Eigen::VectorXd forward(const Eigen::VectorXd& x, Trace* trace = nullptr) const {
    Eigen::VectorXd h = x;
    if (trace) {
      trace->inputs.clear();
      trace->pre.clear();
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (trace) trace->inputs.push_back(h);
      Eigen::VectorXd z = layers[i].forward(h);
      if (i + 1 < layers.size()) {
        if (trace) trace->pre.push_back(z);
        h = z.unaryExpr([this](double v) { return activate(v, act); });
      } else {
        h = std::move(z);
      }
    }
    return h;
  }

  // grads must hold 2*layers.size() matrices (weight, bias per layer).
  Eigen::VectorXd backward(const Trace& trace, const Eigen::VectorXd& d_out,
                           std::vector<Eigen::MatrixXd>& grads, std::size_t offset) const {
    Eigen::VectorXd d = d_out;
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      if (ui + 1 < layers.size())
        d = d.cwiseProduct(trace.pre[ui].unaryExpr(
            [this](double v) { return activate_grad(v, act); }));
      Eigen::VectorXd d_in;
      layers[ui].backward(trace.inputs[ui], d, grads[offset + 2 * ui],
                          grads[offset + 2 * ui + 1], &d_in);
      d = std::move(d_in);
    }
    return d;
  }

  std::size_t param_count() const { return 2 * layers.size(); }

  std::vector<Eigen::MatrixXd*> params() {
    std::vector<Eigen::MatrixXd*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }
  std::vector<const Eigen::MatrixXd*> params() const {
    std::vector<const Eigen::MatrixXd*> out;
    for (const auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }
};

struct ModelConfig {
  BackboneConfig backbone;
  std::vector<int> classifier_hidden;  // empty = single dense layer
  PoolMode pool = PoolMode::max;
};

struct ParamRef {
  std::string name;
  Eigen::MatrixXd* value;
  bool frozen;
};

// One architecture instance: extractors keyed by scope, the pooling mode and
// the classifier stack. Weights are owned here; forward/predict are const and
// safe to call concurrently once training stops mutating the model.
class MultiViewModel {
 public:
  MultiViewModel() = default;

  ArchKind kind() const { return kind_; }
  const MultiViewSchema& schema() const { return schema_; }
  PoolMode pool_mode() const { return pool_; }
  std::uint64_t seed() const { return seed_; }
  const ModelConfig& config() const { return cfg_; }

  std::vector<FeatureExtractor>& extractors() { return extractors_; }
  const std::vector<FeatureExtractor>& extractors() const { return extractors_; }
  Mlp& final_classifier() { return final_clf_; }
  const Mlp& final_classifier() const { return final_clf_; }
  std::vector<Mlp>& group_classifiers() { return group_clfs_; }
  const std::vector<Mlp>& group_classifiers() const { return group_clfs_; }

  // Extractor index serving a given view.
  int extractor_index(int view) const {
    switch (kind_) {
      case ArchKind::CSV: return 0;
      case ArchKind::SSG: return schema_.group_of_view(view);
      default: return view;  // PSG, CDV
    }
  }

  void freeze_extractors() {
    for (auto& fe : extractors_) fe.freeze();
  }

  struct ForwardTrace {
    std::vector<FeatureExtractor::Trace> view_traces;
    std::vector<Eigen::VectorXd> features;       // per view
    std::vector<Eigen::VectorXd> pooled;         // per pool group (1 for CSV/CDV)
    std::vector<Eigen::VectorXi> pool_argmax;    // winner view per coordinate (max mode)
    std::vector<std::vector<int>> pool_members;  // view indices per pool group
    Eigen::VectorXd clf_input;
    Mlp::Trace clf_trace;
    // PSG only:
    std::vector<Eigen::VectorXd> group_logits;
    std::vector<Eigen::VectorXd> group_probs;
    std::vector<Mlp::Trace> group_clf_traces;
  };

  Eigen::VectorXd forward(const std::vector<Image>& views) const {
    return run(views, nullptr);
  }

  Eigen::VectorXd forward(const Sample& s) const { return run(s.views, nullptr); }

  Eigen::VectorXd forward_trace(const std::vector<Image>& views, ForwardTrace& trace) const {
    return run(views, &trace);
  }

  Eigen::VectorXd predict_proba(const std::vector<Image>& views) const {
    return softmax(forward(views));
  }

  int predict(const std::vector<Image>& views) const {
    Eigen::Index best;
    predict_proba(views).maxCoeff(&best);
    return static_cast<int>(best);
  }

  // Parameter enumeration order: extractors, then PSG group classifiers,
  // then the final classifier/combiner. Gradient buffers follow this order.
  std::vector<ParamRef> param_refs() {
    std::vector<ParamRef> out;
    for (auto& fe : extractors_) {
      const auto names = fe.param_names();
      auto ps = fe.params();
      for (std::size_t i = 0; i < ps.size(); ++i)
        out.push_back({"extractor." + fe.extractor_id() + "." + names[i], ps[i], fe.frozen()});
    }
    for (std::size_t g = 0; g < group_clfs_.size(); ++g) {
      auto ps = group_clfs_[g].params();
      for (std::size_t i = 0; i < ps.size(); ++i)
        out.push_back({"group_clf" + std::to_string(g) + ".p" + std::to_string(i), ps[i], false});
    }
    {
      auto ps = final_clf_.params();
      for (std::size_t i = 0; i < ps.size(); ++i)
        out.push_back({std::string(kind_ == ArchKind::PSG ? "combiner" : "classifier") + ".p" +
                           std::to_string(i),
                       ps[i], false});
    }
    return out;
  }

  std::vector<Eigen::MatrixXd> make_grad_buffers() {
    std::vector<Eigen::MatrixXd> g;
    for (const auto& ref : param_refs())
      g.emplace_back(Eigen::MatrixXd::Zero(ref.value->rows(), ref.value->cols()));
    return g;
  }

  // Accumulates d(loss)/d(params) into flat `grads` (param_refs order).
  void backward(const ForwardTrace& trace, const Eigen::VectorXd& d_logits,
                std::vector<Eigen::MatrixXd>& grads) const {
    const int num_views = schema_.num_views;
    std::vector<Eigen::VectorXd> d_features(
        static_cast<std::size_t>(num_views),
        Eigen::VectorXd::Zero(extractors_.front().feature_dim()));

    if (kind_ == ArchKind::PSG) {
      const int G = schema_.num_groups();
      const int C = schema_.num_classes();
      const Eigen::VectorXd d_concat =
          final_clf_.backward(trace.clf_trace, d_logits, grads, combiner_offset());
      for (int g = 0; g < G; ++g) {
        const Eigen::VectorXd d_probs = d_concat.segment(g * C, C);
        // Softmax jacobian: d_z = p .* (d_p - <d_p, p>).
        const Eigen::VectorXd& p = trace.group_probs[static_cast<std::size_t>(g)];
        const double inner = d_probs.dot(p);
        const Eigen::VectorXd d_group_logits =
            p.cwiseProduct((d_probs.array() - inner).matrix());
        const Eigen::VectorXd d_pooled = group_clfs_[static_cast<std::size_t>(g)].backward(
            trace.group_clf_traces[static_cast<std::size_t>(g)], d_group_logits, grads,
            group_clf_offset(g));
        unpool(trace, g, d_pooled, d_features);
      }
    } else {
      const Eigen::VectorXd d_clf_in =
          final_clf_.backward(trace.clf_trace, d_logits, grads, final_clf_offset());
      if (kind_ == ArchKind::SSG) {
        const int D = extractors_.front().feature_dim();
        for (int g = 0; g < schema_.num_groups(); ++g)
          unpool(trace, g, d_clf_in.segment(g * D, D), d_features);
      } else {
        unpool(trace, 0, d_clf_in, d_features);
      }
    }

    ParamGrads shim;
    const std::size_t per_ext = extractor_param_count();
    shim.g.resize(per_ext);
    for (int v = 0; v < num_views; ++v) {
      const int e = extractor_index(v);
      auto& fe = extractors_[static_cast<std::size_t>(e)];
      if (fe.frozen()) continue;  // nothing downstream needs these gradients
      const std::size_t off = static_cast<std::size_t>(e) * per_ext;
      for (std::size_t i = 0; i < per_ext; ++i) shim.g[i].swap(grads[off + i]);
      fe.backward(trace.view_traces[static_cast<std::size_t>(v)],
                  d_features[static_cast<std::size_t>(v)], shim);
      for (std::size_t i = 0; i < per_ext; ++i) shim.g[i].swap(grads[off + i]);
    }
  }

  std::uint64_t weight_hash() {
    Fnv1a64 h;
    for (const auto& ref : param_refs())
      h.update(ref.value->data(), static_cast<std::size_t>(ref.value->size()) * sizeof(double));
    return h.digest();
  }

  WeightArchive to_archive() const {
    WeightArchive ar;
    ar.manifest = {
        {"type", "mvx.model"},
        {"kind", to_string(kind_)},
        {"pool", to_string(pool_)},
        {"seed", seed_},
        {"schema",
         {{"num_views", schema_.num_views},
          {"subgroups", schema_.subgroups},
          {"height", schema_.height},
          {"width", schema_.width},
          {"channels", schema_.channels},
          {"class_names", schema_.class_names}}},
        {"backbone",
         {{"conv_channels", cfg_.backbone.conv_channels},
          {"feature_dim", cfg_.backbone.feature_dim},
          {"activation", to_string(cfg_.backbone.activation)}}},
        {"classifier_hidden", cfg_.classifier_hidden},
    };
    nlohmann::json frozen = nlohmann::json::array();
    for (const auto& fe : extractors_) frozen.push_back(fe.frozen());
    ar.manifest["frozen"] = frozen;

    for (const auto& fe : extractors_)
      fe.append_to_archive(ar, "extractor." + fe.extractor_id() + ".");
    for (std::size_t g = 0; g < group_clfs_.size(); ++g) {
      auto ps = group_clfs_[g].params();
      for (std::size_t i = 0; i < ps.size(); ++i)
        ar.put_matrix("group_clf" + std::to_string(g) + ".p" + std::to_string(i), *ps[i]);
    }
    auto ps = final_clf_.params();
    for (std::size_t i = 0; i < ps.size(); ++i)
      ar.put_matrix(std::string(kind_ == ArchKind::PSG ? "combiner" : "classifier") + ".p" +
                        std::to_string(i),
                    *ps[i]);
    return ar;
  }

  void save(const std::string& path) const { to_archive().save(path); }

  static MultiViewModel from_archive(const WeightArchive& ar);
  static MultiViewModel load(const std::string& path) {
    return from_archive(WeightArchive::load(path));
  }

  friend MultiViewModel build_model(ArchKind, const MultiViewSchema&, const ModelConfig&,
                                    std::uint64_t);

 private:
  std::size_t extractor_param_count() const {
    // All extractors share one architecture here.
    return 2 * cfg_.backbone.conv_channels.size() + 2;
  }
  std::size_t group_clf_offset(int g) const {
    return extractors_.size() * extractor_param_count() +
           static_cast<std::size_t>(g) * group_clfs_.front().param_count();
  }
  std::size_t combiner_offset() const {
    return extractors_.size() * extractor_param_count() +
           group_clfs_.size() * (group_clfs_.empty() ? 0 : group_clfs_.front().param_count());
  }
  std::size_t final_clf_offset() const { return combiner_offset(); }

  // Pool group g over its member views; fills trace->pooled etc.
  void unpool(const ForwardTrace& trace, int g, const Eigen::VectorXd& d_pooled,
              std::vector<Eigen::VectorXd>& d_features) const {
    const auto& members = trace.pool_members[static_cast<std::size_t>(g)];
    if (pool_ == PoolMode::max) {
      const auto& winners = trace.pool_argmax[static_cast<std::size_t>(g)];
      for (Eigen::Index d = 0; d < d_pooled.size(); ++d)
        d_features[static_cast<std::size_t>(winners(d))](d) += d_pooled(d);
    } else {
      const double inv = 1.0 / static_cast<double>(members.size());
      for (int v : members) d_features[static_cast<std::size_t>(v)] += d_pooled * inv;
    }
  }

  Eigen::VectorXd pool_group(const std::vector<Eigen::VectorXd>& features,
                             const std::vector<int>& members, ForwardTrace* trace) const {
    std::vector<Eigen::VectorXd> sel;
    sel.reserve(members.size());
    for (int v : members) sel.push_back(features[static_cast<std::size_t>(v)]);
    Eigen::VectorXd pooled = view_pool(sel, pool_);
    if (trace) {
      Eigen::VectorXi winners = Eigen::VectorXi::Zero(pooled.size());
      if (pool_ == PoolMode::max) {
        for (Eigen::Index d = 0; d < pooled.size(); ++d) {
          int best = members.front();
          double best_v = features[static_cast<std::size_t>(best)](d);
          for (int v : members)
            if (features[static_cast<std::size_t>(v)](d) > best_v) {
              best_v = features[static_cast<std::size_t>(v)](d);
              best = v;
            }
          winners(d) = best;
        }
      }
      trace->pooled.push_back(pooled);
      trace->pool_argmax.push_back(std::move(winners));
      trace->pool_members.push_back(members);
    }
    return pooled;
  }

  Eigen::VectorXd run(const std::vector<Image>& views, ForwardTrace* trace) const {
    if (static_cast<int>(views.size()) != schema_.num_views)
      throw std::invalid_argument("forward: expected " + std::to_string(schema_.num_views) +
                                  " views, got " + std::to_string(views.size()));
    const int num_views = schema_.num_views;
    std::vector<Eigen::VectorXd> features(static_cast<std::size_t>(num_views));
    if (trace) {
      trace->view_traces.resize(static_cast<std::size_t>(num_views));
      trace->pooled.clear();
      trace->pool_argmax.clear();
      trace->pool_members.clear();
      trace->group_logits.clear();
      trace->group_probs.clear();
      trace->group_clf_traces.clear();
    }
    for (int v = 0; v < num_views; ++v) {
      const auto& fe = extractors_[static_cast<std::size_t>(extractor_index(v))];
      features[static_cast<std::size_t>(v)] =
          trace ? fe.forward_trace(views[static_cast<std::size_t>(v)],
                                   trace->view_traces[static_cast<std::size_t>(v)])
                : fe.forward(views[static_cast<std::size_t>(v)]);
    }
    if (trace) trace->features = features;

    std::vector<int> all_views(static_cast<std::size_t>(num_views));
    for (int v = 0; v < num_views; ++v) all_views[static_cast<std::size_t>(v)] = v;

    Eigen::VectorXd clf_in;
    switch (kind_) {
      case ArchKind::CSV:
      case ArchKind::CDV:
        clf_in = pool_group(features, all_views, trace);
        break;
      case ArchKind::SSG: {
        const int D = extractors_.front().feature_dim();
        clf_in.resize(static_cast<Eigen::Index>(schema_.num_groups()) * D);
        for (int g = 0; g < schema_.num_groups(); ++g)
          clf_in.segment(g * D, D) =
              pool_group(features, schema_.subgroups[static_cast<std::size_t>(g)], trace);
        break;
      }
      case ArchKind::PSG: {
        const int C = schema_.num_classes();
        clf_in.resize(static_cast<Eigen::Index>(schema_.num_groups()) * C);
        for (int g = 0; g < schema_.num_groups(); ++g) {
          const Eigen::VectorXd pooled =
              pool_group(features, schema_.subgroups[static_cast<std::size_t>(g)], trace);
          Mlp::Trace gt;
          const Eigen::VectorXd logits =
              group_clfs_[static_cast<std::size_t>(g)].forward(pooled, trace ? &gt : nullptr);
          const Eigen::VectorXd probs = softmax(logits);
          clf_in.segment(g * C, C) = probs;
          if (trace) {
            trace->group_logits.push_back(logits);
            trace->group_probs.push_back(probs);
            trace->group_clf_traces.push_back(std::move(gt));
          }
        }
        break;
      }
    }
    if (trace) {
      trace->clf_input = clf_in;
      return final_clf_.forward(clf_in, &trace->clf_trace);
    }
    return final_clf_.forward(clf_in);
  }

  ArchKind kind_ = ArchKind::CSV;
  MultiViewSchema schema_;
  PoolMode pool_ = PoolMode::max;
  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<FeatureExtractor> extractors_;
  std::vector<Mlp> group_clfs_;  // PSG only
  Mlp final_clf_;                // classifier, or PSG combiner
};

// Builds a freshly initialized model. Extractor multiplicity is fixed by the
// kind: CSV one shared, SSG one per sub-group, PSG and CDV one per view.
inline MultiViewModel build_model(ArchKind kind, const MultiViewSchema& schema,
                                  const ModelConfig& cfg, std::uint64_t seed) {
  schema.validate();
  MultiViewModel m;
  m.kind_ = kind;
  m.schema_ = schema;
  m.pool_ = cfg.pool;
  m.cfg_ = cfg;
  m.seed_ = seed;

  auto make_extractor = [&](const std::string& scope, std::uint64_t stream) {
    return FeatureExtractor(scope, schema.height, schema.width, schema.channels, cfg.backbone,
                            derive_seed(seed, stream));
  };

  switch (kind) {
    case ArchKind::CSV:
      m.extractors_.push_back(make_extractor("all", 100));
      break;
    case ArchKind::SSG:
      for (int g = 0; g < schema.num_groups(); ++g)
        m.extractors_.push_back(make_extractor("group" + std::to_string(g),
                                               100 + static_cast<std::uint64_t>(g)));
      break;
    case ArchKind::PSG:
    case ArchKind::CDV:
      for (int v = 0; v < schema.num_views; ++v)
        m.extractors_.push_back(make_extractor("view" + std::to_string(v),
                                               100 + static_cast<std::uint64_t>(v)));
      break;
  }

  const int D = cfg.backbone.feature_dim;
  const int C = schema.num_classes();
  if (kind == ArchKind::PSG) {
    for (int g = 0; g < schema.num_groups(); ++g) {
      Rng rng(derive_seed(seed, 300 + static_cast<std::uint64_t>(g)));
      m.group_clfs_.emplace_back(D, cfg.classifier_hidden, C, rng);
    }
    Rng rng(derive_seed(seed, 400));
    m.final_clf_ = Mlp(schema.num_groups() * C, cfg.classifier_hidden, C, rng);
  } else {
    const int in_dim = (kind == ArchKind::SSG) ? schema.num_groups() * D : D;
    Rng rng(derive_seed(seed, 400));
    m.final_clf_ = Mlp(in_dim, cfg.classifier_hidden, C, rng);
  }
  return m;
}

inline MultiViewModel MultiViewModel::from_archive(const WeightArchive& ar) {
  const auto& man = ar.manifest;
  if (man.value("type", "") != "mvx.model")
    throw std::runtime_error("archive is not a model checkpoint");
  MultiViewSchema schema;
  schema.num_views = man.at("schema").at("num_views").get<int>();
  schema.subgroups = man.at("schema").at("subgroups").get<std::vector<std::vector<int>>>();
  schema.height = man.at("schema").at("height").get<int>();
  schema.width = man.at("schema").at("width").get<int>();
  schema.channels = man.at("schema").at("channels").get<int>();
  schema.class_names = man.at("schema").at("class_names").get<std::vector<std::string>>();

  ModelConfig cfg;
  cfg.backbone.conv_channels = man.at("backbone").at("conv_channels").get<std::vector<int>>();
  cfg.backbone.feature_dim = man.at("backbone").at("feature_dim").get<int>();
  cfg.backbone.activation =
      activation_from_string(man.at("backbone").at("activation").get<std::string>());
  cfg.classifier_hidden = man.at("classifier_hidden").get<std::vector<int>>();
  cfg.pool = pool_from_string(man.at("pool").get<std::string>());

  MultiViewModel m = build_model(arch_from_string(man.at("kind").get<std::string>()), schema, cfg,
                                 man.at("seed").get<std::uint64_t>());
  for (auto& fe : m.extractors_) fe.load_from_archive(ar, "extractor." + fe.extractor_id() + ".");
  if (man.contains("frozen")) {
    const auto frozen = man.at("frozen").get<std::vector<bool>>();
    for (std::size_t i = 0; i < m.extractors_.size() && i < frozen.size(); ++i)
      if (frozen[i]) m.extractors_[i].freeze();
  }
  for (std::size_t g = 0; g < m.group_clfs_.size(); ++g) {
    auto ps = m.group_clfs_[g].params();
    for (std::size_t i = 0; i < ps.size(); ++i)
      *ps[i] = ar.get_matrix("group_clf" + std::to_string(g) + ".p" + std::to_string(i));
  }
  auto ps = m.final_clf_.params();
  for (std::size_t i = 0; i < ps.size(); ++i)
    *ps[i] = ar.get_matrix(std::string(m.kind_ == ArchKind::PSG ? "combiner" : "classifier") +
                           ".p" + std::to_string(i));
  return m;
}

}  // namespace mvx
