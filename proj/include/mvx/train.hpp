#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvx/dataset.hpp"
#include "mvx/metrics.hpp"
#include "mvx/mvarch.hpp"
#include "mvx/rng.hpp"

#include <nlohmann/json.hpp>

namespace mvx {

struct TrainReport;

struct TrainConfig {
  int batch_size = 4;
  int epochs = 150;
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Called after each epoch with the report so far; epoch rows are appended
  // before the call.
  std::function<void(int epoch, const TrainReport&)> on_epoch;
};

struct TrainReport {
  std::string arch;
  std::uint64_t seed = 0;
  int epochs = 0;
  int batch_size = 0;
  double learning_rate = 0.0;
  std::vector<double> train_loss;  // per epoch, mean over samples
  std::vector<double> train_acc;   // per epoch, running accuracy of batch forwards
  std::vector<double> test_acc;    // per epoch; empty when no eval set given
  double final_train_acc = 0.0;
  double final_test_acc = 0.0;
  // AUC of the positive class on the eval set after the last epoch; NaN when
  // no eval set was given or it holds a single class.
  double final_test_auc = std::numeric_limits<double>::quiet_NaN();
  // Comparisons elsewhere use the final values; the best epoch is reported
  // alongside because curves routinely peak before the end.
  double best_test_acc = 0.0;
  int best_epoch = 0;  // 1-based; 0 when no eval set
  double wall_time_s = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j{
        {"arch", arch},
        {"seed", seed},
        {"epochs", epochs},
        {"batch_size", batch_size},
        {"learning_rate", learning_rate},
        {"train_loss", train_loss},
        {"train_acc", train_acc},
        {"final_train_acc", final_train_acc},
        {"wall_time_s", wall_time_s},
    };
    if (!test_acc.empty()) {
      j["test_acc"] = test_acc;
      j["final_test_acc"] = final_test_acc;
      j["best_test_acc"] = best_test_acc;
      j["best_epoch"] = best_epoch;
      if (std::isfinite(final_test_auc)) j["final_test_auc"] = final_test_auc;
    }
    return j;
  }

  void save_json(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << to_json().dump(2) << "\n";
  }

  // One row per epoch. The test column stays empty when no eval set was given.
  void save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << "epoch,train_loss,train_acc,test_acc\n";
    char buf[160];
    for (std::size_t e = 0; e < train_loss.size(); ++e) {
      if (e < test_acc.size())
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e + 1, train_loss[e],
                      train_acc[e], test_acc[e]);
      else
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,\n", e + 1, train_loss[e], train_acc[e]);
      out << buf;
    }
  }
};

// Adam over a fixed parameter list. Entries flagged frozen never move, and
// their moment slots stay zero.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ParamRef> refs, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : refs_(std::move(refs)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& r : refs_) {
      m_.emplace_back(Eigen::MatrixXd::Zero(r.value->rows(), r.value->cols()));
      v_.emplace_back(Eigen::MatrixXd::Zero(r.value->rows(), r.value->cols()));
    }
  }

  int steps_taken() const { return t_; }

  void step(const std::vector<Eigen::MatrixXd>& grads) {
    if (grads.size() != refs_.size())
      throw std::invalid_argument("optimizer step: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < refs_.size(); ++i) {
      if (refs_[i].frozen) continue;
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i].array() + (1.0 - beta2_) * grads[i].array().square();
      const Eigen::ArrayXXd m_hat = m_[i].array() / bc1;
      const Eigen::ArrayXXd v_hat = v_[i].array() / bc2;
      refs_[i].value->array() -= lr_ * m_hat / (v_hat.sqrt() + eps_);
    }
  }

 private:
  std::vector<ParamRef> refs_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

namespace detail {

inline void check_model_data(const MultiViewModel& model, const Dataset& ds,
                             const char* what) {
  if (ds.samples.empty()) throw std::invalid_argument(std::string(what) + " set is empty");
  if (ds.schema.num_views != model.schema().num_views ||
      ds.schema.height != model.schema().height || ds.schema.width != model.schema().width ||
      ds.schema.channels != model.schema().channels)
    throw std::invalid_argument(std::string(what) + " set geometry does not match the model");
}

}  // namespace detail

inline double model_accuracy(const MultiViewModel& model, const Dataset& ds) {
  if (ds.samples.empty()) return 0.0;
  int correct = 0;
  for (const auto& s : ds.samples)
    if (model.predict(s.views) == s.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ds.samples.size());
}

// Minibatch training with Adam and cross-entropy. Sample order is reshuffled
// every epoch from the seed, so a given (model seed, data, train seed) triple
// reproduces bit-identical weights. Train accuracy is read off the forward
// passes the loss already needs; test accuracy (when an eval set is given)
// costs one extra pass per epoch.
inline TrainReport train_model(MultiViewModel& model, const Dataset& train,
                               const Dataset* eval_set, const TrainConfig& cfg,
                               std::uint64_t seed) {
  detail::check_model_data(model, train, "train");
  if (eval_set) detail::check_model_data(model, *eval_set, "eval");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be non-negative");

  TrainReport report;
  report.arch = to_string(model.kind());
  report.seed = seed;
  report.epochs = cfg.epochs;
  report.batch_size = cfg.batch_size;
  report.learning_rate = cfg.learning_rate;

  const auto t0 = std::chrono::steady_clock::now();
  AdamOptimizer opt(model.param_refs(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<Eigen::MatrixXd> grads = model.make_grad_buffers();
  Rng shuffle_rng(derive_seed(seed, 777));

  const int n = static_cast<int>(train.samples.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  MultiViewModel::ForwardTrace trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    int correct = 0;
    int batch_index = 0;
    for (int start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const int stop = std::min(start + cfg.batch_size, n);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      for (auto& g : grads) g.setZero();
      for (int i = start; i < stop; ++i) {
        const Sample& s = train.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        const Eigen::VectorXd logits = model.forward_trace(s.views, trace);
        loss_sum += cross_entropy_from_logits(logits, s.label);
        Eigen::Index best;
        logits.maxCoeff(&best);
        if (static_cast<int>(best) == s.label) ++correct;
        const Eigen::VectorXd d_logits = cross_entropy_grad(logits, s.label) * inv_batch;
        model.backward(trace, d_logits, grads);
      }
      if (!std::isfinite(loss_sum))
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(batch_index + 1));
      opt.step(grads);
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(n));
    report.train_acc.push_back(static_cast<double>(correct) / static_cast<double>(n));
    if (eval_set) report.test_acc.push_back(model_accuracy(model, *eval_set));
    if (cfg.on_epoch) cfg.on_epoch(epoch + 1, report);
  }

  report.final_train_acc = report.train_acc.empty() ? 0.0 : report.train_acc.back();
  report.final_test_acc = report.test_acc.empty() ? 0.0 : report.test_acc.back();
  for (std::size_t e = 0; e < report.test_acc.size(); ++e)
    if (report.test_acc[e] > report.best_test_acc) {
      report.best_test_acc = report.test_acc[e];
      report.best_epoch = static_cast<int>(e) + 1;
    }
  if (eval_set && cfg.epochs > 0) {
    std::vector<double> pos;
    std::vector<int> bin;
    const int positive = model.schema().num_classes() == 2 ? 1 : -1;
    if (positive == 1) {
      for (const auto& s : eval_set->samples) {
        pos.push_back(model.predict_proba(s.views)(1));
        bin.push_back(s.label == 1 ? 1 : 0);
      }
      const bool both = std::count(bin.begin(), bin.end(), 1) > 0 &&
                        std::count(bin.begin(), bin.end(), 0) > 0;
      if (both) report.final_test_auc = auc(pos, bin);
    }
  }
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// One EXPLAINer box: the frozen extractor serving a set of views plus a
// freshly trained single dense head from its feature vector to class logits.
struct HeadScope {
  std::string scope;
  const FeatureExtractor* extractor = nullptr;
  std::vector<int> views;
};

struct OneViewHead {
  std::string scope;
  std::vector<int> views;
  Dense layer;
};

// Scope layout per architecture kind: one shared box (CSV), one per
// sub-group (SSG), one per view (PSG and CDV).
inline std::vector<HeadScope> explainer_scopes(const MultiViewModel& model) {
  std::vector<HeadScope> scopes;
  const auto& schema = model.schema();
  switch (model.kind()) {
    case ArchKind::CSV: {
      HeadScope s{"all", &model.extractors().front(), {}};
      for (int v = 0; v < schema.num_views; ++v) s.views.push_back(v);
      scopes.push_back(std::move(s));
      break;
    }
    case ArchKind::SSG:
      for (int g = 0; g < schema.num_groups(); ++g)
        scopes.push_back({"group" + std::to_string(g),
                          &model.extractors()[static_cast<std::size_t>(g)],
                          schema.subgroups[static_cast<std::size_t>(g)]});
      break;
    case ArchKind::PSG:
    case ArchKind::CDV:
      for (int v = 0; v < schema.num_views; ++v)
        scopes.push_back({"view" + std::to_string(v),
                          &model.extractors()[static_cast<std::size_t>(v)],
                          {v}});
      break;
  }
  return scopes;
}

// Fits one dense head per scope on the (frozen feature vector, sample label)
// pairs of the views in that scope. Extractors must be frozen beforehand and
// are only ever read. Features are extracted once up front; the epochs then
// only touch the tiny head weights.
inline std::map<std::string, OneViewHead> train_heads(const std::vector<HeadScope>& scopes,
                                                      const Dataset& train,
                                                      const TrainConfig& cfg,
                                                      std::uint64_t seed) {
  if (train.samples.empty()) throw std::invalid_argument("train_heads: empty training set");
  for (const auto& sc : scopes)
    if (!sc.extractor->frozen())
      throw std::invalid_argument("train_heads: extractor '" + sc.extractor->extractor_id() +
                                  "' is not frozen; freeze extractors before fitting heads");

  const int C = static_cast<int>(train.schema.class_names.size());
  std::map<std::string, OneViewHead> heads;
  for (std::size_t si = 0; si < scopes.size(); ++si) {
    const auto& sc = scopes[si];
    std::vector<Eigen::VectorXd> feats;
    std::vector<int> labels;
    feats.reserve(train.samples.size() * sc.views.size());
    for (const auto& sample : train.samples)
      for (int v : sc.views) {
        feats.push_back(sc.extractor->forward(sample.views[static_cast<std::size_t>(v)]));
        labels.push_back(sample.label);
      }

    Rng init_rng(derive_seed(seed, 500 + static_cast<std::uint64_t>(si)));
    OneViewHead head{sc.scope, sc.views, Dense(sc.extractor->feature_dim(), C, init_rng)};
    std::vector<ParamRef> refs{{"head.weight", &head.layer.weight, false},
                               {"head.bias", &head.layer.bias, false}};
    AdamOptimizer opt(refs, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    Eigen::MatrixXd dw = Eigen::MatrixXd::Zero(head.layer.weight.rows(), head.layer.weight.cols());
    Eigen::MatrixXd db = Eigen::MatrixXd::Zero(head.layer.bias.rows(), 1);

    Rng shuffle_rng(derive_seed(seed, 600 + static_cast<std::uint64_t>(si)));
    const int n = static_cast<int>(feats.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      for (int start = 0; start < n; start += cfg.batch_size) {
        const int stop = std::min(start + cfg.batch_size, n);
        const double inv_batch = 1.0 / static_cast<double>(stop - start);
        dw.setZero();
        db.setZero();
        for (int i = start; i < stop; ++i) {
          const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
          const Eigen::VectorXd logits = head.layer.forward(feats[idx]);
          const Eigen::VectorXd d_logits =
              cross_entropy_grad(logits, labels[idx]) * inv_batch;
          head.layer.backward(feats[idx], d_logits, dw, db, nullptr);
        }
        opt.step({dw, db});
      }
    }
    heads.emplace(sc.scope, std::move(head));
  }
  return heads;
}

}  // namespace mvx
