#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mvx/image.hpp"
#include "mvx/layers.hpp"
#include "mvx/rng.hpp"
#include "mvx/serialize.hpp"

namespace mvx {

// Hyperparameters of the default backbone: N blocks of
// (3x3 conv -> activation -> 2x2 max pool), then flatten -> dense to
// feature_dim. Small enough to train on 64x64 views in minutes on a CPU.
struct BackboneConfig {
  std::vector<int> conv_channels = {8, 16, 32};
  int feature_dim = 128;
  Activation activation = Activation::relu;
};

// Gradient accumulator shaped like a module's parameter list.
struct ParamGrads {
  std::vector<Eigen::MatrixXd> g;

  void init_like(const std::vector<Eigen::MatrixXd*>& params) {
    g.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      g[i] = Eigen::MatrixXd::Zero(params[i]->rows(), params[i]->cols());
  }
  void set_zero() {
    for (auto& m : g) m.setZero();
  }
};

// Per-view convolutional feature extractor. Owns its weights; `frozen`
// marks it off-limits for optimizers (they skip every parameter of a frozen
// extractor, so the weights stay bit-identical).
class FeatureExtractor {
 public:
  FeatureExtractor() = default;

  FeatureExtractor(std::string extractor_id, int in_h, int in_w, int in_ch,
                   BackboneConfig cfg, std::uint64_t seed)
      : id_(std::move(extractor_id)), in_h_(in_h), in_w_(in_w), in_ch_(in_ch),
        cfg_(std::move(cfg)) {
    int h = in_h_, w = in_w_;
    for (std::size_t b = 0; b < cfg_.conv_channels.size(); ++b) {
      if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("backbone: input geometry must be divisible by 2 per block");
      h /= 2;
      w /= 2;
    }
    Rng rng(seed);
    int ch = in_ch_;
    for (int out_ch : cfg_.conv_channels) {
      convs_.emplace_back(ch, out_ch, rng);
      ch = out_ch;
    }
    flat_dim_ = h * w * ch;
    fc_ = Dense(flat_dim_, cfg_.feature_dim, rng);
  }

  const std::string& extractor_id() const { return id_; }
  int feature_dim() const { return cfg_.feature_dim; }
  const BackboneConfig& config() const { return cfg_; }
  int input_height() const { return in_h_; }
  int input_width() const { return in_w_; }
  int input_channels() const { return in_ch_; }

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }  // idempotent

  struct Trace {
    std::vector<Conv2D::Trace> conv;
    std::vector<MaxPool2x2::Trace> pool;
    Eigen::VectorXd flat;  // dense input
  };

  Eigen::VectorXd forward(const Image& img) const { return run(img, nullptr); }

  Eigen::VectorXd forward_trace(const Image& img, Trace& trace) const {
    trace.conv.resize(convs_.size());
    trace.pool.resize(convs_.size());
    return run(img, &trace);
  }

  // Accumulates d(loss)/d(params) into `grads` (ordered like params()).
  void backward(const Trace& trace, const Eigen::VectorXd& d_features,
                ParamGrads& grads) const {
    const std::size_t nb = convs_.size();
    std::size_t gi = 2 * nb;  // fc weight index
    Eigen::VectorXd d_flat;
    fc_.backward(trace.flat, d_features, grads.g[gi], grads.g[gi + 1], &d_flat);

    // Unflatten to the last pooled map.
    auto [h, w] = stage_dims(static_cast<int>(nb));
    const int ch = convs_.back().out_ch;
    Eigen::MatrixXd d_map = Eigen::Map<const Eigen::MatrixXd>(d_flat.data(), h * w, ch);

    for (int b = static_cast<int>(nb) - 1; b >= 0; --b) {
      auto [ph, pw] = stage_dims(b);  // conv-output geometry for block b
      Eigen::MatrixXd d_conv_out;
      MaxPool2x2::backward(trace.pool[static_cast<std::size_t>(b)], d_map, ph, pw, d_conv_out);
      Eigen::MatrixXd d_in;
      convs_[static_cast<std::size_t>(b)].backward(
          trace.conv[static_cast<std::size_t>(b)], d_conv_out, ph, pw, cfg_.activation,
          grads.g[2 * static_cast<std::size_t>(b)], grads.g[2 * static_cast<std::size_t>(b) + 1],
          b > 0 ? &d_in : nullptr);
      d_map = std::move(d_in);
    }
  }

  std::vector<Eigen::MatrixXd*> params() {
    std::vector<Eigen::MatrixXd*> out;
    for (auto& c : convs_) {
      out.push_back(&c.kernel);
      out.push_back(&c.bias);
    }
    out.push_back(&fc_.weight);
    out.push_back(&fc_.bias);
    return out;
  }
  std::vector<const Eigen::MatrixXd*> params() const {
    std::vector<const Eigen::MatrixXd*> out;
    for (const auto& c : convs_) {
      out.push_back(&c.kernel);
      out.push_back(&c.bias);
    }
    out.push_back(&fc_.weight);
    out.push_back(&fc_.bias);
    return out;
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> out;
    for (std::size_t b = 0; b < convs_.size(); ++b) {
      out.push_back("conv" + std::to_string(b) + ".kernel");
      out.push_back("conv" + std::to_string(b) + ".bias");
    }
    out.push_back("fc.weight");
    out.push_back("fc.bias");
    return out;
  }

  std::uint64_t weight_hash() const {
    Fnv1a64 h;
    for (const auto* p : params()) h.update(p->data(), static_cast<std::size_t>(p->size()) * sizeof(double));
    return h.digest();
  }

  void copy_weights_from(const FeatureExtractor& other) {
    auto dst = params();
    auto src = other.params();
    if (dst.size() != src.size()) throw std::invalid_argument("copy_weights_from: layout mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i]->rows() != src[i]->rows() || dst[i]->cols() != src[i]->cols())
        throw std::invalid_argument("copy_weights_from: shape mismatch");
      *dst[i] = *src[i];
    }
  }

  void append_to_archive(WeightArchive& ar, const std::string& prefix) const {
    const auto names = param_names();
    const auto ps = params();
    for (std::size_t i = 0; i < ps.size(); ++i) ar.put_matrix(prefix + names[i], *ps[i]);
  }

  void load_from_archive(const WeightArchive& ar, const std::string& prefix) {
    const auto names = param_names();
    auto ps = params();
    for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] = ar.get_matrix(prefix + names[i]);
  }

  // Standalone weight archive with a manifest describing the architecture.
  WeightArchive to_archive() const {
    WeightArchive ar;
    ar.manifest = {
        {"type", "mvx.extractor"},
        {"extractor_id", id_},
        {"feature_dim", cfg_.feature_dim},
        {"input", {{"height", in_h_}, {"width", in_w_}, {"channels", in_ch_}}},
        {"conv_channels", cfg_.conv_channels},
        {"activation", to_string(cfg_.activation)},
        {"frozen", frozen_},
    };
    append_to_archive(ar, "");
    return ar;
  }

  static FeatureExtractor from_archive(const WeightArchive& ar) {
    const auto& m = ar.manifest;
    if (m.value("type", "") != "mvx.extractor")
      throw std::runtime_error("archive is not an extractor archive");
    BackboneConfig cfg;
    cfg.conv_channels = m.at("conv_channels").get<std::vector<int>>();
    cfg.feature_dim = m.at("feature_dim").get<int>();
    cfg.activation = activation_from_string(m.at("activation").get<std::string>());
    FeatureExtractor fe(m.at("extractor_id").get<std::string>(),
                        m.at("input").at("height").get<int>(),
                        m.at("input").at("width").get<int>(),
                        m.at("input").at("channels").get<int>(), cfg, /*seed=*/0);
    fe.load_from_archive(ar, "");
    fe.frozen_ = m.value("frozen", false);
    return fe;
  }

 private:
  // Geometry at the input of block b (b == num blocks gives the final map).
  std::pair<int, int> stage_dims(int block) const {
    int h = in_h_, w = in_w_;
    for (int i = 0; i < block; ++i) {
      h /= 2;
      w /= 2;
    }
    return {h, w};
  }

  Eigen::MatrixXd image_to_map(const Image& img) const {
    if (img.height != in_h_ || img.width != in_w_ || img.channels != in_ch_)
      throw std::invalid_argument(
          "extract: image shape " + std::to_string(img.height) + "x" + std::to_string(img.width) +
          "x" + std::to_string(img.channels) + " does not match extractor input " +
          std::to_string(in_h_) + "x" + std::to_string(in_w_) + "x" + std::to_string(in_ch_));
    Eigen::MatrixXd m(in_h_ * in_w_, in_ch_);
    for (int c = 0; c < in_ch_; ++c)
      for (int y = 0; y < in_h_; ++y)
        for (int x = 0; x < in_w_; ++x) m(y * in_w_ + x, c) = img.at(y, x, c);
    return m;
  }

  Eigen::VectorXd run(const Image& img, Trace* trace) const {
    Eigen::MatrixXd map = image_to_map(img);
    int h = in_h_, w = in_w_;
    for (std::size_t b = 0; b < convs_.size(); ++b) {
      Eigen::MatrixXd conv_out =
          convs_[b].forward(map, h, w, cfg_.activation, trace ? &trace->conv[b] : nullptr);
      map = MaxPool2x2::forward(conv_out, h, w, trace ? &trace->pool[b] : nullptr);
      h /= 2;
      w /= 2;
    }
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(map.data(), map.size());
    if (trace) trace->flat = flat;
    return fc_.forward(flat);
  }

  std::string id_;
  int in_h_ = 0, in_w_ = 0, in_ch_ = 0;
  BackboneConfig cfg_;
  std::vector<Conv2D> convs_;
  Dense fc_;
  int flat_dim_ = 0;
  bool frozen_ = false;
};

// Scalar probe loss used by the gradient checker: L = sum_d coeffs[d] * f_d.
inline double backbone_probe_loss(const FeatureExtractor& fe, const Image& img,
                                  const Eigen::VectorXd& coeffs) {
  return coeffs.dot(fe.forward(img));
}

inline ParamGrads backbone_probe_gradients(const FeatureExtractor& fe, const Image& img,
                                           const Eigen::VectorXd& coeffs) {
  FeatureExtractor::Trace trace;
  fe.forward_trace(img, trace);
  ParamGrads grads;
  auto ps = const_cast<FeatureExtractor&>(fe).params();
  grads.init_like(ps);
  fe.backward(trace, coeffs, grads);
  return grads;
}

// Relative error with an absolute floor so near-zero pairs do not blow up.
inline double gradient_rel_err(double analytic, double numeric) {
  const double denom = std::max({1e-6, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckOptions {
  double fd_step = 1e-3;
  int coords_per_array = 24;  // sampled coordinates per parameter array
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  bool passed = false;
  double worst_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;

  explicit operator bool() const { return passed; }
};

// Compares analytic parameter gradients of the probe loss against central
// finite differences on a seeded sample of coordinates. The extractor is
// copied; the caller's weights are never touched.
inline GradCheckResult gradient_check(const FeatureExtractor& fe_in, const Image& img,
                                      double tolerance, const Eigen::VectorXd& coeffs,
                                      const GradCheckOptions& opts = {}) {
  FeatureExtractor fe = fe_in;
  const ParamGrads analytic = backbone_probe_gradients(fe, img, coeffs);
  auto ps = fe.params();
  const auto names = fe.param_names();
  Rng rng(derive_seed(opts.seed, 0x67c0));

  GradCheckResult res;
  res.passed = true;
  for (std::size_t a = 0; a < ps.size(); ++a) {
    Eigen::MatrixXd& p = *ps[a];
    const int n = static_cast<int>(p.size());
    const int probes = std::min(opts.coords_per_array, n);
    for (int k = 0; k < probes; ++k) {
      const int idx = probes == n ? k : static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      const double saved = p.data()[idx];
      p.data()[idx] = saved + opts.fd_step;
      const double up = backbone_probe_loss(fe, img, coeffs);
      p.data()[idx] = saved - opts.fd_step;
      const double down = backbone_probe_loss(fe, img, coeffs);
      p.data()[idx] = saved;
      const double numeric = (up - down) / (2.0 * opts.fd_step);
      const double err = gradient_rel_err(analytic.g[a].data()[idx], numeric);
      if (err > res.worst_rel_err) {
        res.worst_rel_err = err;
        res.worst_param = names[a];
        res.worst_index = idx;
      }
      if (err > tolerance) res.passed = false;
    }
  }
  return res;
}

}  // namespace mvx
