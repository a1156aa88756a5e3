#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvx/rng.hpp"

namespace mvx {

// Feature maps are (H*W) x C matrices: one column per channel, row index
// p = y*W + x. Flattening follows Eigen's column-major order, i.e. channel
// planes back to back.

enum class Activation { relu, softplus };

inline const char* to_string(Activation a) {
  return a == Activation::relu ? "relu" : "softplus";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softplus") return Activation::softplus;
  throw std::invalid_argument("unknown activation: " + s);
}

inline double activate(double x, Activation a) {
  if (a == Activation::relu) return x > 0.0 ? x : 0.0;
  return x > 30.0 ? x : std::log1p(std::exp(x));  // softplus, overflow-safe
}

inline double activate_grad(double x, Activation a) {
  if (a == Activation::relu) return x > 0.0 ? 1.0 : 0.0;
  return 1.0 / (1.0 + std::exp(-x));
}

inline void activate_inplace(Eigen::MatrixXd& m, Activation a) {
  if (a == Activation::relu)
    m = m.cwiseMax(0.0);
  else
    m = m.unaryExpr([](double x) { return activate(x, Activation::softplus); });
}

// Fan-in scaled uniform init, U(-sqrt(3/fan_in), sqrt(3/fan_in)).
inline void init_fan_in_uniform(Eigen::MatrixXd& m, int fan_in, Rng& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-bound, bound);
}

// 3x3 same-padding convolution via im2col + GEMM.
// kernel is (9*in_ch) x out_ch with row index (ky*3 + kx)*in_ch + ci.
struct Conv2D {
  int in_ch = 0;
  int out_ch = 0;
  Eigen::MatrixXd kernel;
  Eigen::MatrixXd bias;  // out_ch x 1

  Conv2D() = default;
  Conv2D(int in_channels, int out_channels, Rng& rng)
      : in_ch(in_channels), out_ch(out_channels),
        kernel(9 * in_channels, out_channels),
        bias(Eigen::MatrixXd::Zero(out_channels, 1)) {
    init_fan_in_uniform(kernel, 9 * in_channels, rng);
  }

  struct Trace {
    Eigen::MatrixXd cols;  // (H*W) x (9*in_ch)
    Eigen::MatrixXd pre;   // pre-activation output
  };

  static void im2col(const Eigen::MatrixXd& input, int h, int w, int in_ch,
                     Eigen::MatrixXd& cols) {
    const int npix = h * w;
    cols.setZero(npix, 9 * in_ch);
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        const int x0 = dx < 0 ? -dx : 0;
        const int x1 = dx > 0 ? w - dx : w;
        if (x1 <= x0) continue;
        for (int ci = 0; ci < in_ch; ++ci) {
          const int col = (ky * 3 + kx) * in_ch + ci;
          const double* src = input.col(ci).data();
          double* dst = cols.col(col).data();
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            std::memcpy(dst + y * w + x0, src + sy * w + x0 + dx,
                        static_cast<std::size_t>(x1 - x0) * sizeof(double));
          }
        }
      }
    }
  }

  // Returns activated output; fills the trace when given.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, int h, int w, Activation act,
                          Trace* trace) const {
    Eigen::MatrixXd local_cols;
    Eigen::MatrixXd& cols = trace ? trace->cols : local_cols;
    im2col(input, h, w, in_ch, cols);
    Eigen::MatrixXd pre = cols * kernel;
    pre.rowwise() += bias.col(0).transpose();
    Eigen::MatrixXd out = pre;
    activate_inplace(out, act);
    if (trace) trace->pre = std::move(pre);
    return out;
  }

  // d_out is the gradient w.r.t. the activated output. Accumulates into
  // d_kernel/d_bias and, when d_input is non-null, writes the input gradient.
  void backward(const Trace& trace, const Eigen::MatrixXd& d_out, int h, int w,
                Activation act, Eigen::MatrixXd& d_kernel, Eigen::MatrixXd& d_bias,
                Eigen::MatrixXd* d_input) const {
    Eigen::MatrixXd d_pre =
        d_out.cwiseProduct(trace.pre.unaryExpr([act](double x) { return activate_grad(x, act); }));
    d_kernel.noalias() += trace.cols.transpose() * d_pre;
    d_bias.col(0).noalias() += d_pre.colwise().sum().transpose();
    if (!d_input) return;
    const Eigen::MatrixXd d_cols = d_pre * kernel.transpose();
    d_input->setZero(h * w, in_ch);
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        const int x0 = dx < 0 ? -dx : 0;
        const int x1 = dx > 0 ? w - dx : w;
        if (x1 <= x0) continue;
        for (int ci = 0; ci < in_ch; ++ci) {
          const int col = (ky * 3 + kx) * in_ch + ci;
          const double* src = d_cols.col(col).data();
          double* dst = d_input->col(ci).data();
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            for (int x = x0; x < x1; ++x) dst[sy * w + x + dx] += src[y * w + x];
          }
        }
      }
    }
  }
};

// 2x2 max pool, stride 2. Ties go to the first window position scanned
// (row-major), which keeps the backward route deterministic.
struct MaxPool2x2 {
  struct Trace {
    Eigen::MatrixXi argmax;  // flat input index per pooled element
  };

  static Eigen::MatrixXd forward(const Eigen::MatrixXd& input, int h, int w, Trace* trace) {
    const int oh = h / 2, ow = w / 2;
    const int ch = static_cast<int>(input.cols());
    Eigen::MatrixXd out(oh * ow, ch);
    if (trace) trace->argmax.resize(oh * ow, ch);
    for (int c = 0; c < ch; ++c) {
      const double* in = input.col(c).data();
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          int best = (2 * oy) * w + 2 * ox;
          double best_v = in[best];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int p = (2 * oy + dy) * w + 2 * ox + dx;
              if (in[p] > best_v) {
                best_v = in[p];
                best = p;
              }
            }
          out(oy * ow + ox, c) = best_v;
          if (trace) trace->argmax(oy * ow + ox, c) = best;
        }
    }
    return out;
  }

  static void backward(const Trace& trace, const Eigen::MatrixXd& d_out, int h, int w,
                       Eigen::MatrixXd& d_input) {
    d_input.setZero(h * w, d_out.cols());
    for (Eigen::Index c = 0; c < d_out.cols(); ++c)
      for (Eigen::Index p = 0; p < d_out.rows(); ++p)
        d_input(trace.argmax(p, c), c) += d_out(p, c);
  }
};

struct Dense {
  Eigen::MatrixXd weight;  // out x in
  Eigen::MatrixXd bias;    // out x 1

  Dense() = default;
  Dense(int in_dim, int out_dim, Rng& rng)
      : weight(out_dim, in_dim), bias(Eigen::MatrixXd::Zero(out_dim, 1)) {
    init_fan_in_uniform(weight, in_dim, rng);
  }

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    return weight * x + bias.col(0);
  }

  void backward(const Eigen::VectorXd& input, const Eigen::VectorXd& d_out,
                Eigen::MatrixXd& d_weight, Eigen::MatrixXd& d_bias,
                Eigen::VectorXd* d_input) const {
    d_weight.noalias() += d_out * input.transpose();
    d_bias.col(0).noalias() += d_out;
    if (d_input) d_input->noalias() = weight.transpose() * d_out;
  }
};

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

// Numerically stable cross-entropy of one sample from raw logits.
inline double cross_entropy_from_logits(const Eigen::VectorXd& logits, int label) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits(label);
}

// d(cross_entropy)/d(logits) = softmax(logits) - onehot(label).
inline Eigen::VectorXd cross_entropy_grad(const Eigen::VectorXd& logits, int label) {
  Eigen::VectorXd g = softmax(logits);
  g(label) -= 1.0;
  return g;
}

}  // namespace mvx
