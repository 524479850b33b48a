/*
 * Copyright 2026 The nalucast authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nalucast/autodiff.hpp"

namespace nalucast {

enum class Mode { train, eval };

/// Per-forward context: dropout needs the mode and, when training, an RNG.
struct Context {
  Mode mode = Mode::eval;
  std::mt19937_64* rng = nullptr;
};

/// Glorot-style uniform draw over +/- sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in,
                             std::size_t fan_out, std::mt19937_64& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return random_uniform(std::move(shape), -limit, limit, rng);
}

// ---------------------------------------------------------------------------
// Differentiable layer primitives
// ---------------------------------------------------------------------------

inline std::size_t conv1d_output_length(std::size_t length,
                                        std::size_t kernel_size,
                                        std::size_t stride,
                                        std::size_t padding) {
  return (length + 2 * padding - kernel_size) / stride + 1;
}

inline std::size_t maxpool1d_output_length(std::size_t length,
                                           std::size_t kernel_size,
                                           std::size_t stride) {
  return (length - kernel_size) / stride + 1;
}

/// 1-D cross-correlation (no kernel flip): x is (n, c_in, L), kernels are
/// (c_out, c_in, k), bias is (c_out); zero padding on both ends.
inline Variable conv1d(const Variable& x, const Variable& kernels,
                       const Variable& bias, std::size_t stride,
                       std::size_t padding) {
  Tape& t = detail::same_tape(x, kernels);
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  if (xv.rank() != 3 || kv.rank() != 3 || bias.value().rank() != 1 ||
      xv.extent(1) != kv.extent(1) || bias.value().size() != kv.extent(0)) {
    throw ShapeError("layers", "conv1d shape mismatch: input " +
                                   shape_str(xv.shape()) + ", kernels " +
                                   shape_str(kv.shape()) + ", bias " +
                                   shape_str(bias.value().shape()));
  }
  if (stride == 0) throw Error("layers", "conv1d stride must be >= 1");
  const std::size_t n = xv.extent(0), cin = xv.extent(1), len = xv.extent(2);
  const std::size_t cout = kv.extent(0), k = kv.extent(2);
  if (len + 2 * padding < k) {
    throw Error("layers", "conv1d input too short: length " +
                              std::to_string(len) + " + 2*padding " +
                              std::to_string(padding) + " < kernel size " +
                              std::to_string(k));
  }
  const std::size_t lout = conv1d_output_length(len, k, stride, padding);

  Tensor out({n, cout, lout});
  const Tensor& bv = bias.value();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t pos = 0; pos < lout; ++pos) {
        double acc = bv[o];
        const long long start =
            static_cast<long long>(pos * stride) -
            static_cast<long long>(padding);
        for (std::size_t i = 0; i < cin; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const long long src = start + static_cast<long long>(kk);
            if (src < 0 || src >= static_cast<long long>(len)) continue;
            acc += kv.at3(o, i, kk) *
                   xv.at3(b, i, static_cast<std::size_t>(src));
          }
        }
        out.at3(b, o, pos) = acc;
      }
    }
  }

  const auto xi = x.id(), ki = kernels.id(), bi = bias.id();
  return t.record(
      std::move(out), {xi, ki, bi},
      [xi, ki, bi, stride, padding](Tape& t, std::size_t,
                                    const Tensor& adj) {
        const Tensor& xv = t.value(xi);
        const Tensor& kv = t.value(ki);
        const std::size_t n = xv.extent(0), cin = xv.extent(1),
                          len = xv.extent(2);
        const std::size_t cout = kv.extent(0), k = kv.extent(2);
        const std::size_t lout = adj.extent(2);
        const bool want_x = t.wants_grad(xi);
        const bool want_k = t.wants_grad(ki);
        const bool want_b = t.wants_grad(bi);
        Tensor dx = want_x ? Tensor::zeros(xv.shape()) : Tensor{};
        Tensor dk = want_k ? Tensor::zeros(kv.shape()) : Tensor{};
        Tensor db = want_b ? Tensor::zeros({cout}) : Tensor{};
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t pos = 0; pos < lout; ++pos) {
              const double g = adj.at3(b, o, pos);
              if (want_b) db[o] += g;
              const long long start =
                  static_cast<long long>(pos * stride) -
                  static_cast<long long>(padding);
              for (std::size_t i = 0; i < cin; ++i) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                  const long long src = start + static_cast<long long>(kk);
                  if (src < 0 || src >= static_cast<long long>(len)) continue;
                  const auto s = static_cast<std::size_t>(src);
                  if (want_k) dk.at3(o, i, kk) += g * xv.at3(b, i, s);
                  if (want_x) dx.at3(b, i, s) += g * kv.at3(o, i, kk);
                }
              }
            }
          }
        }
        if (want_x) t.accumulate(xi, std::move(dx));
        if (want_k) t.accumulate(ki, std::move(dk));
        if (want_b) t.accumulate(bi, std::move(db));
      });
}

/// Max pooling over the last axis of (n, c, L). The gradient is routed to the
/// argmax position only; ties resolve to the first occurrence.
inline Variable maxpool1d(const Variable& x, std::size_t kernel_size,
                          std::size_t stride) {
  Tape& t = detail::tape_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() != 3) {
    throw ShapeError("layers", "maxpool1d expects rank-3 input, got " +
                                   shape_str(xv.shape()));
  }
  if (kernel_size == 0 || stride == 0)
    throw Error("layers", "maxpool1d kernel size and stride must be >= 1");
  const std::size_t n = xv.extent(0), c = xv.extent(1), len = xv.extent(2);
  if (len < kernel_size) {
    throw Error("layers", "maxpool1d input too short: length " +
                              std::to_string(len) + " < kernel size " +
                              std::to_string(kernel_size));
  }
  const std::size_t lout = maxpool1d_output_length(len, kernel_size, stride);

  Tensor out({n, c, lout});
  auto argmax = std::make_shared<std::vector<std::size_t>>(n * c * lout);
  std::size_t flat = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t pos = 0; pos < lout; ++pos, ++flat) {
        const std::size_t start = pos * stride;
        std::size_t best = start;
        double best_v = xv.at3(b, ch, start);
        for (std::size_t kk = 1; kk < kernel_size; ++kk) {
          const double v = xv.at3(b, ch, start + kk);
          if (v > best_v) {
            best_v = v;
            best = start + kk;
          }
        }
        out.at3(b, ch, pos) = best_v;
        (*argmax)[flat] = (b * c + ch) * len + best;
      }
    }
  }

  const auto xi = x.id();
  return t.record(std::move(out), {xi},
                  [xi, argmax](Tape& t, std::size_t, const Tensor& adj) {
                    if (!t.wants_grad(xi)) return;
                    Tensor dx = Tensor::zeros(t.value(xi).shape());
                    for (std::size_t i = 0; i < adj.size(); ++i)
                      dx[(*argmax)[i]] += adj[i];
                    t.accumulate(xi, std::move(dx));
                  });
}

/// Inverted dropout: in train mode each entry is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate), so the expectation is
/// preserved and eval mode is the identity.
inline Variable dropout(const Variable& x, double rate, Mode mode,
                        std::mt19937_64* rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw Error("layers", "dropout rate must be in [0, 1), got " +
                              format_double(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  if (rng == nullptr)
    throw Error("layers", "dropout in train mode needs an RNG");
  Tape& t = detail::tape_of(x);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  auto mask = std::make_shared<Tensor>(x.value().shape());
  for (std::size_t i = 0; i < mask->size(); ++i)
    (*mask)[i] = dist(*rng) < rate ? 0.0 : keep_scale;
  const auto xi = x.id();
  Tensor y = zip_binary(x.value(), *mask,
                        [](double v, double m) { return v * m; });
  return t.record(std::move(y), {xi},
                  [xi, mask](Tape& t, std::size_t, const Tensor& adj) {
                    if (t.wants_grad(xi))
                      t.accumulate(xi, zip_binary(adj, *mask,
                                                  [](double g, double m) {
                                                    return g * m;
                                                  }));
                  });
}

// ---------------------------------------------------------------------------
// Parameter bundles
// ---------------------------------------------------------------------------

struct DenseParams {
  ParamPtr W;  // (in x out)
  ParamPtr b;  // (out)
};

struct Conv1dParams {
  ParamPtr kernels;  // (out_channels x in_channels x kernel_size)
  ParamPtr bias;     // (out_channels)
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Accumulator weights: the effective matrix tanh(W_hat) * sigmoid(M_hat) is
/// softly pushed toward {-1, 0, 1}, which biases the layer to learn exact
/// additive relations.
struct NacParams {
  ParamPtr W_hat;  // (out x in)
  ParamPtr M_hat;  // (out x in)
};

enum class NaluMPath { sigmoid, exp };

struct NaluParams {
  NacParams nac;
  ParamPtr G;  // (out x in) gate weights
  double epsilon = 1e-7;
  NaluMPath m_path = NaluMPath::sigmoid;
  // Optional second accumulator for the log-space path; by default the path
  // shares the NAC weight matrix.
  bool separate_m_weights = false;
  NacParams nac_m;
};

// ---------------------------------------------------------------------------
// Forward functions
// ---------------------------------------------------------------------------

/// Affine map y = x W + b with the bias broadcast per row.
inline Variable dense_forward(Tape& tape, const DenseParams& p,
                              const Variable& x) {
  if (x.value().rank() != 2 ||
      x.value().cols() != p.W->value.rows()) {
    throw ShapeError("layers", "dense input " + shape_str(x.value().shape()) +
                                   " does not match weights " +
                                   shape_str(p.W->value.shape()));
  }
  return add_bias(matmul(x, tape.param(p.W)), tape.param(p.b));
}

inline Variable nac_effective_weight(Tape& tape, const NacParams& p) {
  return mul(tanh(tape.param(p.W_hat)), sigmoid(tape.param(p.M_hat)));
}

/// a = x W^T with W = tanh(W_hat) * sigmoid(M_hat); purely linear in x, no
/// bias term.
inline Variable nac_forward(Tape& tape, const NacParams& p,
                            const Variable& x) {
  if (x.value().rank() != 2 ||
      x.value().cols() != p.W_hat->value.cols()) {
    throw ShapeError("layers", "nac input " + shape_str(x.value().shape()) +
                                   " does not match weights " +
                                   shape_str(p.W_hat->value.shape()));
  }
  return matmul(x, transpose(nac_effective_weight(tape, p)));
}

/// Gated unit y = g*a + (1-g)*m with g = sigmoid(x G^T), a the NAC output,
/// and m = sigmoid(W log(|x|+eps)) — the sigmoid there (in place of the
/// original exponential) keeps m inside (0, 1). NaluMPath::exp restores the
/// exponential form for comparisons.
inline Variable nalu_forward(Tape& tape, const NaluParams& p,
                             const Variable& x) {
  if (x.value().rank() != 2 ||
      x.value().cols() != p.nac.W_hat->value.cols()) {
    throw ShapeError("layers", "nalu input " + shape_str(x.value().shape()) +
                                   " does not match weights " +
                                   shape_str(p.nac.W_hat->value.shape()));
  }
  if (!(p.epsilon > 0.0)) throw Error("layers", "nalu epsilon must be > 0");
  Variable w_t = transpose(nac_effective_weight(tape, p.nac));
  Variable a = matmul(x, w_t);
  Variable g = sigmoid(matmul(x, transpose(tape.param(p.G))));
  Variable m_t = p.separate_m_weights
                     ? transpose(nac_effective_weight(tape, p.nac_m))
                     : w_t;
  Variable m_lin = matmul(log_abs(x, p.epsilon), m_t);
  Variable m = p.m_path == NaluMPath::sigmoid ? sigmoid(m_lin) : exp(m_lin);
  return add(mul(g, a), mul(affine(g, -1.0, 1.0), m));
}

// ---------------------------------------------------------------------------
// Layer objects
// ---------------------------------------------------------------------------

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Variable forward(Tape& tape, const Variable& x,
                           const Context& ctx) = 0;
  virtual std::vector<ParamPtr> params() const { return {}; }
  virtual std::string kind() const = 0;
};

class DenseLayer : public Layer {
 public:
  DenseLayer(const std::string& name, std::size_t in, std::size_t out,
             std::mt19937_64& rng)
      : p_{std::make_shared<Parameter>(name + ".W",
                                       glorot_uniform({in, out}, in, out,
                                                      rng)),
           std::make_shared<Parameter>(name + ".b", Tensor::zeros({out}))} {}

  explicit DenseLayer(DenseParams p) : p_(std::move(p)) {}

  Variable forward(Tape& tape, const Variable& x, const Context&) override {
    return dense_forward(tape, p_, x);
  }
  std::vector<ParamPtr> params() const override { return {p_.W, p_.b}; }
  std::string kind() const override { return "dense"; }
  const DenseParams& dense_params() const { return p_; }

 private:
  DenseParams p_;
};

class Conv1dLayer : public Layer {
 public:
  Conv1dLayer(const std::string& name, std::size_t in_channels,
              std::size_t out_channels, std::size_t kernel_size,
              std::size_t stride, std::size_t padding, std::mt19937_64& rng)
      : p_{std::make_shared<Parameter>(
               name + ".kernels",
               glorot_uniform({out_channels, in_channels, kernel_size},
                              in_channels * kernel_size,
                              out_channels * kernel_size, rng)),
           std::make_shared<Parameter>(name + ".bias",
                                       Tensor::zeros({out_channels})),
           stride, padding} {}

  explicit Conv1dLayer(Conv1dParams p) : p_(std::move(p)) {}

  Variable forward(Tape& tape, const Variable& x, const Context&) override {
    return conv1d(x, tape.param(p_.kernels), tape.param(p_.bias), p_.stride,
                  p_.padding);
  }
  std::vector<ParamPtr> params() const override {
    return {p_.kernels, p_.bias};
  }
  std::string kind() const override { return "conv1d"; }
  const Conv1dParams& conv_params() const { return p_; }

 private:
  Conv1dParams p_;
};

class MaxPool1dLayer : public Layer {
 public:
  MaxPool1dLayer(std::size_t kernel_size, std::size_t stride)
      : kernel_size_(kernel_size), stride_(stride) {}

  Variable forward(Tape&, const Variable& x, const Context&) override {
    return maxpool1d(x, kernel_size_, stride_);
  }
  std::string kind() const override { return "maxpool1d"; }
  std::size_t kernel_size() const noexcept { return kernel_size_; }
  std::size_t stride() const noexcept { return stride_; }

 private:
  std::size_t kernel_size_;
  std::size_t stride_;
};

class ReluLayer : public Layer {
 public:
  Variable forward(Tape&, const Variable& x, const Context&) override {
    return relu(x);
  }
  std::string kind() const override { return "relu"; }
};

class SigmoidLayer : public Layer {
 public:
  Variable forward(Tape&, const Variable& x, const Context&) override {
    return sigmoid(x);
  }
  std::string kind() const override { return "sigmoid"; }
};

class DropoutLayer : public Layer {
 public:
  explicit DropoutLayer(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) {
      throw Error("layers", "dropout rate must be in [0, 1), got " +
                                format_double(rate));
    }
  }

  Variable forward(Tape&, const Variable& x, const Context& ctx) override {
    return dropout(x, rate_, ctx.mode, ctx.rng);
  }
  std::string kind() const override { return "dropout"; }

 private:
  double rate_;
};

class NacLayer : public Layer {
 public:
  NacLayer(const std::string& name, std::size_t in, std::size_t out,
           std::mt19937_64& rng)
      : p_{std::make_shared<Parameter>(name + ".W_hat",
                                       glorot_uniform({out, in}, in, out,
                                                      rng)),
           std::make_shared<Parameter>(name + ".M_hat",
                                       glorot_uniform({out, in}, in, out,
                                                      rng))} {}

  explicit NacLayer(NacParams p) : p_(std::move(p)) {}

  Variable forward(Tape& tape, const Variable& x, const Context&) override {
    return nac_forward(tape, p_, x);
  }
  std::vector<ParamPtr> params() const override { return {p_.W_hat, p_.M_hat}; }
  std::string kind() const override { return "nac"; }
  const NacParams& nac_params() const { return p_; }

 private:
  NacParams p_;
};

class NaluLayer : public Layer {
 public:
  NaluLayer(const std::string& name, std::size_t in, std::size_t out,
            std::mt19937_64& rng, double epsilon = 1e-7,
            NaluMPath m_path = NaluMPath::sigmoid,
            bool separate_m_weights = false) {
    p_.nac.W_hat = std::make_shared<Parameter>(
        name + ".W_hat", glorot_uniform({out, in}, in, out, rng));
    p_.nac.M_hat = std::make_shared<Parameter>(
        name + ".M_hat", glorot_uniform({out, in}, in, out, rng));
    p_.G = std::make_shared<Parameter>(
        name + ".G", glorot_uniform({out, in}, in, out, rng));
    p_.epsilon = epsilon;
    p_.m_path = m_path;
    p_.separate_m_weights = separate_m_weights;
    if (separate_m_weights) {
      p_.nac_m.W_hat = std::make_shared<Parameter>(
          name + ".Wm_hat", glorot_uniform({out, in}, in, out, rng));
      p_.nac_m.M_hat = std::make_shared<Parameter>(
          name + ".Mm_hat", glorot_uniform({out, in}, in, out, rng));
    }
  }

  explicit NaluLayer(NaluParams p) : p_(std::move(p)) {}

  Variable forward(Tape& tape, const Variable& x, const Context&) override {
    return nalu_forward(tape, p_, x);
  }
  std::vector<ParamPtr> params() const override {
    std::vector<ParamPtr> out{p_.nac.W_hat, p_.nac.M_hat, p_.G};
    if (p_.separate_m_weights) {
      out.push_back(p_.nac_m.W_hat);
      out.push_back(p_.nac_m.M_hat);
    }
    return out;
  }
  std::string kind() const override { return "nalu"; }
  const NaluParams& nalu_params() const { return p_; }

 private:
  NaluParams p_;
};

/// Inserts the channel axis: (n, L) -> (n, 1, L).
class ExpandChannelLayer : public Layer {
 public:
  Variable forward(Tape&, const Variable& x, const Context&) override {
    const auto& s = x.value().shape();
    if (s.size() != 2) {
      throw ShapeError("layers", "expand_channel expects rank-2 input, got " +
                                     shape_str(s));
    }
    return reshape(x, {static_cast<long long>(s[0]), 1,
                       static_cast<long long>(s[1])});
  }
  std::string kind() const override { return "expand_channel"; }
};

/// (n, C, L) -> (n, 1, C*L) -> (n, C*L), mirroring the two-step flatten used
/// before a dense head.
class FlattenLayer : public Layer {
 public:
  Variable forward(Tape&, const Variable& x, const Context&) override {
    const auto& s = x.value().shape();
    if (s.size() != 3) {
      throw ShapeError("layers",
                       "flatten expects rank-3 input, got " + shape_str(s));
    }
    const auto n = static_cast<long long>(s[0]);
    Variable mid = reshape(x, {n, 1, -1});
    return reshape(mid, {n, -1});
  }
  std::string kind() const override { return "flatten"; }
};

}  // namespace nalucast
