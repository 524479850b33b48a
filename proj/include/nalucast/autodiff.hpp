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

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nalucast/tensor.hpp"

namespace nalucast {

/// A named trainable tensor. Parameters outlive any single tape: layers own
/// them, each forward pass re-registers them as leaves, and backward passes
/// accumulate into `grad` until the optimizer consumes and clears it.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string name_, Tensor value_)
      : name(std::move(name_)),
        value(std::move(value_)),
        grad(Tensor::zeros(value.shape())) {}

  void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

using ParamPtr = std::shared_ptr<Parameter>;

class Tape;

/// Handle to one node on a tape: a tensor value plus its adjoint slot.
class Variable {
 public:
  Variable() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t id() const noexcept { return id_; }
  bool requires_grad() const;
  Tape* tape() const noexcept { return tape_; }

 private:
  friend class Tape;
  Variable(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Operations append records in execution order, which is
/// already topological; backward scans the records once in reverse. A tape is
/// built for one forward pass and discarded afterwards — parameters persist
/// outside it.
class Tape {
 public:
  /// Backward rule: receives the tape, the record's own node id, and the
  /// adjoint of its output; accumulates into the adjoints of its inputs.
  using BackwardFn =
      std::function<void(Tape&, std::size_t, const Tensor&)>;

  Variable leaf(Tensor value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr,
                          {}, nullptr});
    return Variable(this, nodes_.size() - 1);
  }

  /// Registers a persistent parameter as a requires-grad leaf; backward adds
  /// the leaf adjoint into the parameter's grad.
  Variable param(const ParamPtr& p) {
    nodes_.push_back(Node{p->value, Tensor{}, true, p, {}, nullptr});
    return Variable(this, nodes_.size() - 1);
  }

  /// Appends an operation record. requires_grad propagates from the inputs;
  /// rules for all-constant subgraphs are dropped.
  Variable record(Tensor value, std::vector<std::size_t> inputs,
                  BackwardFn backward) {
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_.at(i).requires_grad;
    nodes_.push_back(Node{std::move(value), Tensor{}, rg, nullptr,
                          std::move(inputs), rg ? std::move(backward)
                                                : BackwardFn{}});
    return Variable(this, nodes_.size() - 1);
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates adjoints to every reachable
  /// requires-grad node. Each record is visited exactly once. Adjoints
  /// accumulate additively into node (and parameter) grads, so repeated calls
  /// without zeroing double the gradients.
  void backward(const Variable& loss) {
    if (nodes_.empty()) throw Error("autodiff", "backward on an empty tape");
    if (loss.tape() != this)
      throw Error("autodiff", "loss does not belong to this tape");
    const Tensor& lv = nodes_[loss.id()].value;
    if (lv.size() != 1) {
      throw Error("autodiff", "loss must be scalar, got shape " +
                                  shape_str(lv.shape()));
    }
    adjoints_.assign(nodes_.size(), Tensor{});
    adjoints_[loss.id()] = Tensor::full(lv.shape(), 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (adjoints_[i].empty() || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, i, adjoints_[i]);
      if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
      add_inplace(n.grad, adjoints_[i]);
      if (n.bound) add_inplace(n.bound->grad, adjoints_[i]);
    }
    adjoints_.clear();
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

  const Tensor& grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.empty()) {
      zero_grad_cache_ = Tensor::zeros(n.value.shape());
      return zero_grad_cache_;
    }
    return n.grad;
  }

  bool wants_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Adjoint accumulation used by backward rules.
  void accumulate(std::size_t id, Tensor contribution) {
    Tensor& slot = adjoints_.at(id);
    if (slot.empty()) {
      slot = std::move(contribution);
    } else {
      add_inplace(slot, contribution);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    ParamPtr bound;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  friend class Variable;
  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
  mutable Tensor zero_grad_cache_;
};

inline const Tensor& Variable::value() const { return tape_->value(id_); }
inline const Tensor& Variable::grad() const { return tape_->grad(id_); }
inline bool Variable::requires_grad() const { return tape_->wants_grad(id_); }

namespace detail {
inline Tape& same_tape(const Variable& a, const Variable& b) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw Error("autodiff", "operands must live on the same tape");
  return *a.tape();
}
inline Tape& tape_of(const Variable& a) {
  if (a.tape() == nullptr) throw Error("autodiff", "unbound variable");
  return *a.tape();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

inline Variable add(const Variable& a, const Variable& b) {
  Tape& t = detail::same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("autodiff", "add shape mismatch " +
                                     shape_str(a.value().shape()) + " vs " +
                                     shape_str(b.value().shape()));
  }
  const auto ai = a.id(), bi = b.id();
  return t.record(zip_binary(a.value(), b.value(),
                             [](double x, double y) { return x + y; }),
                  {ai, bi}, [ai, bi](Tape& t, std::size_t, const Tensor& adj) {
                    if (t.wants_grad(ai)) t.accumulate(ai, adj);
                    if (t.wants_grad(bi)) t.accumulate(bi, adj);
                  });
}

/// Row-broadcast bias add: a is (n x m), bias is (m).
inline Variable add_bias(const Variable& a, const Variable& bias) {
  Tape& t = detail::same_tape(a, bias);
  const auto ai = a.id(), bi = bias.id();
  Tensor y = zip_binary(a.value(), bias.value(),
                        [](double x, double v) { return x + v; });
  return t.record(std::move(y), {ai, bi},
                  [ai, bi](Tape& t, std::size_t, const Tensor& adj) {
                    if (t.wants_grad(ai)) t.accumulate(ai, adj);
                    if (t.wants_grad(bi)) {
                      const std::size_t n = adj.rows(), m = adj.cols();
                      Tensor db({m});
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j)
                          db[j] += adj.at2(i, j);
                      t.accumulate(bi, std::move(db));
                    }
                  });
}

inline Variable sub(const Variable& a, const Variable& b) {
  Tape& t = detail::same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("autodiff", "sub shape mismatch " +
                                     shape_str(a.value().shape()) + " vs " +
                                     shape_str(b.value().shape()));
  }
  const auto ai = a.id(), bi = b.id();
  return t.record(zip_binary(a.value(), b.value(),
                             [](double x, double y) { return x - y; }),
                  {ai, bi}, [ai, bi](Tape& t, std::size_t, const Tensor& adj) {
                    if (t.wants_grad(ai)) t.accumulate(ai, adj);
                    if (t.wants_grad(bi))
                      t.accumulate(bi, map_unary(adj, [](double g) {
                                     return -g;
                                   }));
                  });
}

/// Elementwise (Hadamard) product.
inline Variable mul(const Variable& a, const Variable& b) {
  Tape& t = detail::same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("autodiff", "mul shape mismatch " +
                                     shape_str(a.value().shape()) + " vs " +
                                     shape_str(b.value().shape()));
  }
  const auto ai = a.id(), bi = b.id();
  return t.record(zip_binary(a.value(), b.value(),
                             [](double x, double y) { return x * y; }),
                  {ai, bi}, [ai, bi](Tape& t, std::size_t, const Tensor& adj) {
                    if (t.wants_grad(ai))
                      t.accumulate(ai, zip_binary(adj, t.value(bi),
                                                  [](double g, double y) {
                                                    return g * y;
                                                  }));
                    if (t.wants_grad(bi))
                      t.accumulate(bi, zip_binary(adj, t.value(ai),
                                                  [](double g, double x) {
                                                    return g * x;
                                                  }));
                  });
}

inline Variable matmul(const Variable& a, const Variable& b) {
  Tape& t = detail::same_tape(a, b);
  const auto ai = a.id(), bi = b.id();
  Tensor y = matmul(a.value(), b.value());
  return t.record(std::move(y), {ai, bi},
                  [ai, bi](Tape& t, std::size_t, const Tensor& adj) {
                    if (t.wants_grad(ai))
                      t.accumulate(ai, matmul(adj, transpose(t.value(bi))));
                    if (t.wants_grad(bi))
                      t.accumulate(bi, matmul(transpose(t.value(ai)), adj));
                  });
}

inline Variable transpose(const Variable& a) {
  Tape& t = detail::tape_of(a);
  const auto ai = a.id();
  return t.record(transpose(a.value()), {ai},
                  [ai](Tape& t, std::size_t, const Tensor& adj) {
                    if (t.wants_grad(ai)) t.accumulate(ai, transpose(adj));
                  });
}

inline Variable reshape(const Variable& a,
                        const std::vector<long long>& target) {
  Tape& t = detail::tape_of(a);
  const auto ai = a.id();
  Tensor y = reshape(a.value(), target);
  return t.record(std::move(y), {ai},
                  [ai](Tape& t, std::size_t, const Tensor& adj) {
                    if (!t.wants_grad(ai)) return;
                    const Shape& s = t.value(ai).shape();
                    std::vector<long long> back(s.begin(), s.end());
                    t.accumulate(ai, reshape(adj, back));
                  });
}

/// Pointwise y = scale * x + shift.
inline Variable affine(const Variable& a, double scale, double shift) {
  Tape& t = detail::tape_of(a);
  const auto ai = a.id();
  return t.record(
      map_unary(a.value(), [=](double x) { return scale * x + shift; }), {ai},
      [ai, scale](Tape& t, std::size_t, const Tensor& adj) {
        if (t.wants_grad(ai))
          t.accumulate(ai,
                       map_unary(adj, [=](double g) { return scale * g; }));
      });
}

inline Variable sum(const Variable& a) {
  Tape& t = detail::tape_of(a);
  const auto ai = a.id();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(Tensor::scalar(s), {ai},
                  [ai](Tape& t, std::size_t, const Tensor& adj) {
                    if (t.wants_grad(ai))
                      t.accumulate(
                          ai, Tensor::full(t.value(ai).shape(), adj[0]));
                  });
}

inline Variable mean(const Variable& a) {
  const double inv = 1.0 / static_cast<double>(a.value().size());
  return affine(sum(a), inv, 0.0);
}

inline Variable relu(const Variable& a) {
  Tape& t = detail::tape_of(a);
  const auto ai = a.id();
  return t.record(
      map_unary(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), {ai},
      [ai](Tape& t, std::size_t, const Tensor& adj) {
        if (t.wants_grad(ai))
          t.accumulate(ai, zip_binary(adj, t.value(ai),
                                      [](double g, double x) {
                                        return x > 0.0 ? g : 0.0;
                                      }));
      });
}

namespace detail {
inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace detail

inline Variable sigmoid(const Variable& a) {
  Tape& t = detail::tape_of(a);
  const auto ai = a.id();
  return t.record(map_unary(a.value(), detail::sigmoid_scalar), {ai},
                  [ai](Tape& t, std::size_t self, const Tensor& adj) {
                    if (t.wants_grad(ai))
                      t.accumulate(ai, zip_binary(adj, t.value(self),
                                                  [](double g, double y) {
                                                    return g * y * (1.0 - y);
                                                  }));
                  });
}

inline Variable tanh(const Variable& a) {
  Tape& t = detail::tape_of(a);
  const auto ai = a.id();
  return t.record(map_unary(a.value(), [](double x) { return std::tanh(x); }),
                  {ai}, [ai](Tape& t, std::size_t self, const Tensor& adj) {
                    if (t.wants_grad(ai))
                      t.accumulate(ai, zip_binary(adj, t.value(self),
                                                  [](double g, double y) {
                                                    return g * (1.0 - y * y);
                                                  }));
                  });
}

inline Variable exp(const Variable& a) {
  Tape& t = detail::tape_of(a);
  const auto ai = a.id();
  return t.record(map_unary(a.value(), [](double x) { return std::exp(x); }),
                  {ai}, [ai](Tape& t, std::size_t self, const Tensor& adj) {
                    if (t.wants_grad(ai))
                      t.accumulate(ai, zip_binary(adj, t.value(self),
                                                  [](double g, double y) {
                                                    return g * y;
                                                  }));
                  });
}

/// y = log(|x| + eps), the saturation-free log carrier. The derivative is
/// sign(x) / (|x| + eps) with sign(0) = 0, finite for every input.
inline Variable log_abs(const Variable& a, double eps) {
  if (!(eps > 0.0)) throw Error("autodiff", "log_abs needs eps > 0");
  Tape& t = detail::tape_of(a);
  const auto ai = a.id();
  return t.record(
      map_unary(a.value(),
                [eps](double x) { return std::log(std::abs(x) + eps); }),
      {ai}, [ai, eps](Tape& t, std::size_t, const Tensor& adj) {
        if (t.wants_grad(ai))
          t.accumulate(ai, zip_binary(adj, t.value(ai),
                                      [eps](double g, double x) {
                                        const double s =
                                            x > 0.0 ? 1.0
                                                    : (x < 0.0 ? -1.0 : 0.0);
                                        return g * s / (std::abs(x) + eps);
                                      }));
      });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

namespace detail {
inline double rel_err(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}
}  // namespace detail

/// Central-difference check of d(f)/d(x). `f` maps (tape, variable) to a
/// scalar variable and must be a deterministic pure function of x. Returns
/// the max over coordinates of |analytic - fd| / max(|analytic|, |fd|, 1e-8).
template <class F>
double grad_check(F&& f, const Tensor& x, double h = 1e-5) {
  Tensor analytic;
  {
    Tape tape;
    Variable vx = tape.leaf(x, true);
    Variable loss = f(tape, vx);
    tape.backward(loss);
    analytic = vx.grad();
  }
  auto eval = [&](const Tensor& point) {
    Tape tape;
    Variable vx = tape.leaf(point, false);
    return f(tape, vx).value()[0];
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = eval(probe);
    probe[i] = saved - h;
    const double down = eval(probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, detail::rel_err(analytic[i], numeric));
  }
  return worst;
}

/// Same check for a persistent parameter: `build` runs the forward pass that
/// reads `p` (via tape.param) and returns the scalar loss variable.
template <class Build>
double grad_check_param(Build&& build, Parameter& p, double h = 1e-5) {
  p.zero_grad();
  {
    Tape tape;
    Variable loss = build(tape);
    tape.backward(loss);
  }
  Tensor analytic = p.grad;
  p.zero_grad();
  auto eval = [&]() {
    Tape tape;
    return build(tape).value()[0];
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double saved = p.value[i];
    p.value[i] = saved + h;
    const double up = eval();
    p.value[i] = saved - h;
    const double down = eval();
    p.value[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, detail::rel_err(analytic[i], numeric));
  }
  return worst;
}

}  // namespace nalucast
