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
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nalucast/common.hpp"

namespace nalucast {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

/// Dense n-dimensional array of doubles in row-major order. Values are plain
/// and copyable; every operation below is a pure function of its inputs.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_)) {
      throw ShapeError("tensor",
                       "data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  /// Identity matrix of extent n.
  static Tensor eye(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t extent(std::size_t dim) const { return shape_.at(dim); }
  std::size_t rows() const { return extent(0); }
  std::size_t cols() const { return extent(1); }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at2(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }
  double& at2(std::size_t r, std::size_t c) {
    return data_[r * shape_[1] + c];
  }
  double at3(std::size_t n, std::size_t c, std::size_t l) const {
    return data_[(n * shape_[1] + c) * shape_[2] + l];
  }
  double& at3(std::size_t n, std::size_t c, std::size_t l) {
    return data_[(n * shape_[1] + c) * shape_[2] + l];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  static std::size_t checked_numel(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor", "shape must have rank >= 1");
    for (auto e : s) {
      if (e == 0) {
        throw ShapeError("tensor",
                         "extents must be positive, got " + shape_str(s));
      }
    }
    return shape_numel(s);
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Standard matrix product of a (m x k) by b (k x n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("tensor", "matmul shape mismatch " +
                                   shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* orow = po + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

/// 2-D transpose.
inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeError("tensor",
                     "transpose expects rank 2, got " + shape_str(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at2(j, i) = a.at2(i, j);
  return out;
}

/// Applies f to every entry; shape is preserved. Domain is the caller's
/// contract (e.g. log only sees positives).
template <class F>
Tensor map_unary(const Tensor& x, F&& f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

namespace detail {
inline bool bias_broadcastable(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.rank() == 1 && b.size() == a.cols();
}
}  // namespace detail

/// Combines two tensors entrywise. Shapes must match exactly, or b may be a
/// per-row bias vector against a rank-2 a (the only broadcast supported).
template <class F>
Tensor zip_binary(const Tensor& a, const Tensor& b, F&& f) {
  if (a.same_shape(b)) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  if (detail::bias_broadcastable(a, b)) {
    Tensor out(a.shape());
    const std::size_t n = a.rows(), m = a.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        out.at2(i, j) = f(a.at2(i, j), b[j]);
    return out;
  }
  throw ShapeError("tensor", "zip_binary shape mismatch " +
                                 shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()) +
                                 " (exact match or bias vector required)");
}

/// Reinterprets the flat data under a new shape. Exactly one extent may be
/// the wildcard -1, which is resolved to size / product(others).
inline Tensor reshape(const Tensor& x, const std::vector<long long>& target) {
  if (target.empty()) throw ShapeError("tensor", "reshape to empty shape");
  Shape resolved;
  resolved.reserve(target.size());
  std::size_t known = 1;
  long long wildcard_at = -1;
  for (std::size_t i = 0; i < target.size(); ++i) {
    long long e = target[i];
    if (e == -1) {
      if (wildcard_at >= 0)
        throw ShapeError("tensor", "reshape allows at most one wildcard");
      wildcard_at = static_cast<long long>(i);
      resolved.push_back(0);
    } else if (e <= 0) {
      throw ShapeError("tensor", "reshape extents must be positive or -1");
    } else {
      resolved.push_back(static_cast<std::size_t>(e));
      known *= static_cast<std::size_t>(e);
    }
  }
  if (wildcard_at >= 0) {
    if (known == 0 || x.size() % known != 0) {
      throw ShapeError("tensor", "reshape of " + shape_str(x.shape()) +
                                     ": cannot infer wildcard for " +
                                     std::to_string(x.size()) + " values");
    }
    resolved[static_cast<std::size_t>(wildcard_at)] = x.size() / known;
  } else if (known != x.size()) {
    throw ShapeError("tensor",
                     "reshape of " + shape_str(x.shape()) + " (size " +
                         std::to_string(x.size()) + ") to " +
                         shape_str(resolved) + " is incompatible");
  }
  return Tensor(std::move(resolved), x.data());
}

/// In-place accumulation used by the autodiff adjoint machinery.
inline void add_inplace(Tensor& acc, const Tensor& t) {
  if (!acc.same_shape(t)) {
    throw ShapeError("tensor", "accumulate shape mismatch " +
                                   shape_str(acc.shape()) + " vs " +
                                   shape_str(t.shape()));
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t[i];
}

inline Tensor random_uniform(Shape shape, double lo, double hi,
                             std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace nalucast
