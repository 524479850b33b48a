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
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "nalucast/training.hpp"

namespace nalucast {

enum class ArithOp { add, subtract, scale_sum };

inline std::string arith_op_name(ArithOp op) {
  switch (op) {
    case ArithOp::add: return "add";
    case ArithOp::subtract: return "subtract";
    case ArithOp::scale_sum: return "scale_sum";
  }
  return "?";
}

inline ArithOp parse_arith_op(const std::string& s) {
  if (s == "add") return ArithOp::add;
  if (s == "subtract") return ArithOp::subtract;
  if (s == "scale_sum" || s == "scale-sum") return ArithOp::scale_sum;
  throw Error("benchmarks", "unknown task '" + s +
                                "' (expected add, subtract, scale_sum)");
}

/// One arithmetic-extrapolation task: inputs are sampled uniformly from the
/// train range for fitting and from a strictly wider test range to probe
/// generalization beyond the data the model saw.
struct ArithTask {
  ArithOp op = ArithOp::add;
  std::size_t input_dim = 4;
  double train_lo = 0.0, train_hi = 0.5;
  double test_lo = 0.0, test_hi = 2.0;
  std::size_t train_samples = 512;
  std::size_t test_samples = 256;
  double alpha = 0.5;  // scale_sum multiplier
};

struct ArithData {
  Tensor train_x, train_y;
  Tensor interp_x, interp_y;
  Tensor extrap_x, extrap_y;
};

namespace detail {

inline double arith_target(const ArithTask& task, const Tensor& x,
                           std::size_t row) {
  const std::size_t d = task.input_dim;
  const std::size_t half = d / 2;
  double first = 0.0, second = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double v = x.at2(row, j);
    if (j < half) first += v;
    else second += v;
  }
  switch (task.op) {
    case ArithOp::add: return first + second;
    case ArithOp::subtract: return first - second;
    case ArithOp::scale_sum: return task.alpha * (first + second);
  }
  return 0.0;
}

inline Tensor arith_targets(const ArithTask& task, const Tensor& x) {
  Tensor y({x.rows(), 1});
  for (std::size_t i = 0; i < x.rows(); ++i)
    y.at2(i, 0) = arith_target(task, x, i);
  return y;
}

/// Uniform draws from the test box, rejecting points that fall entirely
/// inside the train box so every sample extrapolates in some coordinate.
inline Tensor sample_extrapolation(const ArithTask& task, std::size_t count,
                                   std::mt19937_64& rng) {
  Tensor x({count, task.input_dim});
  std::uniform_real_distribution<double> dist(task.test_lo, task.test_hi);
  for (std::size_t i = 0; i < count; ++i) {
    while (true) {
      bool outside = false;
      for (std::size_t j = 0; j < task.input_dim; ++j) {
        const double v = dist(rng);
        x.at2(i, j) = v;
        if (v < task.train_lo || v > task.train_hi) outside = true;
      }
      if (outside) break;
    }
  }
  return x;
}

}  // namespace detail

/// Builds train / interpolation / extrapolation splits with exact targets.
inline ArithData gen_arith_task(const ArithTask& task, std::uint64_t seed) {
  if (task.input_dim == 0)
    throw Error("benchmarks", "input_dim must be >= 1");
  if (!(task.train_lo < task.train_hi) || !(task.test_lo < task.test_hi) ||
      !std::isfinite(task.train_lo) || !std::isfinite(task.train_hi) ||
      !std::isfinite(task.test_lo) || !std::isfinite(task.test_hi)) {
    throw Error("benchmarks", "ranges must be finite with lo < hi");
  }
  if (task.test_lo > task.train_lo || task.test_hi < task.train_hi ||
      (task.test_lo == task.train_lo && task.test_hi == task.train_hi)) {
    throw Error("benchmarks",
                "test range must strictly contain the train range");
  }
  std::mt19937_64 rng(seed);
  ArithData data;
  data.train_x = random_uniform({task.train_samples, task.input_dim},
                                task.train_lo, task.train_hi, rng);
  data.train_y = detail::arith_targets(task, data.train_x);
  data.interp_x = random_uniform({task.test_samples, task.input_dim},
                                 task.train_lo, task.train_hi, rng);
  data.interp_y = detail::arith_targets(task, data.interp_x);
  data.extrap_x = detail::sample_extrapolation(task, task.test_samples, rng);
  data.extrap_y = detail::arith_targets(task, data.extrap_x);
  return data;
}

struct BenchModelResult {
  std::string model;
  double interp_mae = std::numeric_limits<double>::quiet_NaN();
  double extrap_mae = std::numeric_limits<double>::quiet_NaN();
  long long epochs_to_converge = -1;  // -1: threshold never reached
  bool diverged = false;
};

struct BenchResult {
  std::string task;
  std::vector<BenchModelResult> rows;  // dense, nac, nalu
};

struct BenchConfig {
  long long epochs = 400;
  double lr = 1e-2;
  std::size_t hidden = 8;
  double converge_threshold = 1e-3;  // train MSE
  std::uint64_t seed = 7;
};

inline double mean_absolute_error(const Network& net, const Tensor& x,
                                  const Tensor& y) {
  const Tensor pred = net.predict(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    acc += std::abs(pred[i] - y[i]);
  return acc / static_cast<double>(pred.size());
}

/// A NAC layer pre-saturated so the effective weights are 1 on the selected
/// inputs: tanh(20) * sigmoid(20) ~ 1 - 4.2e-9. With signs from the task it
/// computes exact sums/differences at any input magnitude — the closed-form
/// anchor the trained comparison is checked against.
inline Network make_saturated_nac(const ArithTask& task) {
  const std::size_t d = task.input_dim;
  const std::size_t half = d / 2;
  Tensor w_hat({1, d});
  Tensor m_hat = Tensor::full({1, d}, 20.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double sign =
        (task.op == ArithOp::subtract && j >= half) ? -1.0 : 1.0;
    w_hat.at2(0, j) = 20.0 * sign;
  }
  NacParams p{std::make_shared<Parameter>("nac.W_hat", std::move(w_hat)),
              std::make_shared<Parameter>("nac.M_hat", std::move(m_hat))};
  Network net;
  net.add(std::make_unique<NacLayer>(std::move(p)));
  return net;
}

namespace detail {

inline Network make_bench_model(const std::string& kind, const ArithTask& task,
                                const BenchConfig& cfg,
                                std::mt19937_64& rng) {
  const std::size_t d = task.input_dim;
  const std::size_t h = cfg.hidden;
  Network net;
  if (kind == "dense") {
    net.add(std::make_unique<DenseLayer>("dense1", d, h, rng));
    net.add(std::make_unique<ReluLayer>());
    net.add(std::make_unique<DenseLayer>("dense2", h, 1, rng));
  } else if (kind == "nac") {
    net.add(std::make_unique<NacLayer>("nac1", d, h, rng));
    net.add(std::make_unique<NacLayer>("nac2", h, 1, rng));
  } else if (kind == "nalu") {
    net.add(std::make_unique<NaluLayer>("nalu1", d, h, rng));
    net.add(std::make_unique<NaluLayer>("nalu2", h, 1, rng));
  } else {
    throw Error("benchmarks", "unknown bench model: " + kind);
  }
  return net;
}

}  // namespace detail

/// Trains dense / NAC / NALU models on the same data with the same budget
/// (plain linear heads — targets are unbounded) and reports interpolation
/// and extrapolation MAE for each. A diverging model is reported, not fatal.
inline BenchResult run_extrapolation_bench(const ArithTask& task,
                                           const BenchConfig& cfg) {
  const ArithData data = gen_arith_task(task, cfg.seed);
  BenchResult result;
  result.task = arith_op_name(task.op);
  for (const std::string kind : {"dense", "nac", "nalu"}) {
    std::mt19937_64 rng(cfg.seed);
    Network net = detail::make_bench_model(kind, task, cfg, rng);
    auto params = net.parameters();
    AdamState adam(params);
    Context ctx{Mode::train, &rng};
    BenchModelResult row;
    row.model = kind;
    try {
      for (long long epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tape tape;
        Variable x = tape.leaf(data.train_x, false);
        Variable pred = net.forward(tape, x, ctx);
        Variable target = tape.leaf(data.train_y, false);
        Variable loss = mse_loss(pred, target);
        const double l = loss.value()[0];
        if (!std::isfinite(l)) {
          throw DivergenceError("bench loss is not finite", epoch);
        }
        if (row.epochs_to_converge < 0 && l < cfg.converge_threshold)
          row.epochs_to_converge = epoch + 1;
        zero_grads(params);
        tape.backward(loss);
        adam_step(adam, params, cfg.lr);
      }
      row.interp_mae = mean_absolute_error(net, data.interp_x, data.interp_y);
      row.extrap_mae = mean_absolute_error(net, data.extrap_x, data.extrap_y);
    } catch (const DivergenceError&) {
      row.diverged = true;
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

inline void write_bench_csv(const std::string& path,
                            const BenchResult& result) {
  std::ofstream out(path);
  if (!out) throw Error("benchmarks", "cannot write bench CSV: " + path);
  out << "model,task,interp_mae,extrap_mae,epochs_to_converge\n";
  for (const auto& row : result.rows) {
    out << row.model << ',' << result.task << ','
        << (row.diverged ? "diverged" : format_double(row.interp_mae)) << ','
        << (row.diverged ? "diverged" : format_double(row.extrap_mae)) << ','
        << row.epochs_to_converge << '\n';
  }
  if (!out) throw Error("benchmarks", "failed writing bench CSV: " + path);
}

}  // namespace nalucast
