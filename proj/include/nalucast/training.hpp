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

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nalucast/data.hpp"
#include "nalucast/models.hpp"

namespace nalucast {

/// Mean squared error over all entries; gradient w.r.t. pred is
/// (2/m)(pred - target).
inline Variable mse_loss(const Variable& pred, const Variable& target) {
  if (!pred.value().same_shape(target.value())) {
    throw ShapeError("training", "mse shapes differ: " +
                                     shape_str(pred.value().shape()) +
                                     " vs " +
                                     shape_str(target.value().shape()));
  }
  Variable d = sub(pred, target);
  return mean(mul(d, d));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  explicit AdamState(const std::vector<ParamPtr>& params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.push_back(Tensor::zeros(p->value.shape()));
      v.push_back(Tensor::zeros(p->value.shape()));
    }
  }
};

/// One bias-corrected Adam update over the parameters' accumulated grads.
inline void adam_step(AdamState& state, const std::vector<ParamPtr>& params,
                      double lr) {
  if (state.m.size() != params.size())
    throw Error("training", "adam state does not match parameter list");
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, (double)state.step);
  const double c2 = 1.0 - std::pow(state.beta2, (double)state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

inline void zero_grads(const std::vector<ParamPtr>& params) {
  for (const auto& p : params) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Cyclic learning rate
// ---------------------------------------------------------------------------

/// Triangular policy: lr climbs linearly lr_min -> lr_max over step_size
/// iterations, then descends back; period 2 * step_size.
struct CyclicSchedule {
  double lr_min = 1e-6;
  double lr_max = 1e-2;
  long long step_size = 8;
};

inline double cyclic_lr(const CyclicSchedule& s, long long iteration) {
  if (s.step_size < 1)
    throw Error("training", "cyclic schedule step_size must be >= 1");
  const long long period = 2 * s.step_size;
  const long long phase = iteration % period;
  const double frac =
      phase <= s.step_size
          ? static_cast<double>(phase) / static_cast<double>(s.step_size)
          : static_cast<double>(period - phase) /
                static_cast<double>(s.step_size);
  return s.lr_min + (s.lr_max - s.lr_min) * frac;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Self-describing parameter snapshot. Values are written with 17 significant
/// digits so a reload reproduces forward passes bit for bit.
struct Checkpoint {
  int format_version = 1;
  ModelSpec spec;
  ScalerParams scaler;
  double best_loss = std::numeric_limits<double>::infinity();
  long long best_epoch = -1;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, Tensor>> params;
};

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(xs[i]);
  }
  return s;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoull(tok));
  }
  return out;
}

inline std::string spec_echo(const ModelSpec& m) {
  std::ostringstream os;
  os << "variant=" << variant_name(m.variant)
     << " input_width=" << m.input_width
     << " hidden_widths=" << join_sizes(m.effective_widths())
     << " dropout_rate=" << format_double(m.dropout_rate)
     << " conv_channels=" << join_sizes(m.conv_channels)
     << " kernel_size=" << m.kernel_size
     << " pool_sizes=" << join_sizes(m.pool_sizes)
     << " nalu_epsilon=" << format_double(m.nalu_epsilon)
     << " nalu_separate_m=" << (m.nalu_separate_m ? 1 : 0)
     << " nalu_exp_m=" << (m.nalu_exp_m ? 1 : 0) << " seed=" << m.seed;
  return os.str();
}

inline void apply_spec_field(ModelSpec& m, const std::string& key,
                             const std::string& value) {
  if (key == "variant") m.variant = parse_variant(value);
  else if (key == "input_width") m.input_width = std::stoull(value);
  else if (key == "hidden_widths") m.hidden_widths = parse_sizes(value);
  else if (key == "dropout_rate") m.dropout_rate = std::strtod(value.c_str(), nullptr);
  else if (key == "conv_channels") m.conv_channels = parse_sizes(value);
  else if (key == "kernel_size") m.kernel_size = std::stoull(value);
  else if (key == "pool_sizes") m.pool_sizes = parse_sizes(value);
  else if (key == "nalu_epsilon") m.nalu_epsilon = std::strtod(value.c_str(), nullptr);
  else if (key == "nalu_separate_m") m.nalu_separate_m = value == "1";
  else if (key == "nalu_exp_m") m.nalu_exp_m = value == "1";
  else if (key == "seed") m.seed = std::stoull(value);
  else throw Error("training", "unknown checkpoint spec field: " + key);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path);
  if (!out) throw Error("training", "cannot write checkpoint: " + path);
  out << "nalucast-checkpoint format_version=" << c.format_version << ' '
      << detail::spec_echo(c.spec) << '\n';
  out << "scaler min=" << format_double(c.scaler.min)
      << " max=" << format_double(c.scaler.max) << '\n';
  out << "best_loss " << format_double(c.best_loss) << '\n';
  out << "best_epoch " << c.best_epoch << '\n';
  out << "seed " << c.seed << '\n';
  out << "params " << c.params.size() << '\n';
  for (const auto& [name, tensor] : c.params) {
    out << name << ' ' << tensor.rank();
    for (auto e : tensor.shape()) out << ' ' << e;
    out << '\n';
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      if (i) out << ' ';
      out << format_double(tensor[i]);
    }
    out << '\n';
  }
  if (!out) throw Error("training", "failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("training", "cannot open checkpoint: " + path);
  Checkpoint c;
  std::string line;
  if (!std::getline(in, line))
    throw Error("training", "checkpoint is empty: " + path);
  {
    std::stringstream ss(line);
    std::string magic;
    ss >> magic;
    if (magic != "nalucast-checkpoint")
      throw Error("training", "not a checkpoint file: " + path);
    std::string kv;
    bool have_version = false;
    while (ss >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw Error("training", "malformed checkpoint header token: " + kv);
      const std::string key = kv.substr(0, eq);
      const std::string value = kv.substr(eq + 1);
      if (key == "format_version") {
        c.format_version = std::stoi(value);
        if (c.format_version != 1) {
          throw Error("training", "unsupported checkpoint format_version " +
                                      value);
        }
        have_version = true;
      } else {
        detail::apply_spec_field(c.spec, key, value);
      }
    }
    if (!have_version)
      throw Error("training", "checkpoint header lacks format_version");
  }
  std::string tag;
  {
    std::string min_kv, max_kv;
    in >> tag >> min_kv >> max_kv;
    if (tag != "scaler" || min_kv.rfind("min=", 0) != 0 ||
        max_kv.rfind("max=", 0) != 0)
      throw Error("training", "malformed checkpoint scaler line");
    c.scaler.min = std::strtod(min_kv.c_str() + 4, nullptr);
    c.scaler.max = std::strtod(max_kv.c_str() + 4, nullptr);
  }
  in >> tag >> line;
  if (tag != "best_loss")
    throw Error("training", "malformed checkpoint best_loss line");
  c.best_loss = std::strtod(line.c_str(), nullptr);
  in >> tag >> c.best_epoch;
  if (tag != "best_epoch")
    throw Error("training", "malformed checkpoint best_epoch line");
  in >> tag >> c.seed;
  if (tag != "seed") throw Error("training", "malformed checkpoint seed line");
  std::size_t count = 0;
  in >> tag >> count;
  if (tag != "params")
    throw Error("training", "malformed checkpoint params line");
  for (std::size_t p = 0; p < count; ++p) {
    std::string name;
    std::size_t rank = 0;
    if (!(in >> name >> rank))
      throw Error("training", "truncated checkpoint parameter header");
    Shape shape(rank);
    for (auto& e : shape) {
      if (!(in >> e))
        throw Error("training", "truncated checkpoint shape for " + name);
    }
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::string tok;
      if (!(in >> tok))
        throw Error("training", "truncated checkpoint values for " + name);
      t[i] = std::strtod(tok.c_str(), nullptr);
    }
    c.params.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

/// Copies checkpoint tensors into the network's identically named
/// parameters; the layer stack must match the checkpoint's spec.
inline void restore(Network& net, const Checkpoint& c) {
  auto params = net.parameters();
  if (params.size() != c.params.size()) {
    throw Error("training", "checkpoint has " +
                                std::to_string(c.params.size()) +
                                " parameters, network has " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, tensor] = c.params[i];
    if (params[i]->name != name) {
      throw Error("training", "checkpoint parameter '" + name +
                                  "' does not match network parameter '" +
                                  params[i]->name + "'");
    }
    if (!params[i]->value.same_shape(tensor)) {
      throw Error("training", "checkpoint parameter '" + name +
                                  "' shape " + shape_str(tensor.shape()) +
                                  " does not match network shape " +
                                  shape_str(params[i]->value.shape()));
    }
    params[i]->value = tensor;
    params[i]->zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  double mse = 0.0;
  Tensor predictions;        // scaled space, (n x 1)
  Tensor predictions_price;  // inverse-scaled, (n x 1)
};

/// Eval-mode forward over a whole input block. Parameters are read, never
/// written. Pass a scaler to also get inverse-scaled predictions.
inline EvalResult evaluate(const Network& net, const Tensor& inputs,
                           const Tensor& labels,
                           const ScalerParams* scaler = nullptr) {
  if (inputs.rank() != 2 || labels.rank() != 2 ||
      inputs.rows() != labels.rows()) {
    throw ShapeError("training", "evaluate expects matching (n x d) inputs"
                                 " and (n x 1) labels, got " +
                                     shape_str(inputs.shape()) + " and " +
                                     shape_str(labels.shape()));
  }
  EvalResult r;
  r.predictions = net.predict(inputs);
  double acc = 0.0;
  for (std::size_t i = 0; i < r.predictions.size(); ++i) {
    const double d = r.predictions[i] - labels[i];
    acc += d * d;
  }
  r.mse = acc / static_cast<double>(r.predictions.size());
  if (scaler != nullptr) {
    r.predictions_price = map_unary(
        r.predictions, [&](double y) { return inverse_scale(*scaler, y); });
  }
  return r;
}

namespace detail {
/// Sample-weighted eval-mode MSE over a list of batches.
inline double eval_mse(const Network& net, const std::vector<Batch>& batches) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& b : batches) {
    const EvalResult r = evaluate(net, b.inputs, b.labels);
    acc += r.mse * static_cast<double>(b.inputs.rows());
    count += b.inputs.rows();
  }
  return count == 0 ? 0.0 : acc / static_cast<double>(count);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  long long epochs = 500;
  CyclicSchedule schedule;
  std::uint64_t seed = 42;
  bool select_on_test = false;  // default selects on train loss
};

struct TrainReport {
  std::vector<double> epoch_loss;  // eval-mode mean train loss per epoch
  std::vector<double> epoch_lr;    // lr at the end of each epoch
  double final_train_loss = 0.0;
  double final_test_loss = 0.0;
  double final_full_loss = 0.0;
  double best_train_loss = 0.0;
  double best_test_loss = 0.0;
  double best_full_loss = 0.0;
  long long best_epoch = -1;
  double wall_seconds = 0.0;
  std::string config_echo;
};

struct TrainOutput {
  Checkpoint checkpoint;
  TrainReport report;
};

/// Two columns of the report are derived, the rest is the trace itself.
inline void write_report_csv(const std::string& path, const TrainReport& r) {
  std::ofstream out(path);
  if (!out) throw Error("training", "cannot write report: " + path);
  out << "epoch,mean_train_loss,lr_at_epoch_end\n";
  for (std::size_t i = 0; i < r.epoch_loss.size(); ++i) {
    out << (i + 1) << ',' << format_double(r.epoch_loss[i]) << ','
        << format_double(r.epoch_lr[i]) << '\n';
  }
  if (!out) throw Error("training", "failed writing report: " + path);
}

namespace detail {
inline std::vector<std::pair<std::string, Tensor>> snapshot_params(
    const std::vector<ParamPtr>& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p->name, p->value);
  return out;
}

inline void load_params(const std::vector<ParamPtr>& params,
                        const std::vector<std::pair<std::string, Tensor>>&
                            snapshot) {
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i]->value = snapshot[i].second;
}
}  // namespace detail

/// Runs `epochs` passes over the training batches: forward, MSE, backward,
/// Adam with the cyclic rate. After each epoch the network is re-evaluated on
/// the train batches (eval mode, dropout off) and the lowest-loss parameter
/// snapshot is retained; that best state — not the final one — goes into the
/// returned checkpoint. Aborts with DivergenceError if the loss leaves the
/// finite range.
inline TrainOutput train(Network& net, const SplitBatches& batches,
                         const TrainConfig& cfg, const ScalerParams& scaler) {
  if (batches.train.empty())
    throw Error("training", "no training batches");
  if (cfg.epochs < 1) throw Error("training", "epochs must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  auto params = net.parameters();
  AdamState adam(params);
  std::mt19937_64 rng(cfg.seed);
  Context train_ctx{Mode::train, &rng};

  TrainReport report;
  {
    std::ostringstream echo;
    echo << "epochs=" << cfg.epochs << " seed=" << cfg.seed
         << " lr_min=" << format_double(cfg.schedule.lr_min)
         << " lr_max=" << format_double(cfg.schedule.lr_max)
         << " step_size=" << cfg.schedule.step_size << " select_on="
         << (cfg.select_on_test ? "test" : "train") << " "
         << detail::spec_echo(net.spec());
    report.config_echo = echo.str();
  }
  double best = std::numeric_limits<double>::infinity();
  long long best_epoch = -1;
  std::vector<std::pair<std::string, Tensor>> best_params;
  long long iteration = 0;
  double lr = cyclic_lr(cfg.schedule, 0);

  for (long long epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : batches.train) {
      lr = cyclic_lr(cfg.schedule, iteration);
      Tape tape;
      Variable x = tape.leaf(batch.inputs, false);
      Variable pred = net.forward(tape, x, train_ctx);
      Variable target = tape.leaf(batch.labels, false);
      Variable loss = mse_loss(pred, target);
      if (!std::isfinite(loss.value()[0])) {
        throw DivergenceError(
            "loss is not finite at iteration " + std::to_string(iteration),
            iteration);
      }
      zero_grads(params);
      tape.backward(loss);
      adam_step(adam, params, lr);
      ++iteration;
    }
    const double epoch_loss = detail::eval_mse(net, batches.train);
    if (!std::isfinite(epoch_loss)) {
      throw DivergenceError("epoch loss is not finite after epoch " +
                                std::to_string(epoch + 1),
                            iteration);
    }
    report.epoch_loss.push_back(epoch_loss);
    report.epoch_lr.push_back(lr);
    const double selection =
        cfg.select_on_test ? detail::eval_mse(net, batches.test) : epoch_loss;
    if (selection < best) {
      best = selection;
      best_epoch = epoch + 1;
      best_params = detail::snapshot_params(params);
    }
  }

  // Final-state losses, then the network is left at the best snapshot.
  std::vector<Batch> full;
  full.reserve(batches.train.size() + batches.test.size());
  for (const auto& b : batches.train) full.push_back(b);
  for (const auto& b : batches.test) full.push_back(b);

  report.final_train_loss = report.epoch_loss.back();
  report.final_test_loss = detail::eval_mse(net, batches.test);
  report.final_full_loss = detail::eval_mse(net, full);

  detail::load_params(params, best_params);
  report.best_train_loss = detail::eval_mse(net, batches.train);
  report.best_test_loss = detail::eval_mse(net, batches.test);
  report.best_full_loss = detail::eval_mse(net, full);
  report.best_epoch = best_epoch;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  Checkpoint ckpt;
  ckpt.spec = net.spec();
  ckpt.scaler = scaler;
  ckpt.best_loss = best;
  ckpt.best_epoch = best_epoch;
  ckpt.seed = cfg.seed;
  ckpt.params = std::move(best_params);
  return TrainOutput{std::move(ckpt), std::move(report)};
}

}  // namespace nalucast
