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

#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nalucast/layers.hpp"

namespace nalucast {

enum class Variant { ann, cnn, nalu, cnn_nalu };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::ann: return "ann";
    case Variant::cnn: return "cnn";
    case Variant::nalu: return "nalu";
    case Variant::cnn_nalu: return "cnn-nalu";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "ann") return Variant::ann;
  if (s == "cnn") return Variant::cnn;
  if (s == "nalu") return Variant::nalu;
  if (s == "cnn-nalu" || s == "cnn_nalu") return Variant::cnn_nalu;
  throw Error("models", "unknown variant '" + s +
                            "' (expected ann, cnn, nalu, cnn-nalu)");
}

/// Declarative description of one architecture plus its hyperparameters.
/// hidden_widths left empty selects the variant's default head.
struct ModelSpec {
  Variant variant = Variant::nalu;
  std::size_t input_width = 20;
  std::vector<std::size_t> hidden_widths;   // empty -> variant default
  double dropout_rate = 0.2;
  std::vector<std::size_t> conv_channels = {16, 32, 64};
  std::size_t kernel_size = 4;
  std::vector<std::size_t> pool_sizes = {2, 2, 1};
  double nalu_epsilon = 1e-7;
  bool nalu_separate_m = false;
  bool nalu_exp_m = false;
  std::uint64_t seed = 42;

  std::vector<std::size_t> effective_widths() const {
    if (!hidden_widths.empty()) return hidden_widths;
    if (variant == Variant::cnn) return {32, 16};
    return {64, 32, 16};
  }
};

/// A runnable network: an ordered layer stack whose parameters register with
/// the optimizer exactly once each.
class Network {
 public:
  Network() = default;
  explicit Network(ModelSpec spec) : spec_(std::move(spec)) {}

  void add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
  }

  Variable forward(Tape& tape, const Variable& input,
                   const Context& ctx) const {
    Variable x = input;
    for (const auto& layer : layers_) x = layer->forward(tape, x, ctx);
    return x;
  }

  /// Runs an eval-mode forward pass and returns the output tensor.
  Tensor predict(const Tensor& inputs) const {
    Tape tape;
    Variable x = tape.leaf(inputs, false);
    return forward(tape, x, Context{Mode::eval, nullptr}).value();
  }

  std::vector<ParamPtr> parameters() const {
    std::vector<ParamPtr> out;
    std::unordered_set<Parameter*> seen;
    for (const auto& layer : layers_) {
      for (auto& p : layer->params()) {
        if (seen.insert(p.get()).second) out.push_back(p);
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p->value.size();
    return n;
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<std::unique_ptr<Layer>>& layers() const {
    return layers_;
  }

  /// Post-conv/pool lengths in trunk order; empty for dense-only variants.
  const std::vector<std::size_t>& conv_length_trace() const {
    return conv_trace_;
  }
  std::size_t flatten_width() const { return flatten_width_; }

  void set_conv_trace(std::vector<std::size_t> trace, std::size_t flat) {
    conv_trace_ = std::move(trace);
    flatten_width_ = flat;
  }

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::size_t> conv_trace_;
  std::size_t flatten_width_ = 0;
};

namespace detail {

inline void require_variant(const ModelSpec& spec, Variant expected,
                            const char* builder) {
  if (spec.variant != expected) {
    throw Error("models", std::string(builder) + " called with variant '" +
                              variant_name(spec.variant) + "'");
  }
}

inline void require_positive_widths(const std::vector<std::size_t>& widths) {
  if (widths.empty())
    throw Error("models", "hidden widths must not be empty");
  for (auto w : widths) {
    if (w == 0) throw Error("models", "hidden widths must be positive");
  }
}

inline std::unique_ptr<NaluLayer> make_nalu(const std::string& name,
                                            std::size_t in, std::size_t out,
                                            const ModelSpec& spec,
                                            std::mt19937_64& rng) {
  return std::make_unique<NaluLayer>(
      name, in, out, rng, spec.nalu_epsilon,
      spec.nalu_exp_m ? NaluMPath::exp : NaluMPath::sigmoid,
      spec.nalu_separate_m);
}

inline std::string trace_str(const std::vector<std::size_t>& trace) {
  std::string s = "[";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(trace[i]);
  }
  return s + "]";
}

/// Shared convolutional trunk: three conv/relu/pool blocks on (n, 1, L),
/// then flatten. Paddings are (0, 0, 2), the assignment that keeps every
/// intermediate length positive from L = 20 with kernel 4 and stride-2 pools.
inline std::pair<std::vector<std::size_t>, std::size_t> add_conv_trunk(
    Network& net, const ModelSpec& spec, std::mt19937_64& rng) {
  if (spec.conv_channels.size() != 3 || spec.pool_sizes.size() != 3) {
    throw Error("models",
                "conv trunk expects 3 conv channels and 3 pool sizes, got " +
                    std::to_string(spec.conv_channels.size()) + " and " +
                    std::to_string(spec.pool_sizes.size()));
  }
  const std::vector<std::size_t> paddings = {0, 0, 2};
  const std::size_t pool_stride = 2;

  net.add(std::make_unique<ExpandChannelLayer>());
  std::vector<std::size_t> trace;
  std::size_t length = spec.input_width;
  std::size_t channels = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t out_ch = spec.conv_channels[i];
    if (length + 2 * paddings[i] < spec.kernel_size) {
      throw Error("models", "conv trunk shape trace failed at conv" +
                                std::to_string(i + 1) + ": length " +
                                std::to_string(length) + " too short for"
                                " kernel " +
                                std::to_string(spec.kernel_size) +
                                " (trace so far " + trace_str(trace) + ")");
    }
    net.add(std::make_unique<Conv1dLayer>("conv" + std::to_string(i + 1),
                                          channels, out_ch, spec.kernel_size,
                                          1, paddings[i], rng));
    length = conv1d_output_length(length, spec.kernel_size, 1, paddings[i]);
    trace.push_back(length);
    net.add(std::make_unique<ReluLayer>());
    if (length < spec.pool_sizes[i]) {
      throw Error("models", "conv trunk shape trace failed at pool" +
                                std::to_string(i + 1) + ": length " +
                                std::to_string(length) +
                                " too short for pool " +
                                std::to_string(spec.pool_sizes[i]) +
                                " (trace so far " + trace_str(trace) + ")");
    }
    net.add(std::make_unique<MaxPool1dLayer>(spec.pool_sizes[i],
                                             pool_stride));
    length = maxpool1d_output_length(length, spec.pool_sizes[i], pool_stride);
    trace.push_back(length);
    channels = out_ch;
  }
  net.add(std::make_unique<FlattenLayer>());
  return {trace, channels * length};
}

}  // namespace detail

/// Dense stack: Dense/ReLU through the hidden widths (dropout after every
/// hidden block but the last), then Dense(last -> 1) and a sigmoid that pins
/// the output to the scaled (0, 1) target range.
inline Network build_ann(const ModelSpec& spec) {
  detail::require_variant(spec, Variant::ann, "build_ann");
  const auto widths = spec.effective_widths();
  detail::require_positive_widths(widths);
  Network net(spec);
  std::mt19937_64 rng(spec.seed);
  std::size_t in = spec.input_width;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    net.add(std::make_unique<DenseLayer>("dense" + std::to_string(i + 1), in,
                                         widths[i], rng));
    net.add(std::make_unique<ReluLayer>());
    if (i + 1 < widths.size())
      net.add(std::make_unique<DropoutLayer>(spec.dropout_rate));
    in = widths[i];
  }
  net.add(std::make_unique<DenseLayer>(
      "dense" + std::to_string(widths.size() + 1), in, 1, rng));
  net.add(std::make_unique<SigmoidLayer>());
  return net;
}

/// Same stack with NALU units in place of the dense hidden layers.
inline Network build_nalu(const ModelSpec& spec) {
  detail::require_variant(spec, Variant::nalu, "build_nalu");
  const auto widths = spec.effective_widths();
  detail::require_positive_widths(widths);
  Network net(spec);
  std::mt19937_64 rng(spec.seed);
  std::size_t in = spec.input_width;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    net.add(detail::make_nalu("nalu" + std::to_string(i + 1), in, widths[i],
                              spec, rng));
    net.add(std::make_unique<ReluLayer>());
    if (i + 1 < widths.size())
      net.add(std::make_unique<DropoutLayer>(spec.dropout_rate));
    in = widths[i];
  }
  net.add(detail::make_nalu("nalu" + std::to_string(widths.size() + 1), in,
                            1, spec, rng));
  net.add(std::make_unique<SigmoidLayer>());
  return net;
}

/// Conv trunk plus a dense regressor head with dropout between its blocks.
inline Network build_cnn(const ModelSpec& spec) {
  detail::require_variant(spec, Variant::cnn, "build_cnn");
  const auto widths = spec.effective_widths();
  detail::require_positive_widths(widths);
  Network net(spec);
  std::mt19937_64 rng(spec.seed);
  auto [trace, flat] = detail::add_conv_trunk(net, spec, rng);
  std::size_t in = flat;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    net.add(std::make_unique<DenseLayer>("dense" + std::to_string(i + 1), in,
                                         widths[i], rng));
    net.add(std::make_unique<ReluLayer>());
    net.add(std::make_unique<DropoutLayer>(spec.dropout_rate));
    in = widths[i];
  }
  net.add(std::make_unique<DenseLayer>(
      "dense" + std::to_string(widths.size() + 1), in, 1, rng));
  net.add(std::make_unique<SigmoidLayer>());
  net.set_conv_trace(std::move(trace), flat);
  return net;
}

/// Conv trunk, two NALU layers, then a two-layer dense regressor.
inline Network build_cnn_nalu(const ModelSpec& spec) {
  detail::require_variant(spec, Variant::cnn_nalu, "build_cnn_nalu");
  const auto widths = spec.effective_widths();
  detail::require_positive_widths(widths);
  if (widths.size() < 3) {
    throw Error("models",
                "cnn-nalu head needs at least 3 hidden widths, got " +
                    std::to_string(widths.size()));
  }
  Network net(spec);
  std::mt19937_64 rng(spec.seed);
  auto [trace, flat] = detail::add_conv_trunk(net, spec, rng);

  net.add(detail::make_nalu("nalu1", flat, widths[0], spec, rng));
  net.add(std::make_unique<ReluLayer>());
  net.add(std::make_unique<DropoutLayer>(spec.dropout_rate));
  net.add(detail::make_nalu("nalu2", widths[0], widths[1], spec, rng));
  net.add(std::make_unique<ReluLayer>());
  net.add(std::make_unique<DropoutLayer>(spec.dropout_rate));

  std::size_t in = widths[1];
  for (std::size_t i = 2; i < widths.size(); ++i) {
    net.add(std::make_unique<DenseLayer>(
        "dense" + std::to_string(i - 1), in, widths[i], rng));
    net.add(std::make_unique<ReluLayer>());
    in = widths[i];
  }
  net.add(std::make_unique<DenseLayer>(
      "dense" + std::to_string(widths.size() - 1), in, 1, rng));
  net.add(std::make_unique<SigmoidLayer>());
  net.set_conv_trace(std::move(trace), flat);
  return net;
}

inline Network build_model(const ModelSpec& spec) {
  switch (spec.variant) {
    case Variant::ann: return build_ann(spec);
    case Variant::cnn: return build_cnn(spec);
    case Variant::nalu: return build_nalu(spec);
    case Variant::cnn_nalu: return build_cnn_nalu(spec);
  }
  throw Error("models", "unhandled variant");
}

}  // namespace nalucast
