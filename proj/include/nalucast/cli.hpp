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

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nalucast/benchmarks.hpp"

namespace nalucast {

/// Every setting has a default; a config file overrides defaults and
/// command-line flags override the file.
struct RunConfig {
  // paths
  std::string data_path;            // empty -> built-in synthetic series
  std::string out_path;             // command-dependent default
  std::string report_path = "train_report.csv";
  std::string checkpoint_path = "model.ckpt";
  // model
  std::string variant = "nalu";
  std::string hidden_widths;        // comma list; empty -> variant default
  double dropout_rate = 0.2;
  std::size_t kernel_size = 4;
  std::string conv_channels = "16,32,64";
  std::string pool_sizes = "2,2,1";
  double nalu_epsilon = 1e-7;
  bool nalu_separate_m = false;
  bool nalu_exp_m = false;
  // data
  std::size_t lookback = 20;
  std::size_t horizon = 5;
  std::size_t batch_size = 1232;
  double train_fraction = 0.8;
  std::string scaler_fit = "full";  // full | train
  // training
  long long epochs = 500;
  std::uint64_t seed = 42;
  std::string select_on = "train";  // train | test
  double lr_min = 1e-6;
  double lr_max = 1e-2;
  long long step_size = 0;          // 0 -> two epochs' worth of iterations
  // synthetic generator
  std::size_t gen_n = 6200;
  double gen_base = 400.0;
  double gen_trend = 0.05;
  double gen_amplitude = 25.0;
  double gen_period = 480.0;
  double gen_noise_sd = 2.0;
  // bench
  std::string bench_task = "add";
  std::size_t bench_dim = 4;
  double bench_train_lo = 0.0, bench_train_hi = 0.5;
  double bench_test_lo = 0.0, bench_test_hi = 2.0;
  long long bench_epochs = 400;
  double bench_lr = 1e-2;
  std::size_t bench_hidden = 8;
};

namespace detail {

inline std::vector<std::size_t> parse_size_list(const std::string& s,
                                                const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(tok.c_str(), &end, 10);
    if (end != tok.c_str() + tok.size() || v == 0)
      throw Error("cli", std::string(what) + " entries must be positive"
                                             " integers, got '" + tok + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw Error("cli", "config key " + key + " expects a boolean, got '" + v +
                         "'");
}

inline double parse_double_or_throw(const std::string& v,
                                    const std::string& key) {
  double out = 0.0;
  if (!parse_double(v, out))
    throw Error("cli", "config key " + key + " expects a number, got '" + v +
                           "'");
  return out;
}

inline long long parse_int_or_throw(const std::string& v,
                                    const std::string& key) {
  char* end = nullptr;
  const long long out = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    throw Error("cli", "config key " + key + " expects an integer, got '" +
                           v + "'");
  return out;
}

}  // namespace detail

/// Flat `key = value` config format; '#' starts a comment. Unknown keys are
/// rejected so typos surface instead of silently using defaults.
inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cli", "cannot open config file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("cli", path + ":" + std::to_string(lineno) +
                             ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));

    if (key == "paths.data") cfg.data_path = value;
    else if (key == "paths.out") cfg.out_path = value;
    else if (key == "paths.report") cfg.report_path = value;
    else if (key == "paths.checkpoint") cfg.checkpoint_path = value;
    else if (key == "model.variant") cfg.variant = value;
    else if (key == "model.hidden_widths") cfg.hidden_widths = value;
    else if (key == "model.dropout_rate")
      cfg.dropout_rate = detail::parse_double_or_throw(value, key);
    else if (key == "model.kernel_size")
      cfg.kernel_size = (std::size_t)detail::parse_int_or_throw(value, key);
    else if (key == "model.conv_channels") cfg.conv_channels = value;
    else if (key == "model.pool_sizes") cfg.pool_sizes = value;
    else if (key == "model.nalu_epsilon")
      cfg.nalu_epsilon = detail::parse_double_or_throw(value, key);
    else if (key == "model.nalu_separate_m")
      cfg.nalu_separate_m = detail::parse_bool(value, key);
    else if (key == "model.nalu_exp_m")
      cfg.nalu_exp_m = detail::parse_bool(value, key);
    else if (key == "data.lookback")
      cfg.lookback = (std::size_t)detail::parse_int_or_throw(value, key);
    else if (key == "data.horizon")
      cfg.horizon = (std::size_t)detail::parse_int_or_throw(value, key);
    else if (key == "data.batch_size")
      cfg.batch_size = (std::size_t)detail::parse_int_or_throw(value, key);
    else if (key == "data.train_fraction")
      cfg.train_fraction = detail::parse_double_or_throw(value, key);
    else if (key == "data.scaler_fit") cfg.scaler_fit = value;
    else if (key == "train.epochs")
      cfg.epochs = detail::parse_int_or_throw(value, key);
    else if (key == "train.seed")
      cfg.seed = (std::uint64_t)detail::parse_int_or_throw(value, key);
    else if (key == "train.select_on") cfg.select_on = value;
    else if (key == "schedule.lr_min")
      cfg.lr_min = detail::parse_double_or_throw(value, key);
    else if (key == "schedule.lr_max")
      cfg.lr_max = detail::parse_double_or_throw(value, key);
    else if (key == "schedule.step_size")
      cfg.step_size = detail::parse_int_or_throw(value, key);
    else if (key == "generate.n")
      cfg.gen_n = (std::size_t)detail::parse_int_or_throw(value, key);
    else if (key == "generate.base")
      cfg.gen_base = detail::parse_double_or_throw(value, key);
    else if (key == "generate.trend")
      cfg.gen_trend = detail::parse_double_or_throw(value, key);
    else if (key == "generate.amplitude")
      cfg.gen_amplitude = detail::parse_double_or_throw(value, key);
    else if (key == "generate.period")
      cfg.gen_period = detail::parse_double_or_throw(value, key);
    else if (key == "generate.noise_sd")
      cfg.gen_noise_sd = detail::parse_double_or_throw(value, key);
    else if (key == "bench.task") cfg.bench_task = value;
    else if (key == "bench.dim")
      cfg.bench_dim = (std::size_t)detail::parse_int_or_throw(value, key);
    else if (key == "bench.train_lo")
      cfg.bench_train_lo = detail::parse_double_or_throw(value, key);
    else if (key == "bench.train_hi")
      cfg.bench_train_hi = detail::parse_double_or_throw(value, key);
    else if (key == "bench.test_lo")
      cfg.bench_test_lo = detail::parse_double_or_throw(value, key);
    else if (key == "bench.test_hi")
      cfg.bench_test_hi = detail::parse_double_or_throw(value, key);
    else if (key == "bench.epochs")
      cfg.bench_epochs = detail::parse_int_or_throw(value, key);
    else if (key == "bench.lr")
      cfg.bench_lr = detail::parse_double_or_throw(value, key);
    else if (key == "bench.hidden")
      cfg.bench_hidden = (std::size_t)detail::parse_int_or_throw(value, key);
    else
      throw Error("cli", path + ":" + std::to_string(lineno) +
                             ": unknown config key '" + key + "'");
  }
}

inline ModelSpec model_spec_from(const RunConfig& cfg) {
  ModelSpec spec;
  spec.variant = parse_variant(cfg.variant);
  spec.input_width = cfg.lookback;
  if (!cfg.hidden_widths.empty())
    spec.hidden_widths =
        detail::parse_size_list(cfg.hidden_widths, "hidden widths");
  spec.dropout_rate = cfg.dropout_rate;
  spec.kernel_size = cfg.kernel_size;
  spec.conv_channels =
      detail::parse_size_list(cfg.conv_channels, "conv channels");
  spec.pool_sizes = detail::parse_size_list(cfg.pool_sizes, "pool sizes");
  spec.nalu_epsilon = cfg.nalu_epsilon;
  spec.nalu_separate_m = cfg.nalu_separate_m;
  spec.nalu_exp_m = cfg.nalu_exp_m;
  spec.seed = cfg.seed;
  return spec;
}

namespace detail {

inline SyntheticParams synthetic_params_from(const RunConfig& cfg) {
  SyntheticParams p;
  p.base = cfg.gen_base;
  p.trend = cfg.gen_trend;
  p.amplitude = cfg.gen_amplitude;
  p.period = cfg.gen_period;
  p.noise_sd = cfg.gen_noise_sd;
  return p;
}

inline PriceSeries load_or_generate(const RunConfig& cfg, std::ostream& out) {
  if (cfg.data_path.empty()) {
    out << "no --data given, using the built-in synthetic series (n="
        << cfg.gen_n << ", seed=" << cfg.seed << ")\n";
    return generate_synthetic(cfg.gen_n, cfg.seed,
                              synthetic_params_from(cfg));
  }
  return load_csv(cfg.data_path);
}

/// Scaler policy: "full" fits on the whole series; "train" fits only on the
/// prefix covered by training windows (no test values seen).
inline ScalerParams fit_scaler_policy(const RunConfig& cfg,
                                      const PriceSeries& series) {
  if (cfg.scaler_fit == "full") return fit_scaler(series);
  if (cfg.scaler_fit == "train") {
    const std::size_t need = cfg.lookback + cfg.horizon;
    if (series.values.size() < need)
      return fit_scaler(series);  // windowing will reject later anyway
    const std::size_t n_windows = series.values.size() - need + 1;
    const auto n_train = static_cast<std::size_t>(
        std::floor(cfg.train_fraction * (double)n_windows));
    const std::size_t prefix =
        std::min(series.values.size(), n_train > 0 ? n_train - 1 + need
                                                   : series.values.size());
    PriceSeries head;
    head.values.assign(series.values.begin(),
                       series.values.begin() + (std::ptrdiff_t)prefix);
    head.source = series.source;
    return fit_scaler(head);
  }
  throw Error("cli", "data.scaler_fit must be 'full' or 'train', got '" +
                         cfg.scaler_fit + "'");
}

}  // namespace detail

/// generate: write a synthetic close-price CSV.
inline int cmd_generate(const RunConfig& cfg, std::ostream& out) {
  const std::string path =
      cfg.out_path.empty() ? "synthetic.csv" : cfg.out_path;
  PriceSeries series = generate_synthetic(cfg.gen_n, cfg.seed,
                                          detail::synthetic_params_from(cfg));
  write_series_csv(path, series);
  out << "wrote " << series.values.size() << " rows to " << path << "\n";
  return 0;
}

/// train: load -> clean -> scale -> window -> split -> build -> train;
/// writes the checkpoint and the per-epoch report CSV.
inline int cmd_train(const RunConfig& cfg, std::ostream& out) {
  PriceSeries series = detail::load_or_generate(cfg, out);
  ScalerParams scaler = detail::fit_scaler_policy(cfg, series);
  const auto scaled = scale_series(scaler, series.values);
  WindowedDataset windows = make_windows(scaled, cfg.lookback, cfg.horizon);
  SplitBatches batches =
      split_and_batch(windows, cfg.train_fraction, cfg.batch_size);

  ModelSpec spec = model_spec_from(cfg);
  Network net = build_model(spec);

  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.seed = cfg.seed;
  tc.select_on_test = cfg.select_on == "test";
  if (cfg.select_on != "train" && cfg.select_on != "test")
    throw Error("cli", "train.select_on must be 'train' or 'test'");
  tc.schedule.lr_min = cfg.lr_min;
  tc.schedule.lr_max = cfg.lr_max;
  tc.schedule.step_size =
      cfg.step_size > 0
          ? cfg.step_size
          : 2 * static_cast<long long>(batches.train.size());

  TrainOutput result = train(net, batches, tc, scaler);

  const std::string ckpt_path =
      cfg.out_path.empty() ? cfg.checkpoint_path : cfg.out_path;
  save_checkpoint(ckpt_path, result.checkpoint);
  write_report_csv(cfg.report_path, result.report);

  const TrainReport& r = result.report;
  out << "variant " << variant_name(spec.variant) << "\n";
  out << "train batches " << batches.train.size() << ", test batches "
      << batches.test.size() << " (batch size " << cfg.batch_size << ")\n";
  out << "final train loss " << format_double(r.final_train_loss) << "\n";
  out << "final test loss  " << format_double(r.final_test_loss) << "\n";
  out << "final full loss  " << format_double(r.final_full_loss) << "\n";
  out << "best train loss  " << format_double(r.best_train_loss)
      << " (epoch " << r.best_epoch << ")\n";
  out << "best test loss   " << format_double(r.best_test_loss) << "\n";
  out << "best full loss   " << format_double(r.best_full_loss) << "\n";
  out << "checkpoint " << ckpt_path << "\n";
  out << "report " << cfg.report_path << "\n";
  std::cerr << "wall " << r.wall_seconds << " s\n";
  return 0;
}

/// predict: run a checkpointed model over every window of a series and dump
/// plot-ready actual/predicted pairs in scaled and price space.
inline int cmd_predict(const RunConfig& cfg, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(cfg.checkpoint_path);
  Network net = build_model(ckpt.spec);
  restore(net, ckpt);

  PriceSeries series = detail::load_or_generate(cfg, out);
  const auto scaled = scale_series(ckpt.scaler, series.values);
  WindowedDataset windows =
      make_windows(scaled, ckpt.spec.input_width, cfg.horizon);
  if (windows.inputs.cols() != ckpt.spec.input_width) {
    throw Error("cli", "window width " +
                           std::to_string(windows.inputs.cols()) +
                           " is incompatible with checkpoint input width " +
                           std::to_string(ckpt.spec.input_width));
  }

  EvalResult eval_r =
      evaluate(net, windows.inputs, windows.labels, &ckpt.scaler);

  const std::string path =
      cfg.out_path.empty() ? "predictions.csv" : cfg.out_path;
  std::ofstream f(path);
  if (!f) throw Error("cli", "cannot write predictions: " + path);
  f << "window_start_index,actual_scaled,predicted_scaled,actual_price,"
       "predicted_price\n";
  for (std::size_t i = 0; i < windows.inputs.rows(); ++i) {
    const double actual = windows.labels.at2(i, 0);
    f << i << ',' << format_double(actual) << ','
      << format_double(eval_r.predictions[i]) << ','
      << format_double(inverse_scale(ckpt.scaler, actual)) << ','
      << format_double(eval_r.predictions_price[i]) << '\n';
  }
  if (!f) throw Error("cli", "failed writing predictions: " + path);

  out << "windows " << windows.inputs.rows() << "\n";
  out << "full loss " << format_double(eval_r.mse) << "\n";
  out << "predictions " << path << "\n";
  return 0;
}

/// bench: dense vs NAC vs NALU on an arithmetic extrapolation task.
inline int cmd_bench(const RunConfig& cfg, std::ostream& out) {
  ArithTask task;
  task.op = parse_arith_op(cfg.bench_task);
  task.input_dim = cfg.bench_dim;
  task.train_lo = cfg.bench_train_lo;
  task.train_hi = cfg.bench_train_hi;
  task.test_lo = cfg.bench_test_lo;
  task.test_hi = cfg.bench_test_hi;

  BenchConfig bc;
  bc.epochs = cfg.bench_epochs;
  bc.lr = cfg.bench_lr;
  bc.hidden = cfg.bench_hidden;
  bc.seed = cfg.seed;

  BenchResult result = run_extrapolation_bench(task, bc);
  const std::string path = cfg.out_path.empty() ? "bench.csv" : cfg.out_path;
  write_bench_csv(path, result);
  for (const auto& row : result.rows) {
    out << row.model << ": interp_mae="
        << (row.diverged ? "diverged" : format_double(row.interp_mae))
        << " extrap_mae="
        << (row.diverged ? "diverged" : format_double(row.extrap_mae))
        << " epochs_to_converge=" << row.epochs_to_converge << "\n";
  }
  out << "results " << path << "\n";
  return 0;
}

/// Parses argv (with config-file layering) and dispatches. Returns the
/// process exit code; all library errors land on `err` with their module
/// prefix.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out,
                   std::ostream& err) {
  RunConfig cfg;

  // The config file must be applied before flag parsing so flags win.
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      path = args[i].substr(std::string("--config=").size());
    if (!path.empty()) {
      try {
        apply_config_file(cfg, path);
      } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
      }
    }
  }

  CLI::App app{"nalucast: close-price forecasting with NALU-augmented"
               " networks"};
  app.require_subcommand(1);
  std::string config_path;  // consumed above; registered for help/validation

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key = value config file");
    cmd->add_option("--seed", cfg.seed, "RNG seed");
    cmd->add_option("--out", cfg.out_path, "output path");
  };

  CLI::App* generate =
      app.add_subcommand("generate", "write a synthetic close-price CSV");
  add_common(generate);
  generate->add_option("--n", cfg.gen_n, "series length");

  CLI::App* train_cmd =
      app.add_subcommand("train", "train a model on a close-price CSV");
  add_common(train_cmd);
  train_cmd->add_option("--data", cfg.data_path, "input CSV path");
  train_cmd->add_option("--variant", cfg.variant,
                        "ann | cnn | nalu | cnn-nalu");
  train_cmd->add_option("--epochs", cfg.epochs, "training epochs");
  train_cmd->add_option("--batch-size", cfg.batch_size, "batch size");
  train_cmd->add_option("--lookback", cfg.lookback, "input window length");
  train_cmd->add_option("--horizon", cfg.horizon, "prediction offset");
  train_cmd->add_option("--report", cfg.report_path, "report CSV path");
  train_cmd->add_option("--scaler-fit", cfg.scaler_fit,
                        "scaler fit policy: full | train");

  CLI::App* predict =
      app.add_subcommand("predict", "predict every window of a series");
  add_common(predict);
  predict->add_option("--data", cfg.data_path, "input CSV path");
  predict->add_option("--checkpoint", cfg.checkpoint_path,
                      "checkpoint to load");
  predict->add_option("--horizon", cfg.horizon, "prediction offset");

  CLI::App* bench = app.add_subcommand(
      "bench", "dense vs NAC vs NALU arithmetic extrapolation");
  add_common(bench);
  bench->add_option("--task", cfg.bench_task, "add | subtract | scale_sum");
  bench->add_option("--epochs", cfg.bench_epochs, "bench training epochs");
  bench->add_option("--dim", cfg.bench_dim, "task input dimension");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (generate->parsed()) return cmd_generate(cfg, out);
    if (train_cmd->parsed()) return cmd_train(cfg, out);
    if (predict->parsed()) return cmd_predict(cfg, out);
    if (bench->parsed()) return cmd_bench(cfg, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace nalucast
