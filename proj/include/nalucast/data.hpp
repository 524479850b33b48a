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
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nalucast/tensor.hpp"

namespace nalucast {

/// Ordered close prices plus provenance. Dates are kept when the source CSV
/// has them but are never used as a feature.
struct PriceSeries {
  std::vector<double> values;
  std::vector<std::string> dates;  // empty or same length as values
  std::string source;
};

/// Min-max bounds for the affine map onto [0, 1].
struct ScalerParams {
  double min = 0.0;
  double max = 1.0;
};

struct WindowedDataset {
  Tensor inputs;  // (n x lookback)
  Tensor labels;  // (n x 1)
  std::size_t lookback = 20;
  std::size_t horizon = 5;
};

struct Batch {
  Tensor inputs;
  Tensor labels;
};

/// Chronological train/test batches: train windows strictly precede test
/// windows in series time, each side chunked to batch_size with a short final
/// batch kept.
struct SplitBatches {
  std::vector<Batch> train;
  std::vector<Batch> test;
  std::size_t batch_size = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline bool iequals(const std::string& a, const char* b) {
  std::size_t i = 0;
  for (; i < a.size() && b[i] != '\0'; ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  }
  return i == a.size() && b[i] == '\0';
}

/// Strict full-cell double parse; rejects empty cells and trailing garbage.
inline bool parse_double(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* begin = cell.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end == begin + cell.size();
}

}  // namespace detail

/// Reads the Close column of a CSV with a header row. Rows whose Close cell
/// is missing, unparseable, or not a finite positive price are dropped.
inline PriceSeries load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("data", "cannot open CSV file: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw Error("data", "CSV file is empty: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_csv_row(line);
  long long close_idx = -1, date_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (detail::iequals(header[i], "Close")) close_idx = (long long)i;
    if (detail::iequals(header[i], "Date")) date_idx = (long long)i;
  }
  if (close_idx < 0)
    throw Error("data", "CSV has no Close column: " + path);

  PriceSeries series;
  series.source = path;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_row(line);
    if (static_cast<std::size_t>(close_idx) >= cells.size()) continue;
    double v = 0.0;
    if (!detail::parse_double(cells[static_cast<std::size_t>(close_idx)], v))
      continue;
    if (!std::isfinite(v) || v <= 0.0) continue;
    series.values.push_back(v);
    if (date_idx >= 0 && static_cast<std::size_t>(date_idx) < cells.size())
      series.dates.push_back(cells[static_cast<std::size_t>(date_idx)]);
  }
  if (series.values.empty())
    throw Error("data", "no usable Close values after cleaning: " + path);
  if (series.dates.size() != series.values.size()) series.dates.clear();
  return series;
}

/// Writes a series back out in the same CSV format the loader reads.
inline void write_series_csv(const std::string& path,
                             const PriceSeries& series) {
  std::ofstream out(path);
  if (!out) throw Error("data", "cannot write CSV file: " + path);
  const bool with_dates = series.dates.size() == series.values.size();
  out << (with_dates ? "Date,Close\n" : "Close\n");
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    if (with_dates) out << series.dates[i] << ',';
    out << format_double(series.values[i]) << '\n';
  }
  if (!out) throw Error("data", "failed writing CSV file: " + path);
}

inline ScalerParams fit_scaler(const PriceSeries& series) {
  if (series.values.size() < 2)
    throw Error("data", "scaler needs at least 2 values, got " +
                            std::to_string(series.values.size()));
  const auto [lo, hi] =
      std::minmax_element(series.values.begin(), series.values.end());
  if (!(*hi > *lo))
    throw Error("data", "constant series: min == max == " +
                            format_double(*lo) + ", cannot scale");
  return ScalerParams{*lo, *hi};
}

inline double scale(const ScalerParams& p, double x) {
  return (x - p.min) / (p.max - p.min);
}

inline double inverse_scale(const ScalerParams& p, double y) {
  return y * (p.max - p.min) + p.min;
}

inline std::vector<double> scale_series(const ScalerParams& p,
                                        const std::vector<double>& xs) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = scale(p, xs[i]);
  return out;
}

/// Slides a lookback window over the scaled series. Sample j has input
/// s[j .. j+lookback-1] and label s[j+lookback-1+horizon] — the value
/// `horizon` steps after the last input.
inline WindowedDataset make_windows(const std::vector<double>& scaled,
                                    std::size_t lookback = 20,
                                    std::size_t horizon = 5) {
  if (lookback == 0 || horizon == 0)
    throw Error("data", "lookback and horizon must be >= 1");
  const std::size_t need = lookback + horizon;
  if (scaled.size() < need) {
    throw Error("data", "series too short for windowing: " +
                            std::to_string(scaled.size()) + " < lookback " +
                            std::to_string(lookback) + " + horizon " +
                            std::to_string(horizon));
  }
  const std::size_t n = scaled.size() - need + 1;
  Tensor inputs({n, lookback});
  Tensor labels({n, 1});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < lookback; ++k)
      inputs.at2(j, k) = scaled[j + k];
    labels.at2(j, 0) = scaled[j + lookback - 1 + horizon];
  }
  return WindowedDataset{std::move(inputs), std::move(labels), lookback,
                         horizon};
}

namespace detail {
inline Batch slice_rows(const WindowedDataset& d, std::size_t begin,
                        std::size_t end) {
  const std::size_t cols = d.inputs.cols();
  Tensor in({end - begin, cols});
  Tensor lab({end - begin, 1});
  for (std::size_t r = begin; r < end; ++r) {
    for (std::size_t c = 0; c < cols; ++c)
      in.at2(r - begin, c) = d.inputs.at2(r, c);
    lab.at2(r - begin, 0) = d.labels.at2(r, 0);
  }
  return Batch{std::move(in), std::move(lab)};
}
}  // namespace detail

/// Chronological split at floor(train_fraction * n), then fixed-size
/// batching on each side (final short batch kept).
inline SplitBatches split_and_batch(const WindowedDataset& d,
                                    double train_fraction,
                                    std::size_t batch_size) {
  if (batch_size == 0) throw Error("data", "batch size must be >= 1");
  const std::size_t n = d.inputs.rows();
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) {
    throw Error("data", "degenerate split: " + std::to_string(n_train) +
                            " train / " + std::to_string(n - n_train) +
                            " test samples from " + std::to_string(n));
  }
  SplitBatches out;
  out.batch_size = batch_size;
  for (std::size_t b = 0; b < n_train; b += batch_size)
    out.train.push_back(
        detail::slice_rows(d, b, std::min(b + batch_size, n_train)));
  for (std::size_t b = n_train; b < n; b += batch_size)
    out.test.push_back(detail::slice_rows(d, b, std::min(b + batch_size, n)));
  return out;
}

/// Knobs for the synthetic close-price generator.
struct SyntheticParams {
  double base = 400.0;
  double trend = 0.05;           // per-step drift
  double amplitude = 25.0;       // seasonal swing
  double period = 480.0;         // steps per season
  double noise_sd = 2.0;
};

namespace detail {
inline std::string hourly_timestamp(std::size_t index) {
  using namespace std::chrono;
  // Hourly steps from an arbitrary fixed origin.
  const sys_days origin = sys_days(year{2015} / February / 2);
  const auto tp = origin + hours(9) + hours(index);
  const auto day = floor<days>(tp);
  const year_month_day ymd(day);
  const auto hour = duration_cast<hours>(tp - day).count();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u %02d:00:00",
                static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<int>(hour));
  return buf;
}
}  // namespace detail

/// Deterministic trend + sinusoid + Gaussian noise series, clipped positive.
/// Stands in for real price data when none is supplied.
inline PriceSeries generate_synthetic(std::size_t n, std::uint64_t seed,
                                      const SyntheticParams& p = {}) {
  if (n < 1)
    throw Error("data", "synthetic series length must be >= 1, got " +
                            std::to_string(n));
  PriceSeries series;
  series.source = "synthetic(seed=" + std::to_string(seed) + ")";
  series.values.reserve(n);
  series.dates.reserve(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  constexpr double two_pi = 6.283185307179586;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i);
    double v = p.base + p.trend * t +
               p.amplitude * std::sin(two_pi * t / p.period) +
               p.noise_sd * noise(rng);
    series.values.push_back(std::max(v, 0.01));
    series.dates.push_back(detail::hourly_timestamp(i));
  }
  return series;
}

}  // namespace nalucast
