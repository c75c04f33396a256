#pragma once

/**
 * Dataset loading and preparation: CSV parsing, train-split z-scoring,
 * split-confined sliding windows, the heteroscedastic synthetic benchmark,
 * and the forecast export format.
 *
 * CSV contract: one header row; an optional leading "date" column holds
 * timestamps, every other column is one numeric channel. Parse failures
 * name the offending row and column.
 */

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "ppm/errors.hpp"
#include "ppm/rng.hpp"
#include "ppm/tensor.hpp"

namespace ppm {

struct Dataset {
  std::vector<std::string> channel_names;
  std::vector<std::string> timestamps;  // empty when the file has no date column
  Tensor values;                        // [T x C]

  std::size_t rows() const { return values.ndim() ? values.dim(0) : 0; }
  std::size_t channels() const { return values.ndim() ? values.dim(1) : 0; }

  /// Keeps only the first max_rows rows (no-op if already shorter).
  void truncate(std::size_t max_rows) {
    if (max_rows == 0 || rows() <= max_rows) return;
    const std::size_t c = channels();
    std::vector<double> kept(values.data(), values.data() + max_rows * c);
    values = Tensor({max_rows, c}, std::move(kept));
    if (!timestamps.empty()) timestamps.resize(max_rows);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_cell(const std::string& raw, std::size_t row, std::size_t col,
                         const std::string& name) {
  const std::string s = trim(raw);
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  const auto res = std::from_chars(b, e, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != e) {
    throw DataError(name + ": row " + std::to_string(row) + ", column " +
                    std::to_string(col) + ": not a number: \"" + s + "\"");
  }
  return v;
}

}  // namespace detail

inline Dataset load_csv_stream(std::istream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(name + ": empty file");
  std::vector<std::string> header = detail::split_line(line);
  if (header.empty()) throw DataError(name + ": empty header row");
  for (auto& h : header) h = detail::trim(h);

  const bool has_date = detail::lower(header.front()) == "date";
  const std::size_t first_chan = has_date ? 1 : 0;
  if (header.size() <= first_chan) {
    throw DataError(name + ": header has no channel columns");
  }

  Dataset ds;
  ds.channel_names.assign(header.begin() + first_chan, header.end());
  const std::size_t c = ds.channel_names.size();

  std::vector<double> flat;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells = detail::split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(name + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    if (has_date) ds.timestamps.push_back(detail::trim(cells.front()));
    for (std::size_t j = 0; j < c; ++j) {
      flat.push_back(detail::parse_cell(cells[first_chan + j], row,
                                        first_chan + j + 1, name));
    }
  }
  if (flat.empty()) throw DataError(name + ": no data rows");
  const std::size_t rows_loaded = flat.size() / c;
  ds.values = Tensor({rows_loaded, c}, std::move(flat));
  return ds;
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  return load_csv_stream(in, path);
}

struct NormStats {
  Tensor mean;  // [C]
  Tensor std;   // [C]
};

/// Per-channel mean and population std over rows [row_begin, row_end).
/// Channels that are constant on that range are rejected.
inline NormStats compute_norm_stats(const Tensor& values, std::size_t row_begin,
                                    std::size_t row_end) {
  const std::size_t c = values.dim(1);
  if (row_end <= row_begin || row_end > values.dim(0)) {
    throw DataError("normalization: bad row range");
  }
  const double n = static_cast<double>(row_end - row_begin);
  NormStats st{Tensor({c}), Tensor({c})};
  for (std::size_t t = row_begin; t < row_end; ++t) {
    for (std::size_t j = 0; j < c; ++j) st.mean[j] += values.at(t, j);
  }
  for (std::size_t j = 0; j < c; ++j) st.mean[j] /= n;
  for (std::size_t t = row_begin; t < row_end; ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      const double d = values.at(t, j) - st.mean[j];
      st.std[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < c; ++j) {
    st.std[j] = std::sqrt(st.std[j] / n);
    if (!(st.std[j] > 1e-12)) {
      throw DataError("normalization: channel " + std::to_string(j) +
                      " has (near-)zero variance in the reference range");
    }
  }
  return st;
}

inline void normalize_inplace(Tensor& values, const NormStats& st) {
  const std::size_t c = values.dim(1);
  for (std::size_t t = 0; t < values.dim(0); ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      values.at(t, j) = (values.at(t, j) - st.mean[j]) / st.std[j];
    }
  }
}

inline void denormalize_inplace(Tensor& values, const NormStats& st) {
  const std::size_t c = values.dim(1);
  for (std::size_t t = 0; t < values.dim(0); ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      values.at(t, j) = values.at(t, j) * st.std[j] + st.mean[j];
    }
  }
}

struct SplitSpec {
  double train = 0.6, val = 0.2, test = 0.2;

  void validate() const {
    if (!(train > 0.0) || !(val >= 0.0) || !(test >= 0.0) ||
        std::abs(train + val + test - 1.0) > 1e-9) {
      throw DataError("split: fractions must be nonnegative, train > 0, and sum to 1");
    }
  }
};

struct SplitRanges {
  std::size_t train_end = 0;  // train rows: [0, train_end)
  std::size_t val_end = 0;    // val rows: [train_end, val_end); test: [val_end, T)
  std::size_t rows = 0;
};

inline SplitRanges split_ranges(std::size_t rows, const SplitSpec& spec) {
  spec.validate();
  SplitRanges r;
  r.rows = rows;
  r.train_end = static_cast<std::size_t>(std::floor(rows * spec.train));
  r.val_end = r.train_end + static_cast<std::size_t>(std::floor(rows * spec.val));
  if (r.train_end == 0 || r.val_end > rows) throw DataError("split: series too short");
  return r;
}

/// Forecast instances whose history and target both lie inside one row
/// range. Origins are the first history row of each instance.
struct WindowSet {
  std::vector<std::size_t> origins;
  std::size_t history = 0;
  std::size_t horizon = 0;
};

inline WindowSet make_windows(std::size_t row_begin, std::size_t row_end,
                              std::size_t history, std::size_t horizon,
                              std::size_t stride) {
  if (stride == 0) throw DataError("windows: stride must be >= 1");
  if (history == 0 || horizon == 0) throw DataError("windows: history and horizon must be >= 1");
  WindowSet ws;
  ws.history = history;
  ws.horizon = horizon;
  if (row_end < row_begin) throw DataError("windows: bad row range");
  const std::size_t need = history + horizon;
  if (row_end - row_begin < need) return ws;  // zero windows fit
  for (std::size_t o = row_begin; o + need <= row_end; o += stride) {
    ws.origins.push_back(o);
  }
  return ws;
}

inline Tensor window_history(const Tensor& values, std::size_t origin,
                             std::size_t history) {
  const std::size_t c = values.dim(1);
  Tensor x({history, c});
  for (std::size_t t = 0; t < history; ++t) {
    for (std::size_t j = 0; j < c; ++j) x.at(t, j) = values.at(origin + t, j);
  }
  return x;
}

inline Tensor window_target(const Tensor& values, std::size_t origin,
                            std::size_t history, std::size_t horizon) {
  const std::size_t c = values.dim(1);
  Tensor y({horizon, c});
  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      y.at(t, j) = values.at(origin + history + t, j);
    }
  }
  return y;
}

/**
 * Synthetic benchmark: a sinusoid with a noise scale that itself swings
 * sinusoidally between s_min and s_max,
 *
 *   y[t,c] = sin(2 pi t / period + 2 pi c / C) + s(t) eps[t,c]
 *   s(t)   = s_min + (s_max - s_min) (1 + sin(2 pi t / period + phase)) / 2
 *
 * The true s(t) ships with the dataset so spread-tracking can be scored.
 */
struct SynthConfig {
  std::size_t length = 6000;
  std::size_t channels = 2;
  double period = 24.0;
  double s_min = 0.1;
  double s_max = 0.5;
  double phase = 0.5 * std::numbers::pi;
};

struct SynthDataset {
  Dataset data;
  Tensor noise_scale;  // [T] ground-truth s(t)
};

inline SynthDataset synth_heteroscedastic(const SynthConfig& cfg,
                                          std::uint64_t seed) {
  if (cfg.length == 0 || cfg.channels == 0 || !(cfg.period > 0.0) ||
      !(cfg.s_min >= 0.0) || !std::isfinite(cfg.s_max) ||
      cfg.s_max < cfg.s_min) {
    throw DataError("synth: bad configuration");
  }
  SynthDataset out;
  out.noise_scale = Tensor({cfg.length});
  out.data.values = Tensor({cfg.length, cfg.channels});
  RngState rng = RngState::derive(seed, StreamId::synth);
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    out.data.channel_names.push_back("ch" + std::to_string(c));
  }
  const double w = 2.0 * std::numbers::pi / cfg.period;
  for (std::size_t t = 0; t < cfg.length; ++t) {
    const double s = cfg.s_min + (cfg.s_max - cfg.s_min) *
                                     (1.0 + std::sin(w * t + cfg.phase)) / 2.0;
    out.noise_scale[t] = s;
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      const double signal =
          std::sin(w * t + 2.0 * std::numbers::pi * c / cfg.channels);
      out.data.values.at(t, c) = signal + s * rng.next_gaussian();
    }
  }
  return out;
}

/// %.17g: shortest text that round-trips an IEEE double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One exported forecast coordinate: ensemble mean and quantile band for
/// (window origin, channel, horizon step).
struct ForecastRow {
  std::size_t origin = 0, channel = 0, step = 0;
  double mean = 0, q05 = 0, q25 = 0, q50 = 0, q75 = 0, q95 = 0;
};

inline void write_forecast_csv(std::ostream& out,
                               const std::vector<ForecastRow>& rows) {
  out << "origin,channel,step,mean,q05,q25,q50,q75,q95\n";
  for (const ForecastRow& r : rows) {
    out << r.origin << ',' << r.channel << ',' << r.step << ','
        << format_double(r.mean) << ',' << format_double(r.q05) << ','
        << format_double(r.q25) << ',' << format_double(r.q50) << ','
        << format_double(r.q75) << ',' << format_double(r.q95) << '\n';
  }
}

inline void write_forecast_csv(const std::string& path,
                               const std::vector<ForecastRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write");
  write_forecast_csv(out, rows);
}

/// Inverse of load_csv for values this library produced: the timestamp
/// column appears only when the dataset carries timestamps.
inline void write_dataset_csv(std::ostream& out, const Dataset& ds) {
  const bool dated = !ds.timestamps.empty();
  if (dated && ds.timestamps.size() != ds.rows()) {
    throw DataError("dataset: timestamp count does not match rows");
  }
  if (dated) out << "date";
  for (std::size_t c = 0; c < ds.channels(); ++c) {
    if (dated || c > 0) out << ',';
    out << ds.channel_names[c];
  }
  out << '\n';
  for (std::size_t t = 0; t < ds.rows(); ++t) {
    if (dated) out << ds.timestamps[t];
    for (std::size_t c = 0; c < ds.channels(); ++c) {
      if (dated || c > 0) out << ',';
      out << format_double(ds.values.at(t, c));
    }
    out << '\n';
  }
}

inline void write_dataset_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write");
  write_dataset_csv(out, ds);
}

}  // namespace ppm
