#pragma once

/**
 * End-to-end orchestration: dataset preparation, split-wise evaluation
 * with frozen noise, and forecast export. The command-line driver and the
 * acceptance harness both run through these entry points.
 */

#include <algorithm>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ppm/data.hpp"
#include "ppm/metrics.hpp"
#include "ppm/model.hpp"
#include "ppm/objective.hpp"
#include "ppm/trainer.hpp"

namespace ppm {

/// Truncated dataset, train-region normalization stats, split bounds, and
/// the normalized value matrix models consume.
struct PreparedData {
  Dataset dataset;
  NormStats stats;
  SplitRanges ranges;
  Tensor values;  // [T x C], normalized
};

/// Stats come from the training rows only; the whole series is then
/// normalized with them.
inline PreparedData prepare_dataset(Dataset dataset, const SplitSpec& spec,
                                    std::size_t max_rows = 0) {
  if (max_rows > 0) dataset.truncate(max_rows);
  PreparedData out;
  out.ranges = split_ranges(dataset.rows(), spec);
  out.stats = compute_norm_stats(dataset.values, 0, out.ranges.train_end);
  out.values = dataset.values;
  normalize_inplace(out.values, out.stats);
  out.dataset = std::move(dataset);
  return out;
}

/// Per-channel inverse normalization of a [K x L x C] ensemble.
inline void denormalize_ensemble_inplace(Tensor& samples,
                                         const NormStats& stats) {
  if (samples.ndim() != 3 || samples.dim(2) != stats.mean.numel()) {
    throw std::invalid_argument("denormalize: ensemble shape mismatch");
  }
  const std::size_t c = samples.dim(2), rows = samples.dim(0) * samples.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double& v = samples[r * c + ch];
      v = v * stats.std[ch] + stats.mean[ch];
    }
  }
}

struct EvalConfig {
  std::size_t k_eval = 100;
  std::size_t stride = 1;
  std::size_t qice_bins = 10;
  bool denormalize = false;  // report metrics in original units
  std::uint64_t seed = 0;

  void validate() const {
    if (k_eval < 2 || stride == 0 || qice_bins < 2) {
      throw ConfigError("eval: k_eval >= 2, stride >= 1, qice_bins >= 2");
    }
  }
};

/// Forecast every window in [row_begin, row_end) with a per-origin frozen
/// noise substream and accumulate the metric suite.
inline MetricsReport evaluate_range(const Tensor& values,
                                    const NormStats& stats,
                                    std::size_t row_begin, std::size_t row_end,
                                    const ParamStore& params,
                                    const ModelConfig& mcfg,
                                    const EvalConfig& ecfg) {
  ecfg.validate();
  WindowSet ws = make_windows(row_begin, row_end, mcfg.history, mcfg.horizon,
                              ecfg.stride);
  if (ws.origins.empty()) throw DataError("evaluate: no windows fit the range");
  MetricsAccumulator acc(ecfg.qice_bins);
  for (std::size_t origin : ws.origins) {
    Tensor x = window_history(values, origin, mcfg.history);
    Tensor y = window_target(values, origin, mcfg.history, mcfg.horizon);
    RngState rng =
        RngState::derive(ecfg.seed, StreamId::diagnostics, origin);
    ForecastEnsemble fc = forecast(x, params, mcfg, ecfg.k_eval, rng);
    if (ecfg.denormalize) {
      denormalize_ensemble_inplace(fc.samples, stats);
      denormalize_inplace(y, stats);
    }
    acc.add_window(y, fc.samples);
  }
  return acc.report();
}

/// Quantile-band rows for export, at most `max_windows` windows from the
/// start of the range (0 keeps them all).
inline std::vector<ForecastRow> forecast_rows(
    const Tensor& values, const NormStats& stats, std::size_t row_begin,
    std::size_t row_end, const ParamStore& params, const ModelConfig& mcfg,
    const EvalConfig& ecfg, std::size_t max_windows = 0) {
  ecfg.validate();
  WindowSet ws = make_windows(row_begin, row_end, mcfg.history, mcfg.horizon,
                              ecfg.stride);
  if (ws.origins.empty()) throw DataError("forecast: no windows fit the range");
  if (max_windows > 0 && ws.origins.size() > max_windows) {
    ws.origins.resize(max_windows);
  }
  std::vector<ForecastRow> rows;
  const std::size_t l = mcfg.horizon, c = mcfg.channels;
  std::vector<double> member;
  for (std::size_t origin : ws.origins) {
    Tensor x = window_history(values, origin, mcfg.history);
    RngState rng =
        RngState::derive(ecfg.seed, StreamId::diagnostics, origin);
    ForecastEnsemble fc = forecast(x, params, mcfg, ecfg.k_eval, rng);
    if (ecfg.denormalize) denormalize_ensemble_inplace(fc.samples, stats);
    const std::size_t k = fc.samples.dim(0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t t = 0; t < l; ++t) {
        member.clear();
        for (std::size_t i = 0; i < k; ++i) {
          member.push_back(fc.samples[(i * l + t) * c + ch]);
        }
        std::sort(member.begin(), member.end());
        ForecastRow row;
        row.origin = origin;
        row.channel = ch;
        row.step = t;
        double sum = 0.0;
        for (double v : member) sum += v;
        row.mean = sum / static_cast<double>(k);
        row.q05 = quantile_type7(member, 0.05);
        row.q25 = quantile_type7(member, 0.25);
        row.q50 = quantile_type7(member, 0.50);
        row.q75 = quantile_type7(member, 0.75);
        row.q95 = quantile_type7(member, 0.95);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

/// key=value echo of every setting that affects a run; stored in
/// checkpoints and written next to run outputs.
inline std::string config_echo_string(const ModelConfig& m,
                                      const ObjectiveConfig& o,
                                      const TrainConfig& t) {
  std::ostringstream out;
  out << "history=" << m.history << "\nhorizon=" << m.horizon
      << "\nchannels=" << m.channels << "\nlatent_dim=" << m.latent()
      << "\nhidden=" << m.hidden << "\nprior=" << to_string(m.prior)
      << "\nstudent_t_nu=" << format_double(m.student_t_nu);
  if (m.sigma_override) {
    out << "\nsigma_override=" << format_double(*m.sigma_override);
  }
  out << "\nkernel=" << to_string(o.kernel)
      << "\nbandwidth=" << format_double(o.bandwidth)
      << "\nalpha=" << format_double(o.alpha)
      << "\nmm_weight=" << format_double(o.mm_weight)
      << "\nfloor_eps=" << format_double(o.floor_eps)
      << "\nkernel_student_t_nu=" << format_double(o.student_t_nu)
      << "\nmax_epochs=" << t.max_epochs << "\npatience=" << t.patience
      << "\nbatch=" << t.batch << "\nk_train=" << t.k_train
      << "\nseed=" << t.seed << "\nlr=" << format_double(t.adam.lr)
      << "\nbeta1=" << format_double(t.adam.beta1)
      << "\nbeta2=" << format_double(t.adam.beta2)
      << "\nadam_eps=" << format_double(t.adam.eps)
      << "\nclip_norm=" << format_double(t.adam.clip_norm) << "\n";
  return out.str();
}

}  // namespace ppm
