#pragma once

/**
 * Empirical checks on the estimator itself: KDE bias and fluctuation
 * scaling laws, push-forward expressiveness on a bimodal target, and
 * spread tracking against known noise scales. Each returns plain numbers
 * so harnesses can gate on them and writers can plot them.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "ppm/data.hpp"
#include "ppm/errors.hpp"
#include "ppm/model.hpp"
#include "ppm/objective.hpp"
#include "ppm/rng.hpp"
#include "ppm/tensor.hpp"
#include "ppm/threads.hpp"
#include "ppm/trainer.hpp"

namespace ppm {

/// Least-squares line through (x, y) pairs.
struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline SlopeFit fit_line(const std::vector<double>& xs,
                         const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw std::invalid_argument("fit_line: need >= 2 matched points");
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_line: constant x");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

/// Pearson correlation; 0 when either side is (numerically) constant.
inline double pearson(const std::vector<double>& xs,
                      const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw std::invalid_argument("pearson: need >= 2 matched points");
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx < 1e-24 || syy < 1e-24) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// 1-D first Wasserstein distance between equal-size empirical samples:
/// mean absolute gap between matched order statistics.
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("wasserstein1: need equal nonzero sizes");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
  return sum / static_cast<double>(a.size());
}

inline double log_normal_pdf(double y) {
  return -0.5 * y * y - 0.5 * std::log(2.0 * std::numbers::pi);
}

namespace detail {

/// log of the kernel density estimate at y over sorted samples, summing
/// only samples within `halfwidth` of y (0 disables the cutoff). The
/// Gaussian kernel mass beyond 6 bandwidths is ~1e-8 of the total, far
/// below the h^2 bias this estimate is used to expose.
inline double kde_log_density_sorted(double y,
                                     const std::vector<double>& sorted,
                                     double bandwidth, double halfwidth,
                                     KernelFamily kernel, double nu) {
  auto lo = sorted.begin(), hi = sorted.end();
  if (halfwidth > 0.0) {
    lo = std::lower_bound(sorted.begin(), sorted.end(), y - halfwidth);
    hi = std::upper_bound(sorted.begin(), sorted.end(), y + halfwidth);
  }
  if (lo == hi) return -std::numeric_limits<double>::infinity();
  double m = -std::numeric_limits<double>::infinity();
  for (auto it = lo; it != hi; ++it) {
    m = std::max(m, kernel_core(kernel, (y - *it) / bandwidth, nu));
  }
  double acc = 0.0;
  for (auto it = lo; it != hi; ++it) {
    acc += std::exp(kernel_core(kernel, (y - *it) / bandwidth, nu) - m);
  }
  return m + std::log(acc) + kernel_log_constant(kernel, nu) -
         std::log(static_cast<double>(sorted.size()) * bandwidth);
}

}  // namespace detail

struct ScalingCell {
  double knob = 0.0;  // bandwidth for bias cells, ensemble size for noise cells
  double stat = 0.0;
};

struct ScalingConfig {
  // Kept small: smoothing error grows like h^2 only while h^2 << 1, and
  // the huge default ensemble keeps sampling noise below the smallest cell.
  std::vector<double> bias_bandwidths = {0.1, 0.14, 0.2, 0.28, 0.4};
  std::size_t bias_draws = 1000000;
  std::size_t bias_trials = 10;
  std::vector<std::size_t> fluct_draws = {100, 316, 1000, 3162, 10000, 31623,
                                          100000};
  double fluct_bandwidth = 0.05;
  std::size_t fluct_trials = 200;
  std::vector<double> queries = {0.0, 0.5, 1.5};
  KernelFamily kernel = KernelFamily::gaussian;
  double student_t_nu = 3.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (bias_bandwidths.size() < 2 || fluct_draws.size() < 2 ||
        queries.empty() || bias_trials == 0 || fluct_trials < 2 ||
        bias_draws == 0 || !(fluct_bandwidth > 0.0)) {
      throw ConfigError("scaling study: degenerate configuration");
    }
  }
};

struct ScalingStudy {
  std::vector<ScalingCell> bias_cells;   // |mean log-density error| per h
  std::vector<ScalingCell> fluct_cells;  // std of log density per K
  SlopeFit bias_fit;                     // on log h vs log stat
  SlopeFit fluct_fit;                    // on log K vs log stat
};

/// Monte-Carlo measurement of the estimator's error laws on a standard
/// normal target: mean log-density error vs bandwidth at huge ensembles
/// (smoothing bias, slope ~ 2) and log-density spread vs ensemble size at
/// tiny bandwidth (sampling noise, slope ~ -1/2). Draws are reused across
/// bandwidths within a trial so the bias comparison sees one sample set.
inline ScalingStudy run_scaling_study(const ScalingConfig& cfg) {
  cfg.validate();
  ScalingStudy study;
  const std::size_t nq = cfg.queries.size();

  std::vector<double> bias_acc(cfg.bias_bandwidths.size() * nq, 0.0);
  {
    std::vector<double> draws(cfg.bias_draws);
    for (std::size_t trial = 0; trial < cfg.bias_trials; ++trial) {
      RngState rng =
          RngState::derive(cfg.seed, StreamId::diagnostics, trial);
      for (double& d : draws) d = rng.next_gaussian();
      std::sort(draws.begin(), draws.end());
      for (std::size_t hi = 0; hi < cfg.bias_bandwidths.size(); ++hi) {
        const double h = cfg.bias_bandwidths[hi];
        for (std::size_t qi = 0; qi < nq; ++qi) {
          const double y = cfg.queries[qi];
          const double lq = detail::kde_log_density_sorted(
              y, draws, h, 6.0 * h, cfg.kernel, cfg.student_t_nu);
          bias_acc[hi * nq + qi] += lq - log_normal_pdf(y);
        }
      }
    }
    std::vector<double> lx, ly;
    for (std::size_t hi = 0; hi < cfg.bias_bandwidths.size(); ++hi) {
      double stat = 0.0;
      for (std::size_t qi = 0; qi < nq; ++qi) {
        stat += std::abs(bias_acc[hi * nq + qi] /
                         static_cast<double>(cfg.bias_trials));
      }
      stat /= static_cast<double>(nq);
      study.bias_cells.push_back({cfg.bias_bandwidths[hi], stat});
      lx.push_back(std::log(cfg.bias_bandwidths[hi]));
      ly.push_back(std::log(stat));
    }
    study.bias_fit = fit_line(lx, ly);
  }

  {
    std::vector<double> lx, ly;
    std::vector<double> draws;
    std::vector<double> vals(cfg.fluct_trials);
    std::uint64_t serial = 1u << 20;  // clear of the bias-trial substreams
    for (std::size_t ki = 0; ki < cfg.fluct_draws.size(); ++ki) {
      const std::size_t k = cfg.fluct_draws[ki];
      double stat = 0.0;
      for (std::size_t qi = 0; qi < nq; ++qi) {
        const double y = cfg.queries[qi];
        for (std::size_t trial = 0; trial < cfg.fluct_trials; ++trial) {
          RngState rng =
              RngState::derive(cfg.seed, StreamId::diagnostics, serial++);
          draws.assign(k, 0.0);
          for (double& d : draws) d = rng.next_gaussian();
          std::sort(draws.begin(), draws.end());
          vals[trial] = detail::kde_log_density_sorted(
              y, draws, cfg.fluct_bandwidth, 0.0, cfg.kernel,
              cfg.student_t_nu);
        }
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(cfg.fluct_trials);
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        var /= static_cast<double>(cfg.fluct_trials - 1);
        stat += std::sqrt(var);
      }
      stat /= static_cast<double>(nq);
      study.fluct_cells.push_back({static_cast<double>(k), stat});
      lx.push_back(std::log(static_cast<double>(k)));
      ly.push_back(std::log(stat));
    }
    study.fluct_fit = fit_line(lx, ly);
  }
  return study;
}

inline void write_scaling_csv(std::ostream& out, const ScalingStudy& s) {
  out << "experiment,knob,stat\n";
  for (const ScalingCell& c : s.bias_cells) {
    out << "bias," << format_double(c.knob) << ',' << format_double(c.stat)
        << '\n';
  }
  for (const ScalingCell& c : s.fluct_cells) {
    out << "fluctuation," << format_double(c.knob) << ','
        << format_double(c.stat) << '\n';
  }
  out << "fit,bias_slope," << format_double(s.bias_fit.slope) << '\n';
  out << "fit,bias_r2," << format_double(s.bias_fit.r2) << '\n';
  out << "fit,fluctuation_slope," << format_double(s.fluct_fit.slope) << '\n';
  out << "fit,fluctuation_r2," << format_double(s.fluct_fit.r2) << '\n';
}

inline void write_scaling_csv(const std::string& path, const ScalingStudy& s) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write");
  write_scaling_csv(out, s);
}

/// Equal mixture of two well-separated normals; the classic target a
/// single Gaussian cannot represent but a learned push-forward can.
struct BimodalSpec {
  double weight = 0.5;
  double mean1 = -2.0, sd1 = 0.5;
  double mean2 = 2.0, sd2 = 0.5;
};

inline double sample_bimodal(const BimodalSpec& spec, RngState& rng) {
  const bool first = rng.next_unit() < spec.weight;
  const double g = rng.next_gaussian();
  return first ? spec.mean1 + spec.sd1 * g : spec.mean2 + spec.sd2 * g;
}

struct UniversalityConfig {
  BimodalSpec target;
  std::size_t steps = 3000;
  std::size_t batch = 64;
  std::size_t k_train = 256;
  std::size_t k_eval = 4096;
  std::size_t history = 4;
  std::size_t latent = 4;
  std::size_t hidden = 64;
  double lr = 8e-3;
  // Pure density objective: a mean anchor would drag every sample toward
  // the mixture mean and erase the two modes.
  ObjectiveConfig objective{.bandwidth = 0.3, .alpha = 1.0, .mm_weight = 0.0};
  std::uint64_t seed = 0;
};

struct UniversalityResult {
  double w1_model = 0.0;     // push-forward ensemble vs oracle draws
  double w1_gaussian = 0.0;  // moment-matched Gaussian vs oracle draws
  std::vector<double> model_samples;
  std::vector<double> oracle_samples;
  std::vector<double> gaussian_samples;
};

/// Trains the generator on i.i.d. bimodal targets with a constant history
/// (the conditioning carries no information, so the map alone must build
/// the shape), then scores both it and the best single Gaussian against
/// fresh oracle draws.
inline UniversalityResult run_universality_demo(
    const UniversalityConfig& ucfg) {
  ModelConfig mcfg;
  mcfg.history = ucfg.history;
  mcfg.horizon = 1;
  mcfg.channels = 1;
  mcfg.latent_dim = ucfg.latent;
  mcfg.hidden = ucfg.hidden;
  mcfg.validate();
  ucfg.objective.validate();
  if (ucfg.steps == 0 || ucfg.batch == 0 || ucfg.k_train < 2 ||
      ucfg.k_eval < 2) {
    throw ConfigError("universality: degenerate configuration");
  }

  RngState init_rng = RngState::derive(ucfg.seed, StreamId::init);
  ParamStore params = init_params(mcfg, init_rng);
  AdamConfig acfg;
  acfg.lr = ucfg.lr;
  Adam adam(params, acfg);

  Tensor x({mcfg.history, 1});  // constant zero history
  const double inv_b = 1.0 / static_cast<double>(ucfg.batch);
  const std::size_t chunk = 8;
  const std::size_t nchunks = (ucfg.batch + chunk - 1) / chunk;
  std::uint64_t serial = 0;
  for (std::size_t step = 0; step < ucfg.steps; ++step) {
    std::vector<GradBuffers> parts;
    parts.reserve(nchunks);
    for (std::size_t c = 0; c < nchunks; ++c) {
      parts.push_back(params.make_grad_buffers());
    }
    const std::uint64_t base = serial;
    parallel_chunks(ucfg.batch, chunk, [&](std::size_t c, std::size_t b,
                                           std::size_t e) {
      Tensor grad_samples;
      for (std::size_t i = b; i < e; ++i) {
        RngState tr =
            RngState::derive(ucfg.seed, StreamId::synth, base + i);
        Tensor y({1, 1});
        y[0] = sample_bimodal(ucfg.target, tr);
        RngState nr =
            RngState::derive(ucfg.seed, StreamId::noise, base + i);
        Tensor noise = draw_standard_noise(mcfg, ucfg.k_train, nr);
        ForwardCache cache;
        forward_cached(x, params, mcfg, noise, cache);
        LossReport rep =
            loss_and_grad(y, cache.samples, ucfg.objective, grad_samples);
        if (!std::isfinite(rep.total)) {
          throw NumericError("universality: non-finite loss");
        }
        for (double& g : grad_samples.span()) g *= inv_b;
        model_backward_into(grad_samples, cache, params, mcfg, parts[c]);
      }
    });
    serial += ucfg.batch;
    params.zero_grad();
    for (const GradBuffers& p : parts) params.grad.add(p);
    adam.step();
  }

  UniversalityResult res;
  RngState eval_rng =
      RngState::derive(ucfg.seed, StreamId::diagnostics, 1);
  ForecastEnsemble fc = forecast(x, params, mcfg, ucfg.k_eval, eval_rng);
  res.model_samples.assign(fc.samples.span().begin(),
                           fc.samples.span().end());

  RngState oracle_rng =
      RngState::derive(ucfg.seed, StreamId::diagnostics, 2);
  res.oracle_samples.resize(ucfg.k_eval);
  for (double& v : res.oracle_samples) {
    v = sample_bimodal(ucfg.target, oracle_rng);
  }

  double om = 0.0;
  for (double v : res.oracle_samples) om += v;
  om /= static_cast<double>(ucfg.k_eval);
  double ov = 0.0;
  for (double v : res.oracle_samples) ov += (v - om) * (v - om);
  ov /= static_cast<double>(ucfg.k_eval);
  RngState gauss_rng =
      RngState::derive(ucfg.seed, StreamId::diagnostics, 3);
  res.gaussian_samples.resize(ucfg.k_eval);
  for (double& v : res.gaussian_samples) {
    v = om + std::sqrt(ov) * gauss_rng.next_gaussian();
  }

  res.w1_model = wasserstein1(res.model_samples, res.oracle_samples);
  res.w1_gaussian = wasserstein1(res.gaussian_samples, res.oracle_samples);
  return res;
}

struct SpreadTrackingResult {
  double correlation = 0.0;
  std::vector<double> predicted;  // channel-mean ensemble std per step
  std::vector<double> truth;      // generating scale at that row
};

/// Correlates forecast spread with the known noise scale of a generated
/// series, one pair per (window, horizon step) over [row_begin, row_end).
/// Pairing per step, not per window, keeps the truth side varying even
/// when the horizon covers whole periods of the scale.
inline SpreadTrackingResult spread_correlation(
    const Tensor& values, const Tensor& noise_scale, std::size_t row_begin,
    std::size_t row_end, const ParamStore& params, const ModelConfig& mcfg,
    std::size_t k_draws, std::size_t stride, std::uint64_t seed) {
  if (noise_scale.ndim() != 1 || noise_scale.numel() != values.dim(0)) {
    throw std::invalid_argument("spread: noise scale length mismatch");
  }
  WindowSet ws =
      make_windows(row_begin, row_end, mcfg.history, mcfg.horizon, stride);
  if (ws.origins.size() < 2) {
    throw DataError("spread: need >= 2 windows");
  }
  SpreadTrackingResult res;
  for (std::size_t origin : ws.origins) {
    Tensor x = window_history(values, origin, mcfg.history);
    RngState rng = RngState::derive(seed, StreamId::diagnostics, origin);
    ForecastEnsemble fc = forecast(x, params, mcfg, k_draws, rng);
    Tensor sd = ensemble_std(fc.samples);
    for (std::size_t t = 0; t < mcfg.horizon; ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < mcfg.channels; ++c) {
        s += sd.at(t, c);
      }
      res.predicted.push_back(s / static_cast<double>(mcfg.channels));
      res.truth.push_back(noise_scale[origin + mcfg.history + t]);
    }
  }
  res.correlation = pearson(res.predicted, res.truth);
  return res;
}

}  // namespace ppm
