#pragma once

/**
 * Probabilistic evaluation: empirical CRPS from ensemble members, quantile
 * calibration error (QICE) from pooled rank histograms, and the usual
 * point metrics against the ensemble mean.
 *
 * QICE bins each observation by its rank among the K members, so it is
 * exactly invariant under any strictly increasing transform of both the
 * observations and the samples. Interpolated quantiles (type 7) are used
 * only where actual band values must be exported.
 */

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ppm/data.hpp"
#include "ppm/errors.hpp"
#include "ppm/tensor.hpp"

namespace ppm {

/// CRPS of an empirical ensemble against scalar target y:
///   mean |x_i - y| - (1 / 2 K^2) sum_{i,j} |x_i - x_j|
/// computed in O(K log K) from the order statistics.
inline double crps_empirical(double y, std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("crps: no samples");
  const std::size_t k = samples.size();
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  double term1 = 0.0, pair = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    term1 += std::abs(sorted[i] - y);
    pair += (2.0 * static_cast<double>(i) - static_cast<double>(k) + 1.0) * sorted[i];
  }
  const double kk = static_cast<double>(k);
  return term1 / kk - pair / (kk * kk);
}

/// Closed-form CRPS of a Gaussian predictive distribution; the analytic
/// reference the ensemble version is checked against.
inline double crps_gaussian(double y, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("crps_gaussian: sigma must be positive");
  const double z = (y - mu) / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

/// Type-7 (linear interpolation) quantile of an ascending-sorted vector.
inline double quantile_type7(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty input");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile: p outside [0,1]");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Pooled rank-histogram calibration error. Each observation lands in bin
/// min(M-1, floor(c M / K)) where c counts members strictly below it;
/// QICE is the mean absolute deviation of the bin frequencies from 1/M.
class QiceAccumulator {
 public:
  explicit QiceAccumulator(std::size_t bins = 10) : counts_(bins, 0) {
    if (bins < 2) throw std::invalid_argument("qice: need >= 2 bins");
  }

  void add(double y, std::span<const double> samples) {
    if (samples.empty()) throw std::invalid_argument("qice: no samples");
    std::size_t below = 0;
    for (double s : samples) below += s < y ? 1 : 0;
    const std::size_t m = counts_.size();
    std::size_t bin = below * m / samples.size();
    if (bin >= m) bin = m - 1;
    ++counts_[bin];
    ++total_;
  }

  std::size_t observations() const { return total_; }

  Tensor bin_fractions() const {
    Tensor f({counts_.size()});
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      f[i] = total_ ? static_cast<double>(counts_[i]) / static_cast<double>(total_) : 0.0;
    }
    return f;
  }

  double value() const {
    if (total_ == 0) throw std::invalid_argument("qice: no observations");
    const double target = 1.0 / static_cast<double>(counts_.size());
    double acc = 0.0;
    for (std::size_t c : counts_) {
      acc += std::abs(static_cast<double>(c) / static_cast<double>(total_) - target);
    }
    return acc / static_cast<double>(counts_.size());
  }

 private:
  std::vector<std::size_t> counts_;
  std::size_t total_ = 0;
};

struct MetricsReport {
  double mse = 0.0;
  double mae = 0.0;
  double crps = 0.0;
  double qice = 0.0;
  std::size_t windows = 0;
  std::size_t coordinates = 0;
};

/// Streams evaluation windows: point metrics against the ensemble mean,
/// per-coordinate empirical CRPS, and the pooled QICE histogram.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(std::size_t qice_bins = 10) : qice_(qice_bins) {}

  /// y: [L x C] target, samples: [K x L x C] ensemble for one window.
  void add_window(const Tensor& y, const Tensor& samples) {
    if (y.ndim() != 2 || samples.ndim() != 3 || samples.dim(1) != y.dim(0) ||
        samples.dim(2) != y.dim(1)) {
      throw std::invalid_argument("metrics: shape mismatch");
    }
    const std::size_t k = samples.dim(0), grid = y.numel();
    std::vector<double> member(k);
    for (std::size_t j = 0; j < grid; ++j) {
      double mean_s = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        member[i] = samples[i * grid + j];
        mean_s += member[i];
      }
      mean_s /= static_cast<double>(k);
      const double err = mean_s - y[j];
      se_ += err * err;
      ae_ += std::abs(err);
      crps_ += crps_empirical(y[j], member);
      qice_.add(y[j], member);
      ++coords_;
    }
    ++windows_;
  }

  MetricsReport report() const {
    if (coords_ == 0) throw std::invalid_argument("metrics: nothing accumulated");
    MetricsReport r;
    const double n = static_cast<double>(coords_);
    r.mse = se_ / n;
    r.mae = ae_ / n;
    r.crps = crps_ / n;
    r.qice = qice_.value();
    r.windows = windows_;
    r.coordinates = coords_;
    return r;
  }

  const QiceAccumulator& qice() const { return qice_; }

 private:
  double se_ = 0.0, ae_ = 0.0, crps_ = 0.0;
  std::size_t windows_ = 0, coords_ = 0;
  QiceAccumulator qice_;
};

/// Flat key-value serialization plus a one-line results-table row.
inline void write_metrics(std::ostream& out, const std::string& name,
                          const MetricsReport& r, bool normalized) {
  out << "dataset=" << name << "\n";
  out << "normalized=" << (normalized ? 1 : 0) << "\n";
  out << "mse=" << format_double(r.mse) << "\n";
  out << "mae=" << format_double(r.mae) << "\n";
  out << "crps=" << format_double(r.crps) << "\n";
  out << "qice=" << format_double(r.qice) << "\n";
  out << "windows=" << r.windows << "\n";
  out << "coordinates=" << r.coordinates << "\n";
}

inline std::string format_results_row(const std::string& name,
                                      const MetricsReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "| %s | %.3f | %.3f | %.3f | %.3f |",
                name.c_str(), r.mse, r.mae, r.crps, r.qice);
  return buf;
}

inline void write_metrics(const std::string& path, const std::string& name,
                          const MetricsReport& r, bool normalized) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write");
  write_metrics(out, name, r, normalized);
  out << format_results_row(name, r) << "\n";
}

}  // namespace ppm
