#pragma once

/**
 * Sample-based training objective. Each target coordinate is scored by a
 * kernel density estimate built from the K ensemble members at that
 * coordinate:
 *
 *   log q(y) = -log(K h) + logsumexp_k log Kern((y - s_k) / h)
 *
 * evaluated with a max shift, then floored at log(floor_eps) so empty
 * regions cannot blow up the loss. The moment term (y - mean_k s_k)^2
 * anchors the ensemble mean. Both are averaged over the horizon-by-channel
 * grid and combined as alpha * nll + mm_weight * mm; mm_weight defaults to
 * 1 and exists so either term can be switched off for ablations.
 *
 * Gradients with respect to the samples are closed-form: the kernel
 * responsibilities (a softmax over un-floored member scores) weight each
 * member's pull toward the target; floored coordinates contribute zero
 * density gradient but keep the dense moment gradient.
 */

#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "ppm/errors.hpp"
#include "ppm/tensor.hpp"

namespace ppm {

enum class KernelFamily { gaussian, laplace, cauchy, student_t, logistic };

inline const char* to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::gaussian: return "gaussian";
    case KernelFamily::laplace: return "laplace";
    case KernelFamily::cauchy: return "cauchy";
    case KernelFamily::student_t: return "student_t";
    case KernelFamily::logistic: return "logistic";
  }
  return "?";
}

inline KernelFamily kernel_family_from_string(const std::string& s) {
  if (s == "gaussian") return KernelFamily::gaussian;
  if (s == "laplace") return KernelFamily::laplace;
  if (s == "cauchy") return KernelFamily::cauchy;
  if (s == "student_t") return KernelFamily::student_t;
  if (s == "logistic") return KernelFamily::logistic;
  throw std::invalid_argument("unknown kernel family: " + s);
}

struct ObjectiveConfig {
  double bandwidth = 0.3;
  double alpha = 0.1;
  double mm_weight = 1.0;
  double floor_eps = 1e-12;
  KernelFamily kernel = KernelFamily::gaussian;
  double student_t_nu = 3.0;

  void validate() const {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
      throw NumericError("objective: bandwidth must be positive and finite");
    }
    if (!(alpha >= 0.0)) throw NumericError("objective: alpha must be >= 0");
    if (!(mm_weight >= 0.0)) {
      throw NumericError("objective: mm_weight must be >= 0");
    }
    if (!(floor_eps > 0.0)) throw NumericError("objective: floor_eps must be > 0");
    if (kernel == KernelFamily::student_t && !(student_t_nu > 0.0)) {
      throw NumericError("objective: student_t_nu must be positive");
    }
  }
};

/// u-independent part of log Kern(u); adding kernel_core gives the full
/// normalized log kernel.
inline double kernel_log_constant(KernelFamily f, double nu = 3.0) {
  switch (f) {
    case KernelFamily::gaussian:
      return -0.5 * std::log(2.0 * std::numbers::pi);
    case KernelFamily::laplace:
      return -std::numbers::ln2;
    case KernelFamily::cauchy:
      return -std::log(std::numbers::pi);
    case KernelFamily::student_t:
      return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
             0.5 * std::log(nu * std::numbers::pi);
    case KernelFamily::logistic:
      return 0.0;
  }
  return 0.0;
}

/// u-dependent part of log Kern(u).
inline double kernel_core(KernelFamily f, double u, double nu = 3.0) {
  switch (f) {
    case KernelFamily::gaussian:
      return -0.5 * u * u;
    case KernelFamily::laplace:
      return -std::abs(u);
    case KernelFamily::cauchy:
      return -std::log1p(u * u);
    case KernelFamily::student_t:
      return -0.5 * (nu + 1.0) * std::log1p(u * u / nu);
    case KernelFamily::logistic: {
      const double a = std::abs(u);
      return -a - 2.0 * std::log1p(std::exp(-a));
    }
  }
  return 0.0;
}

/// d/du log Kern(u).
inline double kernel_dlog(KernelFamily f, double u, double nu = 3.0) {
  switch (f) {
    case KernelFamily::gaussian:
      return -u;
    case KernelFamily::laplace:
      return u > 0.0 ? -1.0 : (u < 0.0 ? 1.0 : 0.0);
    case KernelFamily::cauchy:
      return -2.0 * u / (1.0 + u * u);
    case KernelFamily::student_t:
      return -(nu + 1.0) * u / (nu + u * u);
    case KernelFamily::logistic:
      return -std::tanh(0.5 * u);
  }
  return 0.0;
}

inline double kernel_log(KernelFamily f, double u, double nu = 3.0) {
  return kernel_log_constant(f, nu) + kernel_core(f, u, nu);
}

/// One coordinate's KDE evaluation: floored log density plus the member
/// responsibilities (computed from the un-floored scores).
struct KdeEval {
  double log_q_raw = 0.0;  // before flooring
  double log_q = 0.0;      // max(log_q_raw, log(floor_eps))
  bool floored = false;
  Tensor omega;            // [K], nonnegative, sums to 1
};

inline KdeEval kde_log_density(double y, std::span<const double> samples,
                               const ObjectiveConfig& cfg) {
  cfg.validate();
  if (samples.empty()) {
    throw std::invalid_argument("kde_log_density: no samples");
  }
  const double h = cfg.bandwidth;
  const std::size_t k = samples.size();
  KdeEval ev;
  ev.omega = Tensor({k});
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    const double u = (y - samples[i]) / h;
    ev.omega[i] = kernel_core(cfg.kernel, u, cfg.student_t_nu);
    m = std::max(m, ev.omega[i]);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    ev.omega[i] = std::exp(ev.omega[i] - m);
    s += ev.omega[i];
  }
  for (std::size_t i = 0; i < k; ++i) ev.omega[i] /= s;
  ev.log_q_raw = m + std::log(s) +
                 kernel_log_constant(cfg.kernel, cfg.student_t_nu) -
                 std::log(static_cast<double>(k) * h);
  const double floor_log = std::log(cfg.floor_eps);
  ev.floored = ev.log_q_raw < floor_log;
  ev.log_q = ev.floored ? floor_log : ev.log_q_raw;
  return ev;
}

struct LossReport {
  double nll = 0.0;             // mean floored -log q over the L x C grid
  double mm = 0.0;              // mean squared error of the ensemble mean
  double total = 0.0;           // alpha * nll + mm_weight * mm
  double floor_fraction = 0.0;  // fraction of coordinates at the floor
};

namespace detail {

// Shared per-coordinate walk over the [K x L x C] ensemble against the
// [L x C] target. grad may be null for loss-only evaluation; when present
// it receives the gradient of the *batch-mean total* loss (the 1/(L*C)
// factor is included).
inline LossReport kde_loss_walk(const Tensor& y, const Tensor& samples,
                                const ObjectiveConfig& cfg, Tensor* grad) {
  cfg.validate();
  if (y.ndim() != 2 || samples.ndim() != 3 || samples.dim(1) != y.dim(0) ||
      samples.dim(2) != y.dim(1)) {
    throw std::invalid_argument("loss: expected y[L,C], samples[K,L,C], got y" +
                                shape_to_string(y.shape()) + " samples" +
                                shape_to_string(samples.shape()));
  }
  const std::size_t k = samples.dim(0), l = y.dim(0), c = y.dim(1);
  const std::size_t grid = l * c;
  const double h = cfg.bandwidth;
  const double logc = kernel_log_constant(cfg.kernel, cfg.student_t_nu);
  const double log_kh = std::log(static_cast<double>(k) * h);
  const double floor_log = std::log(cfg.floor_eps);
  const double inv_grid = 1.0 / static_cast<double>(grid);

  if (grad) {
    if (!grad->same_shape(samples)) *grad = Tensor(samples.shape());
    grad->fill(0.0);
  }

  std::vector<double> core(k);
  LossReport rep;
  std::size_t floored = 0;
  for (std::size_t j = 0; j < grid; ++j) {
    const double yv = y[j];
    double m = -std::numeric_limits<double>::infinity();
    double mean_s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double sv = samples[i * grid + j];
      mean_s += sv;
      const double u = (yv - sv) / h;
      core[i] = kernel_core(cfg.kernel, u, cfg.student_t_nu);
      m = std::max(m, core[i]);
    }
    mean_s /= static_cast<double>(k);
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += std::exp(core[i] - m);
    const double log_q_raw = m + std::log(s) + logc - log_kh;
    const bool is_floored = log_q_raw < floor_log;
    floored += is_floored ? 1 : 0;
    rep.nll += is_floored ? -floor_log : -log_q_raw;
    const double diff = yv - mean_s;
    rep.mm += diff * diff;

    if (grad) {
      const double g_mm_each =
          cfg.mm_weight * 2.0 * (mean_s - yv) / static_cast<double>(k);
      for (std::size_t i = 0; i < k; ++i) {
        double g = g_mm_each;
        if (!is_floored) {
          const double sv = samples[i * grid + j];
          const double u = (yv - sv) / h;
          const double omega = std::exp(core[i] - m) / s;
          // d(-log q)/ds_i = omega * dlogKern/du (u_i) / h.
          g += cfg.alpha * omega *
               kernel_dlog(cfg.kernel, u, cfg.student_t_nu) / h;
        }
        (*grad)[i * grid + j] += g * inv_grid;
      }
    }
  }
  rep.nll *= inv_grid;
  rep.mm *= inv_grid;
  rep.total = cfg.alpha * rep.nll + cfg.mm_weight * rep.mm;
  rep.floor_fraction = static_cast<double>(floored) * inv_grid;
  return rep;
}

}  // namespace detail

/// Truncated KDE negative log-likelihood, averaged over the grid.
inline double nll_loss(const Tensor& y, const Tensor& samples,
                       const ObjectiveConfig& cfg) {
  return detail::kde_loss_walk(y, samples, cfg, nullptr).nll;
}

/// Squared error of the ensemble mean, averaged over the grid.
inline double mm_loss(const Tensor& y, const Tensor& samples,
                      const ObjectiveConfig& cfg) {
  return detail::kde_loss_walk(y, samples, cfg, nullptr).mm;
}

/// Full report; total == alpha * nll + mm_weight * mm holds exactly.
inline LossReport total_loss(const Tensor& y, const Tensor& samples,
                             const ObjectiveConfig& cfg) {
  return detail::kde_loss_walk(y, samples, cfg, nullptr);
}

/// Loss plus gradient of the batch-mean total with respect to every
/// ensemble sample, in one pass.
inline LossReport loss_and_grad(const Tensor& y, const Tensor& samples,
                                const ObjectiveConfig& cfg,
                                Tensor& grad_samples) {
  return detail::kde_loss_walk(y, samples, cfg, &grad_samples);
}

/// Per-coordinate gradient d(-log q_trunc)/ds of the floored NLL alone,
/// not averaged: slice [.,t,c] differentiates coordinate (t,c)'s NLL.
inline Tensor grad_samples_nll(const Tensor& y, const Tensor& samples,
                               const ObjectiveConfig& cfg) {
  ObjectiveConfig pure = cfg;
  pure.alpha = 1.0;
  pure.mm_weight = 0.0;
  Tensor g;
  detail::kde_loss_walk(y, samples, pure, &g);
  // Undo the grid averaging.
  for (double& v : g.span()) v *= static_cast<double>(y.numel());
  return g;
}

/// Per-coordinate gradient of (y - mean)^2: 2 (mean - y) / K for every
/// member, dense even when the density term is floored.
inline Tensor grad_samples_mm(const Tensor& y, const Tensor& samples,
                              const ObjectiveConfig& cfg) {
  cfg.validate();
  const std::size_t k = samples.dim(0), grid = y.numel();
  Tensor g(samples.shape());
  for (std::size_t j = 0; j < grid; ++j) {
    double mean_s = 0.0;
    for (std::size_t i = 0; i < k; ++i) mean_s += samples[i * grid + j];
    mean_s /= static_cast<double>(k);
    const double each = 2.0 * (mean_s - y[j]) / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) g[i * grid + j] = each;
  }
  return g;
}

/// Per-coordinate gradient of alpha * nll + mm_weight * mm (un-averaged).
inline Tensor grad_samples_combined(const Tensor& y, const Tensor& samples,
                                    const ObjectiveConfig& cfg) {
  Tensor g;
  detail::kde_loss_walk(y, samples, cfg, &g);
  for (double& v : g.span()) v *= static_cast<double>(y.numel());
  return g;
}

}  // namespace ppm
