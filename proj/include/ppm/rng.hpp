#pragma once

/**
 * Counter-based deterministic random numbers. Every draw is a pure function
 * of (seed, counter), so independent substreams are cheap: derive() mixes a
 * stream id into the seed and starts a fresh counter. Nothing here carries
 * hidden global state.
 */

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include "ppm/tensor.hpp"

namespace ppm {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Well-known substream tags. Purpose tags keep draws for unrelated jobs
/// (weight init, noise, shuffling, diagnostics) on disjoint streams even
/// when they share the run seed.
enum class StreamId : std::uint64_t {
  init = 1,
  noise = 2,
  shuffle = 3,
  synth = 4,
  diagnostics = 5,
};

class RngState {
 public:
  RngState() = default;
  explicit RngState(std::uint64_t seed) : seed_(seed) {}

  static RngState derive(std::uint64_t seed, std::uint64_t stream) {
    return RngState(mix64(mix64(seed ^ kGolden) ^ (stream * 0xD2B74407B1CE6E93ULL + 1)));
  }
  static RngState derive(std::uint64_t seed, StreamId id, std::uint64_t index = 0) {
    return derive(mix64(seed ^ (static_cast<std::uint64_t>(id) * kGolden)), index);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix64(seed_ + (++counter_) * kGolden); }

  /// Uniform on the open interval (0,1); 53-bit resolution, never 0 or 1,
  /// so log/logit transforms downstream are safe.
  double next_unit() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the second variate of each pair is
  /// cached, still a deterministic function of (seed, counter).
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_unit();
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Gamma(shape, 1) via Marsaglia-Tsang squeeze; shape > 0.
  double next_gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("next_gamma: shape must be positive");
    if (shape < 1.0) {
      const double u = next_unit();
      return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = next_gaussian();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = next_unit();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Latent noise families. All are standardized to zero mean and unit
/// variance except student_t, which keeps its natural nu/(nu-2) variance.
enum class PriorFamily {
  gaussian,
  uniform,
  laplace,
  student_t,
  logistic,
  gumbel,
};

inline const char* to_string(PriorFamily f) {
  switch (f) {
    case PriorFamily::gaussian: return "gaussian";
    case PriorFamily::uniform: return "uniform";
    case PriorFamily::laplace: return "laplace";
    case PriorFamily::student_t: return "student_t";
    case PriorFamily::logistic: return "logistic";
    case PriorFamily::gumbel: return "gumbel";
  }
  return "?";
}

inline PriorFamily prior_family_from_string(const std::string& s) {
  if (s == "gaussian") return PriorFamily::gaussian;
  if (s == "uniform") return PriorFamily::uniform;
  if (s == "laplace") return PriorFamily::laplace;
  if (s == "student_t") return PriorFamily::student_t;
  if (s == "logistic") return PriorFamily::logistic;
  if (s == "gumbel") return PriorFamily::gumbel;
  throw std::invalid_argument("unknown prior family: " + s);
}

// Euler-Mascheroni constant, used to centre the Gumbel draw.
inline constexpr double kEulerGamma = 0.5772156649015329;

inline double sample_standard_scalar(PriorFamily family, RngState& rng,
                                     double student_t_nu = 3.0) {
  switch (family) {
    case PriorFamily::gaussian:
      return rng.next_gaussian();
    case PriorFamily::uniform:
      // Width 2*sqrt(3) has unit variance.
      return (2.0 * rng.next_unit() - 1.0) * std::numbers::sqrt3;
    case PriorFamily::laplace: {
      // Scale 1/sqrt(2) has unit variance.
      const double u = rng.next_unit() - 0.5;
      const double b = 1.0 / std::numbers::sqrt2;
      return -b * std::copysign(std::log1p(-2.0 * std::abs(u)), u);
    }
    case PriorFamily::student_t: {
      if (!(student_t_nu > 0.0)) {
        throw std::invalid_argument("student_t prior: nu must be positive");
      }
      const double z = rng.next_gaussian();
      const double chi2 = 2.0 * rng.next_gamma(0.5 * student_t_nu);
      return z / std::sqrt(chi2 / student_t_nu);
    }
    case PriorFamily::logistic: {
      // Scale sqrt(3)/pi has unit variance.
      const double u = rng.next_unit();
      return std::numbers::sqrt3 / std::numbers::pi * std::log(u / (1.0 - u));
    }
    case PriorFamily::gumbel: {
      // Scale sqrt(6)/pi has unit variance; shifting by gamma centres it.
      const double beta = std::sqrt(6.0) / std::numbers::pi;
      return beta * (-std::log(-std::log(rng.next_unit())) - kEulerGamma);
    }
  }
  throw std::invalid_argument("unknown prior family");
}

inline Tensor sample_standard(PriorFamily family, Shape shape, RngState& rng,
                              double student_t_nu = 3.0) {
  Tensor t(std::move(shape));
  for (double& v : t.span()) v = sample_standard_scalar(family, rng, student_t_nu);
  return t;
}

}  // namespace ppm
