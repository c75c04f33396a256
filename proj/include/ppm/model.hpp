#pragma once

/**
 * The forecaster itself. A shared two-layer encoder reads each channel's
 * history and emits the mean and scale of a factorized Gaussian over that
 * channel's latent code; reparameterized draws from that prior go through a
 * shared two-layer mapper that turns one latent code into one horizon-long
 * trajectory per channel. K draws give a K-member forecast ensemble.
 *
 * Layout conventions:
 *   history window x   [H x C]   time-major, one column per channel
 *   prior mu, sigma    [C x D]
 *   noise, latents     [K x C x D]
 *   ensemble samples   [K x L x C]
 * Mapper batches all K*C latent rows through one GEMM; row k*C+c holds
 * sample k of channel c.
 */

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>

#include "ppm/errors.hpp"
#include "ppm/layers.hpp"
#include "ppm/rng.hpp"
#include "ppm/tensor.hpp"

namespace ppm {

// Additive floor keeping the prior scale strictly positive.
inline constexpr double kSigmaFloor = 1e-6;

struct ModelConfig {
  std::size_t history = 96;   // H
  std::size_t horizon = 192;  // L
  std::size_t channels = 1;   // C
  std::size_t latent_dim = 0; // D; 0 follows horizon
  std::size_t hidden = 256;
  PriorFamily prior = PriorFamily::gaussian;
  double student_t_nu = 3.0;
  // When set, the prior scale is forced to this constant everywhere: 1.0 is
  // the fixed-scale ablation, 0.0 collapses the ensemble onto its mean.
  std::optional<double> sigma_override;

  std::size_t latent() const { return latent_dim ? latent_dim : horizon; }

  void validate() const {
    if (history == 0 || horizon == 0 || channels == 0 || hidden == 0) {
      throw ConfigError("model: history, horizon, channels, hidden must be positive");
    }
    if (!(student_t_nu > 0.0)) {
      throw ConfigError("model: student_t_nu must be positive");
    }
    if (sigma_override && !(*sigma_override >= 0.0)) {
      throw ConfigError("model: sigma override must be nonnegative");
    }
  }
};

struct PriorParams {
  Tensor mu;     // [C x D]
  Tensor sigma;  // [C x D], strictly positive unless overridden to 0
};

/// Gradient accumulators, one tensor per weight tensor. Kept separable so
/// batch chunks can accumulate locally and be reduced in a fixed order.
struct GradBuffers {
  Tensor enc_w1, enc_b1, enc_w2, enc_b2;
  Tensor map_w1, map_b1, map_w2, map_b2;

  template <class F>
  void for_each(F&& f) {
    f(enc_w1);
    f(enc_b1);
    f(enc_w2);
    f(enc_b2);
    f(map_w1);
    f(map_b1);
    f(map_w2);
    f(map_b2);
  }

  void fill_zero() {
    for_each([](Tensor& t) { t.fill(0.0); });
  }

  void add(const GradBuffers& o) {
    auto acc = [](Tensor& dst, const Tensor& src) {
      for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
    };
    acc(enc_w1, o.enc_w1);
    acc(enc_b1, o.enc_b1);
    acc(enc_w2, o.enc_w2);
    acc(enc_b2, o.enc_b2);
    acc(map_w1, o.map_w1);
    acc(map_b1, o.map_b1);
    acc(map_w2, o.map_w2);
    acc(map_b2, o.map_b2);
  }
};

/// All learnable weights plus a parallel gradient buffer. Weights use the
/// [out x in] convention of affine_forward.
struct ParamStore {
  Tensor enc_w1, enc_b1, enc_w2, enc_b2;
  Tensor map_w1, map_b1, map_w2, map_b2;
  GradBuffers grad;

  template <class F>
  void for_each(F&& f) {
    f("enc_w1", enc_w1, grad.enc_w1);
    f("enc_b1", enc_b1, grad.enc_b1);
    f("enc_w2", enc_w2, grad.enc_w2);
    f("enc_b2", enc_b2, grad.enc_b2);
    f("map_w1", map_w1, grad.map_w1);
    f("map_b1", map_b1, grad.map_b1);
    f("map_w2", map_w2, grad.map_w2);
    f("map_b2", map_b2, grad.map_b2);
  }

  void zero_grad() { grad.fill_zero(); }

  std::size_t param_count() {
    std::size_t n = 0;
    for_each([&](const char*, Tensor& p, Tensor&) { n += p.numel(); });
    return n;
  }

  GradBuffers make_grad_buffers() const {
    GradBuffers g;
    g.enc_w1 = Tensor(enc_w1.shape());
    g.enc_b1 = Tensor(enc_b1.shape());
    g.enc_w2 = Tensor(enc_w2.shape());
    g.enc_b2 = Tensor(enc_b2.shape());
    g.map_w1 = Tensor(map_w1.shape());
    g.map_b1 = Tensor(map_b1.shape());
    g.map_w2 = Tensor(map_w2.shape());
    g.map_b2 = Tensor(map_b2.shape());
    return g;
  }
};

inline void init_uniform_(Tensor& w, std::size_t fan_in, RngState& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : w.span()) v = (2.0 * rng.next_unit() - 1.0) * bound;
}

/// Fresh parameters: weights uniform in +-1/sqrt(fan_in), biases zero.
/// Draw order is fixed, so a given rng state fully determines the result.
inline ParamStore init_params(const ModelConfig& cfg, RngState& rng) {
  cfg.validate();
  const std::size_t h = cfg.history, hid = cfg.hidden, d = cfg.latent(),
                    l = cfg.horizon;
  ParamStore p;
  p.enc_w1 = Tensor({hid, h});
  p.enc_b1 = Tensor({hid});
  p.enc_w2 = Tensor({2 * d, hid});
  p.enc_b2 = Tensor({2 * d});
  p.map_w1 = Tensor({hid, d});
  p.map_b1 = Tensor({hid});
  p.map_w2 = Tensor({l, hid});
  p.map_b2 = Tensor({l});
  init_uniform_(p.enc_w1, h, rng);
  init_uniform_(p.enc_w2, hid, rng);
  init_uniform_(p.map_w1, d, rng);
  init_uniform_(p.map_w2, hid, rng);
  p.for_each([](const char*, Tensor& t, Tensor& g) { g = Tensor(t.shape()); });
  return p;
}

// Evaluation counters for the single-pass-inference invariant: one encoder
// application and K mapper applications per forecast.
inline std::atomic<std::uint64_t> g_encoder_evals{0};
inline std::atomic<std::uint64_t> g_mapper_evals{0};

struct EncodeCache {
  Tensor x_ch;    // [C x H] channels as rows
  Tensor h1pre;   // [C x hidden]
  Tensor h1;      // [C x hidden]
  Tensor out;     // [C x 2D]
  Tensor raw;     // [C x D] pre-softplus scale half
};

/// Infer the per-channel conditional prior from one history window [H x C].
inline PriorParams encode(const Tensor& x, const ParamStore& p,
                          const ModelConfig& cfg, EncodeCache* cache = nullptr) {
  if (x.ndim() != 2 || x.dim(0) != cfg.history || x.dim(1) != cfg.channels) {
    throw std::invalid_argument("encode: expected window [" +
                                std::to_string(cfg.history) + " x " +
                                std::to_string(cfg.channels) + "], got " +
                                shape_to_string(x.shape()));
  }
  ensure_finite(x, "encode input");
  const std::size_t c = cfg.channels, h = cfg.history, d = cfg.latent();

  Tensor x_ch({c, h});
  for (std::size_t t = 0; t < h; ++t) {
    for (std::size_t ch = 0; ch < c; ++ch) x_ch.at(ch, t) = x.at(t, ch);
  }
  Tensor h1pre = affine_forward(x_ch, p.enc_w1, p.enc_b1);
  Tensor h1 = gelu_forward(h1pre);
  Tensor out = affine_forward(h1, p.enc_w2, p.enc_b2);

  PriorParams prior{Tensor({c, d}), Tensor({c, d})};
  Tensor raw({c, d});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < d; ++j) {
      prior.mu.at(ch, j) = out.at(ch, j);
      raw.at(ch, j) = out.at(ch, d + j);
      prior.sigma.at(ch, j) =
          cfg.sigma_override ? *cfg.sigma_override
                             : softplus(raw.at(ch, j)) + kSigmaFloor;
    }
  }
  if (cache) {
    cache->x_ch = std::move(x_ch);
    cache->h1pre = std::move(h1pre);
    cache->h1 = std::move(h1);
    cache->out = std::move(out);
    cache->raw = std::move(raw);
  }
  g_encoder_evals.fetch_add(1, std::memory_order_relaxed);
  return prior;
}

struct PriorDraw {
  Tensor noise;    // [K x C x D] standardized family draws
  Tensor latents;  // [K x C x D] mu + sigma * noise
};

/// Standardized noise block [K x C x D]. Each ensemble member gets its own
/// counter substream, so member k's draws are identical no matter how
/// large K is.
inline Tensor draw_standard_noise(const ModelConfig& cfg, std::size_t k_draws,
                                  RngState& rng) {
  if (k_draws == 0) throw std::invalid_argument("draw_standard_noise: K must be >= 1");
  const std::size_t c = cfg.channels, d = cfg.latent();
  Tensor noise({k_draws, c, d});
  const std::uint64_t base = rng.next_u64();
  for (std::size_t k = 0; k < k_draws; ++k) {
    RngState sub = RngState::derive(base, k);
    double* row = noise.data() + k * c * d;
    for (std::size_t i = 0; i < c * d; ++i) {
      row[i] = sample_standard_scalar(cfg.prior, sub, cfg.student_t_nu);
    }
  }
  return noise;
}

/// Reparameterized latent draws: z = mu + sigma * eps.
inline PriorDraw sample_prior(const PriorParams& prior, std::size_t k_draws,
                              const ModelConfig& cfg, RngState& rng) {
  const std::size_t c = prior.mu.dim(0), d = prior.mu.dim(1);
  if (!prior.mu.same_shape(prior.sigma)) {
    throw std::invalid_argument("sample_prior: mu/sigma shape mismatch");
  }
  if (c != cfg.channels || d != cfg.latent()) {
    throw std::invalid_argument("sample_prior: prior shape mismatch");
  }
  PriorDraw out{draw_standard_noise(cfg, k_draws, rng), Tensor({k_draws, c, d})};
  for (std::size_t k = 0; k < k_draws; ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t j = 0; j < d; ++j) {
        out.latents.at(k, ch, j) = prior.mu.at(ch, j) +
                                   prior.sigma.at(ch, j) *
                                       out.noise.at(k, ch, j);
      }
    }
  }
  return out;
}

struct MapCache {
  Tensor zrows;    // [K*C x D]
  Tensor h1pre;    // [K*C x hidden]
  Tensor h1;       // [K*C x hidden]
  Tensor outrows;  // [K*C x L]
};

/// Push latent draws [K x C x D] through the trajectory mapper, giving
/// ensemble samples [K x L x C].
inline Tensor push_forward(const Tensor& latents, const ParamStore& p,
                           const ModelConfig& cfg, MapCache* cache = nullptr) {
  if (latents.ndim() != 3 || latents.dim(1) != cfg.channels ||
      latents.dim(2) != cfg.latent()) {
    throw std::invalid_argument("push_forward: latents shape mismatch: " +
                                shape_to_string(latents.shape()));
  }
  const std::size_t k_draws = latents.dim(0), c = cfg.channels,
                    d = cfg.latent(), l = cfg.horizon;
  Tensor zrows({k_draws * c, d}, std::vector<double>(latents.span().begin(),
                                                     latents.span().end()));
  Tensor h1pre = affine_forward(zrows, p.map_w1, p.map_b1);
  Tensor h1 = gelu_forward(h1pre);
  Tensor outrows = affine_forward(h1, p.map_w2, p.map_b2);

  Tensor samples({k_draws, l, c});
  for (std::size_t k = 0; k < k_draws; ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* row = outrows.data() + (k * c + ch) * l;
      for (std::size_t t = 0; t < l; ++t) samples.at(k, t, ch) = row[t];
    }
  }
  if (cache) {
    cache->zrows = std::move(zrows);
    cache->h1pre = std::move(h1pre);
    cache->h1 = std::move(h1);
    cache->outrows = std::move(outrows);
  }
  g_mapper_evals.fetch_add(k_draws, std::memory_order_relaxed);
  return samples;
}

struct ForecastEnsemble {
  Tensor samples;  // [K x L x C]
  Tensor latents;  // [K x C x D]
  Tensor noise;    // [K x C x D]
};

/// One encoder pass, K prior draws, one batched mapper pass.
inline ForecastEnsemble forecast(const Tensor& x, const ParamStore& p,
                                 const ModelConfig& cfg, std::size_t k_draws,
                                 RngState& rng) {
  const PriorParams prior = encode(x, p, cfg);
  PriorDraw draw = sample_prior(prior, k_draws, cfg, rng);
  Tensor samples = push_forward(draw.latents, p, cfg);
  return ForecastEnsemble{std::move(samples), std::move(draw.latents),
                          std::move(draw.noise)};
}

/// Everything the backward pass needs from one training forward.
struct ForwardCache {
  EncodeCache enc;
  PriorParams prior;
  Tensor noise;    // [K x C x D]
  Tensor latents;  // [K x C x D]
  MapCache map;
  Tensor samples;  // [K x L x C]
};

/// Forward with externally supplied noise (the trainer draws it; gradient
/// checks freeze it). Fills the cache and returns the ensemble samples.
inline const Tensor& forward_cached(const Tensor& x, const ParamStore& p,
                                    const ModelConfig& cfg, const Tensor& noise,
                                    ForwardCache& cache) {
  const std::size_t c = cfg.channels, d = cfg.latent();
  if (noise.ndim() != 3 || noise.dim(1) != c || noise.dim(2) != d) {
    throw std::invalid_argument("forward_cached: noise shape mismatch");
  }
  const std::size_t k_draws = noise.dim(0);
  cache.prior = encode(x, p, cfg, &cache.enc);
  cache.noise = noise;
  cache.latents = Tensor({k_draws, c, d});
  for (std::size_t k = 0; k < k_draws; ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t j = 0; j < d; ++j) {
        cache.latents.at(k, ch, j) = cache.prior.mu.at(ch, j) +
                                     cache.prior.sigma.at(ch, j) *
                                         noise.at(k, ch, j);
      }
    }
  }
  cache.samples = push_forward(cache.latents, p, cfg, &cache.map);
  return cache.samples;
}

/// Accumulates dLoss/dweights into `out` given dLoss/dsamples [K x L x C]
/// and the cache of the matching forward. Weights are read from p; its own
/// gradient buffer is untouched.
inline void model_backward_into(const Tensor& grad_samples,
                                const ForwardCache& cache, const ParamStore& p,
                                const ModelConfig& cfg, GradBuffers& out) {
  const std::size_t k_draws = cache.samples.dim(0), l = cfg.horizon,
                    c = cfg.channels, d = cfg.latent(), hid = cfg.hidden;
  if (!grad_samples.same_shape(cache.samples)) {
    throw std::invalid_argument("model_backward: grad/samples shape mismatch");
  }
  const std::size_t rows = k_draws * c;

  // Mapper: outrows layout is [K*C x L].
  Tensor g_outrows({rows, l});
  for (std::size_t k = 0; k < k_draws; ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* row = g_outrows.data() + (k * c + ch) * l;
      for (std::size_t t = 0; t < l; ++t) row[t] = grad_samples.at(k, t, ch);
    }
  }
  Tensor g_h1({rows, hid});
  affine_backward_acc(g_outrows.data(), cache.map.h1.data(), p.map_w2.data(),
                      rows, hid, l, g_h1.data(), out.map_w2.data(),
                      out.map_b2.data());
  Tensor g_h1pre({rows, hid});
  for (std::size_t i = 0; i < rows * hid; ++i) {
    g_h1pre[i] = g_h1[i] * gelu_grad_scalar(cache.map.h1pre[i]);
  }
  Tensor g_zrows({rows, d});
  affine_backward_acc(g_h1pre.data(), cache.map.zrows.data(), p.map_w1.data(),
                      rows, d, hid, g_zrows.data(), out.map_w1.data(),
                      out.map_b1.data());

  // Latents fan in to the prior parameters: z = mu + sigma * eps.
  Tensor g_mu({c, d});
  Tensor g_raw({c, d});
  const bool learn_sigma = !cfg.sigma_override.has_value();
  for (std::size_t k = 0; k < k_draws; ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* gz = g_zrows.data() + (k * c + ch) * d;
      for (std::size_t j = 0; j < d; ++j) {
        g_mu.at(ch, j) += gz[j];
        if (learn_sigma) {
          g_raw.at(ch, j) += gz[j] * cache.noise.at(k, ch, j);
        }
      }
    }
  }
  if (learn_sigma) {
    // d sigma / d raw = sigmoid(raw).
    for (std::size_t i = 0; i < c * d; ++i) {
      g_raw[i] *= sigmoid(cache.enc.raw[i]);
    }
  }

  Tensor g_enc_out({c, 2 * d});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < d; ++j) {
      g_enc_out.at(ch, j) = g_mu.at(ch, j);
      g_enc_out.at(ch, d + j) = learn_sigma ? g_raw.at(ch, j) : 0.0;
    }
  }
  Tensor g_ench1({c, hid});
  affine_backward_acc(g_enc_out.data(), cache.enc.h1.data(), p.enc_w2.data(), c,
                      hid, 2 * d, g_ench1.data(), out.enc_w2.data(),
                      out.enc_b2.data());
  Tensor g_ench1pre({c, hid});
  for (std::size_t i = 0; i < c * hid; ++i) {
    g_ench1pre[i] = g_ench1[i] * gelu_grad_scalar(cache.enc.h1pre[i]);
  }
  Tensor g_x({c, cfg.history});
  affine_backward_acc(g_ench1pre.data(), cache.enc.x_ch.data(), p.enc_w1.data(),
                      c, cfg.history, hid, g_x.data(), out.enc_w1.data(),
                      out.enc_b1.data());
}

/// Convenience form accumulating straight into p's gradient buffer.
inline void model_backward(const Tensor& grad_samples, const ForwardCache& cache,
                           ParamStore& p, const ModelConfig& cfg) {
  model_backward_into(grad_samples, cache, p, cfg, p.grad);
}

/// Ensemble mean over members: [K x L x C] -> [L x C].
inline Tensor ensemble_mean(const Tensor& samples) {
  const std::size_t k = samples.dim(0), l = samples.dim(1), c = samples.dim(2);
  Tensor m({l, c});
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < l * c; ++j) m[j] += samples[i * l * c + j];
  }
  for (double& v : m.span()) v /= static_cast<double>(k);
  return m;
}

/// Per-coordinate ensemble standard deviation (population), [L x C].
inline Tensor ensemble_std(const Tensor& samples) {
  const std::size_t k = samples.dim(0), l = samples.dim(1), c = samples.dim(2);
  Tensor m = ensemble_mean(samples);
  Tensor s({l, c});
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < l * c; ++j) {
      const double dlt = samples[i * l * c + j] - m[j];
      s[j] += dlt * dlt;
    }
  }
  for (double& v : s.span()) v = std::sqrt(v / static_cast<double>(k));
  return s;
}

}  // namespace ppm
