#include "ppm/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

using ppm::ModelConfig;
using ppm::ParamStore;
using ppm::RngState;
using ppm::Tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.history = 4;
  cfg.horizon = 3;
  cfg.channels = 2;
  cfg.latent_dim = 3;
  cfg.hidden = 5;
  return cfg;
}

Tensor random_window(const ModelConfig& cfg, std::uint64_t seed) {
  RngState r(seed);
  Tensor x({cfg.history, cfg.channels});
  for (double& v : x.span()) v = r.next_gaussian();
  return x;
}

}  // namespace

TEST(Model, LatentDimDefaultsToHorizon) {
  ModelConfig cfg;
  cfg.horizon = 17;
  cfg.latent_dim = 0;
  EXPECT_EQ(cfg.latent(), 17u);
  cfg.latent_dim = 5;
  EXPECT_EQ(cfg.latent(), 5u);
}

TEST(Model, ConfigValidation) {
  ModelConfig cfg = tiny_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.channels = 0;
  EXPECT_THROW(cfg.validate(), ppm::ConfigError);
  cfg = tiny_config();
  cfg.sigma_override = -0.5;
  EXPECT_THROW(cfg.validate(), ppm::ConfigError);
}

TEST(Model, InitBoundsAndDeterminism) {
  ModelConfig cfg = tiny_config();
  RngState r1 = RngState::derive(11, ppm::StreamId::init);
  ParamStore a = ppm::init_params(cfg, r1);
  RngState r2 = RngState::derive(11, ppm::StreamId::init);
  ParamStore b = ppm::init_params(cfg, r2);

  EXPECT_EQ(a.enc_w1.shape(), (ppm::Shape{5, 4}));
  EXPECT_EQ(a.enc_w2.shape(), (ppm::Shape{6, 5}));
  EXPECT_EQ(a.map_w1.shape(), (ppm::Shape{5, 3}));
  EXPECT_EQ(a.map_w2.shape(), (ppm::Shape{3, 5}));

  const double enc_bound = 1.0 / std::sqrt(4.0);
  EXPECT_LE(ppm::max_abs(a.enc_w1), enc_bound);
  EXPECT_GT(ppm::max_abs(a.enc_w1), 0.0);
  for (double v : a.enc_b1.span()) EXPECT_EQ(v, 0.0);
  for (double v : a.map_b2.span()) EXPECT_EQ(v, 0.0);

  a.for_each([&](const char* name, Tensor& pa, Tensor&) {
    b.for_each([&](const char* bname, Tensor& pb, Tensor&) {
      if (std::string(name) == bname) {
        for (std::size_t i = 0; i < pa.numel(); ++i) EXPECT_EQ(pa[i], pb[i]);
      }
    });
  });
}

TEST(Model, ZeroWeightEncodeGivesSoftplusSigma) {
  ModelConfig cfg = tiny_config();
  RngState r(1);
  ParamStore p = ppm::init_params(cfg, r);
  p.for_each([](const char*, Tensor& t, Tensor&) { t.fill(0.0); });

  ppm::PriorParams prior = ppm::encode(random_window(cfg, 5), p, cfg);
  const double expected = ppm::softplus(0.0) + 1e-6;
  for (std::size_t i = 0; i < prior.mu.numel(); ++i) {
    EXPECT_DOUBLE_EQ(prior.mu[i], 0.0);
    EXPECT_DOUBLE_EQ(prior.sigma[i], expected);
  }
  EXPECT_NEAR(expected, 0.6931481805599453, 1e-12);
}

TEST(Model, EncodeRejectsBadInput) {
  ModelConfig cfg = tiny_config();
  RngState r(1);
  ParamStore p = ppm::init_params(cfg, r);
  Tensor wrong({cfg.history, cfg.channels + 1});
  EXPECT_THROW(ppm::encode(wrong, p, cfg), std::invalid_argument);
  Tensor bad = random_window(cfg, 5);
  bad[0] = std::nan("");
  EXPECT_THROW(ppm::encode(bad, p, cfg), ppm::NumericError);
}

TEST(Model, SigmaIsAlwaysPositive) {
  ModelConfig cfg = tiny_config();
  RngState r(3);
  ParamStore p = ppm::init_params(cfg, r);
  // Push the scale head far negative; the softplus floor must hold.
  p.enc_b2.fill(-50.0);
  ppm::PriorParams prior = ppm::encode(random_window(cfg, 9), p, cfg);
  for (double s : prior.sigma.span()) EXPECT_GT(s, 0.0);
}

TEST(Model, SamplePriorReparameterizationIdentity) {
  ModelConfig cfg = tiny_config();
  ppm::PriorParams prior{Tensor({2, 3}), Tensor({2, 3})};
  for (std::size_t i = 0; i < 6; ++i) {
    prior.mu[i] = 0.5 * double(i);
    prior.sigma[i] = 0.1 + 0.2 * double(i);
  }
  RngState r(77);
  ppm::PriorDraw d = ppm::sample_prior(prior, 8, cfg, r);
  EXPECT_EQ(d.noise.shape(), (ppm::Shape{8, 2, 3}));
  for (std::size_t k = 0; k < 8; ++k) {
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_DOUBLE_EQ(d.latents[k * 6 + i],
                       prior.mu[i] + prior.sigma[i] * d.noise[k * 6 + i]);
    }
  }
}

TEST(Model, MemberZeroIsStableUnderEnsembleGrowth) {
  ModelConfig cfg = tiny_config();
  ppm::PriorParams prior{Tensor({2, 3}), Tensor::full({2, 3}, 1.0)};
  RngState r1(123), r2(123);
  ppm::PriorDraw small = ppm::sample_prior(prior, 1, cfg, r1);
  ppm::PriorDraw big = ppm::sample_prior(prior, 100, cfg, r2);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(small.noise[i], big.noise[i]);
  }
}

TEST(Model, SamplePriorMatchesMomentsOfPrior) {
  ModelConfig cfg = tiny_config();
  cfg.channels = 1;
  cfg.latent_dim = 1;
  ppm::PriorParams prior{Tensor::full({1, 1}, 3.0), Tensor::full({1, 1}, 2.0)};
  RngState r(55);
  ppm::PriorDraw d = ppm::sample_prior(prior, 200000, cfg, r);
  double s = 0.0, s2 = 0.0;
  for (std::size_t k = 0; k < d.latents.dim(0); ++k) {
    s += d.latents[k];
    s2 += d.latents[k] * d.latents[k];
  }
  const double n = double(d.latents.dim(0));
  const double mean = s / n;
  EXPECT_NEAR(mean, 3.0, 0.02);
  EXPECT_NEAR(std::sqrt(s2 / n - mean * mean), 2.0, 0.02);
}

TEST(Model, PushForwardZeroWeightsGiveBias) {
  ModelConfig cfg = tiny_config();
  RngState r(1);
  ParamStore p = ppm::init_params(cfg, r);
  p.for_each([](const char*, Tensor& t, Tensor&) { t.fill(0.0); });
  for (std::size_t t = 0; t < cfg.horizon; ++t) p.map_b2[t] = double(t) + 1.0;

  Tensor latents({4, 2, 3});
  for (double& v : latents.span()) v = r.next_gaussian();
  Tensor samples = ppm::push_forward(latents, p, cfg);
  EXPECT_EQ(samples.shape(), (ppm::Shape{4, 3, 2}));
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_DOUBLE_EQ(samples.at(k, t, c), double(t) + 1.0);
      }
    }
  }
}

TEST(Model, ForecastDoesOneEncodeAndKMapperPasses) {
  ModelConfig cfg = tiny_config();
  RngState r = RngState::derive(21, ppm::StreamId::init);
  ParamStore p = ppm::init_params(cfg, r);
  RngState noise(9);
  const std::uint64_t enc0 = ppm::g_encoder_evals.load();
  const std::uint64_t map0 = ppm::g_mapper_evals.load();
  ppm::ForecastEnsemble ens = ppm::forecast(random_window(cfg, 2), p, cfg, 13, noise);
  EXPECT_EQ(ppm::g_encoder_evals.load() - enc0, 1u);
  EXPECT_EQ(ppm::g_mapper_evals.load() - map0, 13u);
  EXPECT_EQ(ens.samples.shape(), (ppm::Shape{13, 3, 2}));
  EXPECT_EQ(ens.latents.shape(), (ppm::Shape{13, 2, 3}));
  EXPECT_TRUE(ppm::all_finite(ens.samples));
}

TEST(Model, ForwardCachedReproducesForecastSamples) {
  ModelConfig cfg = tiny_config();
  RngState r = RngState::derive(31, ppm::StreamId::init);
  ParamStore p = ppm::init_params(cfg, r);
  Tensor x = random_window(cfg, 4);
  RngState noise(5);
  ppm::ForecastEnsemble ens = ppm::forecast(x, p, cfg, 6, noise);
  ppm::ForwardCache cache;
  const Tensor& samples = ppm::forward_cached(x, p, cfg, ens.noise, cache);
  for (std::size_t i = 0; i < samples.numel(); ++i) {
    EXPECT_DOUBLE_EQ(samples[i], ens.samples[i]);
  }
}

TEST(Model, FixedSigmaOverrideDrawsUnitScale) {
  ModelConfig cfg = tiny_config();
  cfg.sigma_override = 1.0;
  RngState r = RngState::derive(41, ppm::StreamId::init);
  ParamStore p = ppm::init_params(cfg, r);
  ppm::PriorParams prior = ppm::encode(random_window(cfg, 8), p, cfg);
  for (double s : prior.sigma.span()) EXPECT_DOUBLE_EQ(s, 1.0);

  // Collapsed override: every member equals the pushed-forward mean.
  cfg.sigma_override = 0.0;
  ppm::PriorParams collapsed = ppm::encode(random_window(cfg, 8), p, cfg);
  RngState noise(3);
  ppm::PriorDraw d = ppm::sample_prior(collapsed, 5, cfg, noise);
  for (std::size_t k = 0; k < 5; ++k) {
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_DOUBLE_EQ(d.latents[k * 6 + i], collapsed.mu[i]);
    }
  }
}

TEST(Model, EnsembleMeanErrorShrinksLikeRootK) {
  ModelConfig cfg = tiny_config();
  cfg.channels = 1;
  cfg.latent_dim = 2;
  cfg.hidden = 8;
  cfg.horizon = 2;
  cfg.history = 3;
  RngState r = RngState::derive(51, ppm::StreamId::init);
  ParamStore p = ppm::init_params(cfg, r);
  Tensor x = random_window(cfg, 6);

  auto mean_at = [&](std::size_t k, std::uint64_t seed) {
    RngState noise(seed);
    ppm::ForecastEnsemble ens = ppm::forecast(x, p, cfg, k, noise);
    return ppm::ensemble_mean(ens.samples);
  };
  Tensor ref = mean_at(1000000, 1000);

  auto err = [&](std::size_t k, std::uint64_t seed) {
    Tensor m = mean_at(k, seed);
    double e = 0.0;
    for (std::size_t i = 0; i < m.numel(); ++i) e += std::abs(m[i] - ref[i]);
    return e / double(m.numel());
  };
  // Average a few independent ensembles per size to steady the ratio.
  double e_small = 0.0, e_big = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    e_small += err(1000, 2000 + s);
    e_big += err(100000, 3000 + s);
  }
  // 100x more members: error should drop about 10x.
  const double ratio = e_small / e_big;
  EXPECT_GT(ratio, 3.0);
  EXPECT_LT(ratio, 33.0);
}

TEST(Model, BackwardMatchesFiniteDifferencesThroughLinearProbe) {
  ModelConfig cfg = tiny_config();
  RngState r = RngState::derive(61, ppm::StreamId::init);
  ParamStore p = ppm::init_params(cfg, r);
  Tensor x = random_window(cfg, 7);
  const std::size_t k_draws = 4;
  RngState nr(13);
  Tensor noise = ppm::sample_standard(ppm::PriorFamily::gaussian,
                                      {k_draws, cfg.channels, cfg.latent()}, nr);
  Tensor probe({k_draws, cfg.horizon, cfg.channels});
  for (double& v : probe.span()) v = nr.next_gaussian();

  auto objective = [&]() {
    ppm::ForwardCache cache;
    const Tensor& s = ppm::forward_cached(x, p, cfg, noise, cache);
    double val = 0.0;
    for (std::size_t i = 0; i < s.numel(); ++i) val += probe[i] * s[i];
    return val;
  };

  ppm::ForwardCache cache;
  ppm::forward_cached(x, p, cfg, noise, cache);
  p.zero_grad();
  ppm::model_backward(probe, cache, p, cfg);

  const double step = 1e-5;
  p.for_each([&](const char* name, Tensor& param, Tensor& grad) {
    for (std::size_t i = 0; i < param.numel(); ++i) {
      const double keep = param[i];
      param[i] = keep + step;
      const double up = objective();
      param[i] = keep - step;
      const double dn = objective();
      param[i] = keep;
      const double fd = (up - dn) / (2.0 * step);
      EXPECT_NEAR(grad[i], fd, 2e-6) << name << "[" << i << "]";
    }
  });
}

TEST(Model, SigmaOverrideBlocksScaleGradients) {
  ModelConfig cfg = tiny_config();
  cfg.sigma_override = 1.0;
  RngState r = RngState::derive(71, ppm::StreamId::init);
  ParamStore p = ppm::init_params(cfg, r);
  Tensor x = random_window(cfg, 3);
  RngState nr(2);
  Tensor noise = ppm::sample_standard(ppm::PriorFamily::gaussian,
                                      {3, cfg.channels, cfg.latent()}, nr);
  ppm::ForwardCache cache;
  ppm::forward_cached(x, p, cfg, noise, cache);
  Tensor probe = Tensor::full({3, cfg.horizon, cfg.channels}, 1.0);
  p.zero_grad();
  ppm::model_backward(probe, cache, p, cfg);
  // Rows of the output head feeding the scale half get no gradient.
  const std::size_t d = cfg.latent(), hid = cfg.hidden;
  for (std::size_t row = d; row < 2 * d; ++row) {
    EXPECT_EQ(p.grad.enc_b2[row], 0.0);
    for (std::size_t j = 0; j < hid; ++j) {
      EXPECT_EQ(p.grad.enc_w2.at(row, j), 0.0);
    }
  }
}

TEST(Model, EnsembleStatsHelpers) {
  Tensor samples({2, 1, 2}, {1.0, 10.0, 3.0, 14.0});
  Tensor m = ppm::ensemble_mean(samples);
  EXPECT_DOUBLE_EQ(m.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(m.at(0, 1), 12.0);
  Tensor s = ppm::ensemble_std(samples);
  EXPECT_DOUBLE_EQ(s.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.at(0, 1), 2.0);
}
