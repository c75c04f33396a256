#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ppm/diagnostics.hpp"
#include "ppm/pipeline.hpp"
#include "ppm/svg.hpp"

namespace {

// Minimum over all assignments of mean |a_i - b_perm(i)|; feasible for
// tiny inputs and the ground truth for the sorted-matching shortcut.
double w1_bruteforce(std::vector<double> a, std::vector<double> b) {
  std::vector<std::size_t> perm(b.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sum += std::abs(a[i] - b[perm[i]]);
    }
    best = std::min(best, sum / static_cast<double>(a.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST(LineFit, RecoversExactLine) {
  std::vector<double> xs = {0.0, 1.0, 2.0, 3.0};
  std::vector<double> ys = {1.0, 3.0, 5.0, 7.0};
  ppm::SlopeFit fit = ppm::fit_line(xs, ys);
  EXPECT_NEAR(fit.slope, 2.0, 1e-12);
  EXPECT_NEAR(fit.intercept, 1.0, 1e-12);
  EXPECT_NEAR(fit.r2, 1.0, 1e-12);
}

TEST(LineFit, RejectsConstantAbscissa) {
  EXPECT_THROW(ppm::fit_line({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}),
               std::invalid_argument);
}

TEST(Pearson, SignsAndDegeneracyGuard) {
  std::vector<double> xs = {1.0, 2.0, 3.0, 4.0};
  std::vector<double> up = {2.0, 4.0, 6.0, 8.0};
  std::vector<double> down = {5.0, 4.0, 3.0, 2.0};
  std::vector<double> flat = {7.0, 7.0, 7.0, 7.0};
  EXPECT_NEAR(ppm::pearson(xs, up), 1.0, 1e-12);
  EXPECT_NEAR(ppm::pearson(xs, down), -1.0, 1e-12);
  EXPECT_EQ(ppm::pearson(xs, flat), 0.0);
}

TEST(Wasserstein, MatchesBruteForceAssignment) {
  ppm::RngState rng(404);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> a(6), b(6);
    for (double& v : a) v = 3.0 * rng.next_unit() - 1.0;
    for (double& v : b) v = 4.0 * rng.next_unit() - 2.0;
    EXPECT_NEAR(ppm::wasserstein1(a, b), w1_bruteforce(a, b), 1e-12);
  }
}

TEST(Wasserstein, ShiftMovesTheDistanceByTheShift) {
  std::vector<double> a = {0.1, -0.4, 2.0, 0.7};
  std::vector<double> shifted = a;
  for (double& v : shifted) v += 1.5;
  EXPECT_NEAR(ppm::wasserstein1(a, a), 0.0, 1e-15);
  EXPECT_NEAR(ppm::wasserstein1(a, shifted), 1.5, 1e-12);
  EXPECT_THROW(ppm::wasserstein1(a, {1.0}), std::invalid_argument);
}

TEST(WindowedKde, AgreesWithFullEvaluation) {
  ppm::RngState rng(7);
  std::vector<double> draws(4000);
  for (double& v : draws) v = rng.next_gaussian();
  std::sort(draws.begin(), draws.end());
  ppm::ObjectiveConfig ocfg;
  ocfg.bandwidth = 0.25;
  for (double y : {0.0, 0.8, -1.3}) {
    const double full = ppm::detail::kde_log_density_sorted(
        y, draws, 0.25, 0.0, ppm::KernelFamily::gaussian, 3.0);
    const double windowed = ppm::detail::kde_log_density_sorted(
        y, draws, 0.25, 6.0 * 0.25, ppm::KernelFamily::gaussian, 3.0);
    const ppm::KdeEval ref = ppm::kde_log_density(y, draws, ocfg);
    EXPECT_NEAR(full, ref.log_q_raw, 1e-12);
    EXPECT_NEAR(windowed, full, 1e-7);
  }
}

// Scaled-down version of the error-law measurement; the acceptance
// harness runs it at full size with tight tolerances.
TEST(ScalingStudy, SlopesLandNearTheTheoreticalLaws) {
  ppm::ScalingConfig cfg;
  cfg.bias_bandwidths = {0.15, 0.25, 0.4};
  cfg.bias_draws = 100000;
  cfg.bias_trials = 4;
  cfg.fluct_draws = {100, 1000, 10000};
  cfg.fluct_trials = 60;
  cfg.seed = 5;
  ppm::ScalingStudy study = ppm::run_scaling_study(cfg);
  EXPECT_NEAR(study.bias_fit.slope, 2.0, 0.5);
  EXPECT_NEAR(study.fluct_fit.slope, -0.5, 0.2);
  EXPECT_GT(study.bias_fit.r2, 0.95);
  EXPECT_GT(study.fluct_fit.r2, 0.95);
  ASSERT_EQ(study.bias_cells.size(), 3u);
  EXPECT_LT(study.bias_cells[0].stat, study.bias_cells[2].stat);
}

TEST(ScalingStudy, CsvListsEveryCellAndBothFits) {
  ppm::ScalingStudy study;
  study.bias_cells = {{0.25, 0.5}, {0.5, 1.0}};
  study.fluct_cells = {{100.0, 0.125}};
  study.bias_fit = {2.0, 0.0, 1.0};
  study.fluct_fit = {-0.5, 0.0, 1.0};
  std::ostringstream out;
  ppm::write_scaling_csv(out, study);
  EXPECT_EQ(out.str(),
            "experiment,knob,stat\n"
            "bias,0.25,0.5\n"
            "bias,0.5,1\n"
            "fluctuation,100,0.125\n"
            "fit,bias_slope,2\n"
            "fit,bias_r2,1\n"
            "fit,fluctuation_slope,-0.5\n"
            "fit,fluctuation_r2,1\n");
}

TEST(Bimodal, SamplerHitsBothModes) {
  ppm::BimodalSpec spec;
  ppm::RngState rng(11);
  std::size_t low = 0, high = 0;
  for (int i = 0; i < 4000; ++i) {
    const double v = ppm::sample_bimodal(spec, rng);
    if (v < 0.0) ++low;
    else ++high;
  }
  EXPECT_GT(low, 1800u);
  EXPECT_GT(high, 1800u);
}

// Short-budget run: checks the demo machinery end to end, not the final
// quality claim. A moment-matched Gaussian is structurally far from the
// two-mode target no matter how it is fitted.
TEST(Universality, GaussianBaselineStaysFarFromBimodalTarget) {
  ppm::UniversalityConfig cfg;
  cfg.steps = 40;
  cfg.batch = 16;
  cfg.k_train = 32;
  cfg.k_eval = 512;
  cfg.hidden = 16;
  cfg.seed = 3;
  ppm::UniversalityResult res = ppm::run_universality_demo(cfg);
  EXPECT_TRUE(std::isfinite(res.w1_model));
  EXPECT_GT(res.w1_gaussian, 0.3);
  EXPECT_EQ(res.model_samples.size(), cfg.k_eval);
  EXPECT_EQ(res.oracle_samples.size(), cfg.k_eval);

  ppm::UniversalityResult res2 = ppm::run_universality_demo(cfg);
  EXPECT_DOUBLE_EQ(res.w1_model, res2.w1_model);
  EXPECT_DOUBLE_EQ(res.w1_gaussian, res2.w1_gaussian);
}

TEST(SpreadStat, HandBuiltEnsemblesTrackTheirScales) {
  ppm::RngState rng(19);
  std::vector<double> truth, predicted;
  for (int w = 0; w < 40; ++w) {
    const double scale = 0.2 + 0.05 * w;
    ppm::Tensor ens({64, 3, 2});
    for (double& v : ens.span()) v = scale * rng.next_gaussian();
    predicted.push_back(ppm::mean(ppm::ensemble_std(ens)));
    truth.push_back(scale);
  }
  EXPECT_GT(ppm::pearson(predicted, truth), 0.95);
}

TEST(SpreadTracking, UntrainedModelGivesDeterministicCorrelation) {
  ppm::SynthConfig scfg;
  scfg.length = 400;
  ppm::SynthDataset synth = ppm::synth_heteroscedastic(scfg, 2);
  ppm::ModelConfig mcfg;
  mcfg.history = 16;
  mcfg.horizon = 8;
  mcfg.channels = 2;
  mcfg.latent_dim = 4;
  mcfg.hidden = 8;
  ppm::RngState ir = ppm::RngState::derive(6, ppm::StreamId::init);
  ppm::ParamStore params = ppm::init_params(mcfg, ir);
  ppm::SpreadTrackingResult a = ppm::spread_correlation(
      synth.data.values, synth.noise_scale, 0, 400, params, mcfg, 32, 4, 9);
  ppm::SpreadTrackingResult b = ppm::spread_correlation(
      synth.data.values, synth.noise_scale, 0, 400, params, mcfg, 32, 4, 9);
  EXPECT_DOUBLE_EQ(a.correlation, b.correlation);
  EXPECT_GE(a.correlation, -1.0);
  EXPECT_LE(a.correlation, 1.0);
  EXPECT_EQ(a.predicted.size(), a.truth.size());
}

TEST(Pipeline, PreparesSplitsAndNormalizesFromTrainRegionOnly) {
  ppm::SynthConfig scfg;
  scfg.length = 500;
  ppm::SynthDataset synth = ppm::synth_heteroscedastic(scfg, 4);
  ppm::PreparedData prep =
      ppm::prepare_dataset(synth.data, ppm::SplitSpec{}, 400);
  EXPECT_EQ(prep.values.dim(0), 400u);
  EXPECT_EQ(prep.ranges.train_end, 240u);
  EXPECT_EQ(prep.ranges.val_end, 320u);
  double train_sum = 0.0;
  for (std::size_t t = 0; t < prep.ranges.train_end; ++t) {
    train_sum += prep.values.at(t, 0);
  }
  EXPECT_NEAR(train_sum / 240.0, 0.0, 1e-12);
}

TEST(Pipeline, EvaluateRangeIsDeterministicAndFinite) {
  ppm::SynthConfig scfg;
  scfg.length = 300;
  ppm::SynthDataset synth = ppm::synth_heteroscedastic(scfg, 4);
  ppm::PreparedData prep =
      ppm::prepare_dataset(synth.data, ppm::SplitSpec{}, 0);
  ppm::ModelConfig mcfg;
  mcfg.history = 16;
  mcfg.horizon = 8;
  mcfg.channels = 2;
  mcfg.latent_dim = 4;
  mcfg.hidden = 8;
  ppm::RngState ir = ppm::RngState::derive(8, ppm::StreamId::init);
  ppm::ParamStore params = ppm::init_params(mcfg, ir);
  ppm::EvalConfig ecfg;
  ecfg.k_eval = 16;
  ecfg.stride = 5;
  ecfg.seed = 12;
  ppm::MetricsReport r1 =
      ppm::evaluate_range(prep.values, prep.stats, prep.ranges.val_end,
                          prep.ranges.rows, params, mcfg, ecfg);
  ppm::MetricsReport r2 =
      ppm::evaluate_range(prep.values, prep.stats, prep.ranges.val_end,
                          prep.ranges.rows, params, mcfg, ecfg);
  EXPECT_GT(r1.windows, 0u);
  EXPECT_DOUBLE_EQ(r1.mse, r2.mse);
  EXPECT_DOUBLE_EQ(r1.crps, r2.crps);
  EXPECT_TRUE(std::isfinite(r1.qice));
}

TEST(Pipeline, ForecastRowsKeepQuantilesOrderedAndClampWindows) {
  ppm::SynthConfig scfg;
  scfg.length = 200;
  ppm::SynthDataset synth = ppm::synth_heteroscedastic(scfg, 4);
  ppm::PreparedData prep =
      ppm::prepare_dataset(synth.data, ppm::SplitSpec{}, 0);
  ppm::ModelConfig mcfg;
  mcfg.history = 16;
  mcfg.horizon = 8;
  mcfg.channels = 2;
  mcfg.latent_dim = 4;
  mcfg.hidden = 8;
  ppm::RngState ir = ppm::RngState::derive(8, ppm::StreamId::init);
  ppm::ParamStore params = ppm::init_params(mcfg, ir);
  ppm::EvalConfig ecfg;
  ecfg.k_eval = 32;
  ecfg.seed = 1;
  std::vector<ppm::ForecastRow> rows = ppm::forecast_rows(
      prep.values, prep.stats, 0, prep.ranges.rows, params, mcfg, ecfg, 3);
  EXPECT_EQ(rows.size(), 3u * 8u * 2u);
  for (const ppm::ForecastRow& r : rows) {
    EXPECT_LE(r.q05, r.q25);
    EXPECT_LE(r.q25, r.q50);
    EXPECT_LE(r.q50, r.q75);
    EXPECT_LE(r.q75, r.q95);
  }
}

TEST(Pipeline, ConfigEchoNamesEverySetting) {
  ppm::ModelConfig mcfg;
  ppm::ObjectiveConfig ocfg;
  ppm::TrainConfig tcfg;
  const std::string echo = ppm::config_echo_string(mcfg, ocfg, tcfg);
  for (const char* key :
       {"history=", "horizon=", "channels=", "hidden=", "prior=", "kernel=",
        "bandwidth=", "alpha=", "mm_weight=", "floor_eps=", "max_epochs=",
        "patience=", "batch=", "k_train=", "seed=", "lr=", "beta1=",
        "clip_norm="}) {
    EXPECT_NE(echo.find(key), std::string::npos) << key;
  }
}

TEST(SvgFigures, LogLogFigureDrawsCellsAndFit) {
  const std::string svg = ppm::render_loglog_figure(
      {{0.1, 0.01}, {0.3, 0.09}, {0.9, 0.8}}, 2.0, 0.0, "bias law",
      "bandwidth", "abs error");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("circle"), std::string::npos);
  EXPECT_NE(svg.find("fitted slope 2.000"), std::string::npos);
  EXPECT_THROW(
      ppm::render_loglog_figure({{0.0, 1.0}, {1.0, 2.0}}, 1, 0, "", "", ""),
      std::invalid_argument);
}

TEST(SvgFigures, HistogramAndBandFiguresAreWellFormed) {
  std::vector<double> a = {-2.1, -1.9, -2.0, 2.0, 1.9, 2.2};
  std::vector<double> b = {-0.5, 0.2, 0.1, -0.1, 0.4, 0.3};
  const std::string hist =
      ppm::render_histogram_figure(a, b, 8, "model", "oracle", "modes");
  EXPECT_NE(hist.find("polygon"), std::string::npos);
  EXPECT_NE(hist.find("modes"), std::string::npos);

  std::vector<double> q05 = {0, 0, 0}, q25 = {1, 1, 1}, q50 = {2, 2, 2},
                      q75 = {3, 3, 3}, q95 = {4, 4, 4}, mean_p = {2, 2.1, 2.2},
                      actual = {1.5, 2.0, 2.5};
  const std::string band = ppm::render_band_figure(q05, q25, q50, q75, q95,
                                                   mean_p, actual, "fan");
  EXPECT_NE(band.find("polygon"), std::string::npos);
  EXPECT_NE(band.find("polyline"), std::string::npos);
  EXPECT_THROW(
      ppm::render_band_figure(q05, q25, q50, q75, {1.0}, mean_p, actual, ""),
      std::invalid_argument);
}
