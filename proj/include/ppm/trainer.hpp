#pragma once

/**
 * Mini-batch training with Adam and validation-based early stopping.
 *
 * Determinism contract: a (config, seed) pair fixes everything. Epoch
 * shuffles, per-instance noise, and weight init come from tagged
 * substreams of the run seed. Batch gradients are accumulated in
 * fixed-size chunks whose partial sums are reduced in chunk order, so
 * results are bit-identical for any PPM_THREADS setting.
 */

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ppm/data.hpp"
#include "ppm/errors.hpp"
#include "ppm/model.hpp"
#include "ppm/objective.hpp"
#include "ppm/tensor.hpp"
#include "ppm/threads.hpp"

namespace ppm {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables gradient clipping

  void validate() const {
    if (!(lr >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) ||
        !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0) || !(clip_norm >= 0.0)) {
      throw ConfigError("adam: invalid hyperparameters");
    }
  }
};

/// Adam with bias correction over a ParamStore's gradient buffer.
class Adam {
 public:
  Adam(ParamStore& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
    cfg.validate();
    params.for_each([&](const char*, Tensor& p, Tensor&) {
      m_.push_back(Tensor(p.shape()));
      v_.push_back(Tensor(p.shape()));
    });
  }

  std::size_t steps() const { return t_; }

  void step() {
    if (cfg_.clip_norm > 0.0) {
      double sq = 0.0;
      params_->for_each([&](const char*, Tensor&, Tensor& g) {
        for (double v : g.span()) sq += v * v;
      });
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) {
        const double scale = cfg_.clip_norm / norm;
        params_->for_each([&](const char*, Tensor&, Tensor& g) {
          for (double& v : g.span()) v *= scale;
        });
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t idx = 0;
    params_->for_each([&](const char*, Tensor& p, Tensor& g) {
      Tensor& m = m_[idx];
      Tensor& v = v_[idx];
      ++idx;
      for (std::size_t i = 0; i < p.numel(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
    });
  }

 private:
  ParamStore* params_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainConfig {
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::size_t batch = 64;
  std::size_t k_train = 100;
  std::uint64_t seed = 0;
  AdamConfig adam;
  std::size_t chunk = 8;  // instances per deterministic reduction chunk

  void validate() const {
    if (max_epochs == 0 || patience == 0 || batch == 0 || chunk == 0) {
      throw ConfigError("train: max_epochs, patience, batch, chunk must be >= 1");
    }
    if (k_train < 2) throw ConfigError("train: k_train must be >= 2");
    adam.validate();
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  LossReport train;
  LossReport val;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val_total = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  ParamStore params;  // best-validation weights
  TrainLog log;
  std::size_t steps = 0;  // optimizer steps taken
};

/// epoch,split,nll,mm,total,floor_fraction rows, one line per split per
/// epoch, in training order.
inline void write_train_log(std::ostream& out, const TrainLog& log) {
  out << "epoch,split,nll,mm,total,floor_fraction\n";
  for (const EpochStats& e : log.epochs) {
    out << e.epoch << ",train," << format_double(e.train.nll) << ','
        << format_double(e.train.mm) << ',' << format_double(e.train.total)
        << ',' << format_double(e.train.floor_fraction) << '\n';
    out << e.epoch << ",val," << format_double(e.val.nll) << ','
        << format_double(e.val.mm) << ',' << format_double(e.val.total) << ','
        << format_double(e.val.floor_fraction) << '\n';
  }
}

inline void write_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write");
  write_train_log(out, log);
}

namespace detail {

// Tag mixed into the seed for validation-time noise so it never collides
// with training draws; per-origin substreams keep it epoch-independent.
inline constexpr std::uint64_t kValNoiseTag = 0x76616c6e6f697365ULL;

struct ChunkSums {
  double nll = 0.0, mm = 0.0, floor = 0.0;
  std::size_t n = 0;
};

inline void check_batch_health(const LossReport& rep, const ObjectiveConfig& ocfg,
                               const char* where) {
  if (!std::isfinite(rep.total) || !std::isfinite(rep.nll) ||
      !std::isfinite(rep.mm)) {
    throw NumericError(std::string(where) +
                       ": non-finite loss (floor_fraction=" +
                       format_double(rep.floor_fraction) + ")");
  }
  const double ceiling = -std::log(ocfg.floor_eps) + 1e-9;
  if (rep.nll > ceiling) {
    throw NumericError(std::string(where) + ": nll " + format_double(rep.nll) +
                       " above the truncation ceiling " +
                       format_double(ceiling));
  }
}

}  // namespace detail

/// Average loss over a window set with frozen per-origin noise; used for
/// validation and any loss-only evaluation.
inline LossReport eval_loss(const Tensor& values, const WindowSet& ws,
                            ParamStore& params, const ModelConfig& mcfg,
                            const ObjectiveConfig& ocfg, std::size_t k_draws,
                            std::uint64_t seed) {
  if (ws.origins.empty()) throw DataError("eval_loss: no windows");
  std::vector<detail::ChunkSums> sums((ws.origins.size() + 7) / 8);
  parallel_chunks(ws.origins.size(), 8, [&](std::size_t c, std::size_t b,
                                            std::size_t e) {
    detail::ChunkSums& s = sums[c];
    for (std::size_t i = b; i < e; ++i) {
      const std::size_t origin = ws.origins[i];
      Tensor x = window_history(values, origin, ws.history);
      Tensor y = window_target(values, origin, ws.history, ws.horizon);
      RngState nr = RngState::derive(seed ^ detail::kValNoiseTag,
                                     StreamId::noise, origin);
      Tensor noise = draw_standard_noise(mcfg, k_draws, nr);
      ForwardCache cache;
      const Tensor& samples = forward_cached(x, params, mcfg, noise, cache);
      LossReport rep = total_loss(y, samples, ocfg);
      s.nll += rep.nll;
      s.mm += rep.mm;
      s.floor += rep.floor_fraction;
      s.n += 1;
    }
  });
  LossReport agg;
  std::size_t n = 0;
  for (const detail::ChunkSums& s : sums) {
    agg.nll += s.nll;
    agg.mm += s.mm;
    agg.floor_fraction += s.floor;
    n += s.n;
  }
  agg.nll /= static_cast<double>(n);
  agg.mm /= static_cast<double>(n);
  agg.floor_fraction /= static_cast<double>(n);
  agg.total = ocfg.alpha * agg.nll + ocfg.mm_weight * agg.mm;
  return agg;
}

/// Full training run on pre-normalized values. Returns the weights of the
/// best validation epoch plus the per-epoch log.
inline TrainResult train_model(const Tensor& values, const SplitRanges& ranges,
                               const ModelConfig& mcfg,
                               const ObjectiveConfig& ocfg,
                               const TrainConfig& tcfg) {
  mcfg.validate();
  ocfg.validate();
  tcfg.validate();
  const std::size_t h = mcfg.history, l = mcfg.horizon;
  WindowSet train_ws = make_windows(0, ranges.train_end, h, l, 1);
  WindowSet val_ws = make_windows(ranges.train_end, ranges.val_end, h, l, 1);
  if (train_ws.origins.empty()) throw DataError("train: no training windows fit");
  if (val_ws.origins.empty()) throw DataError("train: no validation windows fit");

  RngState init_rng = RngState::derive(tcfg.seed, StreamId::init);
  ParamStore params = init_params(mcfg, init_rng);
  Adam adam(params, tcfg.adam);

  TrainResult result;
  result.params = params;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train_ws.origins.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t instance_serial = 0;

  for (std::size_t epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
    // Fisher-Yates with a per-epoch substream of the run seed.
    RngState shuffle = RngState::derive(tcfg.seed, StreamId::shuffle, epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = shuffle.next_u64() % i;
      std::swap(order[i - 1], order[j]);
    }

    LossReport epoch_train;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tcfg.batch) {
      const std::size_t bsz = std::min(tcfg.batch, order.size() - start);
      const double inv_b = 1.0 / static_cast<double>(bsz);
      const std::size_t nchunks = (bsz + tcfg.chunk - 1) / tcfg.chunk;
      std::vector<GradBuffers> parts;
      std::vector<detail::ChunkSums> sums(nchunks);
      parts.reserve(nchunks);
      for (std::size_t c = 0; c < nchunks; ++c) {
        parts.push_back(params.make_grad_buffers());
      }
      const std::uint64_t serial_base = instance_serial;
      parallel_chunks(bsz, tcfg.chunk, [&](std::size_t c, std::size_t b,
                                           std::size_t e) {
        GradBuffers& local = parts[c];
        detail::ChunkSums& s = sums[c];
        Tensor grad_samples;
        for (std::size_t i = b; i < e; ++i) {
          const std::size_t origin = train_ws.origins[order[start + i]];
          Tensor x = window_history(values, origin, h);
          Tensor y = window_target(values, origin, h, l);
          RngState nr = RngState::derive(tcfg.seed, StreamId::noise,
                                         serial_base + i);
          Tensor noise = draw_standard_noise(mcfg, tcfg.k_train, nr);
          ForwardCache cache;
          const Tensor& samples =
              forward_cached(x, params, mcfg, noise, cache);
          LossReport rep = loss_and_grad(y, samples, ocfg, grad_samples);
          for (double& g : grad_samples.span()) g *= inv_b;
          model_backward_into(grad_samples, cache, params, mcfg, local);
          s.nll += rep.nll;
          s.mm += rep.mm;
          s.floor += rep.floor_fraction;
          s.n += 1;
        }
      });
      instance_serial += bsz;

      params.zero_grad();
      LossReport batch_rep;
      std::size_t n = 0;
      for (std::size_t c = 0; c < nchunks; ++c) {
        params.grad.add(parts[c]);
        batch_rep.nll += sums[c].nll;
        batch_rep.mm += sums[c].mm;
        batch_rep.floor_fraction += sums[c].floor;
        n += sums[c].n;
      }
      batch_rep.nll /= static_cast<double>(n);
      batch_rep.mm /= static_cast<double>(n);
      batch_rep.floor_fraction /= static_cast<double>(n);
      batch_rep.total = ocfg.alpha * batch_rep.nll + ocfg.mm_weight * batch_rep.mm;
      detail::check_batch_health(batch_rep, ocfg, "train");

      adam.step();

      epoch_train.nll += batch_rep.nll;
      epoch_train.mm += batch_rep.mm;
      epoch_train.floor_fraction += batch_rep.floor_fraction;
      ++batches;
    }
    epoch_train.nll /= static_cast<double>(batches);
    epoch_train.mm /= static_cast<double>(batches);
    epoch_train.floor_fraction /= static_cast<double>(batches);
    epoch_train.total = ocfg.alpha * epoch_train.nll + ocfg.mm_weight * epoch_train.mm;

    LossReport val_rep = eval_loss(values, val_ws, params, mcfg, ocfg,
                                   tcfg.k_train, tcfg.seed);
    detail::check_batch_health(val_rep, ocfg, "validation");
    result.log.epochs.push_back({epoch, epoch_train, val_rep});

    if (val_rep.total < result.log.best_val_total) {
      result.log.best_val_total = val_rep.total;
      result.log.best_epoch = epoch;
      result.params = params;
      result.steps = adam.steps();
      since_best = 0;
    } else {
      ++since_best;
      if (since_best == tcfg.patience) break;
    }
  }
  return result;
}

}  // namespace ppm
