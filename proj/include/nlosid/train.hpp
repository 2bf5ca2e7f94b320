#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "nlosid/ann.hpp"
#include "nlosid/dataset.hpp"
#include "nlosid/error.hpp"
#include "nlosid/parallel.hpp"
#include "nlosid/rng.hpp"

namespace nlosid::ann {

enum class Optimizer { adam, sgd_momentum };

inline std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd-momentum"; }

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd-momentum" || s == "sgd") return Optimizer::sgd_momentum;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd-momentum)");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 64;
  std::uint64_t seed = 1;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;
  /// Epochs without validation improvement before stopping; 0 disables.
  int patience = 10;
  /// Share of training samples held back for validation.
  double val_fraction = 0.1;
  HeadWeights heads{};
  unsigned threads = 1;
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate))
    throw ConfigError("train.learning_rate must be a finite value >= 0");
  if (c.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(c.epsilon > 0.0)) throw ConfigError("train.epsilon must be positive");
  if (c.patience < 0) throw ConfigError("train.patience must be >= 0");
  if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0)) throw ConfigError("train.val_fraction must lie in [0, 1)");
  if (c.heads.identity < 0.0 || c.heads.position < 0.0 || (c.heads.identity == 0.0 && c.heads.position == 0.0))
    throw ConfigError("head weights must be >= 0 and not both zero");
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc_class = 0.0;
  double val_acc_loc = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  TwoHeadNetwork net;
  std::vector<EpochRecord> table;
  int best_epoch = 0;
  bool stopped_early = false;
};

inline std::string loss_table_csv(const std::vector<EpochRecord>& table) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,val_loss,val_acc_class,val_acc_loc\n";
  for (const auto& r : table)
    out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_acc_class << ',' << r.val_acc_loc
        << '\n';
  return out.str();
}

/// Samples per gradient chunk. Chunk gradients are reduced in chunk order,
/// so the result does not depend on the worker count.
inline constexpr std::size_t kChunk = 16;

namespace detail {

/// Packs the features and 0-based targets of `idx` into contiguous buffers.
inline void gather(const Dataset& ds, const std::size_t* idx, std::size_t n, std::vector<double>& x,
                   std::vector<Targets>& t) {
  x.resize(n * ds.n_bins);
  t.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ds.samples[idx[i]];
    if (s.features.size() != ds.n_bins) throw ShapeError("train: sample feature length differs from n_bins");
    std::copy(s.features.begin(), s.features.end(), x.begin() + static_cast<std::ptrdiff_t>(i * ds.n_bins));
    t[i] = {s.person_id - 1, s.position_index - 1};
  }
}

class OptimizerState {
 public:
  OptimizerState(const TwoHeadNetwork& net, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& p : net.parameters) {
      m_.emplace_back(p.size(), 0.0);
      if (cfg.optimizer == Optimizer::adam) v_.emplace_back(p.size(), 0.0);
    }
  }

  void step(TwoHeadNetwork& net, const std::vector<Tensor>& grads) {
    ++t_;
    if (cfg_.optimizer == Optimizer::adam) {
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      const double lr = cfg_.learning_rate * std::sqrt(c2) / c1;
      const double eps = cfg_.epsilon * std::sqrt(c2);
      for (std::size_t k = 0; k < grads.size(); ++k) {
        auto& p = net.parameters[k].values;
        auto& m = m_[k];
        auto& v = v_[k];
        const auto& g = grads[k].values;
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          p[i] -= lr * m[i] / (std::sqrt(v[i]) + eps);
        }
      }
    } else {
      for (std::size_t k = 0; k < grads.size(); ++k) {
        auto& p = net.parameters[k].values;
        auto& vel = m_[k];
        const auto& g = grads[k].values;
        for (std::size_t i = 0; i < p.size(); ++i) {
          vel[i] = cfg_.momentum * vel[i] - cfg_.learning_rate * g[i];
          p[i] += vel[i];
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

}  // namespace detail

struct EvalStats {
  double loss = 0.0;  // mean per sample
  double acc_class = 0.0;
  double acc_loc = 0.0;
};

inline std::size_t argmax_lowest(const double* p, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

/// Runs fn(chunk, workspace) for every chunk of `n` items, splitting the
/// chunks into one contiguous range per worker so each worker reuses a single
/// workspace.
template <class Fn>
void for_each_chunk(std::size_t n, unsigned threads, Fn&& fn) {
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  if (threads == 0) threads = default_threads();
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, n_chunks));
  parallel_for(
      workers,
      [&](std::size_t wk) {
        Workspace ws;
        for (std::size_t c = wk * n_chunks / workers; c < (wk + 1) * n_chunks / workers; ++c) fn(c, ws);
      },
      static_cast<unsigned>(workers));
}

/// Mean loss and per-head accuracy over the listed samples.
inline EvalStats evaluate_indices(const TwoHeadNetwork& net, const Dataset& ds, const std::vector<std::size_t>& idx,
                                  const HeadWeights& w, unsigned threads = 1) {
  EvalStats st;
  if (idx.empty()) return st;
  const std::size_t n_chunks = (idx.size() + kChunk - 1) / kChunk;
  std::vector<double> loss(n_chunks, 0.0);
  std::vector<std::size_t> hit_c(n_chunks, 0), hit_l(n_chunks, 0);
  const auto nc = static_cast<std::size_t>(net.n_classes), nl = static_cast<std::size_t>(net.n_locations);
  for_each_chunk(idx.size(), threads, [&](std::size_t c, Workspace& ws) {
    const std::size_t lo = c * kChunk, n = std::min(kChunk, idx.size() - lo);
    std::vector<double> x;
    std::vector<Targets> t;
    detail::gather(ds, idx.data() + lo, n, x, t);
    forward_batch(net, x, n, ws);
    loss[c] = batch_loss(net, ws.acts, t, w);
    for (std::size_t s = 0; s < n; ++s) {
      if (argmax_lowest(ws.acts.probs_class.data() + s * nc, nc) == static_cast<std::size_t>(t[s].person)) ++hit_c[c];
      if (argmax_lowest(ws.acts.probs_loc.data() + s * nl, nl) == static_cast<std::size_t>(t[s].position)) ++hit_l[c];
    }
  });
  double total = 0.0;
  std::size_t hc = 0, hl = 0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    total += loss[c];
    hc += hit_c[c];
    hl += hit_l[c];
  }
  const auto n = static_cast<double>(idx.size());
  st.loss = total / n;
  st.acc_class = static_cast<double>(hc) / n;
  st.acc_loc = static_cast<double>(hl) / n;
  return st;
}

/// Mini-batch training on the summed (weighted) cross-entropy. A seeded
/// share of the samples is held back for validation and early stopping; the
/// parameters with the lowest validation loss are returned.
inline TrainResult train(TwoHeadNetwork net, const Dataset& train_set, const TrainConfig& cfg) {
  validate(cfg);
  if (train_set.empty()) throw DataError("train: empty training set");
  if (train_set.n_bins != net.n_bins)
    throw ShapeError("train: dataset has " + std::to_string(train_set.n_bins) + " bins, network expects " +
                     std::to_string(net.n_bins));
  if (train_set.n_classes != net.n_classes || train_set.n_locations != net.n_locations)
    throw ShapeError("train: dataset label counts differ from the network heads");

  const auto order = shuffled_indices(train_set.size(), derive_seed(cfg.seed, "validation-split"));
  auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(train_set.size())));
  if (n_val >= train_set.size()) n_val = train_set.size() - 1;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(fit.begin(), fit.end());

  TrainResult result;
  detail::OptimizerState opt(net, cfg);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t max_chunks = (batch + kChunk - 1) / kChunk;
  std::vector<std::vector<Tensor>> chunk_grads(max_chunks, zero_gradients(net));
  std::vector<double> chunk_loss(max_chunks, 0.0);
  std::vector<Workspace> workspaces(max_chunks);
  std::vector<std::vector<double>> chunk_x(max_chunks);
  std::vector<std::vector<Targets>> chunk_t(max_chunks);
  auto grads = zero_gradients(net);

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = net.parameters;
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto perm = shuffled_indices(fit.size(), derive_seed(derive_seed(cfg.seed, "epoch"), static_cast<std::uint64_t>(epoch)));
    for (auto& p : perm) p = fit[p];
    double epoch_loss = 0.0;
    for (std::size_t lo = 0; lo < perm.size(); lo += batch) {
      const std::size_t n = std::min(batch, perm.size() - lo);
      const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
      const double scale = 1.0 / static_cast<double>(n);
      parallel_for(
          n_chunks,
          [&](std::size_t c) {
            for (auto& g : chunk_grads[c]) std::fill(g.values.begin(), g.values.end(), 0.0);
            const std::size_t clo = lo + c * kChunk, cn = std::min(kChunk, lo + n - clo);
            detail::gather(train_set, perm.data() + clo, cn, chunk_x[c], chunk_t[c]);
            chunk_loss[c] = backward_batch(net, chunk_x[c], chunk_t[c], cfg.heads, scale, chunk_grads[c], workspaces[c]);
          },
          cfg.threads);
      for (std::size_t k = 0; k < grads.size(); ++k) {
        auto& g = grads[k].values;
        std::copy(chunk_grads[0][k].values.begin(), chunk_grads[0][k].values.end(), g.begin());
        for (std::size_t c = 1; c < n_chunks; ++c) {
          const auto& gc = chunk_grads[c][k].values;
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gc[i];
        }
      }
      double batch_loss_sum = 0.0;
      for (std::size_t c = 0; c < n_chunks; ++c) batch_loss_sum += chunk_loss[c];
      if (!std::isfinite(batch_loss_sum))
        throw DivergenceError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
      epoch_loss += batch_loss_sum;
      opt.step(net, grads);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(fit.size());
    if (!val.empty()) {
      const auto st = evaluate_indices(net, train_set, val, cfg.heads, cfg.threads);
      if (!std::isfinite(st.loss))
        throw DivergenceError("training diverged: non-finite validation loss in epoch " + std::to_string(epoch));
      rec.val_loss = st.loss;
      rec.val_acc_class = st.acc_class;
      rec.val_acc_loc = st.acc_loc;
    }
    result.table.push_back(rec);

    if (val.empty()) {
      result.best_epoch = epoch;
      continue;
    }
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best_params = net.parameters;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      result.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  if (!val.empty()) net.parameters = std::move(best_params);
  result.net = std::move(net);
  return result;
}

}  // namespace nlosid::ann
