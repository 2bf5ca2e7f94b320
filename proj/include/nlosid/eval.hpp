#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nlosid/ann.hpp"
#include "nlosid/dataset.hpp"
#include "nlosid/error.hpp"
#include "nlosid/train.hpp"

namespace nlosid {

/// 1-based labels.
struct Prediction {
  int person = 1;
  int position = 1;
  bool operator==(const Prediction&) const = default;
};

/// Argmax of each head; ties go to the lowest index.
inline Prediction predict(const ann::TwoHeadNetwork& net, std::span<const double> features) {
  if (features.size() != net.n_bins)
    throw ShapeError("predict: feature length " + std::to_string(features.size()) + " != n_bins " +
                     std::to_string(net.n_bins));
  const auto out = ann::forward(net, features);
  return {static_cast<int>(ann::argmax_lowest(out.class_probs.data(), out.class_probs.size())) + 1,
          static_cast<int>(ann::argmax_lowest(out.loc_probs.data(), out.loc_probs.size())) + 1};
}

/// Batched prediction over many samples (same results as `predict`).
inline std::vector<Prediction> predict_all(const ann::TwoHeadNetwork& net, const Dataset& ds, unsigned threads = 1) {
  std::vector<Prediction> out(ds.size());
  const auto nc = static_cast<std::size_t>(net.n_classes), nl = static_cast<std::size_t>(net.n_locations);
  ann::for_each_chunk(ds.size(), threads, [&](std::size_t c, ann::Workspace& ws) {
        const std::size_t lo = c * ann::kChunk, n = std::min(ann::kChunk, ds.size() - lo);
        std::vector<double> x(n * net.n_bins);
        for (std::size_t i = 0; i < n; ++i) {
          const auto& f = ds.samples[lo + i].features;
          if (f.size() != net.n_bins) throw ShapeError("predict: feature length mismatch");
          std::copy(f.begin(), f.end(), x.begin() + static_cast<std::ptrdiff_t>(i * net.n_bins));
        }
        ann::forward_batch(net, x, n, ws);
        for (std::size_t i = 0; i < n; ++i)
          out[lo + i] = {static_cast<int>(ann::argmax_lowest(ws.acts.probs_class.data() + i * nc, nc)) + 1,
                         static_cast<int>(ann::argmax_lowest(ws.acts.probs_loc.data() + i * nl, nl)) + 1};
      });
  return out;
}

struct ConfusionMatrix {
  int n = 0;
  std::vector<double> entries;  // row = truth, column = prediction
  bool row_normalized = false;
  std::vector<bool> zero_support;

  double at(int truth, int pred) const {
    return entries[static_cast<std::size_t>(truth - 1) * static_cast<std::size_t>(n) + static_cast<std::size_t>(pred - 1)];
  }
  double row_sum(int truth) const {
    double s = 0.0;
    for (int j = 1; j <= n; ++j) s += at(truth, j);
    return s;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Row-normalized truth × prediction table. Rows without support stay zero
/// and are flagged.
inline ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths, int n) {
  if (preds.size() != truths.size()) throw std::invalid_argument("confusion: label lists differ in length");
  if (n < 1) throw std::invalid_argument("confusion: n must be positive");
  ConfusionMatrix m;
  m.n = n;
  m.entries.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truths[i] < 1 || truths[i] > n || preds[i] < 1 || preds[i] > n)
      throw std::out_of_range("confusion: label outside 1.." + std::to_string(n));
    m.entries[static_cast<std::size_t>(truths[i] - 1) * static_cast<std::size_t>(n) +
              static_cast<std::size_t>(preds[i] - 1)] += 1.0;
  }
  m.zero_support.assign(static_cast<std::size_t>(n), false);
  for (int r = 0; r < n; ++r) {
    double* row = m.entries.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(n);
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += row[j];
    if (s == 0.0) {
      m.zero_support[static_cast<std::size_t>(r)] = true;
      continue;
    }
    for (int j = 0; j < n; ++j) row[j] /= s;
  }
  m.row_normalized = true;
  return m;
}

inline ConfusionMatrix average_matrices(std::span<const ConfusionMatrix> ms) {
  if (ms.empty()) throw std::invalid_argument("average_matrices: empty list");
  ConfusionMatrix avg;
  avg.n = ms.front().n;
  avg.entries.assign(ms.front().entries.size(), 0.0);
  avg.zero_support.assign(static_cast<std::size_t>(avg.n), true);
  for (const auto& m : ms) {
    if (m.n != avg.n || m.entries.size() != avg.entries.size())
      throw std::invalid_argument("average_matrices: size mismatch");
    if (!m.row_normalized) throw std::invalid_argument("average_matrices: matrices must be row-normalized");
    for (std::size_t i = 0; i < avg.entries.size(); ++i) avg.entries[i] += m.entries[i];
    for (int r = 0; r < avg.n; ++r)
      if (m.zero_support.empty() || !m.zero_support[static_cast<std::size_t>(r)])
        avg.zero_support[static_cast<std::size_t>(r)] = false;
  }
  for (auto& v : avg.entries) v /= static_cast<double>(ms.size());
  avg.row_normalized = true;
  return avg;
}

/// True when every supported row sums to 1 within `tol`.
inline bool rows_stochastic(const ConfusionMatrix& m, double tol = 1e-9) {
  for (int r = 1; r <= m.n; ++r) {
    if (!m.zero_support.empty() && m.zero_support[static_cast<std::size_t>(r - 1)]) continue;
    if (std::abs(m.row_sum(r) - 1.0) > tol) return false;
  }
  return true;
}

/// Modal label; ties go to the lowest label.
inline int mode_lowest(std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("majority_vote: empty prediction list");
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  int best = counts.begin()->first;
  std::size_t best_n = 0;
  for (const auto& [label, n] : counts)
    if (n > best_n) {
      best = label;
      best_n = n;
    }
  return best;
}

inline Prediction majority_vote(std::span<const Prediction> preds) {
  if (preds.empty()) throw std::invalid_argument("majority_vote: empty prediction list");
  std::vector<int> p, l;
  for (const auto& x : preds) {
    p.push_back(x.person);
    l.push_back(x.position);
  }
  return {mode_lowest(p), mode_lowest(l)};
}

/// Majority verdict for one (person, position) acquisition of a fold.
struct VoteRecord {
  int person = 0;
  int position = 0;
  int illumination = 0;
  std::size_t n_pixels = 0;
  Prediction verdict;
};

struct FoldResult {
  int holdout = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  ConfusionMatrix identity;
  ConfusionMatrix position;
  double acc_identity = 0.0;
  double acc_position = 0.0;
  std::vector<VoteRecord> votes;
  double vote_acc_identity = 0.0;
  double vote_acc_position = 0.0;
  std::vector<ann::EpochRecord> loss_table;
  int best_epoch = 0;
  /// Dataset indices of the test samples.
  std::vector<std::size_t> test_indices;
};

struct ComparisonRow {
  std::string model;
  double acc_identity = 0.0;
  double acc_position = 0.0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;  // joint, identity-only, position-only
  double tolerance = 0.02;
  bool joint_identity_ok = false;
  bool joint_position_ok = false;
  bool ok() const { return joint_identity_ok && joint_position_ok; }
};

struct CvReport {
  std::vector<FoldResult> folds;
  ConfusionMatrix avg_identity;
  ConfusionMatrix avg_position;
  double mean_acc_identity = 0.0;
  double mean_acc_position = 0.0;
  std::optional<ComparisonTable> comparison;
  std::vector<ann::TwoHeadNetwork> networks;  // one per fold, same order
};

/// Trained network for a fold; seeds differ per holdout.
inline ann::TrainConfig fold_config(const ann::TrainConfig& cfg, int holdout) {
  ann::TrainConfig c = cfg;
  c.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(holdout));
  return c;
}

/// Progress callback: (holdout, model label).
using ProgressFn = std::function<void(int, const std::string&)>;

inline FoldResult evaluate_fold(const ann::TwoHeadNetwork& net, const Dataset& test, int holdout) {
  FoldResult f;
  f.holdout = holdout;
  f.n_test = test.size();
  const auto preds = predict_all(net, test);
  std::vector<int> tp, pp, tl, pl;
  std::map<std::pair<int, int>, std::vector<Prediction>> groups;
  std::size_t hit_p = 0, hit_l = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& s = test.samples[i];
    tp.push_back(s.person_id);
    tl.push_back(s.position_index);
    pp.push_back(preds[i].person);
    pl.push_back(preds[i].position);
    hit_p += preds[i].person == s.person_id;
    hit_l += preds[i].position == s.position_index;
    groups[{s.person_id, s.position_index}].push_back(preds[i]);
  }
  f.identity = confusion(pp, tp, test.n_classes);
  f.position = confusion(pl, tl, test.n_locations);
  f.acc_identity = static_cast<double>(hit_p) / static_cast<double>(test.size());
  f.acc_position = static_cast<double>(hit_l) / static_cast<double>(test.size());
  std::size_t vp = 0, vl = 0;
  for (const auto& [key, list] : groups) {
    VoteRecord v{key.first, key.second, holdout, list.size(), majority_vote(list)};
    vp += v.verdict.person == v.person;
    vl += v.verdict.position == v.position;
    f.votes.push_back(v);
  }
  f.vote_acc_identity = static_cast<double>(vp) / static_cast<double>(groups.size());
  f.vote_acc_position = static_cast<double>(vl) / static_cast<double>(groups.size());
  return f;
}

/// Leave-one-illumination-out cross-validation. `holdouts` restricts the
/// folds that are run (all illuminations when empty).
inline CvReport run_cross_validation(const Dataset& ds, const ann::Architecture& arch, const ann::TrainConfig& cfg,
                                     std::vector<int> holdouts = {}, const ProgressFn& progress = {},
                                     const std::string& label = "joint") {
  const auto illums = ds.illuminations();
  if (illums.size() < 2) throw DataError("cross-validation needs at least 2 illuminations, found " +
                                         std::to_string(illums.size()));
  if (holdouts.empty()) holdouts = illums;
  std::sort(holdouts.begin(), holdouts.end());
  for (int h : holdouts)
    if (!std::binary_search(illums.begin(), illums.end(), h))
      throw ConfigError("holdout illumination " + std::to_string(h) + " is not in the dataset");

  CvReport rep;
  for (int h : holdouts) {
    if (progress) progress(h, label);
    auto [train_set, test_set] = loo_split(ds, h);
    const auto fc = fold_config(cfg, h);
    auto net = ann::build_network(arch, ds.n_bins, ds.n_classes, ds.n_locations, fc.seed);
    auto trained = ann::train(std::move(net), train_set, fc);
    auto fold = evaluate_fold(trained.net, test_set, h);
    fold.n_train = train_set.size();
    fold.loss_table = std::move(trained.table);
    fold.best_epoch = trained.best_epoch;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.samples[i].illumination_id == h) fold.test_indices.push_back(i);
    rep.folds.push_back(std::move(fold));
    rep.networks.push_back(std::move(trained.net));
  }
  std::vector<ConfusionMatrix> mi, mp;
  for (const auto& f : rep.folds) {
    mi.push_back(f.identity);
    mp.push_back(f.position);
    rep.mean_acc_identity += f.acc_identity;
    rep.mean_acc_position += f.acc_position;
  }
  rep.mean_acc_identity /= static_cast<double>(rep.folds.size());
  rep.mean_acc_position /= static_cast<double>(rep.folds.size());
  rep.avg_identity = average_matrices(mi);
  rep.avg_position = average_matrices(mp);
  return rep;
}

/// Joint training versus one head at a time (same architecture, the other
/// head's loss term dropped). A completed joint report may be passed in to
/// avoid retraining it.
inline ComparisonTable compare_joint_vs_separate(const Dataset& ds, const ann::Architecture& arch,
                                                 const ann::TrainConfig& cfg, const CvReport* joint = nullptr,
                                                 std::vector<int> holdouts = {}, const ProgressFn& progress = {}) {
  std::optional<CvReport> own;
  if (!joint) {
    auto c = cfg;
    c.heads = {1.0, 1.0};
    own = run_cross_validation(ds, arch, c, holdouts, progress, "joint");
    joint = &*own;
  }
  std::vector<int> folds;
  for (const auto& f : joint->folds) folds.push_back(f.holdout);

  auto id_cfg = cfg;
  id_cfg.heads = {1.0, 0.0};
  const auto id_rep = run_cross_validation(ds, arch, id_cfg, folds, progress, "identity-only");
  auto pos_cfg = cfg;
  pos_cfg.heads = {0.0, 1.0};
  const auto pos_rep = run_cross_validation(ds, arch, pos_cfg, folds, progress, "position-only");

  ComparisonTable t;
  t.rows.push_back({"joint", joint->mean_acc_identity, joint->mean_acc_position});
  t.rows.push_back({"identity-only", id_rep.mean_acc_identity, id_rep.mean_acc_position});
  t.rows.push_back({"position-only", pos_rep.mean_acc_identity, pos_rep.mean_acc_position});
  t.joint_identity_ok = joint->mean_acc_identity >= id_rep.mean_acc_identity - t.tolerance;
  t.joint_position_ok = joint->mean_acc_position >= pos_rep.mean_acc_position - t.tolerance;
  return t;
}

struct FoldErrorRow {
  int holdout = 0;
  double error_identity = 0.0;
  double error_position = 0.0;
};

struct ErrorClustering {
  std::vector<FoldErrorRow> rows;
  double variance_identity = 0.0;  // population variance across folds
  double variance_position = 0.0;
};

inline double population_variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size());
}

inline ErrorClustering within_vs_across_illumination_errors(const CvReport& rep) {
  ErrorClustering e;
  std::vector<double> ei, ep;
  for (const auto& f : rep.folds) {
    e.rows.push_back({f.holdout, 1.0 - f.acc_identity, 1.0 - f.acc_position});
    ei.push_back(1.0 - f.acc_identity);
    ep.push_back(1.0 - f.acc_position);
  }
  e.variance_identity = population_variance(ei);
  e.variance_position = population_variance(ep);
  return e;
}

/// Test sets are pairwise disjoint and together cover every sample exactly
/// once (only meaningful when all folds were run).
inline bool folds_partition(const CvReport& rep, std::size_t dataset_size) {
  std::vector<int> seen(dataset_size, 0);
  for (const auto& f : rep.folds)
    for (auto i : f.test_indices) {
      if (i >= dataset_size) return false;
      ++seen[i];
    }
  return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
}

/// Folds where the majority verdict is less accurate than per-pixel
/// classification, for either task.
inline std::vector<int> majority_vote_violations(const CvReport& rep) {
  std::vector<int> bad;
  for (const auto& f : rep.folds)
    if (f.vote_acc_identity < f.acc_identity || f.vote_acc_position < f.acc_position) bad.push_back(f.holdout);
  return bad;
}

}  // namespace nlosid
