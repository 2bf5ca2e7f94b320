#pragma once

#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlosid/eval.hpp"
#include "nlosid/scene.hpp"

namespace nlosid {

/// Row labels of a confusion matrix: person numbers or position names.
inline std::vector<std::string> matrix_labels(int n, bool positions) {
  std::vector<std::string> out;
  for (int i = 1; i <= n; ++i)
    out.push_back(positions && i <= static_cast<int>(kPositionNames.size())
                      ? std::string(kPositionNames[static_cast<std::size_t>(i - 1)])
                      : "n." + std::to_string(i));
  return out;
}

inline std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

/// CSV, one row per truth label: `truth,<pred labels...>`.
inline std::string confusion_csv(const ConfusionMatrix& m, bool positions) {
  const auto labels = matrix_labels(m.n, positions);
  std::ostringstream out;
  out << std::setprecision(17) << "truth";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  for (int r = 1; r <= m.n; ++r) {
    out << labels[static_cast<std::size_t>(r - 1)];
    for (int c = 1; c <= m.n; ++c) out << ',' << m.at(r, c);
    out << '\n';
  }
  return out.str();
}

inline std::string confusion_text(const ConfusionMatrix& m, bool positions) {
  const auto labels = matrix_labels(m.n, positions);
  std::ostringstream out;
  out << std::setw(8) << "truth\\pred";
  for (const auto& l : labels) out << std::setw(7) << l;
  out << '\n';
  for (int r = 1; r <= m.n; ++r) {
    out << std::setw(10) << labels[static_cast<std::size_t>(r - 1)];
    for (int c = 1; c <= m.n; ++c) out << std::setw(7) << fmt(m.at(r, c), 3);
    if (!m.zero_support.empty() && m.zero_support[static_cast<std::size_t>(r - 1)]) out << "  (no support)";
    out << '\n';
  }
  return out.str();
}

inline nlohmann::json matrix_json(const ConfusionMatrix& m, bool positions) {
  nlohmann::json j;
  j["labels"] = matrix_labels(m.n, positions);
  auto rows = nlohmann::json::array();
  for (int r = 1; r <= m.n; ++r) {
    std::vector<double> row;
    for (int c = 1; c <= m.n; ++c) row.push_back(m.at(r, c));
    rows.push_back(row);
  }
  j["rows"] = rows;
  std::vector<bool> zs(m.zero_support.begin(), m.zero_support.end());
  j["zero_support"] = zs;
  return j;
}

inline nlohmann::json comparison_json(const ComparisonTable& t) {
  nlohmann::json j;
  auto rows = nlohmann::json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"model", r.model}, {"acc_identity", r.acc_identity}, {"acc_position", r.acc_position}});
  j["rows"] = rows;
  j["tolerance"] = t.tolerance;
  j["joint_identity_ok"] = t.joint_identity_ok;
  j["joint_position_ok"] = t.joint_position_ok;
  return j;
}

inline std::string comparison_text(const ComparisonTable& t) {
  std::ostringstream out;
  out << "model            identity  position\n";
  for (const auto& r : t.rows)
    out << std::left << std::setw(16) << r.model << std::right << std::setw(9) << fmt(r.acc_identity)
        << std::setw(10) << fmt(r.acc_position) << '\n';
  out << "joint identity >= identity-only - " << t.tolerance << ": " << (t.joint_identity_ok ? "yes" : "NO") << '\n';
  out << "joint position >= position-only - " << t.tolerance << ": " << (t.joint_position_ok ? "yes" : "NO") << '\n';
  return out.str();
}

inline nlohmann::json report_json(const CvReport& rep) {
  nlohmann::json j;
  j["mean_acc_identity"] = rep.mean_acc_identity;
  j["mean_acc_position"] = rep.mean_acc_position;
  j["avg_identity"] = matrix_json(rep.avg_identity, false);
  j["avg_position"] = matrix_json(rep.avg_position, true);
  auto folds = nlohmann::json::array();
  for (const auto& f : rep.folds) {
    nlohmann::json jf;
    jf["holdout"] = f.holdout;
    jf["n_train"] = f.n_train;
    jf["n_test"] = f.n_test;
    jf["acc_identity"] = f.acc_identity;
    jf["acc_position"] = f.acc_position;
    jf["vote_acc_identity"] = f.vote_acc_identity;
    jf["vote_acc_position"] = f.vote_acc_position;
    jf["best_epoch"] = f.best_epoch;
    jf["identity"] = matrix_json(f.identity, false);
    jf["position"] = matrix_json(f.position, true);
    auto votes = nlohmann::json::array();
    for (const auto& v : f.votes)
      votes.push_back({{"person", v.person},
                       {"position", std::string(kPositionNames[static_cast<std::size_t>(v.position - 1)])},
                       {"illumination", v.illumination},
                       {"pixels", v.n_pixels},
                       {"verdict_person", v.verdict.person},
                       {"verdict_position",
                        std::string(kPositionNames[static_cast<std::size_t>(v.verdict.position - 1)])}});
    jf["majority_votes"] = votes;
    auto table = nlohmann::json::array();
    for (const auto& r : f.loss_table)
      table.push_back({{"epoch", r.epoch},
                       {"train_loss", r.train_loss},
                       {"val_loss", r.val_loss},
                       {"val_acc_class", r.val_acc_class},
                       {"val_acc_loc", r.val_acc_loc}});
    jf["loss_table"] = table;
    folds.push_back(jf);
  }
  j["folds"] = folds;
  const auto err = within_vs_across_illumination_errors(rep);
  nlohmann::json je;
  auto rows = nlohmann::json::array();
  for (const auto& r : err.rows)
    rows.push_back({{"holdout", r.holdout}, {"error_identity", r.error_identity}, {"error_position", r.error_position}});
  je["rows"] = rows;
  je["variance_identity"] = err.variance_identity;
  je["variance_position"] = err.variance_position;
  j["fold_errors"] = je;
  if (rep.comparison) j["joint_vs_separate"] = comparison_json(*rep.comparison);
  return j;
}

inline std::string report_text(const CvReport& rep) {
  std::ostringstream out;
  out << "Leave-one-illumination-out cross-validation (" << rep.folds.size() << " fold"
      << (rep.folds.size() == 1 ? "" : "s") << ")\n\n";
  out << "fold  n_test  acc_id  acc_pos  vote_id  vote_pos  best_epoch\n";
  for (const auto& f : rep.folds)
    out << std::setw(4) << f.holdout << std::setw(8) << f.n_test << std::setw(8) << fmt(f.acc_identity, 3)
        << std::setw(9) << fmt(f.acc_position, 3) << std::setw(9) << fmt(f.vote_acc_identity, 3) << std::setw(10)
        << fmt(f.vote_acc_position, 3) << std::setw(12) << f.best_epoch << '\n';
  out << "\nmean per-pixel accuracy: identity " << fmt(rep.mean_acc_identity) << ", position "
      << fmt(rep.mean_acc_position) << "\n\n";
  out << "Averaged identity confusion matrix\n" << confusion_text(rep.avg_identity, false) << '\n';
  out << "Averaged position confusion matrix\n" << confusion_text(rep.avg_position, true) << '\n';
  const auto err = within_vs_across_illumination_errors(rep);
  out << "Error rate by held-out illumination\n";
  for (const auto& r : err.rows)
    out << "  illumination " << r.holdout << ": identity " << fmt(r.error_identity) << ", position "
        << fmt(r.error_position) << '\n';
  out << "  variance across folds: identity " << fmt(err.variance_identity, 6) << ", position "
      << fmt(err.variance_position, 6) << '\n';
  if (rep.comparison) out << "\nJoint vs separate heads (mean per-pixel accuracy)\n" << comparison_text(*rep.comparison);
  return out.str();
}

}  // namespace nlosid
