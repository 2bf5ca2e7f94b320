#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nlosid/ann.hpp"
#include "nlosid/config.hpp"
#include "nlosid/dataset.hpp"
#include "nlosid/eval.hpp"
#include "nlosid/netio.hpp"
#include "nlosid/nlsh.hpp"
#include "nlosid/report.hpp"
#include "nlosid/scene.hpp"
#include "nlosid/train.hpp"
#include "nlosid/transient.hpp"

namespace nlosid {

/// Everything a run needs, resolved from a config file plus defaults.
struct RunConfig {
  std::string config_path;
  Scene scene = default_scene();
  DetectorSpec detector;
  std::vector<PersonSpec> roster = default_roster();
  ClothingMode clothing_mode = ClothingMode::different;
  /// Clothing albedo shared by everyone when clothing_mode = same.
  double same_clothing_albedo = 0.5;
  int illuminations = 5;
  std::uint64_t seed = 20240601;
  unsigned threads = 0;
  double hot_pixel_threshold = 5.0;
  ann::Architecture arch = ann::default_architecture();
  ann::TrainConfig train;
};

inline void validate(const RunConfig& rc) {
  validate(rc.scene);
  validate(rc.detector);
  validate_roster(rc.roster);
  if (rc.roster.empty()) throw ConfigError("roster must not be empty");
  for (std::size_t i = 0; i < rc.roster.size(); ++i)
    if (rc.roster[i].person_id != static_cast<int>(i) + 1)
      throw ConfigError("person ids must run 1..N_c in order");
  if (rc.illuminations < 2 || rc.illuminations > 255) throw ConfigError("run.illuminations must lie in 2..255");
  if (!(rc.same_clothing_albedo >= 0.0 && rc.same_clothing_albedo <= 1.0))
    throw ConfigError("run.same_clothing_albedo must lie in [0, 1]");
  if (!(rc.hot_pixel_threshold > 0.0)) throw ConfigError("run.hot_pixel_threshold must be positive");
  ann::validate(rc.train);
}

namespace detail {

inline std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline int parse_positive(const KeyValueConfig& cfg, const std::string& key, const std::string& token) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(token, &pos);
    if (pos == token.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  cfg.fail(cfg.line_of(key), "'" + key + "': expected a positive integer, got '" + token + "'");
}

}  // namespace detail

/// `arch.conv = 16x9s2 32x5s2` (kernels x width s stride; each followed by
/// relu, then flatten), `arch.dense = 64` and `arch.trunk = 64` (dense + relu
/// per entry; `none` for an empty list).
inline ann::Architecture load_architecture(const KeyValueConfig& cfg) {
  ann::Architecture a = ann::default_architecture();
  if (cfg.has("arch.conv")) {
    a.conv_branch.clear();
    const auto value = cfg.get_string("arch.conv", "");
    if (value != "none") {
      for (const auto& w : detail::words(value)) {
        const auto x = w.find('x'), s = w.find('s');
        if (x == std::string::npos || s == std::string::npos || s < x)
          cfg.fail(cfg.line_of("arch.conv"), "'arch.conv' entries look like 16x9s2, got '" + w + "'");
        a.conv_branch.push_back(ann::LayerSpec::conv1d(detail::parse_positive(cfg, "arch.conv", w.substr(0, x)),
                                                       detail::parse_positive(cfg, "arch.conv", w.substr(x + 1, s - x - 1)),
                                                       detail::parse_positive(cfg, "arch.conv", w.substr(s + 1))));
        a.conv_branch.push_back(ann::LayerSpec::relu());
      }
      a.conv_branch.push_back(ann::LayerSpec::flatten());
    }
  }
  for (auto [key, list] : {std::pair{"arch.dense", &a.dense_branch}, std::pair{"arch.trunk", &a.trunk}}) {
    if (!cfg.has(key)) continue;
    list->clear();
    const auto value = cfg.get_string(key, "");
    if (value == "none") continue;
    for (const auto& w : detail::words(value)) {
      list->push_back(ann::LayerSpec::dense(detail::parse_positive(cfg, key, w)));
      list->push_back(ann::LayerSpec::relu());
    }
  }
  return a;
}

inline ann::TrainConfig load_train_config(const KeyValueConfig& cfg, ann::TrainConfig t = {}) {
  t.learning_rate = cfg.get_double("train.learning_rate", t.learning_rate);
  t.epochs = static_cast<int>(cfg.get_int("train.epochs", t.epochs));
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", t.batch_size));
  if (cfg.has("train.optimizer")) {
    try {
      t.optimizer = ann::parse_optimizer(cfg.get_string("train.optimizer", ""));
    } catch (const ConfigError& e) {
      cfg.fail(cfg.line_of("train.optimizer"), e.what());
    }
  }
  t.beta1 = cfg.get_double("train.beta1", t.beta1);
  t.beta2 = cfg.get_double("train.beta2", t.beta2);
  t.epsilon = cfg.get_double("train.epsilon", t.epsilon);
  t.momentum = cfg.get_double("train.momentum", t.momentum);
  t.patience = static_cast<int>(cfg.get_int("train.patience", t.patience));
  t.val_fraction = cfg.get_double("train.val_fraction", t.val_fraction);
  return t;
}

inline RunConfig load_run_config(const KeyValueConfig& cfg) {
  RunConfig rc;
  rc.scene = load_scene(cfg);
  rc.detector = load_detector(cfg);
  rc.roster = load_roster(cfg);
  if (cfg.has("run.clothing_mode")) {
    try {
      rc.clothing_mode = parse_clothing_mode(cfg.get_string("run.clothing_mode", ""));
    } catch (const ConfigError& e) {
      cfg.fail(cfg.line_of("run.clothing_mode"), e.what());
    }
  }
  rc.same_clothing_albedo = cfg.get_double("run.same_clothing_albedo", rc.same_clothing_albedo);
  rc.illuminations = static_cast<int>(cfg.get_int("run.illuminations", rc.illuminations));
  rc.seed = cfg.get_u64("run.seed", rc.seed);
  rc.threads = static_cast<unsigned>(cfg.get_int("run.threads", rc.threads));
  rc.hot_pixel_threshold = cfg.get_double("run.hot_pixel_threshold", rc.hot_pixel_threshold);
  rc.arch = load_architecture(cfg);
  rc.train = load_train_config(cfg, rc.train);
  cfg.check_all_used();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  auto rc = load_run_config(KeyValueConfig::load(path));
  rc.config_path = path;
  return rc;
}

/// Roster as measured: in same-clothing mode everyone wears one albedo.
inline std::vector<PersonSpec> effective_roster(const RunConfig& rc) {
  auto roster = rc.roster;
  if (rc.clothing_mode == ClothingMode::same)
    for (auto& p : roster) p.clothing_albedo = rc.same_clothing_albedo;
  return roster;
}

inline std::string background_file(int illumination) { return "bg_i" + std::to_string(illumination) + ".nlsh"; }

inline std::string measurement_file(int person, int position, int illumination) {
  return "p" + std::to_string(person) + "_" + std::string(kPositionNames[static_cast<std::size_t>(position - 1)]) +
         "_i" + std::to_string(illumination) + ".nlsh";
}

/// Noise seed of one acquisition.
inline std::uint64_t frame_seed(std::uint64_t seed, int person, int position, int illumination) {
  return derive_seed(seed, "frame/" + std::to_string(person) + "/" + std::to_string(position) + "/" +
                               std::to_string(illumination));
}

using LogFn = std::function<void(const std::string&)>;

/// Writes one background frame per illumination and one frame per (person,
/// position, illumination), then the manifest. Returns the manifest.
inline nlsh::Manifest cmd_simulate(const RunConfig& rc, const std::filesystem::path& out_dir, bool noiseless,
                                   const LogFn& log = {}) {
  validate(rc);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw DataError("cannot create output directory '" + out_dir.string() + "'");
  // A stale manifest would mark a half-rewritten directory as complete.
  std::filesystem::remove(out_dir / nlsh::kManifestName, ec);

  const auto roster = effective_roster(rc);
  SimulationOptions opts{noiseless, rc.clothing_mode, rc.threads};
  nlsh::Manifest m;
  m.clothing_mode = rc.clothing_mode;
  m.illuminations = rc.illuminations;
  m.seed = rc.seed;
  m.roster = roster;

  auto emit = [&](const PixelArrayFrame& frame, const nlsh::ManifestEntry& entry) {
    auto f = frame;
    // Hot pixels are found from the data, not from the simulator's truth.
    std::fill(f.hot_mask.begin(), f.hot_mask.end(), std::uint8_t{0});
    nlsh::write_frame(out_dir / entry.file, f);
    m.entries.push_back(entry);
  };

  for (int il = 1; il <= rc.illuminations; ++il) {
    if (log) log("illumination " + std::to_string(il) + "/" + std::to_string(rc.illuminations));
    const auto bg = simulate_frame(rc.scene, std::nullopt, std::nullopt, rc.detector, il, frame_seed(rc.seed, 0, 0, il),
                                   opts);
    emit(bg, {background_file(il), nlsh::FrameRole::background, 0, 0, il});
    // Acquisition order alternates people and positions.
    for (int pos = 1; pos <= static_cast<int>(kPositionNames.size()); ++pos)
      for (const auto& p : roster) {
        const auto frame = simulate_frame(rc.scene, p, std::string(kPositionNames[static_cast<std::size_t>(pos - 1)]),
                                          rc.detector, il, frame_seed(rc.seed, p.person_id, pos, il), opts);
        emit(frame, {measurement_file(p.person_id, pos, il), nlsh::FrameRole::measurement, p.person_id, pos, il});
      }
  }
  nlsh::write_file(out_dir / nlsh::kManifestName, nlsh::format_manifest(m));
  return m;
}

/// Loads a complete dataset directory, finds hot pixels from the data and
/// assembles the labelled per-pixel dataset.
struct LoadedDataset {
  nlsh::Manifest manifest;
  HotPixelMask mask;
  Dataset data;
};

inline LoadedDataset load_dataset(const std::filesystem::path& dir, double hot_threshold = 5.0) {
  LoadedDataset out;
  out.manifest = nlsh::read_manifest(dir);
  if (out.manifest.count(nlsh::FrameRole::measurement) == 0) throw DataError("dataset has no measurement frames");
  std::vector<PixelArrayFrame> frames, backgrounds;
  PixelTotals totals;
  for (const auto& e : out.manifest.entries) {
    auto f = nlsh::read_frame(dir / e.file);
    if (f.meta.person_id != e.person_id || f.meta.position_index != e.position_index ||
        f.meta.illumination_id != e.illumination_id)
      throw DataError(e.file + ": frame labels disagree with the manifest");
    totals.add(f);
    (e.role == nlsh::FrameRole::background ? backgrounds : frames).push_back(std::move(f));
  }
  out.mask = totals.mask(hot_threshold);
  out.data = assemble_dataset(frames, backgrounds, out.mask, std::nullopt,
                              static_cast<int>(out.manifest.roster.size()),
                              static_cast<int>(kPositionNames.size()));
  out.data.clothing_mode = out.manifest.clothing_mode;
  return out;
}

/// Training settings of a run: the configured values with the seed derived
/// from the run seed and the thread count resolved.
inline ann::TrainConfig effective_train_config(const RunConfig& rc) {
  auto cfg = rc.train;
  cfg.seed = derive_seed(rc.seed, "train");
  cfg.threads = rc.threads == 0 ? default_threads() : rc.threads;
  return cfg;
}

struct TrainEvalOptions {
  std::optional<int> holdout;
  bool joint_vs_separate = false;
};

struct TrainEvalResult {
  CvReport report;
  std::size_t kept_pixels = 0;
  std::size_t samples = 0;
  std::vector<std::string> failures;  // embedded acceptance properties that failed
  ExitCode exit_code() const { return failures.empty() ? ExitCode::ok : ExitCode::acceptance_failure; }
};

/// Preprocessing, cross-validation and report emission into `out_dir`.
inline TrainEvalResult cmd_train_eval(const std::filesystem::path& dataset_dir, const RunConfig& rc,
                                      const std::filesystem::path& out_dir, const TrainEvalOptions& opt,
                                      const LogFn& log = {}) {
  validate(rc);
  auto loaded = load_dataset(dataset_dir, rc.hot_pixel_threshold);
  TrainEvalResult res;
  res.kept_pixels = loaded.mask.kept_count;
  res.samples = loaded.data.size();
  if (log)
    log("dataset: " + std::to_string(res.samples) + " samples, " + std::to_string(res.kept_pixels) + " of " +
        std::to_string(loaded.mask.hot.size()) + " pixels kept");

  const auto cfg = effective_train_config(rc);
  std::vector<int> holdouts;
  if (opt.holdout) holdouts.push_back(*opt.holdout);
  ProgressFn progress;
  if (log) progress = [&](int h, const std::string& label) { log("fold " + std::to_string(h) + " (" + label + ")"); };

  res.report = run_cross_validation(loaded.data, rc.arch, cfg, holdouts, progress);
  if (opt.joint_vs_separate)
    res.report.comparison = compare_joint_vs_separate(loaded.data, rc.arch, cfg, &res.report, holdouts, progress);

  auto& rep = res.report;
  for (const auto& f : rep.folds)
    if (!rows_stochastic(f.identity) || !rows_stochastic(f.position))
      res.failures.push_back("fold " + std::to_string(f.holdout) + ": confusion rows do not sum to 1");
  if (!rows_stochastic(rep.avg_identity) || !rows_stochastic(rep.avg_position))
    res.failures.push_back("averaged confusion rows do not sum to 1");
  if (!opt.holdout && !folds_partition(rep, loaded.data.size()))
    res.failures.push_back("test folds do not partition the dataset");
  for (const auto& f : rep.folds) {
    if (f.vote_acc_identity < f.acc_identity)
      res.failures.push_back("fold " + std::to_string(f.holdout) + ": majority-vote identity accuracy " +
                             fmt(f.vote_acc_identity) + " < per-pixel " + fmt(f.acc_identity));
    if (f.vote_acc_position < f.acc_position)
      res.failures.push_back("fold " + std::to_string(f.holdout) + ": majority-vote position accuracy " +
                             fmt(f.vote_acc_position) + " < per-pixel " + fmt(f.acc_position));
  }
  if (rep.comparison && !rep.comparison->ok())
    res.failures.push_back("joint training is worse than a separate head by more than " +
                           fmt(rep.comparison->tolerance, 2));

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw DataError("cannot create output directory '" + out_dir.string() + "'");
  nlsh::write_file(out_dir / "summary.txt", report_text(rep));
  nlsh::write_file(out_dir / "confusion_identity.csv", confusion_csv(rep.avg_identity, false));
  nlsh::write_file(out_dir / "confusion_position.csv", confusion_csv(rep.avg_position, true));
  for (std::size_t i = 0; i < rep.folds.size(); ++i) {
    const auto& f = rep.folds[i];
    const auto tag = "fold" + std::to_string(f.holdout);
    nlsh::write_file(out_dir / (tag + "_confusion_identity.csv"), confusion_csv(f.identity, false));
    nlsh::write_file(out_dir / (tag + "_confusion_position.csv"), confusion_csv(f.position, true));
    nlsh::write_file(out_dir / (tag + "_loss.csv"), ann::loss_table_csv(f.loss_table));
    ann::save_network(out_dir / (tag + ".nlnw"), rep.networks[i]);
  }
  auto j = report_json(rep);
  j["dataset"] = {{"samples", res.samples},
                  {"kept_pixels", res.kept_pixels},
                  {"clothing_mode", to_string(loaded.manifest.clothing_mode)},
                  {"feature_scale", loaded.data.feature_scale}};
  j["failures"] = res.failures;
  nlsh::write_file(out_dir / "report.json", j.dump(2) + "\n");
  return res;
}

/// Text dump of one NLSH file: header, per-pixel totals, and a sparkline of
/// `pixel` (default: the pixel whose total is the median, which avoids
/// landing on a hot pixel).
inline std::string cmd_inspect(const std::filesystem::path& file, std::optional<int> pixel = std::nullopt) {
  const auto f = nlsh::read_frame(file);
  std::ostringstream out;
  out << "file            " << file.string() << '\n';
  out << "version         " << nlsh::kVersion << '\n';
  out << "grid            " << f.rows << " x " << f.cols << " (" << f.pixel_count() << " pixels)\n";
  out << "n_bins          " << f.n_bins() << '\n';
  out << "bin_width_ps    " << f.bin_width_ps() << '\n';
  out << "t0_ps           " << f.histograms.front().t0_ps << '\n';
  out << "person_id       "
      << (f.meta.person_id == 0 ? std::string("0/background") : std::to_string(f.meta.person_id)) << '\n';
  out << "position        "
      << (f.meta.position_index == 0 ? std::string("-")
                                     : std::string(kPositionNames[static_cast<std::size_t>(f.meta.position_index - 1)]))
      << '\n';
  out << "illumination_id " << f.meta.illumination_id << '\n';
  out << "clothing_mode   " << to_string(f.meta.clothing_mode) << '\n';
  out << "seed            " << f.meta.seed << '\n';
  out << "noiseless       " << (f.meta.noiseless ? "yes" : "no") << '\n';
  out << "hot flagged     " << std::count(f.hot_mask.begin(), f.hot_mask.end(), 1) << '\n';

  std::vector<double> totals;
  for (const auto& h : f.histograms) totals.push_back(h.total());
  out << "\nper-pixel totals (row-major)\n";
  for (int r = 0; r < f.rows; ++r) {
    for (int c = 0; c < f.cols; ++c)
      out << (c ? " " : "") << static_cast<long long>(std::llround(totals[static_cast<std::size_t>(r * f.cols + c)]));
    out << '\n';
  }

  std::size_t p = 0;
  if (pixel) {
    if (*pixel < 0 || static_cast<std::size_t>(*pixel) >= f.pixel_count())
      throw ConfigError("pixel " + std::to_string(*pixel) + " outside 0.." + std::to_string(f.pixel_count() - 1));
    p = static_cast<std::size_t>(*pixel);
  } else {
    std::vector<std::size_t> order(totals.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto mid = order.begin() + static_cast<std::ptrdiff_t>(order.size() / 2);
    std::nth_element(order.begin(), mid, order.end(),
                     [&](std::size_t a, std::size_t b) { return totals[a] < totals[b] || (totals[a] == totals[b] && a < b); });
    p = *mid;
  }
  const auto& h = f.histograms[p];
  static const char* levels[] = {" ", ".", ":", "-", "=", "+", "*", "#", "%", "@"};
  const double peak = h.counts[h.peak_bin()];
  out << "\npixel " << p << " histogram (peak " << peak << " at bin " << h.peak_bin() << ")\n";
  for (std::size_t i = 0; i < h.n_bins(); ++i) {
    const int lv = peak > 0.0 ? static_cast<int>(std::lround(9.0 * h.counts[i] / peak)) : 0;
    out << levels[std::clamp(lv, 0, 9)];
  }
  out << '\n';
  return out.str();
}

}  // namespace nlosid
