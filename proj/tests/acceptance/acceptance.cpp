// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "../support/reference.hpp"
#include "nlosid/pipeline.hpp"

namespace fs = std::filesystem;
using namespace nlosid;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void log(const std::string& msg) { std::cerr << "  [acceptance] " << msg << std::endl; }

// Shared state so that later criteria reuse earlier pipeline runs.
struct Context {
  fs::path work;
  fs::path config;
  RunConfig rc;
  struct Run {
    fs::path dataset, report;
    TrainEvalResult result;
    double seconds = 0.0;
  };
  std::optional<Run> shipped;
  std::optional<Run> same_clothing;

  Run run_pipeline(const RunConfig& cfg, const std::string& tag) {
    Run r;
    r.dataset = work / (tag + "_dataset");
    r.report = work / (tag + "_report");
    fs::remove_all(r.dataset);
    fs::remove_all(r.report);
    const auto t0 = std::chrono::steady_clock::now();
    cmd_simulate(cfg, r.dataset, false, log);
    r.result = cmd_train_eval(r.dataset, cfg, r.report, {}, log);
    r.seconds = seconds_since(t0);
    log(tag + ": " + num(r.seconds, 1) + " s");
    return r;
  }

  const Run& shipped_run() {
    if (!shipped) shipped = run_pipeline(rc, "shipped");
    return *shipped;
  }
};

Outcome criterion1(Context&) {
  const DetectorSpec d;
  const double depth = temporal_to_depth(120.0);
  const bool ok = std::abs(depth - 1.8) <= 0.01 && d.rep_period_ns == 12.5 && d.rows == 32 && d.cols == 32 &&
                  d.pulses_per_acquisition == 8e7;
  return {ok, "depth(120 ps) = " + num(depth) + " cm, window " + num(d.rep_period_ns, 1) + " ns, array " +
                  std::to_string(d.rows) + "x" + std::to_string(d.cols) + ", pulses " + num(d.pulses_per_acquisition, 0)};
}

Outcome criterion2(Context&) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ux(-0.8, 0.8), uy(0.4, 1.8), uz(0.6, 2.5);
  const DetectorSpec d;
  const auto hot = hot_pixel_layout(d);
  SimulationOptions opt;
  opt.noiseless = true;
  double worst = 0.0;
  std::size_t checked = 0;
  for (int g = 0; g < 20; ++g) {
    auto scene = default_scene();
    scene.pose_jitter = scene.power_jitter = 0.0;
    Patch p;
    p.center = {ux(rng), uy(rng), uz(rng)};
    p.normal = normalized(scene.wall_midpoint() - p.center);
    p.area = 0.01;
    p.albedo = 0.8;
    const std::uint64_t seed = rng();
    const auto frame = simulate_patch_frame(scene, {p}, d, seed, opt);
    const auto bg = simulate_patch_frame(scene, {}, d, seed, opt);
    const auto echo = subtract_background(frame, bg);
    for (std::size_t i = 0; i < echo.pixel_count(); ++i) {
      if (hot[i]) continue;
      const Point3 o = scene.observed_spot + pixel_observed_offset(scene, d, seed, i);
      const double path = scene.laser_leg + distance(scene.laser_spot, p.center) + distance(p.center, o) +
                          scene.detector_to_wall_distance;
      const double window_ps = d.rep_period_ns * 1000.0;
      const double t_ps = std::fmod(path / 0.299792458 * 1000.0, window_ps);
      const double predicted = t_ps / d.bin_width_ps;  // fractional bin
      const double peak = static_cast<double>(echo.histograms[i].peak_bin()) + 0.5;
      double diff = std::abs(peak - predicted);
      diff = std::min(diff, static_cast<double>(d.n_bins()) - diff);
      worst = std::max(worst, diff);
      ++checked;
    }
  }
  return {worst <= 1.0, std::to_string(checked) + " pixel peaks over 20 geometries, worst offset " + num(worst, 3) +
                            " bins"};
}

Outcome criterion3(Context&) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1000.0), z(-40.0, 40.0);
  double worst_conv = 0.0;
  for (int i = 0; i < 100; ++i) {
    TemporalHistogram h(250, 50.0);
    for (auto& c : h.counts) c = u(rng);
    const auto out = convolve_irf(h, 120.0);
    worst_conv = std::max(worst_conv, std::abs(out.total() - h.total()) / h.total());
  }
  double worst_sm = 0.0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> l(1 + rng() % 12);
    for (auto& v : l) v = z(rng);
    const auto p = ann::softmax(ann::Tensor({l.size()}, l));
    double s = 0.0;
    for (double v : p.values) s += v;
    worst_sm = std::max(worst_sm, std::abs(s - 1.0));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "IRF relative drift %.2e (limit 1e-9), softmax row error %.2e (limit 1e-12)",
                worst_conv, worst_sm);
  return {worst_conv <= 1e-9 && worst_sm <= 1e-12, buf};
}

Outcome criterion4(Context&) {
  double worst = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = oracle::gradient_check(seed);
    worst = std::max(worst, r.max_rel);
    n = r.parameters;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "max relative error %.2e over %zu parameters x 10 seeds (limit 1e-5)", worst, n);
  return {worst < 1e-5, buf};
}

Outcome criterion5(Context&) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Point3 c{u(rng), 1.0 + 0.5 * u(rng), 1.5 + 0.5 * u(rng)};
    const Point3 laser{0.3 * u(rng), 1.2 + 0.1 * u(rng), 0.0}, observed{0.3 * u(rng), 1.2 + 0.1 * u(rng), 0.0};
    Patch p;
    p.center = c;
    p.normal = normalized(Point3{0.0, 1.2, 0.0} - c);
    p.area = 0.0025;
    p.albedo = 0.5;
    const double w1 = radiometric_weight(p, laser, observed, 1.0);
    if (w1 == 0.0) continue;
    // Both segments doubled about the patch centre, angles unchanged.
    const double w2 = radiometric_weight(p, c + (laser - c) * 2.0, c + (observed - c) * 2.0, 1.0);
    worst = std::max(worst, std::abs(w2 / w1 - 1.0 / 16.0) * 16.0);
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "worst relative deviation from 1/16: %.2e (limit 1e-12)", worst);
  return {worst <= 1e-12, buf};
}

Outcome criterion6(Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = ctx.work / "defaults_dataset";
  fs::remove_all(dir);
  const auto m = cmd_simulate(RunConfig{}, dir, false, log);
  const auto n_meas = m.count(nlsh::FrameRole::measurement);
  const auto loaded = load_dataset(dir);
  const auto kept = loaded.mask.kept_count;
  const auto& ds = loaded.data;
  std::vector<int> seen(ds.size(), 0);
  const auto illums = ds.illuminations();
  for (int h : illums) {
    const auto [train, test] = loo_split(ds, h);
    if (train.size() + test.size() != ds.size()) return {false, "fold sizes do not add up"};
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.samples[i].illumination_id == h) ++seen[i];
  }
  const bool cover = std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
  const double secs = seconds_since(t0);
  const bool ok = n_meas == 105 && kept >= 770 && kept <= 830 && illums.size() == 5 && cover && secs <= 300.0;
  fs::remove_all(dir);
  return {ok, std::to_string(n_meas) + " measurement frames, " + std::to_string(kept) + " of 1024 pixels kept, " +
                  std::to_string(illums.size()) + " folds" + (cover ? " partitioning" : " NOT partitioning") +
                  " the dataset, " + num(secs, 1) + " s"};
}

Outcome criterion7(Context& ctx) {
  const auto& run = ctx.shipped_run();
  const auto& rep = run.result.report;
  const double db = rep.avg_position.at(6, 6), df = rep.avg_position.at(7, 7);
  const auto bad = majority_vote_violations(rep);
  std::string votes;
  for (const auto& f : rep.folds) {
    votes += " fold" + std::to_string(f.holdout) + " vote " + num(f.vote_acc_identity, 3) + "/" +
             num(f.vote_acc_position, 3) + " vs pixel " + num(f.acc_identity, 3) + "/" + num(f.acc_position, 3) + ";";
  }
  const bool ok = rep.mean_acc_position >= 0.90 && rep.mean_acc_identity >= 0.80 && db >= 0.99 && df >= 0.99 &&
                  bad.empty() && run.seconds <= 900.0;
  return {ok, "position " + num(rep.mean_acc_position) + " (>= 0.90), identity " + num(rep.mean_acc_identity) +
                  " (>= 0.80), Db " + num(db) + ", Df " + num(df) + " (>= 0.99), " + std::to_string(bad.size()) +
                  " majority-vote violations," + votes + " runtime " + num(run.seconds, 1) + " s (<= 900)"};
}

Outcome criterion8(Context& ctx) {
  const auto& diff = ctx.shipped_run().result.report;
  if (!ctx.same_clothing) {
    auto rc = ctx.rc;
    rc.clothing_mode = ClothingMode::same;
    ctx.same_clothing = ctx.run_pipeline(rc, "same_clothing");
  }
  const auto& same = ctx.same_clothing->result.report;
  const double gap = std::abs(same.mean_acc_position - diff.mean_acc_position);
  const bool ok = same.mean_acc_identity < diff.mean_acc_identity && gap <= 0.05;
  return {ok, "identity same " + num(same.mean_acc_identity) + " vs different " + num(diff.mean_acc_identity) +
                  "; position same " + num(same.mean_acc_position) + " vs different " +
                  num(diff.mean_acc_position) + " (gap " + num(gap) + " <= 0.05)"};
}

Outcome criterion9(Context& ctx) {
  const auto& run = ctx.shipped_run();
  const auto loaded = load_dataset(run.dataset, ctx.rc.hot_pixel_threshold);
  ProgressFn progress = [](int h, const std::string& label) { log("fold " + std::to_string(h) + " (" + label + ")"); };
  const auto table = compare_joint_vs_separate(loaded.data, ctx.rc.arch, effective_train_config(ctx.rc),
                                               &run.result.report, {}, progress);
  std::cout << comparison_text(table);
  const auto& j = table.rows[0];
  return {table.ok(), "joint " + num(j.acc_identity) + "/" + num(j.acc_position) + " vs identity-only " +
                          num(table.rows[1].acc_identity) + ", position-only " + num(table.rows[2].acc_position) +
                          " (tolerance " + num(table.tolerance, 2) + ")"};
}

// Relative paths of all regular files under `root`.
std::set<std::string> files_under(const fs::path& root) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.insert(fs::relative(e.path(), root).string());
  return out;
}

Outcome criterion10(Context& ctx) {
  const auto& first = ctx.shipped_run();
  const auto second = ctx.run_pipeline(ctx.rc, "repeat");
  std::size_t compared = 0, nlsh_n = 0, nlnw_n = 0, json_n = 0;
  std::vector<std::string> differ;
  for (const auto& [a, b] : {std::pair{first.dataset, second.dataset}, std::pair{first.report, second.report}}) {
    const auto fa = files_under(a), fb = files_under(b);
    if (fa != fb) differ.push_back("file lists of " + a.filename().string());
    for (const auto& rel : fa) {
      if (!fb.count(rel)) continue;
      ++compared;
      const auto ext = fs::path(rel).extension();
      nlsh_n += ext == ".nlsh";
      nlnw_n += ext == ".nlnw";
      json_n += ext == ".json";
      if (nlsh::read_file(a / rel) != nlsh::read_file(b / rel)) differ.push_back(rel);
    }
  }
  const bool ok = differ.empty() && nlsh_n > 0 && nlnw_n > 0 && json_n > 0;
  std::string detail = std::to_string(compared) + " files compared (" + std::to_string(nlsh_n) + " NLSH, " +
                       std::to_string(nlnw_n) + " networks, " + std::to_string(json_n) + " JSON)";
  if (!differ.empty()) detail += ", differing: " + differ.front() + (differ.size() > 1 ? " and more" : "");
  else detail += ", all byte-identical";
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlosid acceptance checks"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "nlosid_acceptance").string();
  std::string config = NLOSID_DEFAULT_CONFIG;
  bool keep = false;
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--work", work, "scratch directory");
  app.add_option("--config", config, "shipped configuration")->check(CLI::ExistingFile);
  app.add_flag("--keep", keep, "keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.work = work;
  ctx.config = config;
  fs::create_directories(ctx.work);
  ctx.rc = load_run_config(config);

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"physical constants", criterion1},
      {"ToF oracle (noiseless peak bins)", criterion2},
      {"conservation (IRF, softmax)", criterion3},
      {"gradient correctness", criterion4},
      {"scaling law (1/16 on doubling)", criterion5},
      {"protocol fidelity", criterion6},
      {"end-to-end synthetic classification", criterion7},
      {"same-clothing degradation", criterion8},
      {"joint vs separate heads", criterion9},
      {"reproducibility", criterion10},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << " [" << num(seconds_since(t0), 1) << " s]" << std::endl;
  }
  if (!keep) fs::remove_all(ctx.work);
  return failed == 0 ? 0 : 1;
}
