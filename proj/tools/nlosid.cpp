#include <chrono>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nlosid/pipeline.hpp"

namespace {

using nlosid::ExitCode;

int code(ExitCode c) { return static_cast<int>(c); }

nlosid::RunConfig resolve(const std::string& config_path, std::optional<std::uint64_t> seed) {
  nlosid::RunConfig rc = config_path.empty() ? nlosid::RunConfig{} : nlosid::load_run_config(config_path);
  if (seed) rc.seed = *seed;
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlosid: NLOS person identification from simulated SPAD transients"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;

  auto* sim = app.add_subcommand("simulate", "simulate a dataset of NLSH frames");
  bool noiseless = false;
  sim->add_option("--config", config_path, "config file")->check(CLI::ExistingFile);
  sim->add_option("--seed", seed, "master seed (overrides run.seed)");
  sim->add_flag("--noiseless", noiseless, "write expected counts without shot noise or hot pixels");
  sim->add_option("--out", out_dir, "output dataset directory")->required();

  auto* te = app.add_subcommand("train-eval", "cross-validate the classifier on a dataset");
  std::string dataset_dir;
  std::optional<int> holdout;
  bool joint_vs_separate = false;
  te->add_option("dataset", dataset_dir, "dataset directory written by 'simulate'")->required();
  te->add_option("--config", config_path, "config file")->check(CLI::ExistingFile);
  te->add_option("--seed", seed, "master seed (overrides run.seed)");
  te->add_option("--holdout", holdout, "run only the fold holding out this illumination");
  te->add_flag("--joint-vs-separate", joint_vs_separate, "also train identity-only and position-only networks");
  te->add_option("--out", out_dir, "report directory")->required();

  auto* ins = app.add_subcommand("inspect", "print an NLSH file");
  std::string nlsh_file;
  std::optional<int> pixel;
  ins->add_option("file", nlsh_file, "NLSH file")->required();
  ins->add_option("--pixel", pixel, "pixel index for the histogram sparkline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(ExitCode::usage);
  }

  auto log = [](const std::string& msg) { std::cerr << "[nlosid] " << msg << std::endl; };
  try {
    if (*sim) {
      const auto rc = resolve(config_path, seed);
      const auto t0 = std::chrono::steady_clock::now();
      const auto m = nlosid::cmd_simulate(rc, out_dir, noiseless, log);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "wrote " << m.count(nlosid::nlsh::FrameRole::measurement) << " measurement frames and "
                << m.count(nlosid::nlsh::FrameRole::background) << " background frames to " << out_dir << " in "
                << nlosid::fmt(secs, 1) << " s\n";
      return code(ExitCode::ok);
    }
    if (*te) {
      const auto rc = resolve(config_path, seed);
      const auto res = nlosid::cmd_train_eval(dataset_dir, rc, out_dir, {holdout, joint_vs_separate}, log);
      const auto& rep = res.report;
      std::cout << "Averaged identity confusion matrix\n"
                << nlosid::confusion_text(rep.avg_identity, false) << "\nAveraged position confusion matrix\n"
                << nlosid::confusion_text(rep.avg_position, true) << "\nmean per-pixel accuracy: identity "
                << nlosid::fmt(rep.mean_acc_identity) << ", position " << nlosid::fmt(rep.mean_acc_position) << '\n';
      if (rep.comparison) std::cout << '\n' << nlosid::comparison_text(*rep.comparison);
      std::cout << "reports written to " << out_dir << '\n';
      for (const auto& f : res.failures) std::cerr << "FAILED: " << f << '\n';
      return code(res.exit_code());
    }
    if (*ins) {
      std::cout << nlosid::cmd_inspect(nlsh_file, pixel);
      return code(ExitCode::ok);
    }
  } catch (const nlosid::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return code(ExitCode::usage);
  } catch (const nlosid::ShapeError& e) {
    std::cerr << "architecture error: " << e.what() << '\n';
    return code(ExitCode::usage);
  } catch (const nlosid::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return code(ExitCode::data_integrity);
  } catch (const nlosid::DivergenceError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return code(ExitCode::acceptance_failure);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return code(ExitCode::data_integrity);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return code(ExitCode::usage);
  }
  return code(ExitCode::usage);
}
