// Command-line entry point: simulate, build-dataset, train, infer, evaluate, reproduce.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "ncsr/common/error.hpp"
#include "ncsr/common/log.hpp"
#include "ncsr/common/raster_io.hpp"
#include "ncsr/pipeline/experiment.hpp"
#include "ncsr/pipeline/report.hpp"

namespace {

using ncsr::pipeline::ExperimentConfig;

enum Exit { kOk = 0, kConfigError = 1, kRuntimeError = 2, kAcceptanceFailure = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<long long> iterations;
  bool resume = false;
  bool noise_off = false;
  std::string arm;
};

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg = ncsr::pipeline::default_experiment();
  if (!c.config.empty()) {
    nlohmann::json j;
    try {
      j = ncsr::io::read_json(c.config);
    } catch (const nlohmann::json::exception& e) {
      throw ncsr::ValidationError("cannot parse " + c.config + ": " + e.what());
    }
    try {
      cfg = j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ncsr::ValidationError("bad config " + c.config + ": " + e.what());
    }
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.iterations) cfg.training.iterations = *c.iterations;
  return cfg;
}

std::filesystem::path output_root(const std::string& flag, const ExperimentConfig& cfg) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("NCSR_OUTPUT_ROOT"); env && *env) return env;
  return cfg.output_dir;
}

void print_report(const ncsr::pipeline::Report& r) {
  std::cout << ncsr::pipeline::summary_markdown(r) << '\n';
}

// Criterion lines for the end-to-end run; returns false if any evaluated check fails.
bool print_checklist(const ncsr::pipeline::Experiment& exp, const ncsr::pipeline::Report& r) {
  bool ok = true;
  const auto cal = ncsr::io::read_json(exp.dir() / "dataset" / "calibration.json");
  const double target = cal.at("target_std_hu").get<double>();
  if (target > 0) {
    for (const char* key : {"std_hr", "std_lr"}) {
      const double v = cal.at(key).get<double>();
      const bool pass = std::abs(v - target) <= 0.03 * target;
      ok &= pass;
      std::cout << (pass ? "[PASS] " : "[FAIL] ") << "noise matched " << key << " within 3% of target: " << v
                << " vs " << target << " HU\n";
    }
  }
  for (const auto& c : r.checks) {
    if (!c.evaluated) {
      std::cout << "[SKIP] " << c.name << " (" << c.detail << ")\n";
      continue;
    }
    ok &= c.pass;
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail << '\n';
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-matched diffusion super-resolution for CT: desk-scale workflow"};
  app.require_subcommand(1);
  std::string root_flag;
  app.add_option("--output-root", root_flag, "Output root (default: $NCSR_OUTPUT_ROOT, then the config's output_dir)");

  Common c;
  auto add_common = [&c](CLI::App* sub) {
    sub->add_option("-c,--config", c.config, "Experiment config (JSON); defaults apply to missing keys");
    sub->add_option("--seed", c.seed, "Override the global seed");
    sub->add_flag("--resume", c.resume, "Skip completed stages and continue interrupted training");
  };

  auto* simulate = app.add_subcommand("simulate", "Phantoms, sinograms and reconstructions");
  add_common(simulate);
  simulate->add_flag("--noise-off", c.noise_off, "Skip noise injection");
  auto* build = app.add_subcommand("build-dataset", "Real-like slices, noise calibration and training corpora");
  add_common(build);
  auto* train = app.add_subcommand("train", "Train the ablation arms");
  add_common(train);
  train->add_option("--arm", c.arm, "Train only this arm");
  train->add_option("--iterations", c.iterations, "Override training.iterations");
  auto* infer = app.add_subcommand("infer", "Super-resolve the held-out slices");
  add_common(infer);
  infer->add_option("--arm", c.arm, "Only this arm");
  infer->add_option("--iterations", c.iterations, "Must match the value used for training");
  auto* evaluate = app.add_subcommand("evaluate", "Metrics, summary table and figure panel");
  add_common(evaluate);
  evaluate->add_option("--iterations", c.iterations, "Must match the value used for training");
  auto* reproduce = app.add_subcommand("reproduce", "End-to-end run with the ordering checklist");
  add_common(reproduce);
  reproduce->add_option("--iterations", c.iterations, "Override training.iterations");
  auto* show = app.add_subcommand("print-config", "Print the resolved configuration");
  add_common(show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    const ExperimentConfig cfg = load_config(c);
    if (show->parsed()) {
      std::cout << nlohmann::json(ncsr::pipeline::resolve(cfg)).dump(2) << '\n';
      return kOk;
    }
    ncsr::pipeline::RunOptions opt;
    opt.output_root = output_root(root_flag, cfg);
    opt.resume = c.resume;
    opt.noise_off = c.noise_off;
    ncsr::pipeline::Experiment exp(cfg, opt);
    std::cout << "output: " << exp.dir().string() << '\n';
    const std::optional<std::string> arm = c.arm.empty() ? std::nullopt : std::optional<std::string>(c.arm);
    if (arm) exp.arm(*arm);

    if (simulate->parsed()) {
      std::cout << exp.simulate().dump(2) << '\n';
    } else if (build->parsed()) {
      std::cout << exp.build_dataset().dump(2) << '\n';
    } else if (train->parsed()) {
      exp.train(arm);
    } else if (infer->parsed()) {
      exp.infer(arm);
    } else if (evaluate->parsed()) {
      print_report(exp.evaluate());
    } else if (reproduce->parsed()) {
      const auto report = exp.reproduce();
      print_report(report);
      if (!print_checklist(exp, report)) return kAcceptanceFailure;
    }
    return kOk;
  } catch (const ncsr::ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
