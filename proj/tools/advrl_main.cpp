// advrl: train policies on the toy environments, attack them and plot the
// results. Run `advrl --help` for the subcommands.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "advrl/errors.hpp"
#include "advrl/experiment.hpp"
#include "advrl/numfmt.hpp"

namespace fs = std::filesystem;
using namespace advrl;

namespace {

int exit_code(const std::string& category) {
  if (category == "config") return 2;
  if (category == "schema") return 3;
  if (category == "checkpoint") return 4;
  if (category == "io") return 5;
  if (category == "training-diverged") return 6;
  if (category == "contract" || category == "dimension") return 7;
  return 1;
}

int fail(const std::string& category, const std::string& message) {
  std::string line = message;
  for (auto& c : line) {
    if (c == '\n') c = ' ';
  }
  std::fprintf(stderr, "error: %s: %s\n", category.c_str(), line.c_str());
  return exit_code(category);
}

struct Paths {
  std::string config;
  std::string out;
  std::string manifest;
};

ExperimentConfig load_config(const Paths& p) {
  ExperimentConfig c = p.config.empty() ? default_experiment() : load_experiment(p.config);
  if (!p.out.empty()) c.output_dir = p.out;
  return c;
}

fs::path manifest_path(const Paths& p, const ExperimentConfig& c) {
  return p.manifest.empty() ? fs::path(c.output_dir) / "manifest.json" : fs::path(p.manifest);
}

void print_summary(const RunManifest& m) {
  for (const auto& e : m.envs) {
    std::printf("%s: random baseline %s\n", e.env.c_str(), format_double(e.random_mean).c_str());
    for (const auto& p : e.policies) {
      std::printf("  %-8s tail-10 %-10s %s\n", p.id.c_str(), format_double(p.tail_mean).c_str(),
                  p.selected ? "selected" : "");
    }
    for (const auto& f : e.failures) std::printf("  %-8s failed (%s)\n", f.id.c_str(), f.category.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial attacks on toy reinforcement-learning policies"};
  app.require_subcommand(1);
  Paths paths;

  auto add_common = [&](CLI::App* sub, bool manifest) {
    sub->add_option("--config", paths.config, "Experiment config (JSON); defaults if omitted");
    sub->add_option("--out", paths.out, "Output directory (overrides output_dir)");
    if (manifest) sub->add_option("--manifest", paths.manifest, "Run manifest (default <out>/manifest.json)");
  };

  auto* train = app.add_subcommand("train", "Train all seeds and select the top policies");
  add_common(train, false);
  auto* attack = app.add_subcommand("attack", "White-box epsilon sweeps on the selected policies");
  add_common(attack, true);
  auto* transfer = app.add_subcommand("transfer", "Black-box transfer between selected policies");
  add_common(transfer, true);
  std::string mode_text = "both";
  transfer->add_option("--mode", mode_text, "policy, algorithm or both")
      ->check(CLI::IsMember({"policy", "algorithm", "both"}));
  auto* report = app.add_subcommand("report", "Render SVG figures from report CSVs");
  std::vector<std::string> csvs;
  std::string report_out = ".";
  report->add_option("csv", csvs, "Report CSV files")->required();
  report->add_option("--out", report_out, "Directory receiving figures/");
  auto* all = app.add_subcommand("all", "train, attack, transfer and report");
  add_common(all, false);
  auto* trace = app.add_subcommand("trace", "Write a per-step attack trace for one rollout");
  add_common(trace, true);
  std::string trace_env, trace_policy, trace_norm = "linf";
  double trace_eps = 0.0;
  std::uint64_t trace_seed = 0;
  trace->add_option("--env", trace_env, "Environment name")->required();
  trace->add_option("--policy", trace_policy, "Policy id from the manifest, e.g. dqn-s0")->required();
  trace->add_option("--norm", trace_norm, "linf, l2 or l1")->check(CLI::IsMember({"linf", "l2", "l1"}));
  trace->add_option("--epsilon", trace_eps, "Attack budget")->required();
  trace->add_option("--seed", trace_seed, "Rollout seed");
  auto* show = app.add_subcommand("config", "Print the effective config as JSON");
  add_common(show, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what());
  }

  try {
    if (report->parsed()) {
      std::vector<fs::path> files(csvs.begin(), csvs.end());
      for (const auto& f : cmd_report(files, report_out)) std::printf("%s\n", (fs::path(report_out) / f).c_str());
      return 0;
    }
    const ExperimentConfig config = load_config(paths);
    const fs::path out = config.output_dir;
    if (show->parsed()) {
      std::fputs(experiment_to_json(config).c_str(), stdout);
    } else if (train->parsed()) {
      print_summary(cmd_train(config, out));
    } else if (attack->parsed()) {
      cmd_attack(config, load_manifest(manifest_path(paths, config)), out);
    } else if (transfer->parsed()) {
      RunManifest m = load_manifest(manifest_path(paths, config));
      if (mode_text != "algorithm") m = cmd_transfer(config, m, TransferMode::policy, out);
      if (mode_text != "policy") m = cmd_transfer(config, m, TransferMode::algorithm, out);
    } else if (all->parsed()) {
      const RunManifest m = run_all(config, out);
      print_summary(m);
      for (const auto& n : m.notes) std::printf("note: %s\n", n.c_str());
    } else if (trace->parsed()) {
      const AttackSpec spec{*parse_norm(trace_norm), trace_eps};
      const auto rel = cmd_trace(config, load_manifest(manifest_path(paths, config)), trace_env, trace_policy,
                                 spec, trace_seed, out);
      std::printf("%s\n", (out / rel).c_str());
    }
  } catch (const Error& e) {
    return fail(e.category(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
