#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "advrl/attacks.hpp"
#include "advrl/envs.hpp"
#include "advrl/evaluation.hpp"
#include "advrl/training.hpp"

namespace advrl {

inline constexpr const char* kToolVersion = "advrl 1.0.0";

/// One environment of an experiment together with the trainer settings used
/// on it, keyed by algorithm (dqn, pg).
struct EnvExperiment {
  EnvConfig env;
  std::map<std::string, TrainConfig> training;

  friend bool operator==(const EnvExperiment&, const EnvExperiment&) = default;
};

struct ExperimentConfig {
  std::vector<EnvExperiment> envs;
  std::vector<std::string> algorithms{"dqn", "pg"};
  std::size_t seeds = 5;  // per algorithm; training seeds 0 .. seeds − 1
  std::size_t top_cap = 3;
  std::vector<double> epsilons{0.0, 0.0005, 0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.064};
  std::vector<Norm> norms{Norm::linf, Norm::l2, Norm::l1};
  std::size_t rollouts = 10;
  std::size_t random_baseline_rollouts = 100;
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::string output_dir = "advrl-out";

  /// Throws ConfigError naming the offending field.
  void validate() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Trainer defaults tuned for each toy environment.
TrainConfig default_training(const std::string& env_name, const std::string& algorithm);
/// Environment defaults (MiniPong 16×16, HazardGrid 8×8 with a 64-step cap).
EnvConfig default_env(const std::string& env_name);
/// Both environments, both algorithms, default settings.
ExperimentConfig default_experiment();

/// Strict JSON reader: unknown keys, wrong types and invalid values raise
/// ConfigError with the field path; syntax errors report the line.
ExperimentConfig parse_experiment(const std::string& json_text);
ExperimentConfig load_experiment(const std::filesystem::path& path);
/// Complete JSON document (every field written) that parses back equal.
std::string experiment_to_json(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Manifest

struct PolicyRecord {
  std::string id;
  std::string algorithm;
  std::uint64_t seed = 0;
  std::string checkpoint;  // relative to the output directory
  std::string curve;
  double tail_mean = 0.0;
  bool selected = false;

  friend bool operator==(const PolicyRecord&, const PolicyRecord&) = default;
};

struct FailureRecord {
  std::string id;
  std::string category;
  std::string message;

  friend bool operator==(const FailureRecord&, const FailureRecord&) = default;
};

struct EnvRecord {
  std::string env;
  double random_mean = 0.0;
  double random_std = 0.0;
  std::vector<PolicyRecord> policies;
  std::vector<FailureRecord> failures;

  friend bool operator==(const EnvRecord&, const EnvRecord&) = default;
};

struct RunManifest {
  std::string tool_version = kToolVersion;
  ExperimentConfig config;
  std::vector<EnvRecord> envs;
  std::vector<std::string> reports;  // CSV paths, relative to the output directory
  std::vector<std::string> figures;
  std::map<std::string, double> timings;  // wall-clock seconds per stage
  std::vector<std::string> notes;         // skipped stages and similar

  const EnvRecord& env(const std::string& name) const;
};

std::string manifest_to_json(const RunManifest& manifest);
RunManifest parse_manifest(const std::string& json_text);
RunManifest load_manifest(const std::filesystem::path& path);
/// Writes `manifest.json` into `out_dir` after checking that every file it
/// references exists there. Throws IoError otherwise.
void write_manifest(const RunManifest& manifest, const std::filesystem::path& out_dir);

/// Selected policies of one environment, loaded from their checkpoints.
PolicyPool load_pool(const RunManifest& manifest, const std::string& env, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Commands. Each writes only below `out_dir` and returns the updated
// manifest, which it also writes.

using Trainer = std::function<TrainResult(const EnvFactory&, std::size_t frame_stack, const TrainConfig&)>;

/// Trains every (env, algorithm, seed); a seed whose trainer throws
/// TrainingDivergedError is recorded as a failure and the run continues.
RunManifest cmd_train(const ExperimentConfig& config, const std::filesystem::path& out_dir);
RunManifest cmd_train(const ExperimentConfig& config, const std::filesystem::path& out_dir, const Trainer& trainer);
RunManifest cmd_attack(const ExperimentConfig& config, RunManifest manifest, const std::filesystem::path& out_dir);
/// Runs transfer_matrix for every norm and ε of the config; writes one CSV
/// per (env, mode).
RunManifest cmd_transfer(const ExperimentConfig& config, RunManifest manifest, TransferMode mode,
                         const std::filesystem::path& out_dir);
/// Emits the SVG figures for the given CSVs into `out_dir`; returns the
/// written paths (relative to `out_dir`).
std::vector<std::string> cmd_report(const std::vector<std::filesystem::path>& csv_paths,
                                    const std::filesystem::path& out_dir);
/// train → attack → transfer (policy, algorithm) → report.
RunManifest run_all(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// One traced rollout; writes a CSV with one line per step and returns its
/// path relative to `out_dir`.
std::string cmd_trace(const ExperimentConfig& config, const RunManifest& manifest, const std::string& env,
                      const std::string& policy_id, const AttackSpec& attack, std::uint64_t seed,
                      const std::filesystem::path& out_dir);

std::string read_text_file(const std::filesystem::path& path);
/// Creates parent directories as needed. Throws IoError on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace advrl
