#include "advrl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "advrl/errors.hpp"
#include "advrl/numfmt.hpp"
#include "advrl/report.hpp"

namespace advrl {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Defaults

EnvConfig default_env(const std::string& env_name) {
  EnvConfig env;
  env.name = env_name;
  if (env_name == "hazardgrid") {
    env.height = 8;
    env.width = 8;
    env.step_cap = 64;
  }
  return env;
}

TrainConfig default_training(const std::string& env_name, const std::string& algorithm) {
  TrainConfig c;
  c.algorithm = algorithm;
  if (algorithm == "dqn") {
    c.learning_rate = 0.3;
    c.train_every = 4;
    c.iterations = 60;
    c.steps_per_iteration = 1000;
    c.explore_decay_steps = 10000;
  } else {
    c.learning_rate = 0.2;
    c.iterations = 600;
    c.steps_per_iteration = 500;
    c.max_grad_norm = 1.0;
  }
  if (env_name == "hazardgrid") {
    c.iterations = algorithm == "dqn" ? 150 : 600;
    c.learning_rate = algorithm == "dqn" ? 0.1 : 0.05;
  }
  return c;
}

ExperimentConfig default_experiment() {
  ExperimentConfig config;
  for (const char* name : {"minipong", "hazardgrid"}) {
    EnvExperiment e{default_env(name), {}};
    for (const auto& algo : config.algorithms) e.training[algo] = default_training(name, algo);
    config.envs.push_back(std::move(e));
  }
  return config;
}

namespace {

// "env.height: ..." → "envs[0].height: ..."
std::string reprefix(const std::string& msg, const std::string& old_prefix, const std::string& new_prefix) {
  if (msg.rfind(old_prefix, 0) == 0) return new_prefix + msg.substr(old_prefix.size());
  return new_prefix + ": " + msg;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (envs.empty()) throw ConfigError("envs: at least one environment is required");
  if (algorithms.empty()) throw ConfigError("algorithms: at least one algorithm is required");
  std::set<std::string> seen_algos;
  for (const auto& a : algorithms) {
    if (a != "dqn" && a != "pg") throw ConfigError("algorithms: unknown algorithm '" + a + "' (expected dqn or pg)");
    if (!seen_algos.insert(a).second) throw ConfigError("algorithms: duplicate '" + a + "'");
  }
  if (seeds < 1) throw ConfigError("seeds: must be >= 1");
  if (top_cap < 1) throw ConfigError("top_cap: must be >= 1");
  if (rollouts < 1) throw ConfigError("rollouts: must be >= 1");
  if (random_baseline_rollouts < 1) throw ConfigError("random_baseline_rollouts: must be >= 1");
  if (epsilons.empty()) throw ConfigError("epsilons: must not be empty");
  if (epsilons.front() != 0.0) throw ConfigError("epsilons: must start with 0");
  for (std::size_t i = 1; i < epsilons.size(); ++i) {
    if (!(epsilons[i] > epsilons[i - 1])) throw ConfigError("epsilons: must be strictly ascending");
  }
  if (norms.empty()) throw ConfigError("norms: must not be empty");
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (std::count(norms.begin(), norms.end(), norms[i]) > 1) {
      throw ConfigError("norms: duplicate '" + to_string(norms[i]) + "'");
    }
  }
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  std::set<std::string> names;
  for (std::size_t i = 0; i < envs.size(); ++i) {
    const auto& e = envs[i];
    const std::string where = "envs[" + std::to_string(i) + "]";
    try {
      e.env.validate();
    } catch (const ConfigError& err) {
      throw ConfigError(reprefix(err.what(), "env", where));
    }
    if (!names.insert(e.env.name).second) throw ConfigError(where + ".name: duplicate environment '" + e.env.name + "'");
    for (const auto& a : algorithms) {
      auto it = e.training.find(a);
      if (it == e.training.end()) throw ConfigError(where + ".training." + a + ": missing");
      if (it->second.algorithm != a) throw ConfigError(where + ".training." + a + ": algorithm tag mismatch");
      try {
        it->second.validate();
      } catch (const ConfigError& err) {
        throw ConfigError(reprefix(err.what(), "training", where + ".training." + a));
      }
    }
    if (e.training.size() != algorithms.size()) {
      throw ConfigError(where + ".training: has settings for an algorithm not listed in algorithms");
    }
  }
}

// ---------------------------------------------------------------------------
// JSON reading

namespace {

// Strict view of one JSON object: every key must be consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
    requires std::is_unsigned_v<T> && (!std::is_same_v<T, bool>)
  void get(const char* key, T& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number_unsigned()) throw ConfigError(field(key) + ": expected a non-negative integer");
    out = v.get<T>();
  }

  void get(const char* key, double& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
    out = v.get<double>();
  }

  void get(const char* key, std::string& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
    out = v.get<std::string>();
  }

  void get(const char* key, bool& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(field(key) + ": expected true or false");
    out = v.get<bool>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(field(it.key().c_str()) + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

TrainConfig read_training(const json& j, const std::string& path, TrainConfig c) {
  Fields f(j, path);
  std::string algorithm = c.algorithm;
  f.get("algorithm", algorithm);
  if (algorithm != c.algorithm) throw ConfigError(f.field("algorithm") + ": must be '" + c.algorithm + "'");
  f.get("seed", c.seed);
  f.get("iterations", c.iterations);
  f.get("steps_per_iteration", c.steps_per_iteration);
  f.get("learning_rate", c.learning_rate);
  f.get("gamma", c.gamma);
  f.get("explore_start", c.explore_start);
  f.get("explore_end", c.explore_end);
  f.get("explore_decay_steps", c.explore_decay_steps);
  f.get("entropy_weight", c.entropy_weight);
  f.get("value_weight", c.value_weight);
  f.get("batch_size", c.batch_size);
  f.get("replay_capacity", c.replay_capacity);
  f.get("learning_starts", c.learning_starts);
  f.get("train_every", c.train_every);
  f.get("max_grad_norm", c.max_grad_norm);
  f.get("eval_rollouts", c.eval_rollouts);
  f.finish();
  return c;
}

EnvExperiment read_env(const json& j, const std::string& path, const std::vector<std::string>& algorithms) {
  Fields f(j, path);
  if (!f.has("name")) throw ConfigError(f.field("name") + ": required");
  std::string name;
  f.get("name", name);
  if (name != "minipong" && name != "hazardgrid") {
    throw ConfigError(f.field("name") + ": unknown environment '" + name + "' (expected minipong or hazardgrid)");
  }
  EnvExperiment e{default_env(name), {}};
  f.get("height", e.env.height);
  f.get("width", e.env.width);
  f.get("step_cap", e.env.step_cap);
  f.get("frame_skip", e.env.frame_skip);
  f.get("frame_stack", e.env.frame_stack);
  f.get("paddle_width", e.env.paddle_width);
  f.get("hazard_count", e.env.hazard_count);
  f.get("seed", e.env.seed);
  for (const auto& a : algorithms) e.training[a] = default_training(name, a);
  if (f.has("training")) {
    Fields t(f.raw("training"), f.field("training"));
    for (const auto& a : algorithms) {
      if (t.has(a.c_str())) e.training[a] = read_training(t.raw(a.c_str()), t.field(a.c_str()), e.training[a]);
    }
    t.finish();
  }
  f.finish();
  return e;
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

json parse_json_text(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t line = e.byte > 0 ? line_of(text, e.byte - 1) : 1;
    std::string msg = e.what();
    // Drop nlohmann's "[json.exception.parse_error.101] " prefix.
    if (auto pos = msg.find("] "); pos != std::string::npos) msg = msg.substr(pos + 2);
    throw ConfigError(std::string(what) + " line " + std::to_string(line) + ": " + msg);
  }
}

ExperimentConfig read_experiment(const json& j) {
  ExperimentConfig c;
  Fields f(j, "");
  if (f.has("algorithms")) {
    const json& a = f.raw("algorithms");
    if (!a.is_array()) throw ConfigError("algorithms: expected an array of strings");
    c.algorithms.clear();
    for (const auto& v : a) {
      if (!v.is_string()) throw ConfigError("algorithms: expected an array of strings");
      c.algorithms.push_back(v.get<std::string>());
    }
  }
  f.get("seeds", c.seeds);
  f.get("top_cap", c.top_cap);
  f.get("rollouts", c.rollouts);
  f.get("random_baseline_rollouts", c.random_baseline_rollouts);
  f.get("threads", c.threads);
  f.get("output_dir", c.output_dir);
  if (f.has("epsilons")) {
    const json& a = f.raw("epsilons");
    if (!a.is_array()) throw ConfigError("epsilons: expected an array of numbers");
    c.epsilons.clear();
    for (const auto& v : a) {
      if (!v.is_number()) throw ConfigError("epsilons: expected an array of numbers");
      c.epsilons.push_back(v.get<double>());
    }
  }
  if (f.has("norms")) {
    const json& a = f.raw("norms");
    if (!a.is_array()) throw ConfigError("norms: expected an array of strings");
    c.norms.clear();
    for (const auto& v : a) {
      auto n = v.is_string() ? parse_norm(v.get<std::string>()) : std::nullopt;
      if (!n) throw ConfigError("norms: expected entries linf, l2 or l1");
      c.norms.push_back(*n);
    }
  }
  // Algorithms first: env training blocks depend on them.
  for (const auto& a : c.algorithms) {
    if (a != "dqn" && a != "pg") throw ConfigError("algorithms: unknown algorithm '" + a + "' (expected dqn or pg)");
  }
  if (f.has("envs")) {
    const json& a = f.raw("envs");
    if (!a.is_array()) throw ConfigError("envs: expected an array of objects");
    for (std::size_t i = 0; i < a.size(); ++i) {
      c.envs.push_back(read_env(a[i], "envs[" + std::to_string(i) + "]", c.algorithms));
    }
  } else {
    for (const char* name : {"minipong", "hazardgrid"}) {
      EnvExperiment e{default_env(name), {}};
      for (const auto& algo : c.algorithms) e.training[algo] = default_training(name, algo);
      c.envs.push_back(std::move(e));
    }
  }
  f.finish();
  c.validate();
  return c;
}

ojson training_json(const TrainConfig& c) {
  ojson j;
  j["algorithm"] = c.algorithm;
  j["seed"] = c.seed;
  j["iterations"] = c.iterations;
  j["steps_per_iteration"] = c.steps_per_iteration;
  j["learning_rate"] = c.learning_rate;
  j["gamma"] = c.gamma;
  j["explore_start"] = c.explore_start;
  j["explore_end"] = c.explore_end;
  j["explore_decay_steps"] = c.explore_decay_steps;
  j["entropy_weight"] = c.entropy_weight;
  j["value_weight"] = c.value_weight;
  j["batch_size"] = c.batch_size;
  j["replay_capacity"] = c.replay_capacity;
  j["learning_starts"] = c.learning_starts;
  j["train_every"] = c.train_every;
  j["max_grad_norm"] = c.max_grad_norm;
  j["eval_rollouts"] = c.eval_rollouts;
  return j;
}

ojson experiment_json(const ExperimentConfig& c) {
  ojson j;
  j["output_dir"] = c.output_dir;
  j["algorithms"] = c.algorithms;
  j["seeds"] = c.seeds;
  j["top_cap"] = c.top_cap;
  j["epsilons"] = c.epsilons;
  ojson norms = ojson::array();
  for (Norm n : c.norms) norms.push_back(to_string(n));
  j["norms"] = norms;
  j["rollouts"] = c.rollouts;
  j["random_baseline_rollouts"] = c.random_baseline_rollouts;
  j["threads"] = c.threads;
  ojson envs = ojson::array();
  for (const auto& e : c.envs) {
    ojson ej;
    ej["name"] = e.env.name;
    ej["height"] = e.env.height;
    ej["width"] = e.env.width;
    ej["step_cap"] = e.env.step_cap;
    ej["frame_skip"] = e.env.frame_skip;
    ej["frame_stack"] = e.env.frame_stack;
    ej["paddle_width"] = e.env.paddle_width;
    ej["hazard_count"] = e.env.hazard_count;
    ej["seed"] = e.env.seed;
    ojson t;
    for (const auto& a : c.algorithms) t[a] = training_json(e.training.at(a));
    ej["training"] = t;
    envs.push_back(ej);
  }
  j["envs"] = envs;
  return j;
}

}  // namespace

ExperimentConfig parse_experiment(const std::string& json_text) {
  return read_experiment(parse_json_text(json_text, "config"));
}

ExperimentConfig load_experiment(const fs::path& path) { return parse_experiment(read_text_file(path)); }

std::string experiment_to_json(const ExperimentConfig& config) { return experiment_json(config).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Files

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Manifest

const EnvRecord& RunManifest::env(const std::string& name) const {
  for (const auto& e : envs) {
    if (e.env == name) return e;
  }
  throw ContractError("manifest has no environment '" + name + "'");
}

std::string manifest_to_json(const RunManifest& m) {
  ojson j;
  j["tool_version"] = m.tool_version;
  j["config"] = experiment_json(m.config);
  ojson envs = ojson::array();
  for (const auto& e : m.envs) {
    ojson ej;
    ej["env"] = e.env;
    ej["random_mean"] = e.random_mean;
    ej["random_std"] = e.random_std;
    ojson ps = ojson::array();
    for (const auto& p : e.policies) {
      ps.push_back({{"id", p.id},
                    {"algorithm", p.algorithm},
                    {"seed", p.seed},
                    {"checkpoint", p.checkpoint},
                    {"curve", p.curve},
                    {"tail_mean", p.tail_mean},
                    {"selected", p.selected}});
    }
    ej["policies"] = ps;
    ojson fs_ = ojson::array();
    for (const auto& f : e.failures) fs_.push_back({{"id", f.id}, {"category", f.category}, {"message", f.message}});
    ej["failures"] = fs_;
    envs.push_back(ej);
  }
  j["envs"] = envs;
  j["reports"] = m.reports;
  j["figures"] = m.figures;
  j["timings"] = m.timings;
  j["notes"] = m.notes;
  return j.dump(2) + "\n";
}

RunManifest parse_manifest(const std::string& json_text) {
  const json j = parse_json_text(json_text, "manifest");
  try {
    RunManifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config = read_experiment(j.at("config"));
    for (const auto& ej : j.at("envs")) {
      EnvRecord e;
      e.env = ej.at("env").get<std::string>();
      e.random_mean = ej.at("random_mean").get<double>();
      e.random_std = ej.at("random_std").get<double>();
      for (const auto& pj : ej.at("policies")) {
        e.policies.push_back({pj.at("id").get<std::string>(), pj.at("algorithm").get<std::string>(),
                              pj.at("seed").get<std::uint64_t>(), pj.at("checkpoint").get<std::string>(),
                              pj.at("curve").get<std::string>(), pj.at("tail_mean").get<double>(),
                              pj.at("selected").get<bool>()});
      }
      for (const auto& fj : ej.at("failures")) {
        e.failures.push_back({fj.at("id").get<std::string>(), fj.at("category").get<std::string>(),
                              fj.at("message").get<std::string>()});
      }
      m.envs.push_back(std::move(e));
    }
    m.reports = j.at("reports").get<std::vector<std::string>>();
    m.figures = j.at("figures").get<std::vector<std::string>>();
    m.timings = j.at("timings").get<std::map<std::string, double>>();
    m.notes = j.at("notes").get<std::vector<std::string>>();
    return m;
  } catch (const json::exception& e) {
    std::string msg = e.what();
    if (auto pos = msg.find("] "); pos != std::string::npos) msg = msg.substr(pos + 2);
    throw ConfigError("manifest: " + msg);
  }
}

RunManifest load_manifest(const fs::path& path) { return parse_manifest(read_text_file(path)); }

void write_manifest(const RunManifest& m, const fs::path& out_dir) {
  auto require = [&](const std::string& rel) {
    if (!fs::exists(out_dir / rel)) throw IoError("manifest references missing file " + (out_dir / rel).string());
  };
  for (const auto& e : m.envs) {
    for (const auto& p : e.policies) {
      require(p.checkpoint);
      require(p.curve);
    }
  }
  for (const auto& r : m.reports) require(r);
  for (const auto& f : m.figures) require(f);
  write_text_file(out_dir / "manifest.json", manifest_to_json(m));
}

PolicyPool load_pool(const RunManifest& manifest, const std::string& env, const fs::path& out_dir) {
  PolicyPool pool;
  for (const auto& p : manifest.env(env).policies) {
    if (!p.selected) continue;
    const fs::path path = out_dir / p.checkpoint;
    if (!fs::exists(path)) throw IoError("missing checkpoint " + path.string());
    pool.push_back({p.id, p.algorithm, load_checkpoint(path)});
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string policy_id(const std::string& algorithm, std::uint64_t seed) {
  return algorithm + "-s" + std::to_string(seed);
}

std::string curve_csv(const TrainingCurve& curve) {
  std::string out = "iteration,mean_return\n";
  for (std::size_t i = 0; i < curve.mean_return.size(); ++i) {
    out += std::to_string(i) + "," + format_double(curve.mean_return[i]) + "\n";
  }
  return out;
}

void add_unique(std::vector<std::string>& list, const std::string& item) {
  if (std::find(list.begin(), list.end(), item) == list.end()) list.push_back(item);
}

}  // namespace

RunManifest cmd_train(const ExperimentConfig& config, const fs::path& out_dir) {
  return cmd_train(config, out_dir, [](const EnvFactory& f, std::size_t k, const TrainConfig& c) { return train(f, k, c); });
}

RunManifest cmd_train(const ExperimentConfig& config, const fs::path& out_dir, const Trainer& trainer) {
  config.validate();
  const auto t0 = Clock::now();
  RunManifest manifest;
  manifest.config = config;

  struct Job {
    std::size_t env;
    std::string algorithm;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < config.envs.size(); ++e) {
    for (const auto& a : config.algorithms) {
      const std::uint64_t base = config.envs[e].training.at(a).seed;
      for (std::size_t s = 0; s < config.seeds; ++s) jobs.push_back({e, a, base + s});
    }
  }

  struct Outcome {
    std::optional<TrainResult> result;
    FailureRecord failure;
  };
  std::vector<Outcome> outcomes(jobs.size());
  parallel_for(jobs.size(), config.threads, [&](std::size_t k) {
    const Job& job = jobs[k];
    const auto& ex = config.envs[job.env];
    TrainConfig tc = ex.training.at(job.algorithm);
    tc.seed = job.seed;
    try {
      outcomes[k].result = trainer(env_factory(ex.env), ex.env.frame_stack, tc);
    } catch (const TrainingDivergedError& err) {
      outcomes[k].failure = {policy_id(job.algorithm, job.seed), err.category(), err.what()};
    }
  });

  for (std::size_t e = 0; e < config.envs.size(); ++e) {
    const auto& ex = config.envs[e];
    EnvRecord record;
    record.env = ex.env.name;

    std::vector<double> random_returns;
    for (std::size_t i = 0; i < config.random_baseline_rollouts; ++i) {
      random_returns.push_back(random_rollout(ex.env, ex.env.seed + i).total_return);
    }
    const Summary rs = summarize(random_returns);
    record.random_mean = rs.mean;
    record.random_std = rs.std;

    for (const auto& a : config.algorithms) {
      std::vector<std::size_t> done;  // job indices that trained successfully
      for (std::size_t k = 0; k < jobs.size(); ++k) {
        if (jobs[k].env != e || jobs[k].algorithm != a) continue;
        if (!outcomes[k].result) {
          record.failures.push_back(outcomes[k].failure);
          continue;
        }
        done.push_back(k);
      }
      std::vector<double> scores;
      for (auto k : done) scores.push_back(outcomes[k].result->curve.tail_mean(10));
      std::vector<std::size_t> top;
      if (!done.empty()) top = select_top_scores(scores, config.top_cap);
      for (std::size_t i = 0; i < done.size(); ++i) {
        const std::size_t k = done[i];
        const auto& res = *outcomes[k].result;
        const std::string id = policy_id(a, jobs[k].seed);
        PolicyRecord p;
        p.id = id;
        p.algorithm = a;
        p.seed = jobs[k].seed;
        p.checkpoint = "checkpoints/" + ex.env.name + "/" + id + ".ckpt";
        p.curve = "curves/" + ex.env.name + "/" + id + ".csv";
        p.tail_mean = res.curve.tail_mean(10);
        p.selected = std::find(top.begin(), top.end(), i) != top.end();
        write_text_file(out_dir / p.checkpoint, serialize_checkpoint(res.policy));
        write_text_file(out_dir / p.curve, curve_csv(res.curve));
        record.policies.push_back(std::move(p));
      }
    }
    manifest.envs.push_back(std::move(record));
  }
  manifest.timings["train"] = seconds_since(t0);
  write_text_file(out_dir / "config.json", experiment_to_json(config));
  write_manifest(manifest, out_dir);
  return manifest;
}

RunManifest cmd_attack(const ExperimentConfig& config, RunManifest manifest, const fs::path& out_dir) {
  config.validate();
  const auto t0 = Clock::now();
  for (const auto& ex : config.envs) {
    const PolicyPool pool = load_pool(manifest, ex.env.name, out_dir);
    if (pool.empty()) throw ContractError("no selected policies for environment " + ex.env.name);
    const EvalReport report =
        whitebox_sweep(pool, config.epsilons, config.norms, ex.env, {config.rollouts, config.threads});
    const std::string rel = "reports/" + ex.env.name + "_whitebox.csv";
    write_text_file(out_dir / rel, report_to_csv(report));
    add_unique(manifest.reports, rel);
  }
  manifest.timings["attack"] = seconds_since(t0);
  write_manifest(manifest, out_dir);
  return manifest;
}

RunManifest cmd_transfer(const ExperimentConfig& config, RunManifest manifest, TransferMode mode,
                         const fs::path& out_dir) {
  config.validate();
  if (mode == TransferMode::none) throw ContractError("transfer needs mode policy or algorithm");
  const auto t0 = Clock::now();
  for (const auto& ex : config.envs) {
    const PolicyPool pool = load_pool(manifest, ex.env.name, out_dir);
    transfer_pairs(pool, mode);  // fail before any work if the pool is too small
    EvalReport all;
    for (Norm n : config.norms) {
      for (double eps : config.epsilons) {
        auto part = transfer_matrix(pool, mode, {n, eps}, ex.env, {config.rollouts, config.threads});
        all.rows.insert(all.rows.end(), part.rows.begin(), part.rows.end());
      }
    }
    const std::string rel = "reports/" + ex.env.name + "_transfer_" + to_string(mode) + ".csv";
    write_text_file(out_dir / rel, report_to_csv(all));
    add_unique(manifest.reports, rel);
  }
  manifest.timings["transfer_" + to_string(mode)] = seconds_since(t0);
  write_manifest(manifest, out_dir);
  return manifest;
}

std::vector<std::string> cmd_report(const std::vector<fs::path>& csv_paths, const fs::path& out_dir) {
  EvalReport merged;
  for (const auto& p : csv_paths) {
    EvalReport r;
    try {
      r = parse_report_csv(read_text_file(p));
    } catch (const SchemaError& e) {
      throw SchemaError(p.string() + ": " + e.what());
    }
    merged.rows.insert(merged.rows.end(), r.rows.begin(), r.rows.end());
  }
  std::vector<std::string> written;
  for (const auto& fig : build_figures(merged)) {
    const std::string rel = "figures/" + fig.filename;
    write_text_file(out_dir / rel, render_svg(fig.chart));
    written.push_back(rel);
  }
  std::string notes;
  for (const auto& f : report_flags(merged)) notes += f + "\n";
  write_text_file(out_dir / "figures/flags.txt", notes);
  written.push_back("figures/flags.txt");
  return written;
}

RunManifest run_all(const ExperimentConfig& config, const fs::path& out_dir) {
  RunManifest m = cmd_train(config, out_dir);
  m = cmd_attack(config, std::move(m), out_dir);
  for (TransferMode mode : {TransferMode::policy, TransferMode::algorithm}) {
    try {
      m = cmd_transfer(config, m, mode, out_dir);
    } catch (const ContractError& e) {
      // The pool cannot form this kind of pair; the other stages still run.
      m.notes.push_back("transfer " + to_string(mode) + " skipped: " + e.what());
    }
  }
  const auto t0 = Clock::now();
  std::vector<fs::path> csvs;
  for (const auto& r : m.reports) csvs.push_back(out_dir / r);
  for (const auto& f : cmd_report(csvs, out_dir)) add_unique(m.figures, f);
  m.timings["report"] = seconds_since(t0);
  write_manifest(m, out_dir);
  return m;
}

std::string cmd_trace(const ExperimentConfig& config, const RunManifest& manifest, const std::string& env,
                      const std::string& policy_id_, const AttackSpec& attack, std::uint64_t seed,
                      const fs::path& out_dir) {
  const EnvExperiment* ex = nullptr;
  for (const auto& e : config.envs) {
    if (e.env.name == env) ex = &e;
  }
  if (!ex) throw ContractError("config has no environment '" + env + "'");
  PolicyPool pool;
  for (const auto& p : manifest.env(env).policies) {
    if (p.id == policy_id_) pool.push_back({p.id, p.algorithm, load_checkpoint(out_dir / p.checkpoint)});
  }
  if (pool.empty()) throw ContractError("manifest has no policy '" + policy_id_ + "' for " + env);
  std::vector<AttackEvent> events;
  const auto result = rollout({ex->env, policy_id_, attack, "", seed}, pool, &events);
  std::string csv = "step,loss,eta_norm,degenerate\n";
  for (const auto& ev : events) {
    csv += std::to_string(ev.step) + "," + format_double(ev.loss) + "," + format_double(ev.eta_norm) + "," +
           (ev.degenerate ? "1" : "0") + "\n";
  }
  csv += "# return " + format_double(result.total_return) + ", length " + std::to_string(result.length) + "\n";
  const std::string rel = "traces/" + env + "_" + policy_id_ + "_" + to_string(attack.norm) + "_" +
                          format_double(attack.epsilon) + "_seed" + std::to_string(seed) + ".csv";
  write_text_file(out_dir / rel, csv);
  return rel;
}

}  // namespace advrl
