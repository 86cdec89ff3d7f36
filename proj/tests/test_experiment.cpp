#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "advrl/errors.hpp"
#include "advrl/experiment.hpp"
#include "advrl/report.hpp"

using namespace advrl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "advrl_experiment_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// One short MiniPong, tiny trainers, two ε values.
ExperimentConfig tiny_config(std::vector<std::string> algos, std::size_t seeds) {
  ExperimentConfig c;
  c.algorithms = algos;
  c.seeds = seeds;
  c.epsilons = {0.0, 0.05};
  c.norms = {Norm::linf, Norm::l1};
  c.rollouts = 2;
  c.random_baseline_rollouts = 5;
  c.threads = 2;
  EnvExperiment e{default_env("minipong"), {}};
  e.env.step_cap = 40;
  for (const auto& a : algos) {
    TrainConfig t = default_training("minipong", a);
    t.iterations = 2;
    t.steps_per_iteration = 60;
    t.learning_starts = 32;
    t.eval_rollouts = 1;
    e.training[a] = t;
  }
  c.envs.push_back(e);
  return c;
}

// Skips real training: a freshly initialized network and a flat curve whose
// level depends on the seed.
TrainResult fake_train(const EnvFactory& make, std::size_t stack, const TrainConfig& c) {
  auto env = make();
  const bool q = c.algorithm == "dqn";
  const auto arch = ArchitectureSpec::desk({stack, env->height(), env->width()}, env->action_count(),
                                           q ? HeadKind::q : HeadKind::distribution, !q);
  TrainResult r{PolicyNetwork::initialize(arch, q ? PolicyKind::q_value : PolicyKind::stochastic,
                                          {c.algorithm, c.seed, 0.0}, c.seed + 1),
                {}};
  for (int i = 0; i < 12; ++i) {
    r.curve.mean_return.push_back(10.0 - static_cast<double>(c.seed));
    r.curve.seconds.push_back(0.0);
  }
  return r;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root).generic_string();
    if (rel == "manifest.json") continue;  // carries wall-clock timings
    files[rel] = read_text_file(entry.path());
  }
  return files;
}

void expect_config_error(const std::string& json, const std::string& needle) {
  try {
    parse_experiment(json);
    ADD_FAILURE() << "accepted: " << json;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(ExperimentConfig, DefaultsAreValidAndRoundTrip) {
  const auto c = default_experiment();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.seeds, 5u);
  EXPECT_EQ(c.top_cap, 3u);
  EXPECT_EQ(c.rollouts, 10u);
  ASSERT_EQ(c.envs.size(), 2u);
  EXPECT_EQ(c.envs[1].env.name, "hazardgrid");
  EXPECT_EQ(c.epsilons.front(), 0.0);
  EXPECT_EQ(parse_experiment(experiment_to_json(c)), c);
  const auto t = tiny_config({"pg"}, 2);
  EXPECT_EQ(parse_experiment(experiment_to_json(t)), t);
}

TEST(ExperimentConfig, PartialDocumentsFillDefaults) {
  const auto c = parse_experiment(R"({"seeds": 2, "rollouts": 4})");
  EXPECT_EQ(c.seeds, 2u);
  EXPECT_EQ(c.rollouts, 4u);
  EXPECT_EQ(c.envs, default_experiment().envs);
}

TEST(ExperimentConfig, ErrorsNameTheField) {
  expect_config_error(R"({"seeds": 2, "sedes": 3})", "sedes");
  expect_config_error(R"({"seeds": "five"})", "seeds");
  expect_config_error(R"({"seeds": -1})", "seeds");
  expect_config_error(R"({"seeds": 0})", "seeds");
  expect_config_error(R"({"epsilons": [0.1, 0.2]})", "epsilons");
  expect_config_error(R"({"norms": ["linf", "l3"]})", "norms");
  expect_config_error(R"({"algorithms": ["dqn", "a3c"]})", "algorithms");
  expect_config_error(R"({"envs": [{"name": "breakout"}]})", "envs[0]");
  expect_config_error(R"({"envs": [{"name": "minipong", "training": {"dqn": {"gamma": 2}}}]})",
                      "gamma");
  expect_config_error(R"({"envs": [{"name": "minipong", "colour": 1}]})", "colour");
}

TEST(ExperimentConfig, SyntaxErrorsReportTheLine) {
  expect_config_error("{\n  \"seeds\": 2,\n  \"rollouts\": ,\n}", "line 3");
}

TEST(ExperimentConfig, MissingFileIsIoError) {
  EXPECT_THROW(load_experiment(fresh_dir("missing") / "nope.json"), IoError);
}

TEST(Manifest, RoundTrip) {
  RunManifest m;
  m.config = tiny_config({"dqn"}, 1);
  m.envs.push_back({"minipong", -9.5, 2.25, {{"dqn-s0", "dqn", 0, "checkpoints/x.ckpt", "curves/x.csv", 1.5, true}},
                    {{"dqn-s1", "training-diverged", "loss became non-finite"}}});
  m.reports = {"reports/minipong_whitebox.csv"};
  m.figures = {"figures/a.svg"};
  m.timings = {{"train", 1.25}};
  m.notes = {"skipped"};
  const auto back = parse_manifest(manifest_to_json(m));
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.envs, m.envs);
  EXPECT_EQ(back.reports, m.reports);
  EXPECT_EQ(back.figures, m.figures);
  EXPECT_EQ(back.timings, m.timings);
  EXPECT_EQ(back.notes, m.notes);
  EXPECT_THROW(m.env("hazardgrid"), ContractError);
}

TEST(Manifest, WriteChecksReferencedFiles) {
  const auto dir = fresh_dir("manifest_refs");
  RunManifest m;
  m.config = tiny_config({"dqn"}, 1);
  m.reports = {"reports/missing.csv"};
  EXPECT_THROW(write_manifest(m, dir), IoError);
}

TEST(CmdTrain, OneSeedOneAlgorithm) {
  const auto dir = fresh_dir("train_one");
  const auto m = cmd_train(tiny_config({"dqn"}, 1), dir);
  ASSERT_EQ(m.envs.size(), 1u);
  const auto& rec = m.envs[0];
  ASSERT_EQ(rec.policies.size(), 1u);
  EXPECT_TRUE(rec.policies[0].selected);
  EXPECT_TRUE(fs::exists(dir / rec.policies[0].checkpoint));
  EXPECT_TRUE(fs::exists(dir / rec.policies[0].curve));
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  std::size_t ckpts = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) ckpts += e.path().extension() == ".ckpt";
  EXPECT_EQ(ckpts, 1u);
  const auto curve = read_text_file(dir / rec.policies[0].curve);
  EXPECT_EQ(curve.substr(0, curve.find('\n')), "iteration,mean_return");
  const auto pool = load_pool(load_manifest(dir / "manifest.json"), "minipong", dir);
  ASSERT_EQ(pool.size(), 1u);
  EXPECT_EQ(pool[0].net.kind(), PolicyKind::q_value);
}

TEST(CmdTrain, DivergedSeedsAreRecordedAndSkipped) {
  const auto dir = fresh_dir("train_diverge");
  const Trainer flaky = [](const EnvFactory& make, std::size_t stack, const TrainConfig& c) {
    if (c.seed == 1 || c.seed == 3) throw TrainingDivergedError("loss became non-finite");
    return fake_train(make, stack, c);
  };
  auto config = tiny_config({"dqn"}, 5);
  config.top_cap = 5;
  const auto m = cmd_train(config, dir, flaky);
  const auto& rec = m.env("minipong");
  EXPECT_EQ(rec.policies.size(), 3u);
  ASSERT_EQ(rec.failures.size(), 2u);
  EXPECT_EQ(rec.failures[0].id, "dqn-s1");
  EXPECT_EQ(rec.failures[0].category, "training-diverged");
  EXPECT_EQ(rec.failures[1].id, "dqn-s3");
  // Curves 10, 8, 6: 6 falls below 10 − 0.2·10.
  std::vector<std::string> selected;
  for (const auto& p : rec.policies) {
    if (p.selected) selected.push_back(p.id);
  }
  EXPECT_EQ(selected, (std::vector<std::string>{"dqn-s0", "dqn-s2"}));
}

TEST(CmdTransfer, InsufficientPoolIsContractError) {
  const auto dir = fresh_dir("transfer_small");
  const auto config = tiny_config({"dqn", "pg"}, 1);
  const auto m = cmd_train(config, dir, fake_train);
  EXPECT_THROW(cmd_transfer(config, m, TransferMode::policy, dir), ContractError);
  const auto after = cmd_transfer(config, m, TransferMode::algorithm, dir);
  const auto rows = parse_report_csv(read_text_file(dir / after.reports.back())).rows;
  // 2 ordered pairs × 2 norms × 2 ε.
  EXPECT_EQ(rows.size(), 8u);
}

TEST(Pipeline, RerunIsByteIdentical) {
  const auto config = tiny_config({"dqn", "pg"}, 2);
  const auto a = fresh_dir("rerun_a");
  const auto b = fresh_dir("rerun_b");
  const auto ma = run_all(config, a);
  run_all(config, b);
  const auto ta = read_tree(a), tb = read_tree(b);
  EXPECT_EQ(ta, tb);
  EXPECT_FALSE(ma.reports.empty());
  EXPECT_FALSE(ma.figures.empty());
  for (const auto& f : ma.figures) EXPECT_TRUE(ta.count(f)) << f;
  // whitebox, policy and algorithm transfer CSVs.
  EXPECT_EQ(ma.reports.size(), 3u);
}

TEST(Pipeline, WhiteboxRowsCoverTheGrid) {
  const auto config = tiny_config({"dqn"}, 2);
  const auto dir = fresh_dir("attack_grid");
  auto m = cmd_train(config, dir, fake_train);
  m = cmd_attack(config, m, dir);
  const auto rows = parse_report_csv(read_text_file(dir / m.reports.at(0))).rows;
  std::size_t selected = 0;
  for (const auto& p : m.env("minipong").policies) selected += p.selected;
  EXPECT_EQ(rows.size(), selected * config.norms.size() * config.epsilons.size());
  for (const auto& r : rows) EXPECT_EQ(r.n_rollouts, config.rollouts);
}

TEST(CmdTrace, OneLinePerStep) {
  const auto config = tiny_config({"pg"}, 1);
  const auto dir = fresh_dir("trace");
  const auto m = cmd_train(config, dir, fake_train);
  const auto rel = cmd_trace(config, m, "minipong", "pg-s0", {Norm::l2, 0.01}, 3, dir);
  const auto text = read_text_file(dir / rel);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,loss,eta_norm,degenerate");
  std::size_t steps = 0, length = 0;
  while (std::getline(in, line)) {
    if (line.rfind("# return", 0) == 0) {
      length = std::stoul(line.substr(line.find("length ") + 7));
    } else {
      ++steps;
    }
  }
  EXPECT_GT(steps, 0u);
  EXPECT_LE(steps, 40u);
  EXPECT_EQ(steps, length);
  EXPECT_THROW(cmd_trace(config, m, "minipong", "nobody", {Norm::l2, 0.01}, 3, dir), ContractError);
}

TEST(Report, SvgIsDeterministicWithOneSeriesPerNorm) {
  EvalReport rep;
  for (Norm n : {Norm::linf, Norm::l2, Norm::l1}) {
    for (double eps : {0.0, 0.01, 0.1}) {
      ReportRow r;
      r.env = "minipong";
      r.algorithm = "dqn";
      r.target_id = "dqn-s0";
      r.norm = n;
      r.epsilon = eps;
      r.source_id = "dqn-s0";
      // l1 is the mildest of the three here.
      r.mean_return = 5.0 - (n == Norm::l1 ? 10.0 : 50.0) * eps;
      r.std_return = 1.0;
      r.n_rollouts = 10;
      rep.rows.push_back(r);
    }
  }
  const auto figs = build_figures(rep);
  ASSERT_EQ(figs.size(), 1u);
  EXPECT_EQ(figs[0].filename, "minipong_dqn_whitebox.svg");
  EXPECT_EQ(figs[0].chart.series.size(), 3u);
  const auto svg = render_svg(figs[0].chart);
  EXPECT_EQ(svg, render_svg(build_figures(rep)[0].chart));
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(report_flags(rep).size(), 1u);
}

TEST(Report, SingleRowCsvRenders) {
  const auto dir = fresh_dir("single_row");
  ReportRow r;
  r.env = "hazardgrid";
  r.algorithm = "pg";
  r.target_id = "pg-s0";
  r.source_id = "pg-s0";
  r.n_rollouts = 1;
  write_text_file(dir / "one.csv", report_to_csv({{r}}));
  const auto written = cmd_report({dir / "one.csv"}, dir);
  ASSERT_FALSE(written.empty());
  for (const auto& f : written) EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_THROW(cmd_report({dir / "absent.csv"}, dir), IoError);
}
