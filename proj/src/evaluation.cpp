#include "advrl/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

#include "advrl/errors.hpp"
#include "advrl/numfmt.hpp"

namespace advrl {

const PoolPolicy& find_policy(const PolicyPool& pool, const std::string& id) {
  for (const auto& p : pool) {
    if (p.id == id) return p;
  }
  throw ContractError("no policy with id '" + id + "' in the pool");
}

namespace {

// Stream for the target's own action sampling, independent of the attack.
constexpr std::uint64_t kActionSalt = 0xac7;

void check_compatible(const PolicyNetwork& net, const std::string& id, const Shape& obs_shape,
                      std::size_t actions) {
  if (net.spec().input_shape != obs_shape) {
    throw ContractError("policy '" + id + "' expects input " + shape_string(net.spec().input_shape) +
                        " but the environment produces " + shape_string(obs_shape));
  }
  if (net.spec().action_count != actions) {
    throw ContractError("policy '" + id + "' has " + std::to_string(net.spec().action_count) +
                        " actions, the environment has " + std::to_string(actions));
  }
}

}  // namespace

RolloutResult rollout(const RolloutSpec& spec, const PolicyPool& pool, std::vector<AttackEvent>* trace) {
  const PoolPolicy& target = find_policy(pool, spec.target_id);
  const PoolPolicy& source = spec.source_id.empty() ? target : find_policy(pool, spec.source_id);
  if (spec.attack) spec.attack->validate();

  auto env = make_env(spec.env);
  const Shape obs_shape{spec.env.frame_stack, env->height(), env->width()};
  check_compatible(target.net, target.id, obs_shape, env->action_count());
  check_compatible(source.net, source.id, obs_shape, env->action_count());

  Rng act_rng(mix_seed(spec.seed, kActionSalt));
  FrameStack stack(spec.env.frame_stack);
  stack.reset(env->reset(spec.seed));
  RolloutResult result;
  bool done = false;
  while (!done) {
    Observation obs = stack.observation();
    if (spec.attack) {
      AttackEvent event{result.length, 0.0, 0.0, false};
      try {
        AttackGradient used;
        Observation adv = craft(source.net, obs, *spec.attack, used);
        if (trace) {
          Tensor diff = adv.frames;
          for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= obs.frames[i];
          event.loss = used.loss;
          event.eta_norm = norm_of(diff, spec.attack->norm);
        }
        obs = std::move(adv);
      } catch (const DegenerateLossError&) {
        event.degenerate = true;
      } catch (const DegenerateGradientError&) {
        event.degenerate = true;
      }
      if (event.degenerate) ++result.degenerate_steps;
      if (trace) trace->push_back(event);
    }
    const std::size_t action = target.net.kind() == PolicyKind::q_value ? act_greedy(target.net, obs)
                                                                        : act_stochastic(target.net, obs, act_rng);
    auto step = env->step(action);
    result.total_return += step.reward;
    ++result.length;
    done = step.done;
    stack.push(step.frame);
  }
  return result;
}

RolloutResult random_rollout(const EnvConfig& env_config, std::uint64_t seed) {
  auto env = make_env(env_config);
  Rng rng(mix_seed(seed, kActionSalt));
  env->reset(seed);
  RolloutResult result;
  bool done = false;
  while (!done) {
    auto step = env->step(uniform_index(rng, env->action_count()));
    result.total_return += step.reward;
    ++result.length;
    done = step.done;
  }
  return result;
}

std::string to_string(TransferMode mode) {
  switch (mode) {
    case TransferMode::none: return "none";
    case TransferMode::policy: return "policy";
    case TransferMode::algorithm: return "algorithm";
  }
  return "none";
}

std::optional<TransferMode> parse_transfer_mode(std::string_view text) {
  if (text == "none") return TransferMode::none;
  if (text == "policy") return TransferMode::policy;
  if (text == "algorithm") return TransferMode::algorithm;
  return std::nullopt;
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("summary of an empty sample");
  double total = 0.0;
  for (double v : values) total += v;
  const double n = static_cast<double>(values.size());
  const double mean = total / n;
  if (values.size() == 1) return {mean, 0.0};
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / (n - 1.0))};
}

ReportRow pool_rows(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ContractError("cannot pool zero rows");
  ReportRow out = rows.front();
  std::size_t n = 0;
  double total = 0.0;
  std::size_t degenerate = 0;
  for (const auto& r : rows) {
    n += r.n_rollouts;
    total += r.mean_return * static_cast<double>(r.n_rollouts);
    degenerate += r.degenerate_steps;
  }
  const double mean = total / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& r : rows) {
    const double k = static_cast<double>(r.n_rollouts);
    ss += (k - 1.0) * r.std_return * r.std_return + k * (r.mean_return - mean) * (r.mean_return - mean);
  }
  out.mean_return = mean;
  out.std_return = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  out.n_rollouts = n;
  out.degenerate_steps = degenerate;
  return out;
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& task) {
  if (count == 0) return;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  std::vector<std::exception_ptr> errors(count);
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    auto worker = [&] {
      for (std::size_t i = next++; i < count && !failed; i = next++) {
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
          failed = true;
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace {

struct Cell {
  std::string target_id;
  std::string source_id;
  std::optional<AttackSpec> attack;
  ReportRow key;
};

// Runs every cell's rollouts as independent tasks and assembles rows in
// cell order.
EvalReport run_cells(const std::vector<Cell>& cells, const PolicyPool& pool, const EnvConfig& env,
                     const EvalOptions& options) {
  if (options.rollouts < 1) throw ContractError("rollouts per cell must be >= 1");
  const std::size_t n = options.rollouts;
  std::vector<RolloutResult> results(cells.size() * n);
  parallel_for(results.size(), options.threads, [&](std::size_t k) {
    const Cell& cell = cells[k / n];
    RolloutSpec spec{env, cell.target_id, cell.attack, cell.source_id, env.seed + k % n};
    results[k] = rollout(spec, pool);
  });
  EvalReport report;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> returns;
    std::size_t degenerate = 0;
    for (std::size_t r = 0; r < n; ++r) {
      returns.push_back(results[c * n + r].total_return);
      degenerate += results[c * n + r].degenerate_steps;
    }
    const Summary s = summarize(returns);
    ReportRow row = cells[c].key;
    row.mean_return = s.mean;
    row.std_return = s.std;
    row.n_rollouts = n;
    row.degenerate_steps = degenerate;
    report.rows.push_back(std::move(row));
  }
  return report;
}

ReportRow row_key(const EnvConfig& env, const PoolPolicy& target, TransferMode mode, const std::string& source,
                  const AttackSpec& attack) {
  ReportRow key;
  key.env = env.name;
  key.algorithm = target.algorithm;
  key.target_id = target.id;
  key.transfer_mode = mode;
  key.source_id = source;
  key.norm = attack.norm;
  key.epsilon = attack.epsilon;
  return key;
}

}  // namespace

ReportRow evaluate(const PolicyPool& pool, const std::string& target_id, const EnvConfig& env,
                   const std::optional<AttackSpec>& attack, const std::string& source_id, std::size_t n) {
  if (n < 1) throw ContractError("evaluate needs n >= 1");
  const PoolPolicy& target = find_policy(pool, target_id);
  const std::string source = source_id.empty() ? target_id : source_id;
  Cell cell{target_id, source, attack, row_key(env, target, TransferMode::none, source, attack.value_or(AttackSpec{}))};
  if (source != target_id) {
    cell.key.transfer_mode =
        find_policy(pool, source).algorithm == target.algorithm ? TransferMode::policy : TransferMode::algorithm;
  }
  return run_cells({cell}, pool, env, {n, 1}).rows.front();
}

EvalReport whitebox_sweep(const PolicyPool& pool, const std::vector<double>& epsilons, const std::vector<Norm>& norms,
                          const EnvConfig& env, const EvalOptions& options) {
  if (epsilons.empty() || std::find(epsilons.begin(), epsilons.end(), 0.0) == epsilons.end()) {
    throw ContractError("white-box sweep needs an epsilon list containing 0");
  }
  std::vector<Cell> cells;
  for (const auto& target : pool) {
    for (Norm norm : norms) {
      for (double eps : epsilons) {
        const AttackSpec attack{norm, eps};
        cells.push_back({target.id, target.id, attack, row_key(env, target, TransferMode::none, target.id, attack)});
      }
    }
  }
  return run_cells(cells, pool, env, options);
}

std::vector<std::pair<std::size_t, std::size_t>> transfer_pairs(const PolicyPool& pool, TransferMode mode) {
  if (mode == TransferMode::none) throw ContractError("transfer needs mode policy or algorithm");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t t = 0; t < pool.size(); ++t) {
    for (std::size_t s = 0; s < pool.size(); ++s) {
      if (s == t) continue;
      const bool same = pool[s].algorithm == pool[t].algorithm;
      if ((mode == TransferMode::policy) == same) pairs.emplace_back(s, t);
    }
  }
  if (pairs.empty()) {
    throw ContractError(mode == TransferMode::policy
                            ? "transfer mode policy needs at least 2 policies sharing an algorithm"
                            : "transfer mode algorithm needs policies from at least 2 algorithms");
  }
  return pairs;
}

EvalReport transfer_matrix(const PolicyPool& pool, TransferMode mode, const AttackSpec& attack, const EnvConfig& env,
                           const EvalOptions& options) {
  attack.validate();
  std::vector<Cell> cells;
  for (auto [s, t] : transfer_pairs(pool, mode)) {
    cells.push_back({pool[t].id, pool[s].id, attack, row_key(env, pool[t], mode, pool[s].id, attack)});
  }
  return run_cells(cells, pool, env, options);
}

// ---------------------------------------------------------------------------
// CSV

std::string report_to_csv(const EvalReport& report) {
  std::string out(kReportCsvHeader);
  out += '\n';
  for (const auto& r : report.rows) {
    out += r.env + ',' + r.algorithm + ',' + r.target_id + ',' + to_string(r.transfer_mode) + ',' + r.source_id +
           ',' + to_string(r.norm) + ',' + format_double(r.epsilon) + ',' + format_double(r.mean_return) + ',' +
           format_double(r.std_return) + ',' + std::to_string(r.n_rollouts) + ',' +
           std::to_string(r.degenerate_steps) + '\n';
  }
  return out;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

const char* const kColumns[] = {"env",         "algorithm",  "target_id",  "transfer_mode",
                                "source_id",   "norm",       "epsilon",    "mean_return",
                                "std_return",  "n_rollouts", "degenerate_steps"};

std::size_t parse_count(const std::string& text, std::size_t line_no, const char* column) {
  if (text.empty() || !std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw SchemaError("line " + std::to_string(line_no) + ": column " + column + ": expected a non-negative integer, got '" +
                      text + "'");
  }
  return static_cast<std::size_t>(std::stoull(text));
}

double parse_number(const std::string& text, std::size_t line_no, const char* column) {
  auto v = parse_double(text);
  if (!v) {
    throw SchemaError("line " + std::to_string(line_no) + ": column " + column + ": expected a number, got '" + text +
                      "'");
  }
  return *v;
}

}  // namespace

EvalReport parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("header: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kReportCsvHeader) {
    const auto got = split_fields(line);
    for (std::size_t i = 0; i < std::size(kColumns); ++i) {
      if (i >= got.size() || got[i] != kColumns[i]) {
        throw SchemaError(std::string("header: expected column ") + kColumns[i] + " at position " +
                          std::to_string(i + 1));
      }
    }
    throw SchemaError("header: unexpected extra column '" + got[std::size(kColumns)] + "'");
  }
  EvalReport report;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != std::size(kColumns)) {
      throw SchemaError("line " + std::to_string(line_no) + ": expected " + std::to_string(std::size(kColumns)) +
                        " columns, got " + std::to_string(f.size()));
    }
    ReportRow r;
    for (std::size_t i : {0u, 1u, 2u, 4u}) {
      if (f[i].empty()) throw SchemaError("line " + std::to_string(line_no) + ": column " + kColumns[i] + ": empty");
    }
    r.env = f[0];
    r.algorithm = f[1];
    r.target_id = f[2];
    auto mode = parse_transfer_mode(f[3]);
    if (!mode) {
      throw SchemaError("line " + std::to_string(line_no) + ": column transfer_mode: expected none, policy or algorithm, got '" +
                        f[3] + "'");
    }
    r.transfer_mode = *mode;
    r.source_id = f[4];
    auto norm = parse_norm(f[5]);
    if (!norm) {
      throw SchemaError("line " + std::to_string(line_no) + ": column norm: expected linf, l2 or l1, got '" + f[5] + "'");
    }
    r.norm = *norm;
    r.epsilon = parse_number(f[6], line_no, "epsilon");
    r.mean_return = parse_number(f[7], line_no, "mean_return");
    r.std_return = parse_number(f[8], line_no, "std_return");
    r.n_rollouts = parse_count(f[9], line_no, "n_rollouts");
    r.degenerate_steps = parse_count(f[10], line_no, "degenerate_steps");
    if (r.n_rollouts < 1) throw SchemaError("line " + std::to_string(line_no) + ": column n_rollouts: must be >= 1");
    report.rows.push_back(std::move(r));
  }
  return report;
}

}  // namespace advrl
