#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "advrl/attacks.hpp"
#include "advrl/envs.hpp"
#include "advrl/policy.hpp"

namespace advrl {

/// A trained policy available to evaluations, addressed by `id`.
struct PoolPolicy {
  std::string id;
  std::string algorithm;  // dqn | pg
  PolicyNetwork net;
};

using PolicyPool = std::vector<PoolPolicy>;

const PoolPolicy& find_policy(const PolicyPool& pool, const std::string& id);

struct RolloutSpec {
  EnvConfig env;
  std::string target_id;
  std::optional<AttackSpec> attack;
  // Policy whose gradients craft the perturbation; empty means the target.
  std::string source_id;
  std::uint64_t seed = 0;
};

struct RolloutResult {
  double total_return = 0.0;
  std::size_t length = 0;
  std::size_t degenerate_steps = 0;
};

/// Per-step attack record for debugging traces.
struct AttackEvent {
  std::size_t step = 0;
  double loss = 0.0;
  double eta_norm = 0.0;  // in the attack's own norm, after clipping
  bool degenerate = false;
};

/// One episode. At each step the observation is optionally perturbed with
/// gradients of the source policy, then the target acts on it: greedy for
/// q-value policies, sampled for stochastic ones. Degenerate attack steps
/// run unattacked and are counted. Throws ContractError if a policy's input
/// shape or action count does not match the environment.
RolloutResult rollout(const RolloutSpec& spec, const PolicyPool& pool,
                      std::vector<AttackEvent>* trace = nullptr);

/// One episode with uniformly random actions.
RolloutResult random_rollout(const EnvConfig& env, std::uint64_t seed);

enum class TransferMode { none, policy, algorithm };

std::string to_string(TransferMode mode);
std::optional<TransferMode> parse_transfer_mode(std::string_view text);

struct ReportRow {
  std::string env;
  std::string algorithm;
  std::string target_id;
  TransferMode transfer_mode = TransferMode::none;
  std::string source_id;
  Norm norm = Norm::linf;
  double epsilon = 0.0;
  double mean_return = 0.0;
  double std_return = 0.0;  // sample standard deviation, 0 when n = 1
  std::size_t n_rollouts = 0;
  std::size_t degenerate_steps = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct EvalReport {
  std::vector<ReportRow> rows;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Mean and sample standard deviation.
struct Summary {
  double mean = 0.0;
  double std = 0.0;
};
Summary summarize(const std::vector<double>& values);

/// Pools rows over the same quantity into one: mean and sample std over the
/// union of their rollouts, counts summed. Key fields come from the first row.
ReportRow pool_rows(const std::vector<ReportRow>& rows);

/// Settings shared by every evaluation cell.
struct EvalOptions {
  std::size_t rollouts = 10;
  // Worker threads; 0 picks the hardware concurrency.
  std::size_t threads = 0;
};

/// n rollouts with seeds env.seed .. env.seed + n − 1.
ReportRow evaluate(const PolicyPool& pool, const std::string& target_id, const EnvConfig& env,
                   const std::optional<AttackSpec>& attack, const std::string& source_id,
                   std::size_t n = 10);

/// One row per (policy, norm, ε), in pool × norms × epsilons order, transfer
/// mode none. Throws ContractError if `epsilons` lacks 0.
EvalReport whitebox_sweep(const PolicyPool& pool, const std::vector<double>& epsilons,
                          const std::vector<Norm>& norms, const EnvConfig& env,
                          const EvalOptions& options = {});

/// Adversary → target ordered pairs: same algorithm and different id for
/// mode policy, different algorithm for mode algorithm. One row per pair,
/// targets in pool order, sources in pool order within each target.
/// Throws ContractError when the pool cannot form any pair for the mode.
EvalReport transfer_matrix(const PolicyPool& pool, TransferMode mode, const AttackSpec& attack,
                           const EnvConfig& env, const EvalOptions& options = {});

/// Ordered (source, target) index pairs transfer_matrix would evaluate.
std::vector<std::pair<std::size_t, std::size_t>> transfer_pairs(const PolicyPool& pool, TransferMode mode);

/// Runs task(i) for i in [0, count) on up to `threads` workers. If tasks
/// throw, the exception of the lowest failing index is rethrown.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& task);

inline constexpr std::string_view kReportCsvHeader =
    "env,algorithm,target_id,transfer_mode,source_id,norm,epsilon,mean_return,std_return,n_rollouts,"
    "degenerate_steps";

std::string report_to_csv(const EvalReport& report);
/// Throws SchemaError naming the offending column (or the header).
EvalReport parse_report_csv(const std::string& text);

}  // namespace advrl
