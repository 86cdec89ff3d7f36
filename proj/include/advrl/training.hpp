#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advrl/envs.hpp"
#include "advrl/policy.hpp"
#include "advrl/rng.hpp"

namespace advrl {

struct Transition {
  Tensor obs;
  std::size_t action = 0;
  double reward = 0.0;
  Tensor next_obs;
  bool done = false;
};

/// Fixed-capacity ring of transitions; once full, each push overwrites the
/// oldest entry.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  /// `batch` indices drawn uniformly with replacement from occupied slots.
  /// Throws ContractError if the buffer holds fewer than `batch` entries.
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const;
  std::vector<Transition> sample(std::size_t batch, Rng& rng) const;

  const Transition& at(std::size_t slot) const { return slots_.at(slot); }
  std::size_t size() const { return slots_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> slots_;
};

inline void replay_push(ReplayBuffer& buffer, Transition t) { buffer.push(std::move(t)); }
inline std::vector<Transition> replay_sample(const ReplayBuffer& buffer, std::size_t batch, Rng& rng) {
  return buffer.sample(batch, rng);
}

struct TrainConfig {
  std::string algorithm = "dqn";  // dqn | pg
  std::uint64_t seed = 0;
  std::size_t iterations = 40;
  std::size_t steps_per_iteration = 1000;
  double learning_rate = 1e-2;
  double gamma = 0.95;
  // ε-greedy schedule (dqn): linear from start to end over decay_steps.
  double explore_start = 1.0;
  double explore_end = 0.05;
  std::size_t explore_decay_steps = 10000;
  // pg
  double entropy_weight = 0.01;
  double value_weight = 0.5;
  std::size_t batch_size = 32;
  // dqn replay
  std::size_t replay_capacity = 10000;
  std::size_t learning_starts = 500;
  std::size_t train_every = 1;
  // Global gradient-norm clip applied before each step; 0 disables.
  double max_grad_norm = 10.0;
  // Rollouts used to score each iteration for the training curve.
  std::size_t eval_rollouts = 3;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainingCurve {
  std::vector<double> mean_return;
  std::vector<double> seconds;

  /// Mean of the last `window` entries (all entries if fewer).
  double tail_mean(std::size_t window = 10) const;
};

struct TrainResult {
  PolicyNetwork policy;
  TrainingCurve curve;
};

/// Exploration probability after `step` environment steps.
double exploration_rate(const TrainConfig& config, std::size_t step);

// ---------------------------------------------------------------------------
// Losses (exposed for testing against finite differences)

struct Batch {
  Tensor obs;  // n×c×h×w
  std::vector<std::size_t> actions;
  std::vector<double> rewards;  // dqn: immediate reward; pg: return G
  Tensor next_obs;              // dqn only
  std::vector<char> done;       // dqn only
};

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Tensor> grads;  // one per network weight, storage order
};

/// r + γ·(1 − done)·maxₐ' Q(s', a'), evaluated as constants.
std::vector<double> bellman_targets(const PolicyNetwork& net, const Batch& batch, double gamma);

/// mean over the batch of (target − Q(s, a))², targets held constant.
LossAndGrads dqn_loss(const PolicyNetwork& net, const Batch& batch, double gamma);

struct PgLossOptions {
  double entropy_weight = 0.01;
  double value_weight = 0.5;
  // false forces the advantage to zero, leaving only the entropy and value
  // terms.
  bool use_advantage = true;
  bool normalize_advantage = true;
};

/// −mean[log π(a|s)·A] − β·mean[H(π(·|s))] + c·mean[(V(s) − G)²] with
/// A = G − V(s) held constant.
LossAndGrads pg_loss(const PolicyNetwork& net, const Batch& batch, const PgLossOptions& options);

/// θ ← θ − lr·g, after rescaling g to global norm `max_norm` (if > 0).
void sgd_step(PolicyNetwork& net, std::vector<Tensor> grads, double learning_rate, double max_norm);

Batch make_batch(const ReplayBuffer& replay, const std::vector<std::size_t>& slots);

// ---------------------------------------------------------------------------
// Trainers

/// Q-learning with experience replay, ε-greedy behaviour and no target
/// network. Throws TrainingDivergedError if the loss becomes non-finite.
TrainResult train_dqn(const EnvFactory& make_env, std::size_t frame_stack, const TrainConfig& config);
TrainResult train_dqn(const EnvFactory& make_env, std::size_t frame_stack, const TrainConfig& config,
                      const ArchitectureSpec& arch);

/// Synchronous advantage policy gradient with a learned value baseline and
/// an entropy bonus.
TrainResult train_pg(const EnvFactory& make_env, std::size_t frame_stack, const TrainConfig& config);
TrainResult train_pg(const EnvFactory& make_env, std::size_t frame_stack, const TrainConfig& config,
                     const ArchitectureSpec& arch);

/// Dispatches on config.algorithm.
TrainResult train(const EnvFactory& make_env, std::size_t frame_stack, const TrainConfig& config);

/// Indices of curves whose last-10 mean is within 80% of the best (sign-safe:
/// score >= best − 0.2·|best|), best first, at most `cap`.
std::vector<std::size_t> select_top_policies(const std::vector<TrainingCurve>& curves, std::size_t cap = 3);
std::vector<std::size_t> select_top_scores(const std::vector<double>& scores, std::size_t cap = 3);

}  // namespace advrl
