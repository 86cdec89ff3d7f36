#include "advrl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "advrl/autodiff.hpp"
#include "advrl/errors.hpp"

namespace advrl {

// ---------------------------------------------------------------------------
// Replay

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ContractError("replay capacity must be positive");
  slots_.reserve(capacity_);
}

void ReplayBuffer::push(Transition t) {
  if (slots_.size() < capacity_) {
    slots_.push_back(std::move(t));
  } else {
    slots_[cursor_] = std::move(t);
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch, Rng& rng) const {
  if (slots_.empty()) throw ContractError("cannot sample from an empty replay buffer");
  if (slots_.size() < batch) {
    throw ContractError("replay buffer holds " + std::to_string(slots_.size()) + " transitions, batch needs " +
                        std::to_string(batch));
  }
  std::vector<std::size_t> out(batch);
  for (auto& i : out) i = uniform_index(rng, slots_.size());
  return out;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  std::vector<Transition> out;
  for (auto i : sample_indices(batch, rng)) out.push_back(slots_[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (algorithm != "dqn" && algorithm != "pg") throw ConfigError("training.algorithm: expected dqn or pg, got '" + algorithm + "'");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("training.gamma: must be in (0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate: must be > 0");
  if (iterations < 1) throw ConfigError("training.iterations: must be >= 1");
  if (steps_per_iteration < 1) throw ConfigError("training.steps_per_iteration: must be >= 1");
  if (batch_size < 1) throw ConfigError("training.batch_size: must be >= 1");
  if (!(explore_start >= explore_end && explore_end >= 0.0 && explore_start <= 1.0)) {
    throw ConfigError("training.explore_start/explore_end: need 1 >= start >= end >= 0");
  }
  if (replay_capacity < batch_size) throw ConfigError("training.replay_capacity: must be >= batch_size");
  if (train_every < 1) throw ConfigError("training.train_every: must be >= 1");
  if (eval_rollouts < 1) throw ConfigError("training.eval_rollouts: must be >= 1");
  if (entropy_weight < 0.0 || value_weight < 0.0 || max_grad_norm < 0.0) {
    throw ConfigError("training: entropy_weight, value_weight and max_grad_norm must be >= 0");
  }
}

double TrainingCurve::tail_mean(std::size_t window) const {
  if (mean_return.empty()) return 0.0;
  const std::size_t n = std::min(window, mean_return.size());
  double total = 0.0;
  for (std::size_t i = mean_return.size() - n; i < mean_return.size(); ++i) total += mean_return[i];
  return total / static_cast<double>(n);
}

double exploration_rate(const TrainConfig& config, std::size_t step) {
  if (config.explore_decay_steps == 0 || step >= config.explore_decay_steps) return config.explore_end;
  const double frac = static_cast<double>(step) / static_cast<double>(config.explore_decay_steps);
  return config.explore_start + frac * (config.explore_end - config.explore_start);
}

// ---------------------------------------------------------------------------
// Losses

namespace {

Shape batched_shape(std::size_t n, const Shape& item) {
  Shape s{n};
  s.insert(s.end(), item.begin(), item.end());
  return s;
}

Tensor stack_tensors(const std::vector<const Tensor*>& items) {
  const Shape& item = items.front()->shape();
  Tensor out(batched_shape(items.size(), item));
  const std::size_t stride = shape_size(item);
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::copy(items[i]->data().begin(), items[i]->data().end(), out.data().begin() + i * stride);
  }
  return out;
}

std::vector<Tensor> weight_grads(const Tape& tape, Var loss, const NetworkTrace& trace) {
  const auto g = tape.backward(loss);
  std::vector<Tensor> out;
  out.reserve(trace.params.size());
  for (Var p : trace.params) out.push_back(g.wrt(p));
  return out;
}

void check_finite(double loss, const char* algo) {
  if (!std::isfinite(loss)) {
    throw TrainingDivergedError(std::string(algo) + " loss became non-finite (" + std::to_string(loss) + ")");
  }
}

}  // namespace

Batch make_batch(const ReplayBuffer& replay, const std::vector<std::size_t>& slots) {
  if (slots.empty()) throw ContractError("empty batch");
  std::vector<const Tensor*> obs, next;
  Batch b;
  for (auto slot : slots) {
    const Transition& t = replay.at(slot);
    obs.push_back(&t.obs);
    next.push_back(&t.next_obs);
    b.actions.push_back(t.action);
    b.rewards.push_back(t.reward);
    b.done.push_back(t.done ? 1 : 0);
  }
  b.obs = stack_tensors(obs);
  b.next_obs = stack_tensors(next);
  return b;
}

std::vector<double> bellman_targets(const PolicyNetwork& net, const Batch& batch, double gamma) {
  const Tensor next_q = forward_batch(net, batch.next_obs);
  const std::size_t a = next_q.dim(1);
  std::vector<double> targets(batch.actions.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double best = *std::max_element(next_q.data().begin() + i * a, next_q.data().begin() + (i + 1) * a);
    targets[i] = batch.rewards[i] + (batch.done[i] ? 0.0 : gamma * best);
  }
  return targets;
}

LossAndGrads dqn_loss(const PolicyNetwork& net, const Batch& batch, double gamma) {
  const auto targets = bellman_targets(net, batch, gamma);
  Tape tape;
  Var x = tape.constant(batch.obs);
  auto trace = trace_network(tape, net, x, true);
  Var q_taken = tape.pick(trace.output, batch.actions);
  Var y = tape.constant(Tensor({targets.size()}, targets));
  Var loss = tape.mean(tape.square(tape.sub(y, q_taken)));
  return {tape.value(loss).item(), weight_grads(tape, loss, trace)};
}

LossAndGrads pg_loss(const PolicyNetwork& net, const Batch& batch, const PgLossOptions& options) {
  if (!net.spec().value_head) throw ContractError("pg_loss needs a network with a value head");
  const std::size_t n = batch.actions.size();
  Tape tape;
  Var x = tape.constant(batch.obs);
  auto trace = trace_network(tape, net, x, true);
  Var log_probs = tape.log_softmax(trace.output);
  Var values = tape.reshape(*trace.value, {n});

  std::vector<double> adv(n, 0.0);
  if (options.use_advantage) {
    const Tensor& v = tape.value(values);
    for (std::size_t i = 0; i < n; ++i) adv[i] = batch.rewards[i] - v[i];
    if (options.normalize_advantage && n > 1) {
      const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(n);
      double var = 0.0;
      for (double a : adv) var += (a - mean) * (a - mean);
      const double sd = std::sqrt(var / static_cast<double>(n));
      for (auto& a : adv) a = (a - mean) / (sd + 1e-8);
    }
  }

  Var taken = tape.pick(log_probs, batch.actions);
  Var policy_term = tape.mean(tape.mul(taken, tape.constant(Tensor({n}, adv))));
  // Σ p log p is the negative entropy; averaged over the batch.
  Var neg_entropy = tape.scale(tape.sum(tape.mul(tape.exp(log_probs), log_probs)), 1.0 / static_cast<double>(n));
  Var value_err = tape.mean(tape.square(tape.sub(values, tape.constant(Tensor({n}, batch.rewards)))));

  Var loss = tape.add(tape.add(tape.scale(policy_term, -1.0), tape.scale(neg_entropy, options.entropy_weight)),
                      tape.scale(value_err, options.value_weight));
  return {tape.value(loss).item(), weight_grads(tape, loss, trace)};
}

void sgd_step(PolicyNetwork& net, std::vector<Tensor> grads, double learning_rate, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  if (!std::isfinite(sq)) throw TrainingDivergedError("gradient became non-finite");
  double scale = learning_rate;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) scale *= max_norm / norm;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto w = net.weight(i).data();
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= scale * g[j];
  }
}

// ---------------------------------------------------------------------------
// Trainers

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Shape observation_shape(Environment& env, std::size_t frame_stack) {
  return {frame_stack, env.height(), env.width()};
}

// Episode seeds: distinct salts keep training, scoring and policy streams
// independent of each other.
constexpr std::uint64_t kInitSalt = 1;
constexpr std::uint64_t kActSalt = 2;
constexpr std::uint64_t kSampleSalt = 3;
constexpr std::uint64_t kTrainEpisodeSalt = 1'000'000;
constexpr std::uint64_t kScoreEpisodeSalt = 9'000'000;

double score_policy(Environment& env, std::size_t frame_stack, const PolicyNetwork& net,
                    const TrainConfig& config, std::size_t iteration) {
  double total = 0.0;
  for (std::size_t r = 0; r < config.eval_rollouts; ++r) {
    const std::uint64_t ep_seed = mix_seed(config.seed, kScoreEpisodeSalt + iteration * config.eval_rollouts + r);
    Rng act_rng(mix_seed(ep_seed, kActSalt));
    FrameStack stack(frame_stack);
    stack.reset(env.reset(ep_seed));
    bool done = false;
    while (!done) {
      const Observation obs = stack.observation();
      const std::size_t a = net.kind() == PolicyKind::q_value ? act_greedy(net, obs)
                                                              : act_stochastic(net, obs, act_rng);
      auto res = env.step(a);
      total += res.reward;
      done = res.done;
      stack.push(res.frame);
    }
  }
  return total / static_cast<double>(config.eval_rollouts);
}

}  // namespace

TrainResult train_dqn(const EnvFactory& make_env, std::size_t frame_stack, const TrainConfig& config) {
  auto probe = make_env();
  const auto arch = ArchitectureSpec::desk(observation_shape(*probe, frame_stack), probe->action_count(), HeadKind::q);
  return train_dqn(make_env, frame_stack, config, arch);
}

TrainResult train_dqn(const EnvFactory& make_env, std::size_t frame_stack, const TrainConfig& config,
                      const ArchitectureSpec& arch) {
  config.validate();
  if (config.algorithm != "dqn") throw ContractError("train_dqn needs algorithm = dqn");
  if (arch.head != HeadKind::q) throw ContractError("train_dqn needs a q head");

  auto env = make_env();
  auto net = PolicyNetwork::initialize(arch, PolicyKind::q_value, {"dqn", config.seed, 0.0},
                                       mix_seed(config.seed, kInitSalt));
  Rng rng(mix_seed(config.seed, kActSalt));
  Rng sample_rng(mix_seed(config.seed, kSampleSalt));
  ReplayBuffer replay(config.replay_capacity);
  TrainingCurve curve;

  std::size_t episode = 0;
  std::size_t total_steps = 0;
  FrameStack stack(frame_stack);
  stack.reset(env->reset(mix_seed(config.seed, kTrainEpisodeSalt + episode)));
  Observation obs = stack.observation();

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto t0 = Clock::now();
    for (std::size_t s = 0; s < config.steps_per_iteration; ++s) {
      std::size_t action;
      if (uniform01(rng) < exploration_rate(config, total_steps)) {
        action = uniform_index(rng, env->action_count());
      } else {
        action = act_greedy(net, obs);
      }
      auto res = env->step(action);
      stack.push(res.frame);
      Observation next = stack.observation();
      replay.push({obs.frames, action, res.reward, next.frames, res.done});
      ++total_steps;

      if (res.done) {
        ++episode;
        stack.reset(env->reset(mix_seed(config.seed, kTrainEpisodeSalt + episode)));
        obs = stack.observation();
      } else {
        obs = std::move(next);
      }

      if (replay.size() >= std::max(config.batch_size, config.learning_starts) &&
          total_steps % config.train_every == 0) {
        const Batch batch = make_batch(replay, replay.sample_indices(config.batch_size, sample_rng));
        auto lg = dqn_loss(net, batch, config.gamma);
        check_finite(lg.loss, "dqn");
        sgd_step(net, std::move(lg.grads), config.learning_rate, config.max_grad_norm);
      }
    }
    auto score_env = make_env();
    curve.mean_return.push_back(score_policy(*score_env, frame_stack, net, config, it));
    curve.seconds.push_back(seconds_since(t0));
  }
  net.set_provenance({"dqn", config.seed, curve.tail_mean(10)});
  return {std::move(net), std::move(curve)};
}

TrainResult train_pg(const EnvFactory& make_env, std::size_t frame_stack, const TrainConfig& config) {
  auto probe = make_env();
  const auto arch = ArchitectureSpec::desk(observation_shape(*probe, frame_stack), probe->action_count(),
                                           HeadKind::distribution, true);
  return train_pg(make_env, frame_stack, config, arch);
}

TrainResult train_pg(const EnvFactory& make_env, std::size_t frame_stack, const TrainConfig& config,
                     const ArchitectureSpec& arch) {
  config.validate();
  if (config.algorithm != "pg") throw ContractError("train_pg needs algorithm = pg");
  if (arch.head != HeadKind::distribution || !arch.value_head) {
    throw ContractError("train_pg needs a distribution head with a value head");
  }

  auto env = make_env();
  auto net = PolicyNetwork::initialize(arch, PolicyKind::stochastic, {"pg", config.seed, 0.0},
                                       mix_seed(config.seed, kInitSalt));
  Rng rng(mix_seed(config.seed, kActSalt));
  Rng shuffle_rng(mix_seed(config.seed, kSampleSalt));
  TrainingCurve curve;
  const PgLossOptions options{config.entropy_weight, config.value_weight, true, true};

  std::size_t episode = 0;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto t0 = Clock::now();
    std::vector<Transition> samples;
    while (samples.size() < config.steps_per_iteration) {
      FrameStack stack(frame_stack);
      stack.reset(env->reset(mix_seed(config.seed, kTrainEpisodeSalt + episode++)));
      const std::size_t first = samples.size();
      bool done = false;
      while (!done) {
        Observation obs = stack.observation();
        const std::size_t action = act_stochastic(net, obs, rng);
        auto res = env->step(action);
        done = res.done;
        stack.push(res.frame);
        samples.push_back({std::move(obs.frames), action, res.reward, Tensor{}, done});
      }
      // Discounted return-to-go, stored in place of the reward.
      double g = 0.0;
      for (std::size_t i = samples.size(); i-- > first;) {
        g = samples[i].reward + config.gamma * g;
        samples[i].reward = g;
      }
    }

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Batch batch;
      std::vector<const Tensor*> obs;
      for (std::size_t k = start; k < end; ++k) {
        const auto& t = samples[order[k]];
        obs.push_back(&t.obs);
        batch.actions.push_back(t.action);
        batch.rewards.push_back(t.reward);
      }
      batch.obs = stack_tensors(obs);
      auto lg = pg_loss(net, batch, options);
      check_finite(lg.loss, "pg");
      sgd_step(net, std::move(lg.grads), config.learning_rate, config.max_grad_norm);
    }

    auto score_env = make_env();
    curve.mean_return.push_back(score_policy(*score_env, frame_stack, net, config, it));
    curve.seconds.push_back(seconds_since(t0));
  }
  net.set_provenance({"pg", config.seed, curve.tail_mean(10)});
  return {std::move(net), std::move(curve)};
}

TrainResult train(const EnvFactory& make_env, std::size_t frame_stack, const TrainConfig& config) {
  if (config.algorithm == "dqn") return train_dqn(make_env, frame_stack, config);
  if (config.algorithm == "pg") return train_pg(make_env, frame_stack, config);
  throw ConfigError("training.algorithm: expected dqn or pg, got '" + config.algorithm + "'");
}

// ---------------------------------------------------------------------------
// Selection

std::vector<std::size_t> select_top_scores(const std::vector<double>& scores, std::size_t cap) {
  if (scores.empty()) throw ContractError("select_top_policies needs at least one candidate");
  const double best = *std::max_element(scores.begin(), scores.end());
  const double threshold = best - 0.2 * std::abs(best);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] >= threshold) keep.push_back(i);
  }
  std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (keep.size() > cap) keep.resize(cap);
  return keep;
}

std::vector<std::size_t> select_top_policies(const std::vector<TrainingCurve>& curves, std::size_t cap) {
  if (curves.empty()) throw ContractError("select_top_policies needs at least one curve");
  std::vector<double> scores;
  for (const auto& c : curves) {
    if (c.mean_return.size() < 10) throw ContractError("select_top_policies needs curves with >= 10 entries");
    scores.push_back(c.tail_mean(10));
  }
  return select_top_scores(scores, cap);
}

}  // namespace advrl
