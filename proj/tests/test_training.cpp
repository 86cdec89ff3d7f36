#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "advrl/autodiff.hpp"
#include "advrl/errors.hpp"
#include "advrl/training.hpp"

using namespace advrl;

namespace {

Transition make_transition(double tag) {
  Transition t;
  t.obs = Tensor({1, 1, 1}, tag);
  t.next_obs = Tensor({1, 1, 1}, tag);
  t.reward = tag;
  return t;
}

// One dense layer on a 1×1×1 input whose value is always 1.
PolicyNetwork tiny_net(std::vector<double> bias, HeadKind head, bool value_head = false) {
  const std::size_t a = bias.size();
  ArchitectureSpec arch{{1, 1, 1}, {LayerSpec::flatten(), LayerSpec::dense(a)}, a, head, value_head};
  std::vector<NamedTensor> w;
  for (const auto& [name, shape] : PolicyNetwork::weight_layout(arch)) w.push_back({name, Tensor(shape)});
  w[1].value = Tensor({a}, bias);
  return PolicyNetwork(arch, head == HeadKind::q ? PolicyKind::q_value : PolicyKind::stochastic, {}, w);
}

Batch random_batch(Rng& rng, std::size_t n, Shape item, std::size_t actions) {
  Shape s{n};
  s.insert(s.end(), item.begin(), item.end());
  Batch b;
  b.obs = Tensor(s);
  b.next_obs = Tensor(s);
  for (auto& v : b.obs.data()) v = uniform01(rng);
  for (auto& v : b.next_obs.data()) v = uniform01(rng);
  for (std::size_t i = 0; i < n; ++i) {
    b.actions.push_back(uniform_index(rng, actions));
    b.rewards.push_back(standard_normal(rng));
    b.done.push_back(i % 3 == 0);
  }
  return b;
}

// Relative L2 error between analytic and central-difference gradients of
// `f` with respect to every weight tensor of `net`.
double max_weight_grad_error(PolicyNetwork net, const std::vector<Tensor>& grads,
                             const std::function<double(const PolicyNetwork&)>& f) {
  double worst = 0.0;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const Tensor base = net.weight(k);
    const Tensor fd = finite_difference_gradient(
        [&](const Tensor& w) {
          net.weight(k) = w;
          const double v = f(net);
          net.weight(k) = base;
          return v;
        },
        base, 1e-5);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      num += (fd[i] - grads[k][i]) * (fd[i] - grads[k][i]);
      den += fd[i] * fd[i];
    }
    if (den > 1e-20) worst = std::max(worst, std::sqrt(num / den));
  }
  return worst;
}

}  // namespace

TEST(Replay, RingOverwritesOldest) {
  ReplayBuffer buf(2);
  for (double tag : {1.0, 2.0, 3.0}) replay_push(buf, make_transition(tag));
  ASSERT_EQ(buf.size(), 2u);
  std::multiset<double> held{buf.at(0).reward, buf.at(1).reward};
  EXPECT_EQ(held, (std::multiset<double>{2.0, 3.0}));
}

TEST(Replay, SingleItemAndErrors) {
  ReplayBuffer buf(4);
  Rng rng(1);
  EXPECT_THROW(replay_sample(buf, 1, rng), ContractError);
  replay_push(buf, make_transition(7.0));
  EXPECT_EQ(replay_sample(buf, 1, rng).front().reward, 7.0);
  EXPECT_THROW(replay_sample(buf, 2, rng), ContractError);
  EXPECT_THROW(ReplayBuffer(0), ContractError);
}

TEST(Replay, SamplingIsUniform) {
  ReplayBuffer buf(10);
  for (int i = 0; i < 10; ++i) buf.push(make_transition(i));
  Rng rng(2024);
  std::vector<int> counts(10, 0);
  for (int draw = 0; draw < 1000; ++draw) {
    for (auto i : buf.sample_indices(10, rng)) ++counts[i];
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
  // χ² with 9 degrees of freedom; 21.666 is the 0.99 quantile.
  EXPECT_LT(chi2, 21.666);
}

TEST(Exploration, LinearThenFloor) {
  TrainConfig c;
  c.explore_start = 1.0;
  c.explore_end = 0.1;
  c.explore_decay_steps = 100;
  EXPECT_DOUBLE_EQ(exploration_rate(c, 0), 1.0);
  EXPECT_NEAR(exploration_rate(c, 50), 0.55, 1e-12);
  EXPECT_DOUBLE_EQ(exploration_rate(c, 100), 0.1);
  EXPECT_DOUBLE_EQ(exploration_rate(c, 100000), 0.1);
  double prev = 2.0;
  for (std::size_t s = 0; s < 200; ++s) {
    const double r = exploration_rate(c, s);
    EXPECT_LE(r, prev);
    prev = r;
  }
}

TEST(TrainConfig, Validation) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  EXPECT_NO_THROW(TrainConfig{}.validate());
  bad([](TrainConfig& c) { c.algorithm = "trpo"; });
  bad([](TrainConfig& c) { c.gamma = 0.0; });
  bad([](TrainConfig& c) { c.gamma = 1.5; });
  bad([](TrainConfig& c) { c.learning_rate = 0.0; });
  bad([](TrainConfig& c) { c.explore_end = 0.5, c.explore_start = 0.2; });
  bad([](TrainConfig& c) { c.replay_capacity = 4, c.batch_size = 8; });
}

TEST(TrainingCurve, TailMean) {
  TrainingCurve c;
  for (int i = 1; i <= 12; ++i) c.mean_return.push_back(i);
  EXPECT_DOUBLE_EQ(c.tail_mean(10), 7.5);
  EXPECT_DOUBLE_EQ(c.tail_mean(100), 6.5);
}

TEST(Bellman, TargetsAndZeroDiscount) {
  const auto net = tiny_net({0.5, 2.0}, HeadKind::q);
  Batch b;
  b.obs = Tensor({2, 1, 1, 1}, 1.0);
  b.next_obs = b.obs;
  b.actions = {0, 1};
  b.rewards = {1.0, -1.0};
  b.done = {0, 1};
  EXPECT_EQ(bellman_targets(net, b, 0.5), (std::vector<double>{2.0, -1.0}));
  const auto zero = bellman_targets(net, b, 0.0);
  EXPECT_EQ(zero, b.rewards);
}

TEST(DqnLoss, SingleTransitionConvergesToReward) {
  auto net = tiny_net({0.0, 0.0}, HeadKind::q);
  Batch b;
  b.obs = Tensor({1, 1, 1, 1}, 1.0);
  b.next_obs = b.obs;
  b.actions = {1};
  b.rewards = {1.0};
  b.done = {1};
  for (int i = 0; i < 500; ++i) sgd_step(net, dqn_loss(net, b, 0.99).grads, 0.1, 0.0);
  const Tensor q = forward_batch(net, b.obs);
  EXPECT_NEAR(q[1], 1.0, 1e-3);
}

TEST(DqnLoss, ZeroDiscountLearnsImmediateRewards) {
  // γ = 0 sits outside TrainConfig's range, so drive the loss directly.
  auto net = tiny_net({0.0, 0.0, 0.0}, HeadKind::q);
  Batch b;
  b.obs = Tensor({3, 1, 1, 1}, 1.0);
  b.next_obs = b.obs;
  b.actions = {0, 1, 2};
  b.rewards = {0.3, -0.7, 1.2};
  b.done = {0, 0, 0};
  for (int i = 0; i < 2000; ++i) sgd_step(net, dqn_loss(net, b, 0.0).grads, 0.1, 0.0);
  const Tensor q = forward_batch(net, Tensor({1, 1, 1, 1}, 1.0));
  for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(q[a], b.rewards[a], 1e-3);
}

TEST(DqnLoss, BootstrapTermIsConstant) {
  Rng rng(5);
  const auto arch = ArchitectureSpec::desk({2, 8, 8}, 3, HeadKind::q);
  const auto net = PolicyNetwork::initialize(arch, PolicyKind::q_value, {}, 9);
  const Batch b = random_batch(rng, 4, {2, 8, 8}, 3);
  const double gamma = 0.9;
  const auto targets = bellman_targets(net, b, gamma);
  const auto lg = dqn_loss(net, b, gamma);
  // Truncated loss: targets frozen at the current weights.
  auto truncated = [&](const PolicyNetwork& n) {
    const Tensor q = forward_batch(n, b.obs);
    double s = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double e = targets[i] - q[i * 3 + b.actions[i]];
      s += e * e;
    }
    return s / static_cast<double>(targets.size());
  };
  EXPECT_DOUBLE_EQ(lg.loss, truncated(net));
  EXPECT_LT(max_weight_grad_error(net, lg.grads, truncated), 1e-4);
}

TEST(PgLoss, MatchesFiniteDifferencesWithFrozenAdvantage) {
  Rng rng(6);
  const auto arch = ArchitectureSpec::desk({2, 8, 8}, 3, HeadKind::distribution, true);
  const auto net = PolicyNetwork::initialize(arch, PolicyKind::stochastic, {}, 10);
  const Batch b = random_batch(rng, 5, {2, 8, 8}, 3);
  const PgLossOptions opts{0.05, 0.5, true, false};
  // Advantages come from the value head at the current weights.
  std::vector<double> adv;
  {
    Tape t;
    auto tr = trace_network(t, net, t.constant(b.obs), false);
    for (std::size_t i = 0; i < 5; ++i) adv.push_back(b.rewards[i] - t.value(*tr.value)[i]);
  }
  auto loss = [&](const PolicyNetwork& n) {
    Tape t;
    auto tr = trace_network(t, n, t.constant(b.obs), false);
    const Tensor& logits = t.value(tr.output);
    const Tensor& v = t.value(*tr.value);
    double policy = 0.0, negent = 0.0, verr = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      double m = -1e300;
      for (std::size_t a = 0; a < 3; ++a) m = std::max(m, logits[i * 3 + a]);
      double z = 0.0;
      for (std::size_t a = 0; a < 3; ++a) z += std::exp(logits[i * 3 + a] - m);
      for (std::size_t a = 0; a < 3; ++a) {
        const double lp = logits[i * 3 + a] - m - std::log(z);
        negent += std::exp(lp) * lp;
        if (a == b.actions[i]) policy += lp * adv[i];
      }
      verr += (v[i] - b.rewards[i]) * (v[i] - b.rewards[i]);
    }
    return (-policy + opts.entropy_weight * negent + opts.value_weight * verr) / 5.0;
  };
  const auto lg = pg_loss(net, b, opts);
  EXPECT_NEAR(lg.loss, loss(net), 1e-12);
  EXPECT_LT(max_weight_grad_error(net, lg.grads, loss), 1e-4);
}

TEST(PgLoss, EntropyOnlyDriftsToUniform) {
  auto net = tiny_net({2.0, 0.0, -1.0}, HeadKind::distribution, true);
  Batch b;
  b.obs = Tensor({1, 1, 1, 1}, 1.0);
  b.actions = {0};
  b.rewards = {0.0};
  const PgLossOptions opts{1.0, 0.0, false, false};
  for (int i = 0; i < 3000; ++i) sgd_step(net, pg_loss(net, b, opts).grads, 0.5, 0.0);
  const auto d = std::get<ActionDistribution>(forward_policy(net, Observation{Tensor({1, 1, 1}, 1.0)}));
  for (double p : d.probs.data()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-3);
}

TEST(PgLoss, NeedsValueHead) {
  const auto net = tiny_net({0, 0}, HeadKind::distribution);
  Batch b;
  b.obs = Tensor({1, 1, 1, 1}, 1.0);
  b.actions = {0};
  b.rewards = {1.0};
  EXPECT_THROW(pg_loss(net, b, {}), ContractError);
}

TEST(SgdStep, ClipsGlobalNorm) {
  auto net = tiny_net({0.0, 0.0}, HeadKind::q);
  std::vector<Tensor> g{Tensor({1, 2}, std::vector<double>{3.0, 0.0}), Tensor({2}, std::vector<double>{0.0, 4.0})};
  sgd_step(net, g, 1.0, 1.0);
  EXPECT_NEAR(net.weight(0)[0], -0.6, 1e-15);
  EXPECT_NEAR(net.weight(1)[1], -0.8, 1e-15);
  std::vector<Tensor> bad{Tensor({1, 2}, std::vector<double>{NAN, 0.0}), Tensor({2})};
  EXPECT_THROW(sgd_step(net, bad, 1.0, 1.0), TrainingDivergedError);
}

TEST(TrainPg, TwoArmedBanditPrefersBetterArm) {
  const EnvFactory bandit = [] { return std::make_unique<Bandit>(std::vector<double>{1.0, 0.0}); };
  TrainConfig c;
  c.algorithm = "pg";
  c.seed = 3;
  c.iterations = 30;
  c.steps_per_iteration = 64;
  c.learning_rate = 0.1;
  c.max_grad_norm = 1.0;
  const auto r = train(bandit, 1, c);
  EXPECT_EQ(r.policy.kind(), PolicyKind::stochastic);
  EXPECT_EQ(r.curve.mean_return.size(), 30u);
  const auto d = std::get<ActionDistribution>(forward_policy(r.policy, Observation{Tensor({1, 1, 1}, 1.0)}));
  EXPECT_GT(d.probs[0], 0.95);
}

TEST(TrainDqn, BanditQValuesApproachRewards) {
  const EnvFactory bandit = [] { return std::make_unique<Bandit>(std::vector<double>{0.2, 1.0}); };
  TrainConfig c;
  c.algorithm = "dqn";
  c.seed = 4;
  c.iterations = 10;
  c.steps_per_iteration = 200;
  c.learning_starts = 50;
  c.explore_decay_steps = 500;
  c.learning_rate = 0.05;
  const auto r = train(bandit, 1, c);
  EXPECT_EQ(r.policy.kind(), PolicyKind::q_value);
  const auto q = std::get<QValues>(forward_policy(r.policy, Observation{Tensor({1, 1, 1}, 1.0)}));
  EXPECT_NEAR(q.values[0], 0.2, 0.05);
  EXPECT_NEAR(q.values[1], 1.0, 0.05);
}

TEST(Train, DeterministicGivenSeed) {
  EnvConfig env;
  for (const char* algo : {"dqn", "pg"}) {
    TrainConfig c;
    c.algorithm = algo;
    c.seed = 17;
    c.iterations = 2;
    c.steps_per_iteration = 150;
    c.learning_starts = 50;
    c.train_every = 4;
    c.eval_rollouts = 1;
    const auto a = train(env_factory(env), env.frame_stack, c);
    const auto b = train(env_factory(env), env.frame_stack, c);
    EXPECT_TRUE(a.policy == b.policy) << algo;
    EXPECT_EQ(a.curve.mean_return, b.curve.mean_return) << algo;
    c.seed = 18;
    EXPECT_FALSE(train(env_factory(env), env.frame_stack, c).policy == a.policy) << algo;
  }
}

TEST(Train, DivergenceIsReported) {
  const EnvFactory bandit = [] { return std::make_unique<Bandit>(std::vector<double>{1e150, 0.0}); };
  TrainConfig c;
  c.algorithm = "dqn";
  c.iterations = 5;
  c.steps_per_iteration = 100;
  c.learning_starts = 32;
  c.learning_rate = 1e3;
  c.max_grad_norm = 0.0;
  EXPECT_THROW(train(bandit, 1, c), TrainingDivergedError);
}

TEST(Train, WrongAlgorithmForTrainer) {
  const EnvFactory bandit = [] { return std::make_unique<Bandit>(std::vector<double>{1.0, 0.0}); };
  TrainConfig c;
  c.algorithm = "pg";
  EXPECT_THROW(train_dqn(bandit, 1, c), ContractError);
}

TEST(SelectTop, Examples) {
  EXPECT_EQ(select_top_scores({100, 85, 60}), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(select_top_scores({50}), (std::vector<std::size_t>{0}));
  EXPECT_EQ(select_top_scores({-2, -10}), (std::vector<std::size_t>{0}));
  EXPECT_EQ(select_top_scores({90, 100, 95, 99}), (std::vector<std::size_t>{1, 3, 2}));
  EXPECT_EQ(select_top_scores({90, 100, 95, 99}, 1), (std::vector<std::size_t>{1}));
  EXPECT_THROW(select_top_scores({}), ContractError);
}

TEST(SelectTop, UsesLastTenIterations) {
  TrainingCurve early, late;
  for (int i = 0; i < 20; ++i) {
    early.mean_return.push_back(i < 10 ? 100.0 : 0.0);
    late.mean_return.push_back(i < 10 ? 0.0 : 10.0);
  }
  EXPECT_EQ(select_top_policies({early, late}), (std::vector<std::size_t>{1}));
  TrainingCurve short_curve;
  short_curve.mean_return = {1, 2, 3};
  EXPECT_THROW(select_top_policies({short_curve}), ContractError);
}
