#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "advrl/errors.hpp"
#include "advrl/policy.hpp"

using namespace advrl;
namespace fs = std::filesystem;

namespace {

PolicyNetwork zero_net(HeadKind head) {
  const auto arch = ArchitectureSpec::desk({4, 16, 16}, 3, head);
  std::vector<NamedTensor> weights;
  for (const auto& [name, shape] : PolicyNetwork::weight_layout(arch)) weights.push_back({name, Tensor(shape)});
  return PolicyNetwork(arch, head == HeadKind::q ? PolicyKind::q_value : PolicyKind::stochastic, {}, weights);
}

PolicyNetwork random_net(HeadKind head, std::uint64_t seed, bool value_head = false) {
  const auto arch = ArchitectureSpec::desk({4, 16, 16}, 3, head, value_head);
  return PolicyNetwork::initialize(arch, head == HeadKind::q ? PolicyKind::q_value : PolicyKind::stochastic,
                                   {head == HeadKind::q ? "dqn" : "pg", seed, -1.25}, seed);
}

Observation random_obs(Rng& rng) {
  Observation o{Tensor({4, 16, 16})};
  for (auto& v : o.frames.data()) v = uniform01(rng);
  return o;
}

// Linear policy with a 1×1×1 input: logits = w·x + b. Lets tests pick outputs.
PolicyNetwork linear_net(std::vector<double> bias, HeadKind head) {
  ArchitectureSpec arch{{1, 1, 1}, {LayerSpec::flatten(), LayerSpec::dense(bias.size())}, bias.size(), head, false};
  std::vector<NamedTensor> w{{"l1.w", Tensor({1, bias.size()})}, {"l1.b", Tensor({bias.size()}, bias)}};
  return PolicyNetwork(arch, head == HeadKind::q ? PolicyKind::q_value : PolicyKind::stochastic, {}, w);
}

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "advrl_policy_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Architecture, DeskLayoutShapes) {
  const auto arch = ArchitectureSpec::desk({4, 16, 16}, 3, HeadKind::q);
  const auto shapes = arch.layer_shapes();
  EXPECT_EQ(shapes.front(), (Shape{8, 7, 7}));
  EXPECT_EQ(shapes.back(), (Shape{3}));
  const auto small = ArchitectureSpec::desk({1, 1, 1}, 2, HeadKind::distribution);
  EXPECT_NO_THROW(small.validate());
}

TEST(Architecture, RejectsInconsistentChains) {
  ArchitectureSpec a{{1, 4, 4}, {LayerSpec::conv(2, 5, 1)}, 2, HeadKind::q, false};
  EXPECT_THROW(a.validate(), DimensionError);
  ArchitectureSpec b{{1, 4, 4}, {LayerSpec::flatten(), LayerSpec::dense(3)}, 2, HeadKind::q, false};
  EXPECT_THROW(b.validate(), DimensionError);
  ArchitectureSpec c{{1, 4, 4}, {LayerSpec::flatten(), LayerSpec::dense(1)}, 1, HeadKind::q, false};
  EXPECT_THROW(c.validate(), DimensionError);
}

TEST(PolicyNetwork, KindMustMatchHead) {
  const auto arch = ArchitectureSpec::desk({4, 16, 16}, 3, HeadKind::q);
  EXPECT_THROW(PolicyNetwork::initialize(arch, PolicyKind::stochastic, {}, 1), ContractError);
}

TEST(PolicyNetwork, WrongWeightShapesRejected) {
  const auto arch = ArchitectureSpec::desk({4, 16, 16}, 3, HeadKind::q);
  auto layout = PolicyNetwork::weight_layout(arch);
  std::vector<NamedTensor> w;
  for (const auto& [name, shape] : layout) w.push_back({name, Tensor(shape)});
  w[0].value = Tensor({1, 1});
  EXPECT_THROW(PolicyNetwork(arch, PolicyKind::q_value, {}, w), DimensionError);
}

TEST(ForwardPolicy, ZeroWeightsGiveUniformOrZero) {
  Rng rng(1);
  const auto obs = random_obs(rng);
  const auto d = std::get<ActionDistribution>(forward_policy(zero_net(HeadKind::distribution), obs));
  for (double p : d.probs.data()) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
  const auto q = std::get<QValues>(forward_policy(zero_net(HeadKind::q), obs));
  for (double v : q.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(ForwardPolicy, ProbabilitiesSumToOne) {
  Rng rng(2);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto d = std::get<ActionDistribution>(forward_policy(random_net(HeadKind::distribution, s), random_obs(rng)));
    double total = 0.0;
    for (double p : d.probs.data()) {
      EXPECT_GE(p, 0.0);
      total += p;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(ForwardPolicy, ShapeMismatchIsContractError) {
  const auto net = random_net(HeadKind::q, 1);
  EXPECT_THROW(forward_policy(net, Observation{Tensor({4, 8, 8})}), ContractError);
}

TEST(QToDistribution, Examples) {
  auto probs = [](std::vector<double> q) {
    return q_to_distribution(QValues{Tensor({q.size()}, q)}).probs.values();
  };
  for (double p : probs({1, 1, 1})) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
  const auto two = probs({0, std::log(2.0)});
  EXPECT_NEAR(two[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(two[1], 2.0 / 3.0, 1e-15);
  const auto big = probs({1000, 1001});
  const auto small = probs({0, 1});
  EXPECT_NEAR(big[0], small[0], 1e-12);
  EXPECT_NEAR(big[1], small[1], 1e-12);
  EXPECT_THROW(q_to_distribution(QValues{Tensor::vector({1, 2})}, 0.0), ContractError);
}

TEST(QToDistribution, ShiftInvariant) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    Tensor q({4});
    for (auto& v : q.data()) v = 10.0 * standard_normal(rng);
    Tensor shifted = q;
    const double c = 50.0 * standard_normal(rng);
    for (auto& v : shifted.data()) v += c;
    const auto a = q_to_distribution({q}).probs, b = q_to_distribution({shifted}).probs;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(ActGreedy, ArgmaxAndTies) {
  const Observation obs{Tensor({1, 1, 1})};
  EXPECT_EQ(act_greedy(linear_net({0.1, 0.9, 0.3}, HeadKind::q), obs), 1u);
  EXPECT_EQ(act_greedy(linear_net({0.5, 0.5}, HeadKind::q), obs), 0u);
  EXPECT_EQ(act_greedy(linear_net({7.1, 7.9, 7.3}, HeadKind::q), obs), 1u);
  EXPECT_EQ(act_greedy(linear_net({0.1, 0.9, 0.3}, HeadKind::distribution), obs), 1u);
}

TEST(ActGreedy, InvariantUnderMonotoneTransforms) {
  Rng rng(6);
  const Observation obs{Tensor({1, 1, 1})};
  for (int t = 0; t < 50; ++t) {
    std::vector<double> q(4);
    for (auto& v : q) v = standard_normal(rng);
    std::vector<double> g = q;
    for (auto& v : g) v = std::exp(2.0 * v) + 3.0;
    EXPECT_EQ(act_greedy(linear_net(q, HeadKind::q), obs), act_greedy(linear_net(g, HeadKind::q), obs));
  }
}

TEST(ActStochastic, DegenerateDistribution) {
  Rng rng(1);
  const std::vector<double> p{1.0, 0.0, 0.0};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_action(p, rng), 0u);
}

TEST(ActStochastic, FairCoinFrequency) {
  // 10k Bernoulli(0.5) draws: sd of the frequency is 0.005, so [0.48, 0.52]
  // is a 4-sigma band.
  Rng rng(2024);
  const std::vector<double> p{0.5, 0.5};
  int zeros = 0;
  for (int i = 0; i < 10000; ++i) zeros += sample_action(p, rng) == 0;
  const double freq = zeros / 10000.0;
  EXPECT_GE(freq, 0.48);
  EXPECT_LE(freq, 0.52);
}

TEST(ActStochastic, SameSeedSameSequence) {
  const auto net = random_net(HeadKind::distribution, 3);
  Rng orng(5);
  const auto obs = random_obs(orng);
  Rng a(77), b(77);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(act_stochastic(net, obs, a), act_stochastic(net, obs, b));
}

TEST(ActStochastic, QHeadIsContractError) {
  Rng rng(1);
  Rng orng(5);
  EXPECT_THROW(act_stochastic(random_net(HeadKind::q, 1), random_obs(orng), rng), ContractError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  for (HeadKind head : {HeadKind::q, HeadKind::distribution}) {
    const auto net = random_net(head, 11, head == HeadKind::distribution);
    const auto path = temp_path(head == HeadKind::q ? "q.ckpt" : "pi.ckpt");
    save_checkpoint(net, path);
    const auto back = load_checkpoint(path);
    EXPECT_TRUE(back == net);
    EXPECT_EQ(back.kind(), net.kind());
    EXPECT_EQ(back.provenance(), net.provenance());
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
      const auto obs = random_obs(rng);
      Tensor batch = obs.frames.reshaped({1, 4, 16, 16});
      EXPECT_EQ(forward_batch(net, batch), forward_batch(back, batch));
    }
  }
}

TEST(Checkpoint, QValueKindSurvives) {
  const auto back = parse_checkpoint(serialize_checkpoint(random_net(HeadKind::q, 2)));
  EXPECT_EQ(back.kind(), PolicyKind::q_value);
  EXPECT_EQ(back.spec().head, HeadKind::q);
}

TEST(Checkpoint, TruncatedFileIsMalformed) {
  const std::string text = serialize_checkpoint(random_net(HeadKind::q, 2));
  for (std::size_t cut : {std::size_t{0}, std::size_t{10}, text.size() / 3, text.size() / 2, text.size() - 5}) {
    try {
      parse_checkpoint(text.substr(0, cut));
      ADD_FAILURE() << "no error for cut " << cut;
    } catch (const CheckpointError& e) {
      EXPECT_EQ(e.kind(), CheckpointError::Kind::malformed) << e.what();
    }
  }
}

TEST(Checkpoint, VersionMismatchIsDistinct) {
  std::string text = serialize_checkpoint(random_net(HeadKind::q, 2));
  const auto pos = text.find("version 1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 9, "version 2");
  try {
    parse_checkpoint(text);
    ADD_FAILURE();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::version_mismatch);
  }
}

TEST(Checkpoint, ShapeInconsistencyIsDistinct) {
  std::string text = serialize_checkpoint(random_net(HeadKind::q, 2));
  // Claim a different action count than the stored final layer.
  const auto pos = text.find("actions 3");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 9, "actions 4");
  try {
    parse_checkpoint(text);
    ADD_FAILURE();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::shape_inconsistency) << e.what();
  }
}

TEST(Checkpoint, MissingFileIsReported) {
  EXPECT_THROW(load_checkpoint(temp_path("does-not-exist.ckpt")), Error);
}
