#include <gtest/gtest.h>

#include <filesystem>

#include "core/batch_io.hpp"
#include "core/errors.hpp"
#include "core/rollout.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace arpo;
using arpo::tests::UniformPolicy;

namespace {

EnvConfig small_env() {
  EnvConfig c;
  c.n_styles = 8;
  c.train_styles = {0, 1, 2, 3};
  c.test_styles = {4, 5, 6, 7};
  return c;
}

// Always picks one fixed action.
class FixedActionPolicy : public ActingPolicy {
 public:
  explicit FixedActionPolicy(int a) : a_(a) {}
  int n_actions() const override { return kNumActions; }
  void act(std::span<const Observation> obs, std::span<double> probs, std::span<double> values) const override {
    for (std::size_t i = 0; i < obs.size(); ++i) {
      for (int a = 0; a < kNumActions; ++a) probs[i * kNumActions + a] = a == a_ ? 1.0 : 0.0;
      values[i] = 0.5;
    }
  }

 private:
  int a_;
};

RolloutBatch rollout(const ActingPolicy& p, int n_envs, int n_steps, std::uint64_t seed) {
  VecEnv envs(small_env(), Split::kTrain, n_envs, seed);
  Rng rng = named_stream(seed, "action");
  return collect(p, envs, n_steps, rng);
}

}  // namespace

TEST(Collect, SizeContract) {
  const auto b = rollout(UniformPolicy(), 4, 256, 1);
  EXPECT_EQ(b.size(), 1024u);
  EXPECT_EQ(b.observations.size(), 1024u);
  EXPECT_EQ(b.action_dists.size(), 1024u * kNumActions);
  EXPECT_EQ(b.last_values.size(), 4u);
  EXPECT_NO_THROW(b.validate());
}

TEST(Collect, SeededRunsAreIdentical) {
  const auto a = rollout(UniformPolicy(), 3, 64, 5);
  const auto b = rollout(UniformPolicy(), 3, 64, 5);
  EXPECT_EQ(a.actions, b.actions);
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(a.dones, b.dones);
  EXPECT_EQ(a.style_ids, b.style_ids);
  EXPECT_EQ(a.observations, b.observations);
  const auto c = rollout(UniformPolicy(), 3, 64, 6);
  EXPECT_NE(a.actions, c.actions);
}

TEST(Collect, OneHotPolicyIsDeterministic) {
  const auto b = rollout(FixedActionPolicy(kRight), 2, 50, 9);
  for (auto a : b.actions) EXPECT_EQ(a, kRight);
}

TEST(Collect, RewardsInRangeAndStylesFromTrainSplit) {
  const auto b = rollout(UniformPolicy(), 4, 200, 3);
  for (double r : b.rewards) EXPECT_TRUE(r == 1.0 || r == -0.01);
  for (int s : b.style_ids) EXPECT_LT(s, 4);
  // Episode returns only from completed episodes.
  int dones = 0;
  for (auto d : b.dones) dones += d;
  EXPECT_EQ(b.episode_returns.size(), static_cast<std::size_t>(dones));
}

TEST(Collect, ContinuesAcrossCalls) {
  VecEnv envs(small_env(), Split::kTrain, 2, 4);
  Rng rng(1);
  const auto first = collect(UniformPolicy(), envs, 10, rng);
  const auto second = collect(UniformPolicy(), envs, 10, rng);
  EXPECT_EQ(second.size(), 20u);
  EXPECT_NE(first.observations, second.observations);
}

TEST(Collect, VecEnvStateRestoreReplays) {
  VecEnv envs(small_env(), Split::kTrain, 2, 4);
  Rng rng(1);
  collect(UniformPolicy(), envs, 30, rng);
  const auto state = envs.state();
  const Rng saved = rng;
  const auto a = collect(UniformPolicy(), envs, 30, rng);
  VecEnv other(small_env(), Split::kTrain, 2, 99);
  other.restore(state);
  Rng rng2 = saved;
  const auto b = collect(UniformPolicy(), other, 30, rng2);
  EXPECT_EQ(a.observations, b.observations);
  EXPECT_EQ(a.rewards, b.rewards);
}

TEST(Gae, HandSummedExample) {
  RolloutBatch b;
  b.n_envs = 1;
  b.n_steps = 3;
  b.rewards = {1, 0, 1};
  b.values = {0.5, 0.3, 0.9};  // inner values cancel at lambda = 1
  b.dones = {0, 0, 0};
  b.last_values = {2};
  compute_advantages(b, 0.5, 1.0);
  EXPECT_NEAR(b.advantages[0], 1.0, 1e-12);
  EXPECT_NEAR(b.returns[0], 1.5, 1e-12);
}

TEST(Gae, ZeroRewardsAndValuesGiveZero) {
  RolloutBatch b;
  b.n_envs = 2;
  b.n_steps = 4;
  b.rewards.assign(8, 0.0);
  b.values.assign(8, 0.0);
  b.dones.assign(8, 0);
  b.dones[3] = 1;
  b.last_values = {0, 0};
  compute_advantages(b, 0.99, 0.95);
  for (double a : b.advantages) EXPECT_EQ(a, 0.0);
}

TEST(Gae, DomainErrors) {
  RolloutBatch b;
  b.n_envs = 1;
  b.n_steps = 1;
  b.rewards = {0};
  b.values = {0};
  b.dones = {0};
  b.last_values = {0};
  EXPECT_THROW(compute_advantages(b, 0.0, 0.5), DomainError);
  EXPECT_THROW(compute_advantages(b, 1.5, 0.5), DomainError);
  EXPECT_THROW(compute_advantages(b, 0.9, -0.1), DomainError);
  EXPECT_NO_THROW(compute_advantages(b, 1.0, 1.0));
}

TEST(Gae, LambdaOneEqualsDirectSum) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto b = oracle::random_batch(rng, 3, 20, 0.1);
    compute_advantages(b, 0.9, 1.0);
    for (int e = 0; e < 3; ++e)
      for (int t = 0; t < 20; ++t)
        EXPECT_NEAR(b.advantages[static_cast<std::size_t>(t) * 3 + e], oracle::nstep_advantage(b, 0.9, e, t), 1e-9);
  }
}

TEST(Gae, GeneralLambdaEqualsNStepMixture) {
  Rng rng(12);
  for (double lambda : {0.0, 0.5, 0.95}) {
    auto b = oracle::random_batch(rng, 2, 12, 0.15);
    compute_advantages(b, 0.97, lambda);
    for (int e = 0; e < 2; ++e)
      for (int t = 0; t < 12; ++t)
        EXPECT_NEAR(b.advantages[static_cast<std::size_t>(t) * 2 + e], oracle::gae_mixture(b, 0.97, lambda, e, t),
                    1e-9);
  }
}

TEST(Gae, DoneStopsCreditFromNextEpisode) {
  RolloutBatch b;
  b.n_envs = 1;
  b.n_steps = 3;
  b.rewards = {0, 0, 100};
  b.values = {0, 0, 0};
  b.dones = {0, 1, 0};
  b.last_values = {50};
  compute_advantages(b, 0.9, 0.95);
  EXPECT_EQ(b.advantages[0], 0.0);
  EXPECT_EQ(b.advantages[1], 0.0);
  EXPECT_NEAR(b.advantages[2], 100 + 0.9 * 50, 1e-12);
}

TEST(BatchIo, RoundTrip) {
  auto b = rollout(UniformPolicy(), 2, 40, 2);
  compute_advantages(b, 0.99, 0.95);
  const auto dir = tests::temp_dir("batch_io");
  const auto path = dir + "/b.bin";
  write_batch(b, path);
  const auto r = read_batch(path);
  EXPECT_EQ(r.n_envs, b.n_envs);
  EXPECT_EQ(r.n_steps, b.n_steps);
  EXPECT_EQ(r.observations, b.observations);
  EXPECT_EQ(r.actions, b.actions);
  EXPECT_EQ(r.rewards, b.rewards);
  EXPECT_EQ(r.values, b.values);
  EXPECT_EQ(r.action_dists, b.action_dists);
  EXPECT_EQ(r.dones, b.dones);
  EXPECT_EQ(r.style_ids, b.style_ids);
  EXPECT_EQ(r.advantages, b.advantages);
  EXPECT_EQ(r.returns, b.returns);
  EXPECT_EQ(r.last_values, b.last_values);
  EXPECT_EQ(r.episode_returns, b.episode_returns);
  std::filesystem::remove_all(dir);
}

TEST(BatchIo, RejectsCorruptFiles) {
  const auto dir = tests::temp_dir("batch_io_bad");
  EXPECT_THROW(read_batch(dir + "/missing.bin"), IoError);
  {
    std::ofstream f(dir + "/bad.bin", std::ios::binary);
    f << "NOTABATCH";
  }
  EXPECT_THROW(read_batch(dir + "/bad.bin"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(SampleCategorical, MatchesProbabilities) {
  Rng rng(4);
  const std::vector<double> p = {0.1, 0.0, 0.6, 0.3};
  std::vector<int> counts(4, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[sample_categorical(p, rng)];
  EXPECT_EQ(counts[1], 0);
  for (int a : {0, 2, 3}) EXPECT_NEAR(counts[a] / static_cast<double>(n), p[a], 0.01);
}
