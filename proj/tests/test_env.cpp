#include <gtest/gtest.h>

#include <set>

#include "core/config.hpp"
#include "core/distractor_world.hpp"
#include "core/errors.hpp"
#include "core/rng.hpp"

using namespace arpo;

TEST(KvConfig, LaterAssignmentWinsAndCommentsIgnored) {
  const auto kv = KvConfig::parse("# header\na = 1\nb = x # trailing\na = 2\n");
  EXPECT_EQ(kv.get_int("a", 0), 2);
  EXPECT_EQ(kv.get_string("b", ""), "x");
  EXPECT_EQ(kv.get_int("missing", 7), 7);
}

TEST(KvConfig, RejectsMalformedLinesAndValues) {
  EXPECT_THROW(KvConfig::parse("no equals sign"), ConfigError);
  EXPECT_THROW(KvConfig::parse(" = 3"), ConfigError);
  const auto kv = KvConfig::parse("a = 1.5x\nb = maybe\n");
  EXPECT_THROW(kv.get_double("a", 0), ConfigError);
  EXPECT_THROW(kv.get_bool("b", false), ConfigError);
}

TEST(KvConfig, IntListRangesRoundTrip) {
  EXPECT_EQ(parse_int_list("0-3,8,10-11"), (std::vector<int>{0, 1, 2, 3, 8, 10, 11}));
  EXPECT_EQ(parse_int_list(format_int_list({0, 1, 2, 3, 8, 10, 11})), (std::vector<int>{0, 1, 2, 3, 8, 10, 11}));
}

TEST(KvConfig, UnconsumedKeysReported) {
  const auto kv = KvConfig::parse("a = 1\ntypo = 2\n");
  kv.get_int("a", 0);
  EXPECT_EQ(kv.unconsumed_keys(), std::vector<std::string>{"typo"});
}

TEST(KvConfig, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0}) EXPECT_EQ(std::stod(format_double(v)), v);
}

TEST(Rng, NamedStreamsAreIndependentAndStable) {
  auto a = named_stream(1, "env");
  auto b = named_stream(1, "env");
  auto c = named_stream(1, "action");
  EXPECT_EQ(a(), b());
  EXPECT_NE(named_stream(1, "env")(), c());
  EXPECT_NE(named_stream(1, "env")(), named_stream(2, "env")());
}

TEST(Rng, UniformIndexCoversRangeWithoutBias) {
  Rng rng(3);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[uniform_index(rng, 7)];
  for (int c : counts) EXPECT_NEAR(c, n / 7.0, 5 * std::sqrt(n / 7.0));
}

TEST(Rng, StateRoundTrip) {
  Rng rng(9);
  rng();
  const auto s = rng_state(rng);
  Rng other;
  restore_rng_state(other, s);
  EXPECT_EQ(rng(), other());
}

namespace {

EnvConfig small_env() {
  EnvConfig c;
  c.n_styles = 8;
  c.train_styles = {0, 1, 2, 3};
  c.test_styles = {4, 5, 6, 7};
  return c;
}

std::size_t count_differences(const Image& a, const Image& b, const PixelMask& mask) {
  std::size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (!mask[static_cast<std::size_t>(y) * a.width + x]) continue;
      for (int c = 0; c < 3; ++c) n += a.at(y, x, c) != b.at(y, x, c);
    }
  return n;
}

// Open cell with an open neighbour in direction `action` that is not the goal.
bool find_open_move(const Layout& l, GridPos& from, int& action) {
  for (int r = 0; r < l.grid_size; ++r)
    for (int c = 0; c < l.grid_size; ++c) {
      const GridPos p{r, c};
      if (l.is_wall(p) || p == l.goal) continue;
      for (int a = 1; a < kNumActions; ++a) {
        const GridPos q = apply_move(l, p, a);
        if (!(q == p) && !(q == l.goal)) {
          from = p;
          action = a;
          return true;
        }
      }
    }
  return false;
}

}  // namespace

TEST(EnvConfig, ValidHandleAndShape) {
  auto env = make_env(small_env(), Split::kTrain);
  const auto obs = env.reset({0, 1, 0});
  EXPECT_EQ(obs.image.height, 32);
  EXPECT_EQ(obs.image.width, 32);
  EXPECT_EQ(obs.image.size(), 32u * 32u * 3u);
  for (float v : obs.image.pixels) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

TEST(EnvConfig, OverlappingSplitsRejected) {
  auto c = small_env();
  c.train_styles = {0, 1};
  c.test_styles = {1, 2};
  EXPECT_THROW(make_env(c, Split::kTrain), ConfigError);
}

TEST(EnvConfig, OutOfRangeStylesAndGeometryRejected) {
  auto c = small_env();
  c.test_styles = {4, 8};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_env();
  c.grid_size = 9;  // 9 * 4 > 32
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EnvConfig, KvRoundTrip) {
  auto c = small_env();
  c.horizon = 17;
  c.step_cost = 0.02;
  KvConfig kv;
  c.to_kv(kv);
  const auto back = EnvConfig::from_kv(KvConfig::parse(kv.to_string()));
  EXPECT_EQ(back.train_styles, c.train_styles);
  EXPECT_EQ(back.test_styles, c.test_styles);
  EXPECT_EQ(back.horizon, 17);
  EXPECT_EQ(back.step_cost, 0.02);
}

TEST(DistractorWorld, ResetIsDeterministic) {
  auto a = make_env(small_env(), Split::kTrain);
  auto b = make_env(small_env(), Split::kTrain);
  EXPECT_EQ(a.reset({5, 2, 3}).image, b.reset({5, 2, 3}).image);
  EXPECT_EQ(a.reset({5, 2, 3}).image, a.reset({5, 2, 3}).image);
}

TEST(DistractorWorld, MasksPartitionTheFrame) {
  const auto c = small_env();
  const auto s = state_mask(c);
  const auto d = distractor_mask(c);
  ASSERT_EQ(s.size(), d.size());
  std::size_t n_state = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s[i] + d[i], 1);
    n_state += s[i];
  }
  EXPECT_GT(n_state, 0u);
  EXPECT_LT(n_state, s.size());
}

TEST(DistractorWorld, StyleChangesOnlyDistractorPixels) {
  const auto c = small_env();
  auto env = make_env(c, Split::kTrain);
  for (std::uint64_t seed : {0u, 7u, 13u}) {
    const auto a = env.reset({seed, 0, 2}).image;
    const auto b = env.reset({seed, 1, 2}).image;
    EXPECT_EQ(count_differences(a, b, state_mask(c)), 0u);
    EXPECT_GT(count_differences(a, b, distractor_mask(c)), 0u);
  }
}

TEST(DistractorWorld, LayoutChangesStatePixels) {
  const auto c = small_env();
  auto env = make_env(c, Split::kTrain);
  int differing = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = env.reset({seed, 1, 0}).image;
    const auto b = env.reset({seed + 100, 1, 0}).image;
    differing += count_differences(a, b, state_mask(c)) > 0;
  }
  EXPECT_EQ(differing, 10);
}

TEST(DistractorWorld, SplitViolationOnForeignStyle) {
  auto train = make_env(small_env(), Split::kTrain);
  auto test = make_env(small_env(), Split::kTest);
  EXPECT_THROW(train.reset({0, 5, 0}), SplitViolation);
  EXPECT_THROW(test.reset({0, 1, 0}), SplitViolation);
  EXPECT_NO_THROW(test.reset({0, 5, 0}));
}

TEST(DistractorWorld, StepBeforeResetOrAfterDoneIsUsageError) {
  auto env = make_env(small_env(), Split::kTrain);
  EXPECT_THROW(env.step(kNoop), UsageError);
  env.reset({0, 0, 0});
  EXPECT_THROW(env.step(9), DomainError);
  while (!env.done()) env.step(kNoop);
  EXPECT_THROW(env.step(kNoop), UsageError);
}

TEST(DistractorWorld, MoveOntoGoalGivesGoalReward) {
  auto env = make_env(small_env(), Split::kTrain);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    env.reset({seed, 0, 0});
    const Layout& l = env.layout();
    for (int a = 1; a < kNumActions; ++a) {
      // Teleport next to the goal via a snapshot, then step onto it.
      GridPos from = l.goal;
      const int back = a == kUp ? kDown : a == kDown ? kUp : a == kLeft ? kRight : kLeft;
      from = apply_move(l, l.goal, back);
      if (from == l.goal) continue;
      auto snap = env.snapshot();
      snap.latent.agent = from;
      env.restore(snap);
      const auto r = env.step(a);
      EXPECT_EQ(r.reward, 1.0);
      EXPECT_TRUE(r.done);
      EXPECT_EQ(r.observation.latent.agent, l.goal);
      env.reset({seed, 0, 0});
    }
  }
}

TEST(DistractorWorld, NoopKeepsPositionAndCostsStep) {
  auto env = make_env(small_env(), Split::kTrain);
  env.reset({3, 0, 0});
  const auto before = env.latent().agent;
  const auto r = env.step(kNoop);
  EXPECT_EQ(r.observation.latent.agent, before);
  EXPECT_EQ(r.reward, -0.01);
  EXPECT_FALSE(r.done);
  GridPos from;
  int action = 0;
  ASSERT_TRUE(find_open_move(env.layout(), from, action));
}

TEST(DistractorWorld, HorizonEndsEpisodeAfterExactlyTSteps) {
  auto c = small_env();
  c.horizon = 11;
  auto env = make_env(c, Split::kTrain);
  env.reset({4, 2, 0});
  int steps = 0;
  while (!env.done()) {
    const auto r = env.step(kNoop);
    ++steps;
    EXPECT_EQ(r.info.episode_step, steps);
  }
  EXPECT_EQ(steps, 11);
}

TEST(DistractorWorld, WallsAndBordersBlockMovement) {
  auto env = make_env(small_env(), Split::kTrain);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Layout l = make_layout(small_env(), seed);
    EXPECT_GT(shortest_path_length(l, l.start), 0);
    EXPECT_FALSE(l.is_wall(l.start));
    EXPECT_FALSE(l.is_wall(l.goal));
    for (int r = 0; r < l.grid_size; ++r)
      for (int col = 0; col < l.grid_size; ++col) {
        const GridPos p{r, col};
        if (l.is_wall(p)) continue;
        for (int a = 0; a < kNumActions; ++a) {
          const GridPos q = apply_move(l, p, a);
          EXPECT_GE(q.row, 0);
          EXPECT_LT(q.row, l.grid_size);
          EXPECT_FALSE(l.is_wall(q));
          EXPECT_LE(std::abs(q.row - p.row) + std::abs(q.col - p.col), 1);
        }
      }
  }
}

TEST(DistractorWorld, SnapshotRestoreReproducesTrajectory) {
  auto env = make_env(small_env(), Split::kTrain);
  env.reset({2, 3, 5});
  env.step(kRight);
  const auto snap = env.snapshot();
  const auto a = env.step(kDown);
  auto other = make_env(small_env(), Split::kTrain);
  other.restore(snap);
  const auto b = other.step(kDown);
  EXPECT_EQ(a.observation.image, b.observation.image);
  EXPECT_EQ(a.reward, b.reward);
}

TEST(LevelSampler, TrainSetIsFiniteAndTestStylesHeldOut) {
  auto c = small_env();
  c.train_layouts = 5;
  LevelSampler train(c, Split::kTrain);
  LevelSampler test(c, Split::kTest);
  const auto all = train.enumerate_train();
  EXPECT_EQ(all.size(), 5u * 4u);
  std::set<std::tuple<std::uint64_t, int, int>> known;
  for (const auto& l : all) known.insert({l.layout_seed, l.style_id, l.dynamic_phase});
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto l = train.sample(rng);
    EXPECT_TRUE(known.count({l.layout_seed, l.style_id, l.dynamic_phase}));
    const auto t = test.sample(rng);
    EXPECT_GE(t.style_id, 4);
    EXPECT_GE(t.layout_seed, kTestLayoutOffset);
  }
}

TEST(LevelSampler, ExportJsonRoundTrip) {
  auto c = small_env();
  c.train_layouts = 3;
  const auto levels = levels_from_json(LevelSampler(c, Split::kTest).export_json(10, 4));
  ASSERT_EQ(levels.size(), 10u);
  EXPECT_EQ(levels, levels_from_json(LevelSampler(c, Split::kTest).export_json(10, 4)));
  EXPECT_EQ(levels_from_json(LevelSampler(c, Split::kTrain).export_json(0, 0)).size(), 12u);
}
