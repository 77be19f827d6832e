#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "latentplan/env.h"

namespace latentplan {
namespace {

Action move(int64_t i) { return Action::discrete(i); }

TEST(VisualMatchTest, MaxEpisodeLength) {
  VisualMatch env({.memory_length = 2});
  EXPECT_EQ(env.max_episode_steps(), 18);
  env.reset(3);
  int steps = 0;
  StepResult r;
  do {
    r = env.step(move(VisualMatch::kStay));
    ++steps;
  } while (!r.done);
  EXPECT_EQ(steps, 18);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.reward, 0.0);
}

TEST(VisualMatchTest, PhaseBookkeeping) {
  for (int64_t memlen : {0, 1, 2, 5}) {
    VisualMatch env({.memory_length = memlen});
    env.reset(11);
    for (int64_t t = 0; t < env.max_episode_steps(); ++t) {
      const Phase expected = t < 1            ? Phase::kExploration
                             : t < 1 + memlen ? Phase::kDistraction
                                              : Phase::kReward;
      auto r = env.step(move(VisualMatch::kStay));
      EXPECT_EQ(r.phase, expected) << "memlen " << memlen << " t " << t;
    }
    EXPECT_TRUE(env.done());
  }
}

TEST(VisualMatchTest, ObservationShapeAndRange) {
  VisualMatch env({});
  auto obs = env.reset(0);
  ASSERT_EQ(obs.size(), 75u);
  for (float v : obs) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(VisualMatchTest, FirstFrameShowsTargetColor) {
  const float rgb[3][3] = {{0, 0, 1}, {1, 0, 0}, {0, 1, 0}};
  for (int c = 0; c < 3; ++c) {
    VisualMatch env({.forced_target = static_cast<Color>(c)});
    auto obs = env.reset(5);
    int matches = 0;
    for (int i = 0; i < 25; ++i) {
      if (obs[i] == rgb[c][0] && obs[25 + i] == rgb[c][1] && obs[50 + i] == rgb[c][2]) ++matches;
    }
    EXPECT_GE(matches, 8);  // at least the interior 3x3 minus the agent
  }
}

// Steps from the phase-3 start: up red, left blue, right green.
double reach(Color target, int64_t action) {
  VisualMatch env({.memory_length = 2, .forced_target = target});
  env.reset(9);
  for (int i = 0; i < 3; ++i) env.step(move(VisualMatch::kStay));
  EXPECT_EQ(env.agent(), (std::pair<int64_t, int64_t>{3, 3}));
  auto r = env.step(move(action));
  EXPECT_TRUE(r.done);
  return r.reward;
}

TEST(VisualMatchTest, CorrectColorRewarded) {
  EXPECT_EQ(reach(Color::kRed, VisualMatch::kUp), 1.0);
  EXPECT_EQ(reach(Color::kBlue, VisualMatch::kLeft), 1.0);
  EXPECT_EQ(reach(Color::kGreen, VisualMatch::kRight), 1.0);
  EXPECT_EQ(reach(Color::kGreen, VisualMatch::kUp), 0.0);
  EXPECT_EQ(reach(Color::kRed, VisualMatch::kLeft), 0.0);
}

TEST(VisualMatchTest, ApplesGiveNoReward) {
  VisualMatch env({.memory_length = 30, .num_apples = 24});
  env.reset(2);
  env.step(move(VisualMatch::kStay));
  // Every free cell holds an apple; any move eats one.
  const int64_t acts[] = {0, 1, 2, 3, 0, 0, 3, 3, 1, 1, 2, 2};
  for (int64_t a : acts) {
    auto r = env.step(move(a));
    EXPECT_EQ(r.reward, 0.0);
    EXPECT_EQ(r.phase, Phase::kDistraction);
  }
}

TEST(VisualMatchTest, ActionRangeChecked) {
  VisualMatch env({});
  env.reset(0);
  EXPECT_THROW(env.step(move(5)), DomainError);
  EXPECT_THROW(env.step(move(-1)), DomainError);
  VisualMatch four({.four_directions = true});
  four.reset(0);
  EXPECT_THROW(four.step(move(4)), DomainError);
}

TEST(VisualMatchTest, StepAfterDoneThrows) {
  VisualMatch env({.memory_length = 0, .forced_target = Color::kRed});
  env.reset(0);
  env.step(move(VisualMatch::kStay));
  env.step(move(VisualMatch::kUp));
  EXPECT_THROW(env.step(move(0)), UsageError);
}

TEST(VisualMatchTest, PhaseTwoHidesTarget) {
  // Same seed, different targets: phase-2 frames must be identical.
  for (uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<std::vector<float>> frames[3];
    for (int c = 0; c < 3; ++c) {
      VisualMatch env({.memory_length = 6, .forced_target = static_cast<Color>(c)});
      env.reset(seed);
      const int64_t acts[] = {0, 3, 3, 1, 2, 4};
      auto r = env.step(move(1));
      for (int64_t a : acts) {
        frames[c].push_back(r.obs);
        r = env.step(move(a));
      }
    }
    EXPECT_EQ(frames[0], frames[1]);
    EXPECT_EQ(frames[0], frames[2]);
  }
}

TEST(VisualMatchTest, DeterministicInSeedAndActions) {
  Rng rng(4);
  std::uniform_int_distribution<int64_t> a(0, 4);
  std::vector<int64_t> acts(18);
  for (auto& x : acts) x = a(rng);
  auto roll = [&](uint64_t seed) {
    VisualMatch env({});
    std::vector<std::vector<float>> out{env.reset(seed)};
    for (int64_t x : acts) {
      if (env.done()) break;
      out.push_back(env.step(move(x)).obs);
    }
    return out;
  };
  EXPECT_EQ(roll(7), roll(7));
  EXPECT_NE(roll(7), roll(8));
}

TEST(VisualMatchTest, CloneIsIndependent) {
  VisualMatch env({});
  env.reset(1);
  env.step(move(0));
  auto copy = env.clone();
  auto r1 = env.step(move(3));
  auto r2 = copy->step(move(3));
  EXPECT_EQ(r1.obs, r2.obs);
  env.step(move(1));
  EXPECT_NE(static_cast<VisualMatch*>(copy.get())->steps_taken(), env.steps_taken());
}

TEST(VisualMatchTest, RandomPolicyNearOneThird) {
  Rng rng(123);
  std::uniform_int_distribution<int64_t> a(0, 4);
  const int episodes = 300;
  int wins = 0;
  for (int e = 0; e < episodes; ++e) {
    VisualMatch env({});
    env.reset(static_cast<uint64_t>(e));
    while (!env.done()) env.step(move(a(rng)));
    wins += env.success();
  }
  const double rate = static_cast<double>(wins) / episodes;
  // 3 binomial standard deviations around 1/3, minus the small chance of
  // timing out without touching any color.
  EXPECT_NEAR(rate, 1.0 / 3.0, 3 * std::sqrt((1.0 / 3) * (2.0 / 3) / episodes) + 0.03);
}

TEST(ChainTest, RightRightReachesGoal) {
  ChainMdp env({.length = 3});
  env.reset(0);
  auto r1 = env.step(move(1));
  EXPECT_EQ(r1.reward, 0.0);
  EXPECT_FALSE(r1.done);
  auto r2 = env.step(move(1));
  EXPECT_EQ(r2.reward, 1.0);
  EXPECT_TRUE(r2.done);
  EXPECT_TRUE(env.success());
}

TEST(ChainTest, LeftResets) {
  ChainMdp env({.length = 4});
  env.reset(0);
  env.step(move(1));
  EXPECT_EQ(env.state(), 1);
  auto r = env.step(move(0));
  EXPECT_EQ(env.state(), 0);
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_EQ(r.obs, (Observation{1, 0, 0, 0}));
}

// Value iteration oracle on the chain agrees with gamma^(N-2).
TEST(ChainTest, OptimalValueMatchesClosedForm) {
  const double gamma = 0.997;
  for (int64_t n : {2, 3, 5, 8}) {
    std::vector<double> v(static_cast<size_t>(n), 0.0);
    for (int it = 0; it < 500; ++it) {
      std::vector<double> nv(v.size(), 0.0);
      for (int64_t s = 0; s + 1 < n; ++s) {
        const double right = s + 1 == n - 1 ? 1.0 : gamma * v[s + 1];
        const double left = gamma * v[0];
        nv[s] = std::max(right, left);
      }
      v = nv;
    }
    EXPECT_NEAR(v[0], std::pow(gamma, static_cast<double>(n - 2)), 1e-12) << n;
  }
}

TEST(ChainTest, TruncatesAtStepLimit) {
  ChainMdp env({.length = 5, .max_steps = 3});
  env.reset(0);
  env.step(move(0));
  env.step(move(0));
  auto r = env.step(move(0));
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.truncated);
  EXPECT_FALSE(env.success());
}

TEST(BanditTest, DiscreteArms) {
  DiscreteBandit env({1.0, 0.0, 0.5});
  env.reset(0);
  auto r = env.step(move(2));
  EXPECT_EQ(r.reward, 0.5);
  EXPECT_TRUE(r.done);
  EXPECT_FALSE(env.success());
  env.reset(0);
  env.step(move(0));
  EXPECT_TRUE(env.success());
}

TEST(BanditTest, ContinuousExamples) {
  ContinuousBandit env(0.3);
  env.reset(0);
  EXPECT_NEAR(env.step(Action::continuous({0.3f})).reward, 0.0, 1e-12);
  env.reset(0);
  ContinuousBandit env2(-0.5);
  env2.reset(0);
  EXPECT_NEAR(env2.step(Action::continuous({0.5f})).reward, -1.0, 1e-12);
}

TEST(BanditTest, ContinuousGridSearchRecoversOptimum) {
  ContinuousBandit env(0.3);
  double best = -1e9, arg = 0;
  for (int i = 0; i <= 200; ++i) {
    const float a = -1.0f + 0.01f * static_cast<float>(i);
    env.reset(0);
    const double r = env.step(Action::continuous({a})).reward;
    if (r > best) {
      best = r;
      arg = a;
    }
  }
  EXPECT_NEAR(arg, 0.3, 0.01);
}

TEST(PaddedEnvTest, PadsObservations) {
  PaddedEnv env(std::make_unique<ChainMdp>(ChainConfig{.length = 3}), 6);
  auto obs = env.reset(0);
  EXPECT_EQ(obs, (Observation{1, 0, 0, 0, 0, 0}));
  EXPECT_EQ(env.step(move(1)).obs.size(), 6u);
  EXPECT_THROW(PaddedEnv(std::make_unique<ChainMdp>(ChainConfig{.length = 8}), 6), ConfigError);
}

TEST(PpmTest, WritesHeaderAndPixels) {
  VisualMatch env({});
  auto obs = env.reset(0);
  const auto path = std::filesystem::temp_directory_path() / "latentplan_env_test.ppm";
  write_ppm(path, obs, 5, 5, 2);
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int w, h, maxv;
  in >> magic >> w >> h >> maxv;
  in.get();
  EXPECT_EQ(magic, "P6");
  EXPECT_EQ(w, 10);
  EXPECT_EQ(h, 10);
  std::vector<char> px((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(px.size(), 300u);
  // Center pixel is the agent (purple).
  const size_t c = (5 * 10 + 5) * 3;
  EXPECT_EQ(static_cast<uint8_t>(px[c]), 128);
  EXPECT_EQ(static_cast<uint8_t>(px[c + 1]), 0);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace latentplan
