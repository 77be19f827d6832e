#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <thread>

#include "gradcheck.h"
#include "latentplan/training.h"
#include "latentplan/value_transform.h"

namespace latentplan {
namespace {

// ---- two-hot ----------------------------------------------------------------

// Inverse of h by bisection, independent of the closed form.
double bisect_inverse(double y) {
  double lo = -1e6, hi = 1e6;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (contract(mid) < y ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

TEST(TwoHotTest, ZeroIsOneHotOnCenter) {
  auto c = scalar_to_categorical(0.0, 101);
  EXPECT_EQ(c[50], 1.0);
  double s = 0;
  for (double v : c) s += v;
  EXPECT_EQ(s, 1.0);
}

TEST(TwoHotTest, SplitsBetweenNeighbours) {
  const double x = bisect_inverse(0.3);
  auto c = scalar_to_categorical(x, 101);
  EXPECT_NEAR(c[50], 0.7, 1e-9);
  EXPECT_NEAR(c[51], 0.3, 1e-9);
  int nonzero = 0;
  for (double v : c) nonzero += v != 0;
  EXPECT_EQ(nonzero, 2);
}

TEST(TwoHotTest, RoundTrip) {
  Rng rng(1);
  const double limit = bisect_inverse(50.0);
  std::uniform_real_distribution<double> u(-limit, limit);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    EXPECT_LT(std::abs(x - categorical_to_scalar(scalar_to_categorical(x, 101))), 1e-4) << x;
  }
}

TEST(TwoHotTest, ClosedFormInverseMatchesBisection) {
  for (double y : {-40.0, -3.3, -1.0, 0.0, 0.2, 1.0, 7.5, 49.0}) {
    EXPECT_NEAR(expand(y), bisect_inverse(y), 1e-6 * std::max(1.0, std::abs(expand(y))));
  }
}

TEST(TwoHotTest, DecodeExamples) {
  std::vector<double> uniform(101, 1.0 / 101);
  EXPECT_NEAR(categorical_to_scalar(uniform), 0.0, 1e-12);
  std::vector<double> one(101, 0.0);
  one[51] = 1.0;
  EXPECT_NEAR(categorical_to_scalar(one), bisect_inverse(1.0), 1e-9);
  std::vector<double> bad(101, 0.0);
  bad[3] = 0.5;
  EXPECT_THROW(categorical_to_scalar(bad), ValidationError);
  bad[3] = -0.5;
  bad[4] = 1.5;
  EXPECT_THROW(categorical_to_scalar(bad), ValidationError);
}

TEST(TwoHotTest, ClampsOutsideSupport) {
  auto c = scalar_to_categorical(1e9, 11);
  EXPECT_EQ(c[10], 1.0);
}

// ---- segments, replay, value targets -------------------------------------

Transition step(double reward, bool done, int64_t a = 0) {
  Transition t;
  t.obs = {0.f, 0.f, 0.f};
  t.action = Action::discrete(a);
  t.reward = reward;
  t.done = done;
  t.policy = {0.5, 0.5};
  return t;
}

GameSegment segment(std::vector<double> rewards) {
  GameSegment s;
  for (size_t i = 0; i < rewards.size(); ++i) s.steps.push_back(step(rewards[i], i + 1 == rewards.size()));
  s.final_obs = {0.f, 0.f, 0.f};
  return s;
}

TEST(SegmentTest, ValidatesDoneAndPolicy) {
  auto s = segment({0, 0, 1});
  EXPECT_NO_THROW(s.validate());
  s.steps[0].done = true;
  EXPECT_THROW(s.validate(), ValidationError);
  s = segment({0, 1});
  s.steps[1].policy = {0.5, 0.6};
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(ValueTargetTest, Examples) {
  auto s = segment({1, 1, 0});
  const double boot[] = {0, 0, 4};
  EXPECT_DOUBLE_EQ(compute_value_target(s, 0, 2, 0.5, boot), 2.5);
  auto t = segment({0, 1});
  EXPECT_DOUBLE_EQ(compute_value_target(t, 1, 5, 0.997, boot), 1.0);
}

TEST(ValueTargetTest, MatchesBruteForce) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const int len = 1 + trial % 12;
    std::vector<double> r(len), v(len);
    for (auto& x : r) x = u(rng);
    for (auto& x : v) x = 5 * u(rng);
    auto s = segment(r);
    for (int n = 1; n <= 7; ++n) {
      for (int t = 0; t < len; ++t) {
        // Definition: rewards up to the episode end, bootstrap only when
        // step t+n still exists.
        double expect = 0;
        for (int k = 0; k < n && t + k < len; ++k) expect += std::pow(0.9, k) * r[t + k];
        if (t + n < len) expect += std::pow(0.9, n) * v[t + n];
        EXPECT_NEAR(compute_value_target(s, t, n, 0.9, v), expect, 1e-12);
      }
    }
  }
}

TEST(ReplayTest, FifoEvictionRespectsCapacity) {
  ReplayBuffer buf(10);
  for (int i = 0; i < 6; ++i) {
    buf.add(segment(std::vector<double>(static_cast<size_t>(1 + i % 4), 0.0)));
    EXPECT_LE(buf.num_transitions(), 10);
  }
  // lengths 1 2 3 4 1 2 -> keeps the newest that fit: 3 4 1 2.
  EXPECT_EQ(buf.num_segments(), 4);
  EXPECT_EQ(buf.num_transitions(), 10);
}

TEST(ReplayTest, InsufficientData) {
  ReplayBuffer buf;
  Rng rng(0);
  EXPECT_THROW(buf.sample(4, rng), InsufficientDataError);
  buf.add(segment({1}));
  EXPECT_THROW(buf.sample(4, rng, 2), InsufficientDataError);
  EXPECT_EQ(buf.sample(4, rng).size(), 4u);
}

TEST(ReplayTest, UniformSamplingChiSquare) {
  ReplayBuffer buf;
  const int k = 20;
  for (int i = 0; i < k; ++i) buf.add(segment({static_cast<double>(i)}));
  Rng rng(12);
  auto idx = buf.sample_indices(10000, rng);
  std::vector<int> count(k, 0);
  for (auto i : idx) ++count[static_cast<size_t>(i)];
  double chi = 0;
  const double expect = 10000.0 / k;
  for (int c : count) {
    EXPECT_GT(c, 0);
    chi += (c - expect) * (c - expect) / expect;
  }
  // 19 degrees of freedom: the 0.999 quantile is 43.8.
  EXPECT_LT(chi, 43.8);
}

TEST(ReplayTest, ConcurrentAddAndSample) {
  ReplayBuffer buf(500);
  buf.add(segment({0}));
  std::thread writer([&] {
    for (int i = 0; i < 300; ++i) buf.add(segment({0, 1}));
  });
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    for (const auto& s : buf.sample(4, rng)) EXPECT_NO_THROW(s.validate());
  }
  writer.join();
  EXPECT_LE(buf.num_transitions(), 500);
}

// ---- loss ----------------------------------------------------------------

ModelConfig tiny(bool continuous = false) {
  ModelConfig c;
  c.latent_dim = 8;
  c.group_size = 4;
  c.layers = 1;
  c.heads = 2;
  c.dropout = 0.0;
  c.max_positions = 8;
  c.num_actions = 2;
  c.continuous = continuous;
  c.encoder = EncoderKind::kMlp;
  c.obs_shape = {3};
  c.mlp_hidden = 6;
  c.head_hidden = 6;
  c.bins = 5;
  return c;
}

std::vector<GameSegment> random_segments(int count, int max_len, const ModelConfig& cfg, Rng& rng,
                                         int64_t task = 0) {
  std::uniform_real_distribution<float> u(0, 1);
  std::uniform_int_distribution<int> len_dist(1, max_len);
  std::vector<GameSegment> out;
  for (int i = 0; i < count; ++i) {
    GameSegment s;
    s.task = task;
    const int len = len_dist(rng);
    for (int t = 0; t < len; ++t) {
      Transition tr;
      tr.obs = {u(rng), u(rng), u(rng)};
      tr.reward = u(rng) < 0.3 ? 1.0 : 0.0;
      tr.done = t + 1 == len;
      if (cfg.continuous) {
        double total = 0;
        for (int k = 0; k < 3; ++k) {
          tr.sampled_actions.push_back(Action::continuous({2 * u(rng) - 1}));
          tr.policy.push_back(u(rng) + 0.1);
          total += tr.policy.back();
        }
        for (auto& p : tr.policy) p /= total;
        tr.action = tr.sampled_actions[0];
      } else {
        const double p = u(rng);
        tr.policy = {p, 1 - p};
        tr.action = Action::discrete(u(rng) < 0.5 ? 0 : 1);
      }
      s.steps.push_back(tr);
    }
    s.final_obs = {u(rng), u(rng), u(rng)};
    out.push_back(s);
  }
  return out;
}

void perturb(WorldModel<double>& m, uint64_t seed, double std = 0.3) {
  Rng rng(seed);
  std::normal_distribution<double> n(0, std);
  for (auto& t : m.parameters()) {
    for (auto& v : t.values()) v += n(rng);
  }
}

TEST(LossTest, TotalIsWeightedSumOfTerms) {
  const auto cfg = tiny();
  WorldModel<double> m(cfg, 1), tgt(cfg, 2);
  perturb(m, 3);
  Rng rng(4);
  auto b = make_batch<double>(random_segments(3, 4, cfg, rng), 4, cfg, rng);
  prepare_targets(b, tgt, 2, 0.9);
  LossWeights w;
  auto r = unizero_loss(b, m, w);
  const auto& p = r.parts;
  EXPECT_NEAR(p.total, w.latent * p.latent + w.reward * p.reward + w.policy * p.policy +
                           w.value * p.value - w.entropy * p.entropy,
              1e-6);
  EXPECT_GT(p.latent, 0);
  EXPECT_GT(p.reward, 0);
  EXPECT_GT(p.policy, 0);
  EXPECT_GT(p.value, 0);
  EXPECT_GT(p.entropy, 0);
}

TEST(LossTest, LatentMeanReductionDividesByDim) {
  const auto cfg = tiny();
  WorldModel<double> m(cfg, 1), tgt(cfg, 2);
  perturb(m, 3);
  Rng rng(4);
  auto b = make_batch<double>(random_segments(3, 4, cfg, rng), 4, cfg, rng);
  prepare_targets(b, tgt, 2, 0.9);
  LossWeights mean_w;
  mean_w.latent_mean = true;
  const double summed = unizero_loss(b, m, LossWeights{}).parts.latent;
  EXPECT_NEAR(unizero_loss(b, m, mean_w).parts.latent, summed / cfg.latent_dim, 1e-12);
}

TEST(LossTest, LatentTermZeroWhenPredictionMatchesTarget) {
  const auto cfg = tiny();
  WorldModel<double> m(cfg, 1);
  perturb(m, 2);
  Rng rng(3);
  auto b = make_batch<double>(random_segments(2, 3, cfg, rng), 3, cfg, rng);
  prepare_targets(b, m, 2, 0.9);
  auto out = m.unroll(b.obs, b.actions, b.batch, b.steps);
  b.target_latent = Tensor<double>::from(out.next_latent.shape(), out.next_latent.values());
  EXPECT_EQ(unizero_loss(b, m, LossWeights{}).parts.latent, 0.0);
}

TEST(LossTest, TargetModelReceivesNoGradient) {
  const auto cfg = tiny();
  WorldModel<double> m(cfg, 1), tgt(cfg, 2);
  Rng rng(3);
  auto b = make_batch<double>(random_segments(2, 3, cfg, rng), 3, cfg, rng);
  prepare_targets(b, tgt, 2, 0.9);
  for (auto& t : tgt.parameters()) t.zero_grad();
  backward(unizero_loss(b, m, LossWeights{}).total);
  for (auto& t : tgt.parameters()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) EXPECT_EQ(g, 0.0);
  }
  bool any = false;
  for (auto& t : m.parameters()) any = any || t.has_grad();
  EXPECT_TRUE(any);
}

// One step, two actions, all heads zeroed: every term has a closed form.
TEST(LossTest, HandComputedToyCase) {
  auto cfg = tiny();
  WorldModel<double> m(cfg, 5);
  const auto& h = m.heads(0);
  for (const auto* layer : {&h.policy.l2, &h.value.l2, &h.reward.l2, &h.latent.l2}) {
    for (auto t : {layer->w, layer->b}) std::fill(t.values().begin(), t.values().end(), 0.0);
  }
  GameSegment s;
  Transition tr;
  tr.obs = {0.1f, 0.2f, 0.3f};
  tr.action = Action::discrete(1);
  tr.reward = 0.0;
  tr.done = true;
  tr.policy = {0.7, 0.3};
  s.steps.push_back(tr);
  s.final_obs = {0.9f, 0.8f, 0.7f};
  Rng rng(0);
  auto b = make_batch<double>({s}, 1, cfg, rng);
  prepare_targets(b, m, 5, 0.997);
  ASSERT_EQ(b.value_target[0], 0.0);

  auto zbar = m.encode(Tensor<double>::from({1, 3}, {0.9, 0.8, 0.7})).values();
  double latent = 0;
  for (double z : zbar) latent += (0.25 - z) * (0.25 - z);  // SimNorm(0) = 1/group
  // Uniform logits: CE with a one-hot two-hot target is log(bins); CE with
  // pi is log(2); entropy is log(2).
  const double expect = 10 * latent + 1 * std::log(5.0) + 1 * std::log(2.0) + 0.5 * std::log(5.0) -
                        1e-4 * std::log(2.0);
  EXPECT_NEAR(unizero_loss(b, m, LossWeights{}).parts.total, expect, 1e-6);
}

TEST(LossTest, PaddedRowsAreAbsorbing) {
  const auto cfg = tiny();
  Rng rng(1);
  auto segs = random_segments(1, 1, cfg, rng);
  auto b = make_batch<double>(segs, 4, cfg, rng);
  EXPECT_EQ(b.valid, (std::vector<uint8_t>{1, 0, 0, 0}));
  for (int t = 1; t < 4; ++t) {
    EXPECT_EQ(b.rewards[t], 0.0);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(b.obs.at(t * 3 + i), static_cast<double>(segs[0].final_obs[i]));
  }
  WorldModel<double> m(cfg, 1);
  prepare_targets(b, m, 3, 0.9);
  for (int t = 1; t < 4; ++t) EXPECT_EQ(b.value_target[t], 0.0);
  auto longer = random_segments(1, 1, cfg, rng);
  longer[0].steps.resize(5, longer[0].steps[0]);
  EXPECT_THROW(make_batch<double>(longer, 4, cfg, rng), ValidationError);
}

TEST(LossTest, EndToEndGradient) {
  for (bool continuous : {false, true}) {
    for (bool decode : {false, true}) {
      auto cfg = tiny(continuous);
      cfg.decoder = decode;
      WorldModel<double> m(cfg, 7), tgt(cfg, 8);
      perturb(m, 9);
      Rng rng(10);
      auto b = make_batch<double>(random_segments(2, 3, cfg, rng), 3, cfg, rng);
      prepare_targets(b, tgt, 2, 0.9);
      LossWeights w;
      w.entropy = 0.1;  // large enough to matter in the check
      w.decode = decode ? 0.05 : 0.0;
      auto fn = [&](const std::vector<Tensor<double>>&) { return unizero_loss(b, m, w).total; };
      auto res = testing::grad_check(fn, m.parameters());
      EXPECT_LT(res.max_rel_error, 1e-3) << "continuous " << continuous << " decode " << decode
                                         << " abs " << res.max_abs_error;
    }
  }
}

TEST(DecodeRegTest, Examples) {
  auto o = Tensor<double>::from({1, 2}, {1, 0});
  EXPECT_DOUBLE_EQ(decode_regularization(o, o, 0.05).item(), 0.0);
  EXPECT_DOUBLE_EQ(decode_regularization(o, Tensor<double>::zeros({1, 2}), 0.05).item(), 0.05);
  auto a = Tensor<double>::from({1, 2}, {0.3, 0.9});
  auto flipped = Tensor<double>::from({1, 2}, {1.7, -0.9});  // o + (o - a)
  EXPECT_NEAR(decode_regularization(o, a, 1.0).item(), decode_regularization(o, flipped, 1.0).item(),
              1e-12);
}

TEST(ContinuousPolicyLossTest, OneHotIsNegativeLogDensity) {
  auto mu = Tensor<double>::from({1, 1}, {0.2});
  auto sigma = Tensor<double>::from({1, 1}, {0.5});
  std::vector<std::vector<float>> samples{{0.4f, -0.3f}};
  auto w = Tensor<double>::from({1, 2}, {1.0, 0.0});
  const double z = (0.4f - 0.2) / 0.5;
  const double expect = 0.5 * z * z + std::log(0.5) + 0.5 * std::log(2 * std::numbers::pi);
  EXPECT_NEAR(continuous_policy_nll(mu, sigma, samples, w).item(), expect, 1e-12);
}

TEST(ContinuousPolicyLossTest, MinimizedAtWeightedMean) {
  std::vector<std::vector<float>> samples{{0.4f, -0.3f, 0.9f}};
  auto w = Tensor<double>::from({1, 3}, {0.5, 0.2, 0.3});
  const double best = 0.5 * 0.4f + 0.2 * -0.3f + 0.3 * 0.9f;
  auto sigma = Tensor<double>::from({1, 1}, {0.7});
  auto mu = Tensor<double>::from({1, 1}, {best}, true);
  backward(continuous_policy_nll(mu, sigma, samples, w));
  EXPECT_NEAR(mu.grad()[0], 0.0, 1e-12);
  auto f = [&](double m) {
    return continuous_policy_nll(Tensor<double>::from({1, 1}, {m}), sigma, samples, w).item();
  };
  EXPECT_LT(f(best), f(best + 0.01));
  EXPECT_LT(f(best), f(best - 0.01));
}

TEST(ContinuousPolicyLossTest, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto mu = Tensor<double>::randn({3, 2}, rng, 0.5, true);
    auto raw = Tensor<double>::uniform({3, 2}, rng, 0.2, 1.0, true);
    std::vector<std::vector<float>> samples(3, std::vector<float>(8));
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto& r : samples) {
      for (auto& x : r) x = u(rng);
    }
    auto w = Tensor<double>::uniform({3, 4}, rng, 0.0, 1.0);
    auto fn = [&](const std::vector<Tensor<double>>& in) {
      return sum(continuous_policy_nll(in[0], in[1], samples, w));
    };
    auto res = testing::grad_check(fn, {mu, raw});
    EXPECT_LT(res.max_rel_error, 1e-4);
  }
}

TEST(MultitaskTest, MeanOfLosses) {
  auto a = Tensor<double>::scalar(2.0), b = Tensor<double>::scalar(4.0);
  EXPECT_DOUBLE_EQ(multitask_aggregate<double>({a, b}).item(), 3.0);
  EXPECT_DOUBLE_EQ(multitask_aggregate<double>({a}).item(), 2.0);
  EXPECT_THROW(multitask_aggregate<double>({}), UsageError);
}

TEST(MultitaskTest, HeadsRoutedPerTask) {
  auto cfg = tiny();
  cfg.num_tasks = 2;
  WorldModel<double> m(cfg, 1), tgt(cfg, 2);
  perturb(m, 3);
  Rng rng(4);
  auto b = make_batch<double>(random_segments(2, 3, cfg, rng, 1), 3, cfg, rng);
  prepare_targets(b, tgt, 2, 0.9);
  for (auto& t : m.parameters()) t.zero_grad();
  backward(unizero_loss(b, m, LossWeights{}).total);
  for (auto& t : m.task_parameters(0)) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) EXPECT_EQ(g, 0.0);
  }
  double other = 0;
  for (auto& t : m.task_parameters(1)) {
    if (t.has_grad()) {
      for (double g : t.grad()) other += std::abs(g);
    }
  }
  EXPECT_GT(other, 0.0);
}

// ---- train step ----------------------------------------------------------

TEST(TrainStepTest, OverfitsFrozenBatch) {
  const auto cfg = tiny();
  WorldModel<double> m(cfg, 1), tgt(cfg, 1);
  Rng rng(2);
  auto b = make_batch<double>(random_segments(4, 4, cfg, rng), 4, cfg, rng);
  prepare_targets(b, tgt, 3, 0.9);
  AdamW<double> opt(m.parameters(), {.lr = 3e-3, .weight_decay = 1e-4});
  double prev = 1e300;
  int worse = 0;
  const double first = unizero_loss(b, m, LossWeights{}).parts.total;
  for (int i = 0; i < 200; ++i) {
    auto r = unizero_loss(b, m, LossWeights{});
    if (r.parts.total > prev) ++worse;
    prev = r.parts.total;
    opt.zero_grad();
    backward(r.total);
    auto params = m.parameters();
    clip_global_norm(params, 5.0);
    opt.step();
  }
  EXPECT_LE(worse, 10);
  EXPECT_LT(prev, 0.5 * first);
}

TEST(TrainStepTest, ClipsAndReportsTerms) {
  const auto cfg = tiny();
  WorldModel<double> m(cfg, 1), tgt(cfg, 1);
  perturb(m, 2, 2.0);  // large weights -> large gradients
  ReplayBuffer buf;
  Rng rng(3);
  for (auto& s : random_segments(8, 4, cfg, rng)) buf.add(s);
  AdamW<double> opt(m.parameters(), {});
  TrainConfig tc;
  tc.batch_size = 8;
  tc.segment_length = 4;
  tc.max_grad_norm = 0.5;
  auto metrics = train_step<double>({&buf}, m, tgt, opt, tc, rng);
  EXPECT_GT(metrics.grad_norm, 0.5);
  EXPECT_LE(metrics.clipped_grad_norm, 0.5 + 1e-9);
  EXPECT_EQ(metrics.step, 1);
  EXPECT_GT(metrics.loss.latent, 0);
  EXPECT_GT(metrics.loss.reward, 0);
  EXPECT_GT(metrics.loss.policy, 0);
  EXPECT_GT(metrics.loss.value, 0);
  EXPECT_FALSE(m.training());

  tc.batch_size = 9;
  EXPECT_THROW(train_step<double>({&buf}, m, tgt, opt, tc, rng), InsufficientDataError);
}

TEST(TrainStepTest, SoftTargetMovesTowardOnline) {
  const auto cfg = tiny();
  WorldModel<double> m(cfg, 1), tgt(cfg, 5);
  ReplayBuffer buf;
  Rng rng(3);
  for (auto& s : random_segments(4, 4, cfg, rng)) buf.add(s);
  AdamW<double> opt(m.parameters(), {});
  TrainConfig tc;
  tc.batch_size = 4;
  tc.segment_length = 4;
  const auto before = tgt.parameters()[0].values();
  train_step<double>({&buf}, m, tgt, opt, tc, rng);
  const auto& online = m.parameters()[0].values();
  const auto& after = tgt.parameters()[0].values();
  for (size_t i = 0; i < before.size(); ++i) {
    EXPECT_NEAR(after[i], 0.95 * before[i] + 0.05 * online[i], 1e-12);
  }
}

// ---- collection ----------------------------------------------------------

TEST(CollectTest, VisualMatchEpisodesAreComplete) {
  ModelConfig cfg;
  cfg.latent_dim = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.conv_channels = {4, 8};
  cfg.head_hidden = 16;
  cfg.max_positions = 36;
  WorldModel<float> m(cfg, 1), tgt(cfg, 1);
  VisualMatch env({.memory_length = 2});
  SearchConfig sc;
  sc.num_simulations = 4;
  sc.context_steps = 18;
  Rng rng(5);
  auto segs = collect_experience<float>(env, m, &tgt, sc, {.episodes = 3}, rng);
  ASSERT_EQ(segs.size(), 3u);
  for (const auto& s : segs) {
    EXPECT_NO_THROW(s.validate());
    EXPECT_LE(s.length(), 18);
    EXPECT_GE(s.length(), 4);  // 1 + memlen + at least one reward-phase step
    for (const auto& t : s.steps) {
      double total = 0;
      for (double p : t.policy) total += p;
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
    EXPECT_EQ(s.episode_return() > 0, s.success);
  }
}

TEST(CollectTest, GreedyCollectionIsDeterministic) {
  auto cfg = tiny();
  cfg.obs_shape = {4};
  cfg.max_positions = 16;
  WorldModel<double> m(cfg, 3);
  perturb(m, 4);
  SearchConfig sc;
  sc.num_simulations = 8;
  sc.temperature = 0;
  sc.context_steps = 8;
  auto actions = [&] {
    ChainMdp env({.length = 4});
    Rng rng(9);
    auto segs = collect_experience<double>(env, m, nullptr, sc,
                                           {.episodes = 2, .add_noise = false}, rng);
    std::vector<int64_t> out;
    for (const auto& s : segs) {
      for (const auto& t : s.steps) out.push_back(t.action.index);
    }
    return out;
  };
  EXPECT_EQ(actions(), actions());
}

TEST(CollectTest, ContinuousStoresSampledActions) {
  auto cfg = tiny(true);
  cfg.obs_shape = {1};
  WorldModel<double> m(cfg, 1);
  ContinuousBandit env(0.3);
  SearchConfig sc;
  sc.continuous = true;
  sc.num_simulations = 10;
  sc.num_sampled_actions = 5;
  sc.context_steps = 2;
  Rng rng(1);
  auto segs = collect_experience<double>(env, m, nullptr, sc, {.episodes = 2}, rng);
  for (const auto& s : segs) {
    ASSERT_EQ(s.length(), 1);
    EXPECT_EQ(s.steps[0].sampled_actions.size(), 5u);
    EXPECT_EQ(s.steps[0].policy.size(), 5u);
  }
  EXPECT_NO_THROW(make_batch<double>(segs, 1, cfg, rng));
}

TEST(CollectTest, RejectsTrainingMode) {
  auto cfg = tiny();
  WorldModel<double> m(cfg, 1);
  m.set_training(true);
  DiscreteBandit env({1, 0});
  SearchConfig sc;
  Rng rng(0);
  EXPECT_THROW(collect_experience<double>(env, m, nullptr, sc, {}, rng), UsageError);
}

}  // namespace
}  // namespace latentplan
