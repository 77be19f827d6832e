#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "latentplan/experiment.h"

namespace latentplan {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("latentplan_exp_" + name);
  fs::remove_all(p);
  return p;
}

std::string read(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json chain_config(const fs::path& out) {
  auto j = Json::parse(R"({
    "seed": 3,
    "env": {"kind": "chain", "length": 3},
    "model": {"latent_dim": 16, "layers": 1, "heads": 2, "encoder": "mlp", "mlp_hidden": 16,
              "head_hidden": 16, "bins": 11, "dropout": 0.1},
    "search": {"num_simulations": 6},
    "train": {"total_env_steps": 200, "episodes_per_collect": 4, "batch_size": 4},
    "eval": {"interval": 100, "episodes": 4},
    "checkpoint": {"interval": 100}
  })");
  j["out"] = out.string();
  return j;
}

std::vector<Json> lines(const fs::path& p) {
  std::vector<Json> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(Json::parse(l));
  return out;
}

TEST(ConfigTest, DefaultsMatchHyperparameterTable) {
  const auto c = parse_config(R"({"env": {"kind": "visual_match"}})");
  EXPECT_EQ(c.model.latent_dim, 64);
  EXPECT_EQ(c.model.group_size, 8);
  EXPECT_EQ(c.model.layers, 2);
  EXPECT_EQ(c.model.heads, 4);
  EXPECT_DOUBLE_EQ(c.model.dropout, 0.1);
  EXPECT_EQ(c.model.bins, 101);
  EXPECT_EQ(c.search.num_simulations, 50);
  EXPECT_DOUBLE_EQ(c.search.c1, 1.25);
  EXPECT_DOUBLE_EQ(c.search.c2, 19652);
  EXPECT_DOUBLE_EQ(c.search.dirichlet_alpha, 0.3);
  EXPECT_DOUBLE_EQ(c.search.dirichlet_weight, 0.25);
  EXPECT_DOUBLE_EQ(c.search.temperature, 0.25);
  EXPECT_DOUBLE_EQ(c.train.discount, 0.997);
  EXPECT_DOUBLE_EQ(c.search.discount, 0.997);
  EXPECT_DOUBLE_EQ(c.optimizer.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.optimizer.weight_decay, 1e-4);
  EXPECT_DOUBLE_EQ(c.train.max_grad_norm, 5.0);
  EXPECT_EQ(c.train.td_steps, 5);
  EXPECT_EQ(c.train.batch_size, 64);
  EXPECT_DOUBLE_EQ(c.schedule.replay_ratio, 0.25);
  EXPECT_DOUBLE_EQ(c.train.target_momentum, 0.05);
  EXPECT_DOUBLE_EQ(c.train.weights.entropy, 1e-4);
  EXPECT_EQ(c.schedule.eval_interval, 1000);
  EXPECT_EQ(c.schedule.eval_episodes, 10);
  // memory_length 2 -> 1 + 2 + 15 steps; context covers a whole episode.
  EXPECT_EQ(c.train.segment_length, 18);
  EXPECT_EQ(c.search.context_steps, 18);
  EXPECT_EQ(c.model.max_positions, 36);
  EXPECT_EQ(c.model.obs_shape, (std::vector<int64_t>{3, 5, 5}));
  EXPECT_EQ(c.model.num_actions, 5);
}

TEST(ConfigTest, RejectsUnknownKeysAnywhere) {
  EXPECT_THROW(parse_config(R"({"env": {"kind": "chain"}, "sede": 1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"env": {"kind": "chain", "lenght": 3}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"env": {"kind": "chain"}, "model": {"latentdim": 8}})"),
               ConfigError);
  EXPECT_THROW(parse_config(R"({"env": {"kind": "chain"}, "train": {"lr": 1, "momentum": 0}})"),
               ConfigError);
}

TEST(ConfigTest, RejectsBadValuesBeforeCompute) {
  const std::string env = R"("env": {"kind": "visual_match"})";
  for (const std::string& bad : std::vector<std::string>{
           R"({"model": {"latent_dim": 60}, )" + env + "}",           // not a multiple of 8
           R"({"model": {"norm": "tanh"}, )" + env + "}",
           R"({"search": {"num_simulations": 0}, )" + env + "}",
           R"({"train": {"discount": 1.0}, )" + env + "}",
           R"({"train": {"segment_length": 10}, )" + env + "}",       // episodes reach 18
           R"({"model": {"max_positions": 20}, )" + env + "}",        // < 2 * 18
           R"({"train": {"batch_size": "64"}, )" + env + "}",
           R"({"train": {"target_mode": "ema"}, )" + env + "}",
           R"({"loss": {"latent_reduction": "max"}, )" + env + "}",
           R"({"env": {"kind": "atari"}})",
           R"({"tasks": []})",
           R"({})",
           R"({"env": {"kind": "chain"}, "tasks": [{"kind": "chain"}]})",
           R"({"tasks": [{"kind": "chain"}, {"kind": "continuous_bandit"}], "model": {"encoder": "mlp"}})",
           "{not json",
       }) {
    EXPECT_THROW(parse_config(bad), ConfigError) << bad;
  }
}

TEST(ConfigTest, EchoRoundTrips) {
  auto c = parse_config(R"({"env": {"kind": "visual_match", "memory_length": 5},
                            "model": {"norm": "softmax", "decoder": true},
                            "train": {"target_mode": "hard"},
                            "eval": {"stop_at_success": 0.9}})");
  EXPECT_DOUBLE_EQ(c.train.weights.decode, 0.05);
  const auto again = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(again), config_to_json(c));
  EXPECT_EQ(again.model.norm, NormKind::kSoftmax);
  EXPECT_EQ(again.train.target_mode, TargetMode::kHard);
  EXPECT_EQ(again.train.segment_length, 21);
}

TEST(ConfigTest, MultiTaskPadsObservations) {
  auto c = parse_config(R"({"tasks": [{"kind": "chain", "length": 4}, {"kind": "bandit"}],
                            "model": {"encoder": "mlp"}})");
  EXPECT_EQ(c.model.num_tasks, 2);
  EXPECT_EQ(c.model.obs_shape, (std::vector<int64_t>{4}));
  EXPECT_EQ(c.model.num_actions, 2);
}

TEST(RunTest, SmokeRunWritesArtifacts) {
  const auto out = scratch("smoke");
  auto cfg = parse_config(chain_config(out).dump());
  const auto s = run_experiment(cfg);
  EXPECT_EQ(s.status, "completed");
  EXPECT_GE(s.env_steps, 200);
  EXPECT_GT(s.train_steps, 0);
  EXPECT_GE(s.final_eval.success_rate, 0.0);
  EXPECT_LE(s.final_eval.success_rate, 1.0);
  EXPECT_TRUE(fs::exists(out / "config.json"));
  EXPECT_TRUE(fs::exists(out / "summary.json"));
  int ckpts = 0;
  for (const auto& e : fs::directory_iterator(out / "checkpoints")) ckpts += e.path().extension() == ".bin";
  EXPECT_GE(ckpts, 1);

  bool saw_eval = false;
  for (const auto& l : lines(out / "metrics.jsonl")) {
    if (l["event"] == "train") {
      for (const char* k : {"step", "env_steps", "loss_total", "loss_z", "loss_r", "loss_p", "loss_v",
                            "entropy", "grad_norm"}) {
        EXPECT_TRUE(l.contains(k)) << k;
      }
    }
    saw_eval = saw_eval || l["event"] == "eval";
  }
  EXPECT_TRUE(saw_eval);
  // The metadata echo holds every hyperparameter.
  const auto echo = Json::parse(read(out / "config.json"));
  EXPECT_EQ(echo["search"]["c2"], 19652);
  EXPECT_EQ(echo["train"]["replay_ratio"], 0.25);
}

TEST(RunTest, SameSeedGivesIdenticalMetrics) {
  const auto a = scratch("det_a"), b = scratch("det_b");
  run_experiment(parse_config(chain_config(a).dump()));
  run_experiment(parse_config(chain_config(b).dump()));
  EXPECT_EQ(read(a / "metrics.jsonl"), read(b / "metrics.jsonl"));
  const auto c = scratch("det_c");
  auto j = chain_config(c);
  j["seed"] = 4;
  run_experiment(parse_config(j.dump()));
  EXPECT_NE(read(a / "metrics.jsonl"), read(c / "metrics.jsonl"));
}

TEST(RunTest, ReplayRatioSchedule) {
  // A 20-state chain cannot be finished in 18 steps, so every episode is
  // exactly 18 transitions: one collect of 8 episodes is 144 steps.
  const auto out = scratch("ratio");
  auto j = chain_config(out);
  j["env"] = {{"kind", "chain"}, {"length", 20}, {"max_steps", 18}};
  j["train"] = {{"total_env_steps", 144}, {"episodes_per_collect", 8}, {"batch_size", 8}};
  run_experiment(parse_config(j.dump()));
  int train = 0;
  for (const auto& l : lines(out / "metrics.jsonl")) train += l["event"] == "train";
  EXPECT_EQ(train, 36);
}

TEST(RunTest, ResumeContinuesEnvStepAccounting) {
  const auto out = scratch("resume");
  auto j = chain_config(out);
  run_experiment(parse_config(j.dump()));
  const auto first = Json::parse(read(out / "summary.json"));
  j["train"]["total_env_steps"] = 400;
  const auto s = run_experiment(parse_config(j.dump()), {.resume = true});
  EXPECT_GE(s.env_steps, 400);
  EXPECT_GT(s.train_steps, first["train_steps"].get<int64_t>());
  // Metrics are appended: env steps never go backwards.
  int64_t prev = 0;
  for (const auto& l : lines(out / "metrics.jsonl")) {
    EXPECT_GE(l["env_steps"].get<int64_t>(), prev);
    prev = l["env_steps"];
  }
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  const auto out = scratch("ckpt");
  auto cfg = parse_config(chain_config(out).dump());
  WorldModel<float> online(cfg.model, 11), target(cfg.model, 12);
  const auto path = out / "m.bin";
  save_run_checkpoint(path, cfg, online, target, R"({"env_steps": 7})");
  const auto run = load_run_checkpoint(path);
  auto a = online.named_parameters(), b = run.online->named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].second.values(), b[i].second.values()) << a[i].first;
  auto ta = target.parameters(), tb = run.target->parameters();
  for (size_t i = 0; i < ta.size(); ++i) EXPECT_EQ(ta[i].values(), tb[i].values());
  EXPECT_EQ(Json::parse(run.state_json)["env_steps"], 7);

  // Same forward output on a fixed input.
  auto obs = Tensor<float>::from({2, 3}, {1, 0, 0, 0, 1, 0});
  std::vector<Action> acts{Action::discrete(1), Action::discrete(0)};
  EXPECT_EQ(online.unroll(obs, acts, 1, 2).value.values(), run.online->unroll(obs, acts, 1, 2).value.values());
}

TEST(CheckpointTest, ShapeMismatchIsRejected) {
  const auto out = scratch("ckpt_bad");
  auto cfg = parse_config(chain_config(out).dump());
  WorldModel<float> m(cfg.model, 1);
  save_run_checkpoint(out / "m.bin", cfg, m, m, "{}");
  auto other = chain_config(out);
  other["model"]["latent_dim"] = 24;
  other["model"]["heads"] = 3;
  auto bigger = parse_config(other.dump());
  EXPECT_THROW(load_run_checkpoint(out / "m.bin", &bigger), IntegrityError);
}

TEST(EvaluateTest, UntrainedChainSuccessIsARate) {
  auto cfg = parse_config(chain_config(scratch("eval")).dump());
  WorldModel<float> m(cfg.model, 1);
  auto env = cfg.tasks[0].make();
  const auto r = evaluate(m, nullptr, *env, cfg.search, 10, 0, 5);
  EXPECT_EQ(r.episodes, 10);
  EXPECT_GE(r.success_rate, 0.0);
  EXPECT_LE(r.success_rate, 1.0);
  const auto again = evaluate(m, nullptr, *env, cfg.search, 10, 0, 5);
  EXPECT_EQ(r.mean_return, again.mean_return);
}

TEST(AttentionExportTest, WritesOneCsvPerHead) {
  auto cfg = parse_config(chain_config(scratch("attn")).dump());
  WorldModel<float> m(cfg.model, 1);
  GameSegment seg;
  for (int t = 0; t < 3; ++t) {
    Transition tr;
    tr.obs = {1, 0, 0};
    tr.action = Action::discrete(1);
    tr.done = t == 2;
    tr.policy = {0.5, 0.5};
    seg.steps.push_back(tr);
  }
  seg.final_obs = {0, 0, 1};
  const auto dir = scratch("attn") / "maps";
  export_attention(m, seg, dir);
  const auto csv = read(dir / "layer0_head1.csv");
  std::istringstream in(csv);
  int rows = 0;
  for (std::string row; std::getline(in, row); ++rows) {
    double total = 0;
    int cols = 0;
    std::istringstream cells(row);
    for (std::string cell; std::getline(cells, cell, ','); ++cols) total += std::stod(cell);
    EXPECT_EQ(cols, 6);
    EXPECT_NEAR(total, 1.0, 1e-5);
  }
  EXPECT_EQ(rows, 6);
}

}  // namespace
}  // namespace latentplan
