#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "latentplan/checkpoint.h"
#include "latentplan/env.h"
#include "latentplan/mcts.h"
#include "latentplan/training.h"
#include "latentplan/world_model.h"

namespace latentplan {

// One task: which environment to build and its parameters.
struct EnvSpec {
  std::string kind = "visual_match";  // visual_match | chain | bandit | continuous_bandit
  // visual_match
  int64_t memory_length = 2;
  int64_t reward_steps = 15;
  int64_t num_apples = 5;
  bool four_directions = false;
  // chain
  int64_t chain_length = 3;
  int64_t chain_max_steps = 0;
  // bandit
  std::vector<double> arm_means{1.0, 0.0};
  // continuous_bandit
  double optimum = 0.3;
  double radius = 0.05;

  std::unique_ptr<Environment> make() const;
};

struct Schedule {
  int64_t total_env_steps = 50000;
  int64_t episodes_per_collect = 8;
  double replay_ratio = 0.25;
  int64_t replay_capacity = 1000000;
  int64_t eval_interval = 1000;
  int64_t eval_episodes = 10;
  std::optional<double> stop_at_success;  // end the run once an eval reaches it
  int64_t checkpoint_interval = 5000;
  double divergence_grad_norm = 1e6;      // larger pre-clip norms count as divergence
  int64_t log_interval = 1;               // train lines every n steps
};

struct ExperimentConfig {
  std::vector<EnvSpec> tasks;
  ModelConfig model;  // observation and action fields are derived from the tasks
  SearchConfig search;
  TrainConfig train;
  AdamWConfig optimizer;
  Schedule schedule;
  uint64_t seed = 0;
  std::filesystem::path out = "runs/default";
  bool attention_csv = false;
  bool search_trace = false;
};

// Parses and validates a JSON config. Unknown keys, bad types and
// inconsistent values raise ConfigError before anything is built.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Fully resolved config (including derived fields) as JSON.
std::string config_to_json(const ExperimentConfig& cfg);
// Derives model/search fields from the tasks and checks cross-field limits.
void finalize_config(ExperimentConfig& cfg);

struct EvalResult {
  int64_t episodes = 0;
  double mean_return = 0;
  double std_return = 0;
  double success_rate = 0;
  double policy_mean = 0;  // continuous: mean first-step policy mu over episodes
};

// Greedy search (T = 0, no root noise, dropout off) over `episodes` episodes.
EvalResult evaluate(const WorldModel<float>& model, const WorldModel<float>* target,
                    Environment& env, const SearchConfig& search, int64_t episodes, int64_t task,
                    uint64_t seed, std::ostream* trace = nullptr);

// Writes one CSV per layer and head (rows = query token, cols = key token)
// for a teacher-forced pass over `seg`.
void export_attention(const WorldModel<float>& model, const GameSegment& seg,
                      const std::filesystem::path& dir);

struct RunSummary {
  std::string status = "completed";  // completed | stopped_early | diverged
  int64_t env_steps = 0;
  int64_t train_steps = 0;
  double wall_seconds = 0;
  EvalResult final_eval;
  double best_success = 0;
  int64_t env_steps_at_best = 0;
  std::string diverge_reason;
};

struct RunOptions {
  bool resume = false;
  bool quiet = true;
};

// The collect/train loop. Writes metrics.jsonl, config.json, checkpoints/
// and summary.json under cfg.out.
RunSummary run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Checkpoints carry the resolved config in their metadata.
void save_run_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg,
                         const WorldModel<float>& online, const WorldModel<float>& target,
                         const std::string& state_json, AdamW<float>* opt = nullptr);
struct LoadedRun {
  ExperimentConfig config;
  std::unique_ptr<WorldModel<float>> online, target;
  std::string state_json;
  CheckpointData data;
};
// Rebuilds models from a checkpoint. When `cfg` is given its model section
// must match the stored shapes (IntegrityError otherwise).
LoadedRun load_run_checkpoint(const std::filesystem::path& path,
                              const ExperimentConfig* cfg = nullptr);

}  // namespace latentplan
