// latentplan run <config.json> [--seed N] [--out DIR] [--env-steps N] [--resume]
// latentplan eval <checkpoint> <config.json> [--episodes N] [--seed N] [--attention DIR]
// latentplan inspect <checkpoint>
//
// Exit codes: 0 success, 1 runtime failure (artifacts kept), 2 invalid
// config or arguments.

#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "latentplan/experiment.h"

namespace {

using latentplan::ConfigError;
using latentplan::ExperimentConfig;

int run(const std::string& path, const std::optional<uint64_t>& seed,
        const std::optional<std::string>& out, const std::optional<int64_t>& env_steps,
        bool resume, bool quiet) {
  ExperimentConfig cfg;
  try {
    cfg = latentplan::load_config(path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    if (env_steps) cfg.schedule.total_env_steps = *env_steps;
    latentplan::finalize_config(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  }
  try {
    const auto s = latentplan::run_experiment(cfg, {.resume = resume, .quiet = quiet});
    std::cout << "status " << s.status << " env_steps " << s.env_steps << " train_steps "
              << s.train_steps << " success " << s.final_eval.success_rate << " return "
              << s.final_eval.mean_return << " seconds " << s.wall_seconds << "\n";
    if (s.status == "diverged") {
      std::cerr << "training diverged: " << s.diverge_reason << "\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int eval(const std::string& ckpt, const std::string& config, int64_t episodes, uint64_t seed,
         const std::string& attention_dir) {
  ExperimentConfig cfg;
  try {
    cfg = latentplan::load_config(config);
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  }
  try {
    const auto run = latentplan::load_run_checkpoint(ckpt, &cfg);
    const bool use_target = cfg.train.target_mode != latentplan::TargetMode::kNone;
    nlohmann::json tasks = nlohmann::json::array();
    for (size_t t = 0; t < cfg.tasks.size(); ++t) {
      auto env = cfg.tasks[t].make();
      if (cfg.model.encoder == latentplan::EncoderKind::kMlp &&
          env->observation_size() < cfg.model.obs_size()) {
        env = std::make_unique<latentplan::PaddedEnv>(std::move(env), cfg.model.obs_size());
      }
      const auto r = latentplan::evaluate(*run.online, use_target ? run.target.get() : nullptr, *env,
                                          cfg.search, episodes, static_cast<int64_t>(t), seed + t);
      tasks.push_back({{"task", t}, {"kind", cfg.tasks[t].kind}, {"episodes", r.episodes},
                       {"mean_return", r.mean_return}, {"std_return", r.std_return},
                       {"success_rate", r.success_rate}});
      if (cfg.model.continuous) tasks.back()["policy_mean"] = r.policy_mean;
      if (!attention_dir.empty() && t == 0) {
        latentplan::SearchConfig greedy = cfg.search;
        greedy.temperature = 0;
        latentplan::Rng rng(seed);
        auto segs = latentplan::collect_experience<float>(*env, *run.online, run.target.get(), greedy,
                                                          {.episodes = 1, .add_noise = false}, rng);
        latentplan::export_attention(*run.online, segs.at(0), attention_dir);
      }
    }
    std::cout << tasks.dump(2) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "eval failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int inspect(const std::string& ckpt) {
  try {
    const auto data = latentplan::load_checkpoint(ckpt);
    int64_t values = 0;
    for (const auto& a : data.arrays) values += static_cast<int64_t>(a.values.size());
    auto meta = nlohmann::json::parse(data.metadata_json);
    std::cout << "arrays " << data.arrays.size() << "\nvalues " << values << "\n";
    if (meta.contains("state")) std::cout << "state " << meta["state"].dump() << "\n";
    if (meta.contains("config")) std::cout << "config " << meta["config"].dump(2) << "\n";
    for (const auto& a : data.arrays) {
      std::cout << a.name << " [";
      for (size_t i = 0; i < a.shape.size(); ++i) std::cout << (i ? "," : "") << a.shape[i];
      std::cout << "]\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "inspect failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space planning with a transformer world model"};
  app.require_subcommand(1);

  std::string config, ckpt, out_dir, attention_dir;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int64_t> env_steps;
  bool resume = false, verbose = false;
  auto* run_cmd = app.add_subcommand("run", "Train from a JSON config");
  run_cmd->add_option("config", config, "Config file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", seed, "Override the seed");
  run_cmd->add_option("--out", out, "Override the output directory");
  run_cmd->add_option("--env-steps", env_steps, "Override total environment steps");
  run_cmd->add_flag("--resume", resume, "Continue from the latest checkpoint in the output directory");
  run_cmd->add_flag("-v,--verbose", verbose, "Print evaluation progress");

  int64_t episodes = 10;
  uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with greedy search");
  eval_cmd->add_option("checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("config", config, "Config file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--episodes", episodes, "Episodes per task")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_seed, "Evaluation seed");
  eval_cmd->add_option("--attention", attention_dir, "Write per-layer/head attention CSVs here");

  auto* inspect_cmd = app.add_subcommand("inspect", "Print a checkpoint's manifest");
  inspect_cmd->add_option("checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (run_cmd->parsed()) return run(config, seed, out, env_steps, resume, !verbose);
  if (eval_cmd->parsed()) return eval(ckpt, config, episodes, eval_seed, attention_dir);
  return inspect(ckpt);
}
