#include <chrono>
#include <deque>
#include <cmath>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "latentplan/experiment.h"
#include "latentplan/planner.h"

namespace latentplan {
namespace {

using Json = nlohmann::json;
namespace fs = std::filesystem;

std::unique_ptr<Environment> make_task_env(const EnvSpec& spec, const ModelConfig& m) {
  auto env = spec.make();
  if (m.encoder == EncoderKind::kMlp && env->observation_size() < m.obs_size()) {
    return std::make_unique<PaddedEnv>(std::move(env), m.obs_size());
  }
  return env;
}

template <typename R>
std::string rng_state(const R& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

template <typename R>
void set_rng_state(R& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw IntegrityError("checkpoint: bad RNG state");
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Latest checkpoints/ckpt_<env steps>.bin, if any.
std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir)) return std::nullopt;
  static const std::regex pattern(R"(ckpt_(\d+)\.bin)");
  std::optional<fs::path> best;
  int64_t best_steps = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern) && std::stoll(m[1]) > best_steps) {
      best_steps = std::stoll(m[1]);
      best = entry.path();
    }
  }
  return best;
}

Json eval_json(const EvalResult& r) {
  return {{"episodes", r.episodes}, {"mean_return", r.mean_return}, {"std_return", r.std_return},
          {"success_rate", r.success_rate}, {"policy_mean", r.policy_mean}};
}

}  // namespace

EvalResult evaluate(const WorldModel<float>& model, const WorldModel<float>* target,
                    Environment& env, const SearchConfig& search, int64_t episodes, int64_t task,
                    uint64_t seed, std::ostream* trace) {
  if (episodes < 1) throw UsageError("evaluate: episodes must be >= 1");
  if (model.training()) throw UsageError("evaluate: model must be in eval mode");
  SearchConfig cfg = search;
  cfg.temperature = 0.0;
  Rng rng(seed);
  LatentPlanner<float> planner(model, target, task, cfg.context_steps);
  const auto space = env.action_space();
  EvalResult r;
  r.episodes = episodes;
  double sum = 0, sum_sq = 0, wins = 0, mu_sum = 0;
  for (int64_t e = 0; e < episodes; ++e) {
    auto obs = env.reset(rng());
    planner.begin_episode();
    double ret = 0;
    while (true) {
      planner.observe(obs);
      if (cfg.continuous && planner.step() == 0) mu_sum += planner.root().mu.at(0);
      if (trace) *trace << "{\"episode\":" << e << ",\"step\":" << planner.step() << "}\n";
      auto res = run_search(planner, space.n, cfg, rng, /*add_noise=*/false, trace);
      const auto& action = res.actions[choose_action(res.policy, 0.0, rng)];
      const auto step = env.step(action);
      planner.commit(action);
      ret += step.reward;
      obs = step.obs;
      if (step.done) break;
    }
    sum += ret;
    sum_sq += ret * ret;
    wins += env.success() ? 1 : 0;
  }
  const double n = static_cast<double>(episodes);
  r.mean_return = sum / n;
  r.std_return = std::sqrt(std::max(0.0, sum_sq / n - r.mean_return * r.mean_return));
  r.success_rate = wins / n;
  r.policy_mean = mu_sum / n;
  return r;
}

void export_attention(const WorldModel<float>& model, const GameSegment& seg, const fs::path& dir) {
  const int64_t len = seg.length();
  const int64_t obs_size = model.config().obs_size();
  std::vector<float> obs;
  std::vector<Action> actions;
  for (const auto& t : seg.steps) {
    if (static_cast<int64_t>(t.obs.size()) != obs_size) throw ShapeError("export_attention: observation size");
    obs.insert(obs.end(), t.obs.begin(), t.obs.end());
    actions.push_back(t.action);
  }
  AttentionMaps<float> maps;
  NoGradGuard guard;
  model.unroll(Tensor<float>::from({len, obs_size}, std::move(obs)), actions, 1, len, seg.task, 0, {},
               &maps);
  fs::create_directories(dir);
  const int64_t seq = 2 * len;
  for (size_t l = 0; l < maps.size(); ++l) {
    for (size_t h = 0; h < maps[l].size(); ++h) {
      std::ofstream out(dir / ("layer" + std::to_string(l) + "_head" + std::to_string(h) + ".csv"));
      for (int64_t q = 0; q < seq; ++q) {
        for (int64_t k = 0; k < seq; ++k) {
          out << (k ? "," : "") << maps[l][h][static_cast<size_t>(q * seq + k)];
        }
        out << '\n';
      }
    }
  }
}

void save_run_checkpoint(const fs::path& path, const ExperimentConfig& cfg,
                         const WorldModel<float>& online, const WorldModel<float>& target,
                         const std::string& state_json, AdamW<float>* opt) {
  CheckpointData data;
  append_arrays(data, online.named_parameters(), "online/");
  append_arrays(data, online.named_buffers(), "online/");
  append_arrays(data, target.named_parameters(), "target/");
  append_arrays(data, target.named_buffers(), "target/");
  if (opt) {
    const auto& params = opt->params();
    for (size_t i = 0; i < params.size(); ++i) {
      data.arrays.push_back({"adam/m/" + std::to_string(i), params[i].shape(), opt->first_moments()[i]});
      data.arrays.push_back({"adam/v/" + std::to_string(i), params[i].shape(), opt->second_moments()[i]});
    }
  }
  Json meta{{"config", Json::parse(config_to_json(cfg))}, {"state", Json::parse(state_json)}};
  if (opt) meta["state"]["adam_step"] = opt->step_count();
  data.metadata_json = meta.dump();
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  // Write-then-rename so an interrupted save never leaves a torn file.
  const auto tmp = fs::path(path.string() + ".tmp");
  save_checkpoint(tmp, data);
  fs::rename(tmp, path);
}

LoadedRun load_run_checkpoint(const fs::path& path, const ExperimentConfig* cfg) {
  LoadedRun r;
  r.data = load_checkpoint(path);
  Json meta;
  try {
    meta = Json::parse(r.data.metadata_json);
    r.config = cfg ? *cfg : parse_config(meta.at("config").dump());
    r.state_json = meta.value("state", Json::object()).dump();
  } catch (const Json::exception& e) {
    throw IntegrityError(std::string("checkpoint metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("checkpoint config: ") + e.what());
  }
  r.online = std::make_unique<WorldModel<float>>(r.config.model, r.config.seed);
  r.target = std::make_unique<WorldModel<float>>(r.config.model, r.config.seed);
  // Validate everything before touching any tensor.
  auto online_p = r.online->named_parameters(), target_p = r.target->named_parameters();
  auto online_b = r.online->named_buffers(), target_b = r.target->named_buffers();
  online_p.insert(online_p.end(), online_b.begin(), online_b.end());
  target_p.insert(target_p.end(), target_b.begin(), target_b.end());
  assign_arrays(r.data, online_p, "online/");
  assign_arrays(r.data, target_p, "target/");
  return r;
}

RunSummary run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = cfg.out;
  const fs::path ckpt_dir = out / "checkpoints";
  fs::create_directories(ckpt_dir);
  write_file(out / "config.json", config_to_json(cfg));

  const int64_t num_tasks = static_cast<int64_t>(cfg.tasks.size());
  std::vector<std::unique_ptr<Environment>> envs, eval_envs;
  std::deque<ReplayBuffer> buffers;  // not movable
  for (const auto& spec : cfg.tasks) {
    envs.push_back(make_task_env(spec, cfg.model));
    eval_envs.push_back(make_task_env(spec, cfg.model));
    buffers.emplace_back(cfg.schedule.replay_capacity);
  }
  std::vector<const ReplayBuffer*> buffer_ptrs;
  for (const auto& b : buffers) buffer_ptrs.push_back(&b);

  WorldModel<float> online(cfg.model, cfg.seed), target(cfg.model, cfg.seed);
  target.copy_from(online);
  AdamW<float> opt(online.parameters(), cfg.optimizer);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  RunSummary summary;
  int64_t episodes = 0;
  int64_t next_eval = cfg.schedule.eval_interval;
  int64_t next_ckpt = cfg.schedule.checkpoint_interval;
  double carry = 0;
  int64_t last_eval_at = -1;

  auto state_json = [&] {
    return Json{{"env_steps", summary.env_steps},
                {"train_steps", summary.train_steps},
                {"episodes", episodes},
                {"next_eval", next_eval},
                {"next_checkpoint", next_ckpt},
                {"train_carry", carry},
                {"best_success", summary.best_success},
                {"env_steps_at_best", summary.env_steps_at_best},
                {"rng", rng_state(rng)},
                {"dropout_rng", rng_state(online.dropout_rng())}}
        .dump();
  };
  auto checkpoint = [&] {
    save_run_checkpoint(ckpt_dir / ("ckpt_" + std::to_string(summary.env_steps) + ".bin"), cfg, online,
                        target, state_json(), &opt);
  };

  const auto latest = opts.resume ? latest_checkpoint(ckpt_dir) : std::nullopt;
  if (latest) {
    auto loaded = load_run_checkpoint(*latest, &cfg);
    online.copy_from(*loaded.online);
    target.copy_from(*loaded.target);
    const auto& params = opt.params();
    for (size_t i = 0; i < params.size(); ++i) {
      const auto* m = loaded.data.find("adam/m/" + std::to_string(i));
      const auto* v = loaded.data.find("adam/v/" + std::to_string(i));
      if (!m || !v || m->values.size() != params[i].values().size() ||
          v->values.size() != params[i].values().size()) {
        throw IntegrityError("checkpoint: optimizer state missing or mismatched");
      }
      opt.first_moments()[i] = m->values;
      opt.second_moments()[i] = v->values;
    }
    const auto st = Json::parse(loaded.state_json);
    summary.env_steps = st.at("env_steps");
    summary.train_steps = st.at("train_steps");
    episodes = st.at("episodes");
    next_eval = st.at("next_eval");
    next_ckpt = st.at("next_checkpoint");
    carry = st.at("train_carry");
    summary.best_success = st.at("best_success");
    summary.env_steps_at_best = st.at("env_steps_at_best");
    opt.set_step_count(st.at("adam_step"));
    set_rng_state(rng, st.at("rng").get<std::string>());
    set_rng_state(online.dropout_rng(), st.at("dropout_rng").get<std::string>());
    if (!opts.quiet) std::cerr << "resuming from " << latest->string() << "\n";
  }

  std::ofstream metrics(out / "metrics.jsonl", latest ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + (out / "metrics.jsonl").string());
  auto log = [&](const Json& j) { metrics << j.dump() << '\n' << std::flush; };

  auto run_eval = [&](std::ostream* trace) {
    EvalResult total;
    Json per_task = Json::array();
    for (int64_t t = 0; t < num_tasks; ++t) {
      const uint64_t seed = cfg.seed * 1000003ULL + static_cast<uint64_t>(summary.env_steps) * 31ULL +
                            static_cast<uint64_t>(t);
      const auto r = evaluate(online, cfg.train.target_mode == TargetMode::kNone ? nullptr : &target,
                              *eval_envs[static_cast<size_t>(t)], cfg.search,
                              cfg.schedule.eval_episodes, t, seed, trace);
      per_task.push_back(eval_json(r));
      total.episodes += r.episodes;
      total.mean_return += r.mean_return / num_tasks;
      total.std_return += r.std_return / num_tasks;
      total.success_rate += r.success_rate / num_tasks;
      total.policy_mean += r.policy_mean / num_tasks;
    }
    Json line{{"event", "eval"},           {"step", summary.train_steps},
              {"env_steps", summary.env_steps}, {"eval_return", total.mean_return},
              {"eval_success", total.success_rate}, {"eval_std", total.std_return}};
    if (cfg.model.continuous) line["policy_mean"] = total.policy_mean;
    if (num_tasks > 1) line["tasks"] = per_task;
    log(line);
    if (total.success_rate > summary.best_success) {
      summary.best_success = total.success_rate;
      summary.env_steps_at_best = summary.env_steps;
    }
    last_eval_at = summary.env_steps;
    summary.final_eval = total;
    if (!opts.quiet) {
      std::cerr << "env_steps " << summary.env_steps << " train_steps " << summary.train_steps
                << " eval_return " << total.mean_return << " success " << total.success_rate
                << "\n";
    }
    return total;
  };

  auto write_summary = [&] {
    summary.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    Json j{{"status", summary.status},
           {"env_steps", summary.env_steps},
           {"train_steps", summary.train_steps},
           {"episodes", episodes},
           {"wall_seconds", summary.wall_seconds},
           {"final_eval", eval_json(summary.final_eval)},
           {"best_success", summary.best_success},
           {"env_steps_at_best", summary.env_steps_at_best}};
    if (!summary.diverge_reason.empty()) j["diverge_reason"] = summary.diverge_reason;
    write_file(out / "summary.json", j.dump(2));
  };

  try {
    while (summary.env_steps < cfg.schedule.total_env_steps && summary.status == "completed") {
      // Collect.
      int64_t collected = 0;
      double returns = 0, wins = 0;
      int64_t n_eps = 0;
      for (int64_t t = 0; t < num_tasks; ++t) {
        CollectOptions co;
        co.episodes = cfg.schedule.episodes_per_collect;
        co.task = t;
        co.use_target_values = cfg.train.target_mode != TargetMode::kNone;
        auto segs = collect_experience<float>(*envs[static_cast<size_t>(t)], online, &target,
                                              cfg.search, co, rng);
        for (auto& s : segs) {
          collected += s.length();
          returns += s.episode_return();
          wins += s.success ? 1 : 0;
          ++n_eps;
          buffers[static_cast<size_t>(t)].add(std::move(s));
        }
      }
      summary.env_steps += collected;
      episodes += n_eps;
      log({{"event", "collect"},
           {"step", summary.train_steps},
           {"env_steps", summary.env_steps},
           {"episodes", n_eps},
           {"mean_return", returns / static_cast<double>(n_eps)},
           {"success_rate", wins / static_cast<double>(n_eps)}});

      // Train: collected steps x replay ratio, once every buffer can fill a batch.
      bool ready = true;
      for (const auto& b : buffers) ready = ready && b.num_segments() >= cfg.train.batch_size;
      if (ready) {
        carry += static_cast<double>(collected) * cfg.schedule.replay_ratio;
        const auto n = static_cast<int64_t>(std::floor(carry));
        carry -= static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
          const auto m = train_step<float>(buffer_ptrs, online, target, opt, cfg.train, rng);
          summary.train_steps = m.step;
          const auto& l = m.loss;
          if (!std::isfinite(l.total) || !std::isfinite(m.grad_norm) ||
              m.grad_norm > cfg.schedule.divergence_grad_norm) {
            summary.status = "diverged";
            std::ostringstream why;
            why << "train step " << m.step << ": loss " << l.total << ", grad norm " << m.grad_norm;
            summary.diverge_reason = why.str();
          }
          if (m.step % cfg.schedule.log_interval == 0 || summary.status == "diverged") {
            Json line{{"event", "train"},      {"step", m.step},         {"env_steps", summary.env_steps},
                      {"loss_total", l.total}, {"loss_z", l.latent},     {"loss_r", l.reward},
                      {"loss_p", l.policy},    {"loss_v", l.value},      {"entropy", l.entropy},
                      {"grad_norm", m.grad_norm}};
            if (cfg.model.decoder) line["loss_decode"] = l.decode;
            if (num_tasks > 1) line["task_loss"] = m.task_loss;
            if (!std::isfinite(l.total) || !std::isfinite(m.grad_norm)) {
              line["loss_total"] = nullptr;
              line["grad_norm"] = nullptr;
            }
            log(line);
          }
          if (summary.status == "diverged") break;
        }
      }
      if (summary.status == "diverged") break;

      if (summary.env_steps >= next_eval) {
        const auto r = run_eval(nullptr);
        while (next_eval <= summary.env_steps) next_eval += cfg.schedule.eval_interval;
        if (cfg.schedule.stop_at_success && r.success_rate >= *cfg.schedule.stop_at_success) {
          summary.status = "stopped_early";
        }
      }
      if (summary.env_steps >= next_ckpt) {
        while (next_ckpt <= summary.env_steps) next_ckpt += cfg.schedule.checkpoint_interval;
        checkpoint();
      }
    }

    if (summary.status != "diverged") {
      std::unique_ptr<std::ofstream> trace;
      if (cfg.search_trace) trace = std::make_unique<std::ofstream>(out / "search_trace.jsonl");
      if (last_eval_at != summary.env_steps || trace) run_eval(trace.get());
      if (cfg.attention_csv) {
        SearchConfig greedy = cfg.search;
        greedy.temperature = 0;
        Rng arng(cfg.seed);
        auto segs = collect_experience<float>(*eval_envs[0], online, &target, greedy,
                                              {.episodes = 1, .add_noise = false}, arng);
        export_attention(online, segs.at(0), out / "attention");
      }
    }
    checkpoint();
    write_summary();
  } catch (...) {
    summary.status = "failed";
    try {
      write_summary();
    } catch (...) {
    }
    throw;
  }
  return summary;
}

}  // namespace latentplan
