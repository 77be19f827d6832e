#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "latentplan/experiment.h"

namespace latentplan {
namespace {

using Json = nlohmann::json;

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail("expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  void mark(const std::string& key) { seen_.insert(key); }

  template <typename V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      const auto& v = j_.at(key);
      if constexpr (std::is_same_v<V, bool>) {
        if (!v.is_boolean()) fail(key + ": expected a boolean");
      } else if constexpr (std::is_integral_v<V>) {
        if (!v.is_number_integer()) fail(key + ": expected an integer");
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!v.is_number()) fail(key + ": expected a number");
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!v.is_string()) fail(key + ": expected a string");
      }
      out = v.template get<V>();
    } catch (const Json::exception& e) {
      fail(key + ": " + e.what());
    }
  }

  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    std::string s;
    get(key, s);
    if (!j_.contains(key)) return;
    try {
      out = parse(s);
    } catch (const std::exception& e) {
      fail(key + ": " + e.what());
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const Json kEmpty = Json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, where_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) fail("unknown key '" + key + "'");
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("config " + where_ + ": " + msg);
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

EnvSpec parse_env(Section s) {
  EnvSpec e;
  s.get("kind", e.kind);
  if (e.kind == "visual_match") {
    s.get("memory_length", e.memory_length);
    s.get("reward_steps", e.reward_steps);
    s.get("num_apples", e.num_apples);
    s.get("four_directions", e.four_directions);
  } else if (e.kind == "chain") {
    s.get("length", e.chain_length);
    s.get("max_steps", e.chain_max_steps);
  } else if (e.kind == "bandit") {
    s.get("arm_means", e.arm_means);
  } else if (e.kind == "continuous_bandit") {
    s.get("optimum", e.optimum);
    s.get("radius", e.radius);
  } else {
    s.fail("unknown environment kind '" + e.kind + "'");
  }
  s.finish();
  return e;
}

Json env_json(const EnvSpec& e) {
  Json j{{"kind", e.kind}};
  if (e.kind == "visual_match") {
    j["memory_length"] = e.memory_length;
    j["reward_steps"] = e.reward_steps;
    j["num_apples"] = e.num_apples;
    j["four_directions"] = e.four_directions;
  } else if (e.kind == "chain") {
    j["length"] = e.chain_length;
    j["max_steps"] = e.chain_max_steps;
  } else if (e.kind == "bandit") {
    j["arm_means"] = e.arm_means;
  } else {
    j["optimum"] = e.optimum;
    j["radius"] = e.radius;
  }
  return j;
}

}  // namespace

std::unique_ptr<Environment> EnvSpec::make() const {
  if (kind == "visual_match") {
    return std::make_unique<VisualMatch>(VisualMatchConfig{.memory_length = memory_length,
                                                           .reward_steps = reward_steps,
                                                           .num_apples = num_apples,
                                                           .four_directions = four_directions,
                                                           .forced_target = std::nullopt});
  }
  if (kind == "chain") {
    return std::make_unique<ChainMdp>(ChainConfig{.length = chain_length, .max_steps = chain_max_steps});
  }
  if (kind == "bandit") return std::make_unique<DiscreteBandit>(arm_means);
  if (kind == "continuous_bandit") return std::make_unique<ContinuousBandit>(optimum, radius);
  throw ConfigError("unknown environment kind '" + kind + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section top(root, "root");
  top.get("seed", c.seed);
  std::string out = c.out.string();
  top.get("out", out);
  c.out = out;

  if (top.has("env") == top.has("tasks")) top.fail("give exactly one of 'env' or 'tasks'");
  if (top.has("env")) {
    c.tasks.push_back(parse_env(top.child("env")));
  } else {
    top.mark("tasks");
    const auto& list = root.at("tasks");
    if (!list.is_array() || list.empty()) top.fail("'tasks' must be a non-empty array");
    for (size_t i = 0; i < list.size(); ++i) {
      c.tasks.push_back(parse_env(Section(list[i], "tasks[" + std::to_string(i) + "]")));
    }
  }

  auto m = top.child("model");
  m.get("latent_dim", c.model.latent_dim);
  m.get("group_size", c.model.group_size);
  m.get("temperature", c.model.temperature);
  m.get_enum("norm", c.model.norm, parse_norm_kind);
  m.get("layers", c.model.layers);
  m.get("heads", c.model.heads);
  m.get("dropout", c.model.dropout);
  c.model.max_positions = 0;  // derived unless given
  m.get("max_positions", c.model.max_positions);
  m.get("sigma_min", c.model.sigma_min);
  m.get("sigma_max", c.model.sigma_max);
  m.get_enum("encoder", c.model.encoder, parse_encoder_kind);
  m.get_enum("encoder_norm", c.model.encoder_norm, parse_encoder_norm);
  m.get("conv_channels", c.model.conv_channels);
  m.get("mlp_hidden", c.model.mlp_hidden);
  m.get("head_hidden", c.model.head_hidden);
  m.get("bins", c.model.bins);
  m.get("decoder", c.model.decoder);
  m.finish();

  auto s = top.child("search");
  s.get("num_simulations", c.search.num_simulations);
  s.get("c1", c.search.c1);
  s.get("c2", c.search.c2);
  s.get("dirichlet_alpha", c.search.dirichlet_alpha);
  s.get("dirichlet_weight", c.search.dirichlet_weight);
  s.get("temperature", c.search.temperature);
  s.get("num_sampled_actions", c.search.num_sampled_actions);
  s.get("normalize_q", c.search.normalize_q);
  c.search.context_steps = 0;
  s.get("context_steps", c.search.context_steps);
  s.finish();

  auto l = top.child("loss");
  l.get("latent", c.train.weights.latent);
  l.get("reward", c.train.weights.reward);
  l.get("policy", c.train.weights.policy);
  l.get("value", c.train.weights.value);
  l.get("entropy", c.train.weights.entropy);
  c.train.weights.decode = 0.05;
  l.get("decode", c.train.weights.decode);
  l.get_enum("latent_reduction", c.train.weights.latent_mean, [](const std::string& r) {
    if (r != "sum" && r != "mean") throw ConfigError("expected sum or mean");
    return r == "mean";
  });
  l.finish();
  if (!c.model.decoder) c.train.weights.decode = 0.0;

  auto t = top.child("train");
  t.get("total_env_steps", c.schedule.total_env_steps);
  t.get("episodes_per_collect", c.schedule.episodes_per_collect);
  t.get("replay_ratio", c.schedule.replay_ratio);
  t.get("replay_capacity", c.schedule.replay_capacity);
  t.get("batch_size", c.train.batch_size);
  c.train.segment_length = 0;
  t.get("segment_length", c.train.segment_length);
  t.get("trim_windows", c.train.trim_windows);
  t.get("td_steps", c.train.td_steps);
  t.get("discount", c.train.discount);
  t.get("lr", c.optimizer.lr);
  t.get("weight_decay", c.optimizer.weight_decay);
  t.get("max_grad_norm", c.train.max_grad_norm);
  t.get_enum("target_mode", c.train.target_mode, parse_target_mode);
  t.get("target_momentum", c.train.target_momentum);
  t.get("hard_interval", c.train.hard_interval);
  t.get("divergence_grad_norm", c.schedule.divergence_grad_norm);
  t.get("log_interval", c.schedule.log_interval);
  t.finish();

  auto e = top.child("eval");
  e.get("interval", c.schedule.eval_interval);
  e.get("episodes", c.schedule.eval_episodes);
  double stop = -1;
  e.get("stop_at_success", stop);
  if (e.has("stop_at_success")) c.schedule.stop_at_success = stop;
  e.finish();

  auto k = top.child("checkpoint");
  k.get("interval", c.schedule.checkpoint_interval);
  k.finish();

  auto d = top.child("debug");
  d.get("attention_csv", c.attention_csv);
  d.get("search_trace", c.search_trace);
  d.finish();

  top.finish();
  finalize_config(c);
  return c;
}

void finalize_config(ExperimentConfig& c) {
  if (c.tasks.empty()) throw ConfigError("config: no tasks");
  int64_t obs_size = 0, max_steps = 0;
  std::optional<ActionSpace> space;
  std::vector<int64_t> shape;
  for (const auto& spec : c.tasks) {
    std::unique_ptr<Environment> env;
    try {
      env = spec.make();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      throw ConfigError(std::string("config: environment '") + spec.kind + "': " + ex.what());
    }
    const auto a = env->action_space();
    if (space && (space->continuous != a.continuous || space->n != a.n || space->dim != a.dim)) {
      throw ConfigError("config: all tasks must share one action space");
    }
    space = a;
    obs_size = std::max(obs_size, env->observation_size());
    max_steps = std::max(max_steps, env->max_episode_steps());
    if (shape.empty()) shape = env->observation_shape();
  }
  auto& m = c.model;
  m.num_tasks = static_cast<int64_t>(c.tasks.size());
  m.continuous = space->continuous;
  m.num_actions = space->continuous ? 0 : space->n;
  m.action_dim = space->continuous ? space->dim : 1;
  if (m.encoder == EncoderKind::kConv) {
    if (shape.size() != 3) throw ConfigError("config: conv encoder needs image observations");
    for (const auto& spec : c.tasks) {
      if (spec.make()->observation_shape() != shape) {
        throw ConfigError("config: conv encoder needs identical observation shapes across tasks");
      }
    }
    m.obs_shape = shape;
  } else {
    m.obs_shape = {obs_size};  // smaller observations are zero-padded
  }

  if (c.train.segment_length == 0) c.train.segment_length = max_steps;
  if (c.train.segment_length < max_steps) {
    throw ConfigError("config: segment_length " + std::to_string(c.train.segment_length) +
                      " is shorter than the longest episode (" + std::to_string(max_steps) + ")");
  }
  if (m.max_positions == 0) m.max_positions = 2 * c.train.segment_length;
  if (m.max_positions < 2 * c.train.segment_length) {
    throw ConfigError("config: max_positions must cover 2 * segment_length tokens");
  }
  if (c.search.context_steps == 0) c.search.context_steps = c.train.segment_length;
  c.search.continuous = m.continuous;
  c.search.discount = c.train.discount;
  m.validate();
  c.search.validate();

  const auto& s = c.schedule;
  if (s.total_env_steps < 1) throw ConfigError("config: total_env_steps must be >= 1");
  if (s.episodes_per_collect < 1) throw ConfigError("config: episodes_per_collect must be >= 1");
  if (!(s.replay_ratio > 0)) throw ConfigError("config: replay_ratio must be > 0");
  if (s.replay_capacity < max_steps) throw ConfigError("config: replay_capacity below one episode");
  if (s.eval_interval < 1 || s.eval_episodes < 1) throw ConfigError("config: eval interval and episodes must be >= 1");
  if (s.checkpoint_interval < 1) throw ConfigError("config: checkpoint interval must be >= 1");
  if (s.log_interval < 1) throw ConfigError("config: log_interval must be >= 1");
  if (s.stop_at_success && (*s.stop_at_success < 0 || *s.stop_at_success > 1)) {
    throw ConfigError("config: stop_at_success must be in [0, 1]");
  }
  const auto& t = c.train;
  if (t.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (t.td_steps < 1) throw ConfigError("config: td_steps must be >= 1");
  if (!(t.discount >= 0 && t.discount < 1)) throw ConfigError("config: discount must be in [0, 1)");
  if (!(t.max_grad_norm > 0)) throw ConfigError("config: max_grad_norm must be > 0");
  if (t.target_momentum < 0 || t.target_momentum > 1) throw ConfigError("config: target_momentum must be in [0, 1]");
  if (t.hard_interval < 1) throw ConfigError("config: hard_interval must be >= 1");
  if (!(c.optimizer.lr > 0) || c.optimizer.weight_decay < 0) throw ConfigError("config: need lr > 0, weight_decay >= 0");
  const auto& w = t.weights;
  for (double v : {w.latent, w.reward, w.policy, w.value, w.entropy, w.decode}) {
    if (!(v >= 0)) throw ConfigError("config: loss weights must be >= 0");
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  Json tasks = Json::array();
  for (const auto& e : c.tasks) tasks.push_back(env_json(e));
  const auto& m = c.model;
  const auto& s = c.search;
  const auto& t = c.train;
  const auto& w = t.weights;
  Json j{
      {"seed", c.seed},
      {"out", c.out.string()},
      {"tasks", tasks},
      {"model",
       {{"latent_dim", m.latent_dim}, {"group_size", m.group_size}, {"temperature", m.temperature},
        {"norm", to_string(m.norm)}, {"layers", m.layers}, {"heads", m.heads},
        {"dropout", m.dropout}, {"max_positions", m.max_positions},
        {"sigma_min", m.sigma_min}, {"sigma_max", m.sigma_max},
        {"encoder", to_string(m.encoder)}, {"encoder_norm", to_string(m.encoder_norm)},
        {"conv_channels", m.conv_channels}, {"mlp_hidden", m.mlp_hidden},
        {"head_hidden", m.head_hidden}, {"bins", m.bins}, {"decoder", m.decoder}}},
      {"search",
       {{"num_simulations", s.num_simulations}, {"c1", s.c1}, {"c2", s.c2},
        {"dirichlet_alpha", s.dirichlet_alpha}, {"dirichlet_weight", s.dirichlet_weight},
        {"temperature", s.temperature}, {"num_sampled_actions", s.num_sampled_actions},
        {"normalize_q", s.normalize_q}, {"context_steps", s.context_steps}}},
      {"loss",
       {{"latent", w.latent}, {"reward", w.reward}, {"policy", w.policy}, {"value", w.value},
        {"entropy", w.entropy}, {"decode", w.decode},
        {"latent_reduction", w.latent_mean ? "mean" : "sum"}}},
      {"train",
       {{"total_env_steps", c.schedule.total_env_steps},
        {"episodes_per_collect", c.schedule.episodes_per_collect},
        {"replay_ratio", c.schedule.replay_ratio},
        {"replay_capacity", c.schedule.replay_capacity}, {"batch_size", t.batch_size},
        {"segment_length", t.segment_length}, {"trim_windows", t.trim_windows},
        {"td_steps", t.td_steps},
        {"discount", t.discount}, {"lr", c.optimizer.lr},
        {"weight_decay", c.optimizer.weight_decay}, {"max_grad_norm", t.max_grad_norm},
        {"target_mode", to_string(t.target_mode)}, {"target_momentum", t.target_momentum},
        {"hard_interval", t.hard_interval},
        {"divergence_grad_norm", c.schedule.divergence_grad_norm},
        {"log_interval", c.schedule.log_interval}}},
      {"eval", {{"interval", c.schedule.eval_interval}, {"episodes", c.schedule.eval_episodes}}},
      {"checkpoint", {{"interval", c.schedule.checkpoint_interval}}},
      {"debug", {{"attention_csv", c.attention_csv}, {"search_trace", c.search_trace}}},
  };
  if (c.schedule.stop_at_success) j["eval"]["stop_at_success"] = *c.schedule.stop_at_success;
  return j.dump(2);
}

}  // namespace latentplan
