#include "latentplan/planner.h"

#include <algorithm>
#include <cmath>

#include "latentplan/value_transform.h"

namespace latentplan {

Prediction OracleModel::uniform() const {
  Prediction p;
  const auto space = env_->action_space();
  if (space.continuous) {
    p.mu.assign(static_cast<size_t>(space.dim), 0.0);
    p.sigma.assign(static_cast<size_t>(space.dim), 0.5 * (space.high - space.low));
  } else {
    p.prior.assign(static_cast<size_t>(space.n), 1.0 / static_cast<double>(space.n));
  }
  return p;
}

Prediction OracleModel::root() {
  if (env_->done()) throw UsageError("oracle: environment episode is over");
  states_.clear();
  states_.push_back(env_->clone());
  return uniform();
}

Prediction OracleModel::expand(int64_t parent, const Action& action, int64_t child) {
  if (child != static_cast<int64_t>(states_.size())) throw UsageError("oracle: node ids out of order");
  auto env = states_[static_cast<size_t>(parent)]->clone();
  const auto r = env->step(action);
  Prediction p = uniform();
  p.reward = r.reward;
  p.terminal = r.done;
  states_.push_back(std::move(env));
  return p;
}

template <std::floating_point T>
LatentPlanner<T>::LatentPlanner(const WorldModel<T>& online, const WorldModel<T>* target,
                                int64_t task, int64_t context_steps)
    : task_(task),
      online_{&online, InferenceEngine<T>(online),
              KVCache<T>(online.config().layers, online.config().latent_dim, 2 * context_steps),
              {}} {
  online.heads(task);  // validates the task id
  if (target) {
    target_.emplace(Side{target, InferenceEngine<T>(*target),
                         KVCache<T>(target->config().layers, target->config().latent_dim,
                                    2 * context_steps),
                         {}});
  }
}

template <std::floating_point T>
void LatentPlanner<T>::begin_episode() {
  step_ = 0;
  has_obs_ = false;
  nodes_.clear();
  online_.cache.reset();
  online_.chunks.clear();
  if (target_) {
    target_->cache.reset();
    target_->chunks.clear();
  }
}

template <std::floating_point T>
void LatentPlanner<T>::observe(const Observation& obs) {
  root_latent_ = online_.engine.encode(obs);
  has_obs_ = true;
}

template <std::floating_point T>
bool LatentPlanner<T>::at_horizon(int64_t step) const {
  return 2 * step + 1 >= online_.model->config().max_positions;
}

template <std::floating_point T>
std::vector<const KVBlock<T>*> LatentPlanner<T>::context(const Side& side, int64_t node) const {
  std::vector<const KVBlock<T>*> ctx;
  for (int64_t n = node; n >= 0; n = nodes_[static_cast<size_t>(n)].parent) {
    ctx.push_back(&side.chunks[static_cast<size_t>(n)]);
  }
  ctx.push_back(&side.cache.block());
  std::reverse(ctx.begin(), ctx.end());
  return ctx;
}

template <std::floating_point T>
std::vector<T> LatentPlanner<T>::run(Side& side, const std::vector<T>& token, int64_t pos,
                                     std::vector<const KVBlock<T>*>& ctx, KVBlock<T>& out) {
  const int64_t positions[1] = {pos};
  return side.engine.forward(token, positions, ctx, out);
}

template <std::floating_point T>
void LatentPlanner<T>::fill_policy(Prediction& p, const std::vector<T>& logits) const {
  const auto& cfg = online_.model->config();
  if (cfg.continuous) {
    const auto a = static_cast<size_t>(cfg.action_dim);
    for (size_t d = 0; d < a; ++d) {
      const double raw = static_cast<double>(logits[a + d]);
      const double softplus = raw > 20 ? raw : std::log1p(std::exp(raw));
      p.mu.push_back(static_cast<double>(logits[d]));
      p.sigma.push_back(std::clamp(softplus, cfg.sigma_min, cfg.sigma_max));
    }
    return;
  }
  const double mx = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  double z = 0;
  for (T l : logits) {
    p.prior.push_back(std::exp(static_cast<double>(l) - mx));
    z += p.prior.back();
  }
  for (double& x : p.prior) x /= z;
}

template <std::floating_point T>
Prediction LatentPlanner<T>::root() {
  if (!has_obs_) throw UsageError("planner: observe() must precede search");
  nodes_.assign(1, {-1, step_});
  const int64_t layers = online_.model->config().layers;
  Prediction p;
  for (Side* side : {&online_, target_ ? &*target_ : nullptr}) {
    if (!side) continue;
    side->chunks.assign(1, KVBlock<T>(layers));
    std::vector<const KVBlock<T>*> ctx{&side->cache.block()};
    const auto h = run(*side, root_latent_, 2 * step_, ctx, side->chunks[0]);
    p.value = logits_to_scalar<T>(side->engine.value_logits(h, task_));
    if (side == &online_) fill_policy(p, side->engine.policy_logits(h, task_));
  }
  return p;
}

template <std::floating_point T>
Prediction LatentPlanner<T>::expand(int64_t parent, const Action& action, int64_t child) {
  if (child != static_cast<int64_t>(nodes_.size())) throw UsageError("planner: node ids out of order");
  const int64_t s = nodes_[static_cast<size_t>(parent)].step;
  const int64_t layers = online_.model->config().layers;
  const bool horizon = at_horizon(s + 1);
  Prediction p;
  std::vector<T> z_hat;
  for (Side* side : {&online_, target_ ? &*target_ : nullptr}) {
    if (!side) continue;
    auto ctx = context(*side, parent);
    KVBlock<T> act_kv(layers), lat_kv(layers);
    const auto h_a = run(*side, side->engine.action_token(action), 2 * s + 1, ctx, act_kv);
    if (side == &online_) {
      z_hat = side->engine.next_latent(h_a, task_);
      p.reward = logits_to_scalar<T>(side->engine.reward_logits(h_a, task_));
    }
    if (!horizon) {
      ctx.push_back(&act_kv);
      const auto h_z = run(*side, z_hat, 2 * (s + 1), ctx, lat_kv);
      p.value = logits_to_scalar<T>(side->engine.value_logits(h_z, task_));
      if (side == &online_) fill_policy(p, side->engine.policy_logits(h_z, task_));
      act_kv.append(lat_kv);
    }
    side->chunks.push_back(std::move(act_kv));
  }
  // Past the position table the episode has necessarily ended.
  if (horizon) {
    p.terminal = true;
    p.value = 0.0;
  }
  nodes_.push_back({parent, s + 1});
  return p;
}

template <std::floating_point T>
void LatentPlanner<T>::commit(const Action& a) {
  if (!has_obs_) throw UsageError("planner: commit() without an observation");
  const int64_t layers = online_.model->config().layers;
  for (Side* side : {&online_, target_ ? &*target_ : nullptr}) {
    if (!side) continue;
    KVBlock<T> lat_kv(layers), act_kv(layers);
    std::vector<const KVBlock<T>*> ctx{&side->cache.block()};
    run(*side, root_latent_, 2 * step_, ctx, lat_kv);
    ctx.push_back(&lat_kv);
    run(*side, side->engine.action_token(a), 2 * step_ + 1, ctx, act_kv);
    lat_kv.append(act_kv);
    side->cache.append(lat_kv);
  }
  ++step_;
  has_obs_ = false;
}

template class LatentPlanner<float>;
template class LatentPlanner<double>;

}  // namespace latentplan
