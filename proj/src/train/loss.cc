#include <cmath>
#include <numbers>

#include "latentplan/training.h"
#include "latentplan/value_transform.h"

namespace latentplan {

template <std::floating_point T>
Batch<T> make_batch(const std::vector<GameSegment>& segs, int64_t steps, const ModelConfig& cfg,
                    Rng& rng) {
  if (segs.empty()) throw UsageError("make_batch: no segments");
  const int64_t bsz = static_cast<int64_t>(segs.size());
  const int64_t rows = bsz * steps;
  const int64_t obs_size = cfg.obs_size();
  const int64_t width = cfg.continuous ? static_cast<int64_t>(segs[0].steps[0].policy.size())
                                       : cfg.num_actions;
  Batch<T> b;
  b.batch = bsz;
  b.steps = steps;
  b.task = segs[0].task;
  std::vector<T> obs(static_cast<size_t>(rows * obs_size));
  std::vector<T> next(obs.size());
  std::vector<T> pi(static_cast<size_t>(rows * width), T(0));
  b.rewards.assign(static_cast<size_t>(rows), 0.0);
  b.valid.assign(static_cast<size_t>(rows), 0);
  if (cfg.continuous) b.sampled.resize(static_cast<size_t>(rows));
  std::uniform_int_distribution<int64_t> any_action(0, std::max<int64_t>(cfg.num_actions - 1, 0));
  std::uniform_real_distribution<float> any_value(-1.0f, 1.0f);

  auto put = [&](std::vector<T>& dst, int64_t row, const Observation& o) {
    if (static_cast<int64_t>(o.size()) != obs_size) throw ShapeError("make_batch: observation size");
    std::copy(o.begin(), o.end(), dst.begin() + row * obs_size);
  };
  for (int64_t s = 0; s < bsz; ++s) {
    const auto& seg = segs[static_cast<size_t>(s)];
    if (seg.task != b.task) throw UsageError("make_batch: segments from different tasks");
    const int64_t len = seg.length();
    if (len > steps) {
      throw ValidationError("make_batch: episode of " + std::to_string(len) +
                            " steps exceeds the training window of " + std::to_string(steps));
    }
    b.length.push_back(len);
    for (int64_t t = 0; t < steps; ++t) {
      const int64_t r = s * steps + t;
      if (t < len) {
        const auto& tr = seg.steps[static_cast<size_t>(t)];
        put(obs, r, tr.obs);
        put(next, r, t + 1 < len ? seg.steps[static_cast<size_t>(t + 1)].obs : seg.final_obs);
        b.actions.push_back(tr.action);
        b.rewards[static_cast<size_t>(r)] = tr.reward;
        b.valid[static_cast<size_t>(r)] = 1;
        if (static_cast<int64_t>(tr.policy.size()) != width) {
          throw ShapeError("make_batch: policy target width");
        }
        std::copy(tr.policy.begin(), tr.policy.end(), pi.begin() + r * width);
        if (cfg.continuous) {
          for (const auto& a : tr.sampled_actions) {
            b.sampled[static_cast<size_t>(r)].insert(b.sampled[static_cast<size_t>(r)].end(),
                                                     a.values.begin(), a.values.end());
          }
        }
      } else {
        // Absorbing padding after the episode end.
        put(obs, r, seg.final_obs);
        put(next, r, seg.final_obs);
        if (cfg.continuous) {
          std::vector<float> a(static_cast<size_t>(cfg.action_dim));
          for (auto& x : a) x = any_value(rng);
          b.actions.push_back(Action::continuous(std::move(a)));
          b.sampled[static_cast<size_t>(r)].assign(static_cast<size_t>(width * cfg.action_dim), 0.0f);
        } else {
          b.actions.push_back(Action::discrete(any_action(rng)));
        }
      }
    }
  }
  b.obs = Tensor<T>::from({rows, obs_size}, std::move(obs));
  b.next_obs = Tensor<T>::from({rows, obs_size}, std::move(next));
  b.policy_target = Tensor<T>::from({rows, width}, std::move(pi));
  return b;
}

template <std::floating_point T>
void prepare_targets(Batch<T>& b, const WorldModel<T>& target, int64_t td_steps, double gamma) {
  if (target.training()) throw UsageError("prepare_targets: target model must be in eval mode");
  NoGradGuard guard;
  // Encoding is row-independent in eval mode, so next_obs[t] = obs[t+1]
  // inside a window reuses the observation latents; only the last row of
  // each window needs its own pass.
  const auto latents = target.encode(b.obs);
  const int64_t obs_size = b.obs.dim(1), dim = latents.dim(1);
  std::vector<T> last(static_cast<size_t>(b.batch * obs_size));
  for (int64_t s = 0; s < b.batch; ++s) {
    const auto* src = b.next_obs.values().data() + ((s + 1) * b.steps - 1) * obs_size;
    std::copy(src, src + obs_size, last.begin() + s * obs_size);
  }
  const auto last_latent = target.encode(Tensor<T>::from({b.batch, obs_size}, std::move(last)));
  std::vector<T> next(static_cast<size_t>(b.batch * b.steps * dim));
  for (int64_t s = 0; s < b.batch; ++s) {
    for (int64_t t = 0; t < b.steps; ++t) {
      const T* src = t + 1 < b.steps ? latents.values().data() + (s * b.steps + t + 1) * dim
                                     : last_latent.values().data() + s * dim;
      std::copy(src, src + dim, next.begin() + (s * b.steps + t) * dim);
    }
  }
  b.target_latent = Tensor<T>::from({b.batch * b.steps, dim}, std::move(next));
  const auto out = target.unroll_latents(latents, b.actions, b.batch, b.steps, b.task);
  const int64_t bins = target.config().bins;
  const auto& logits = out.value.values();
  std::vector<double> boot(static_cast<size_t>(b.batch * b.steps));
  for (size_t r = 0; r < boot.size(); ++r) {
    boot[r] = logits_to_scalar<T>(std::span<const T>(logits.data() + r * bins, bins));
  }
  b.value_target.assign(boot.size(), 0.0);
  for (int64_t s = 0; s < b.batch; ++s) {
    const int64_t len = b.length[static_cast<size_t>(s)];
    std::span<const double> rewards(b.rewards.data() + s * b.steps, static_cast<size_t>(len));
    std::span<const double> values(boot.data() + s * b.steps, static_cast<size_t>(b.steps));
    for (int64_t t = 0; t < len; ++t) {
      b.value_target[static_cast<size_t>(s * b.steps + t)] =
          n_step_target(rewards, t, td_steps, gamma, values);
    }
  }
}

template <std::floating_point T>
Tensor<T> decode_regularization(const Tensor<T>& obs, const Tensor<T>& reconstruction,
                                double coefficient) {
  return scale(mean(sum_rows(abs(sub(obs, reconstruction)))), static_cast<T>(coefficient));
}

template <std::floating_point T>
Tensor<T> continuous_policy_nll(const Tensor<T>& mu, const Tensor<T>& sigma,
                                const std::vector<std::vector<float>>& samples,
                                const Tensor<T>& weights) {
  const int64_t rows = mu.dim(0), adim = mu.dim(1), k = weights.dim(1);
  if (static_cast<int64_t>(samples.size()) != rows || weights.dim(0) != rows) {
    throw ShapeError("continuous_policy_nll: row count mismatch");
  }
  const auto log_sigma = sum_rows(log(sigma));
  const T half_log_2pi = static_cast<T>(0.5 * std::log(2.0 * std::numbers::pi));
  Tensor<T> acc;
  for (int64_t i = 0; i < k; ++i) {
    std::vector<T> a(static_cast<size_t>(rows * adim)), w(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
      const auto& row = samples[static_cast<size_t>(r)];
      if (static_cast<int64_t>(row.size()) != k * adim) throw ShapeError("continuous_policy_nll: samples");
      for (int64_t d = 0; d < adim; ++d) a[r * adim + d] = row[i * adim + d];
      w[r] = weights.at(r * k + i);
    }
    const auto z = div(sub(Tensor<T>::from({rows, adim}, std::move(a)), mu), sigma);
    // -log N(a; mu, sigma) summed over dimensions.
    auto nll = add(add_scalar(scale(sum_rows(square(z)), T(0.5)), half_log_2pi * static_cast<T>(adim)),
                   log_sigma);
    auto term = mul(nll, Tensor<T>::from({rows}, std::move(w)));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

template <std::floating_point T>
Tensor<T> multitask_aggregate(const std::vector<Tensor<T>>& losses) {
  if (losses.empty()) throw UsageError("multitask_aggregate: no task losses");
  Tensor<T> total = losses[0];
  for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  return scale(total, static_cast<T>(1.0 / static_cast<double>(losses.size())));
}

namespace {

template <std::floating_point T>
Tensor<T> two_hot_rows(std::span<const double> values, int64_t bins) {
  std::vector<T> out(values.size() * static_cast<size_t>(bins));
  for (size_t r = 0; r < values.size(); ++r) {
    scalar_to_categorical<T>(values[r], std::span<T>(out.data() + r * bins, static_cast<size_t>(bins)));
  }
  return Tensor<T>::from({static_cast<int64_t>(values.size()), bins}, std::move(out));
}

}  // namespace

template <std::floating_point T>
LossResult<T> unizero_loss(const Batch<T>& b, const WorldModel<T>& model, const LossWeights& w) {
  const auto& cfg = model.config();
  if (!b.target_latent.defined() || b.value_target.empty()) {
    throw UsageError("unizero_loss: call prepare_targets first");
  }
  const int64_t rows = b.batch * b.steps;
  const auto out = model.unroll(b.obs, b.actions, b.batch, b.steps, b.task);

  int64_t valid = 0;
  for (auto v : b.valid) valid += v;
  std::vector<T> mask(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    mask[r] = valid > 0 && b.valid[r] ? T(1) / static_cast<T>(valid) : T(0);
  }

  const T inv_rows = T(1) / static_cast<T>(rows);
  const T latent_scale =
      w.latent_mean ? inv_rows / static_cast<T>(out.next_latent.dim(1)) : inv_rows;
  auto latent = scale(sum(square(sub(out.next_latent, stop_gradient(b.target_latent)))), latent_scale);
  auto reward = mean(cross_entropy_rows(out.reward, two_hot_rows<T>(b.rewards, cfg.bins)));
  auto value = mean(cross_entropy_rows(out.value, two_hot_rows<T>(b.value_target, cfg.bins)));

  Tensor<T> policy, entropy_rows;
  if (cfg.continuous) {
    policy = weighted_sum(continuous_policy_nll(out.mu, out.sigma, b.sampled, b.policy_target),
                          std::span<const T>(mask));
    const T c = static_cast<T>(0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e) *
                               static_cast<double>(cfg.action_dim));
    entropy_rows = add_scalar(sum_rows(log(out.sigma)), c);
  } else {
    policy = weighted_sum(cross_entropy_rows(out.policy, b.policy_target), std::span<const T>(mask));
    entropy_rows = scale(sum_rows(mul(softmax(out.policy), log_softmax(out.policy))), T(-1));
  }
  auto entropy = weighted_sum(entropy_rows, std::span<const T>(mask));

  auto total = add(add(scale(latent, static_cast<T>(w.latent)), scale(reward, static_cast<T>(w.reward))),
                   add(scale(policy, static_cast<T>(w.policy)), scale(value, static_cast<T>(w.value))));
  total = sub(total, scale(entropy, static_cast<T>(w.entropy)));

  LossResult<T> res;
  if (w.decode > 0) {
    auto dec = decode_regularization(b.obs, model.decode(out.latents), 1.0);
    total = add(total, scale(dec, static_cast<T>(w.decode)));
    res.parts.decode = static_cast<double>(dec.item());
  }
  res.parts.latent = static_cast<double>(latent.item());
  res.parts.reward = static_cast<double>(reward.item());
  res.parts.policy = static_cast<double>(policy.item());
  res.parts.value = static_cast<double>(value.item());
  res.parts.entropy = static_cast<double>(entropy.item());
  res.parts.total = static_cast<double>(total.item());
  res.total = total;
  return res;
}

template <std::floating_point T>
TrainMetrics train_step(const std::vector<const ReplayBuffer*>& buffers, WorldModel<T>& model,
                        WorldModel<T>& target, AdamW<T>& opt, const TrainConfig& cfg, Rng& rng) {
  if (buffers.empty()) throw UsageError("train_step: no buffers");
  const WorldModel<T>& tgt = cfg.target_mode == TargetMode::kNone ? model : target;
  model.set_training(false);
  std::vector<Batch<T>> batches;
  for (size_t k = 0; k < buffers.size(); ++k) {
    auto segs = buffers[k]->sample(cfg.batch_size, rng, cfg.batch_size);
    int64_t steps = cfg.segment_length;
    if (cfg.trim_windows) {
      steps = 1;
      for (const auto& s : segs) steps = std::max(steps, s.length());
    }
    batches.push_back(make_batch<T>(segs, steps, model.config(), rng));
    if (batches.back().task != static_cast<int64_t>(k)) {
      throw UsageError("train_step: buffer " + std::to_string(k) + " holds another task's data");
    }
    prepare_targets(batches.back(), tgt, cfg.td_steps, cfg.discount);
  }

  model.set_training(true);
  TrainMetrics m;
  std::vector<Tensor<T>> totals;
  for (const auto& b : batches) {
    auto r = unizero_loss(b, model, cfg.weights);
    totals.push_back(r.total);
    m.task_loss.push_back(r.parts.total);
    const double n = static_cast<double>(batches.size());
    m.loss.latent += r.parts.latent / n;
    m.loss.reward += r.parts.reward / n;
    m.loss.policy += r.parts.policy / n;
    m.loss.value += r.parts.value / n;
    m.loss.entropy += r.parts.entropy / n;
    m.loss.decode += r.parts.decode / n;
  }
  auto total = multitask_aggregate(totals);
  m.loss.total = static_cast<double>(total.item());

  auto params = model.parameters();
  opt.zero_grad();
  backward(total);
  m.grad_norm = clip_global_norm(params, cfg.max_grad_norm);
  m.clipped_grad_norm = global_grad_norm(params);
  opt.step();
  model.set_training(false);
  m.step = opt.step_count();

  if (cfg.target_mode != TargetMode::kNone) {
    auto online = params, dst = target.parameters();
    for (auto& [name, t] : model.named_buffers()) online.push_back(t);
    for (auto& [name, t] : target.named_buffers()) dst.push_back(t);
    update_target(online, dst, cfg.target_mode, cfg.target_momentum, m.step, cfg.hard_interval);
  }
  return m;
}

#define LATENTPLAN_INSTANTIATE(T)                                                              \
  template struct Batch<T>;                                                                    \
  template Batch<T> make_batch<T>(const std::vector<GameSegment>&, int64_t, const ModelConfig&, \
                                  Rng&);                                                       \
  template void prepare_targets<T>(Batch<T>&, const WorldModel<T>&, int64_t, double);          \
  template LossResult<T> unizero_loss<T>(const Batch<T>&, const WorldModel<T>&,                \
                                         const LossWeights&);                                  \
  template Tensor<T> decode_regularization<T>(const Tensor<T>&, const Tensor<T>&, double);     \
  template Tensor<T> continuous_policy_nll<T>(const Tensor<T>&, const Tensor<T>&,              \
                                              const std::vector<std::vector<float>>&,          \
                                              const Tensor<T>&);                               \
  template Tensor<T> multitask_aggregate<T>(const std::vector<Tensor<T>>&);                    \
  template TrainMetrics train_step<T>(const std::vector<const ReplayBuffer*>&, WorldModel<T>&, \
                                      WorldModel<T>&, AdamW<T>&, const TrainConfig&, Rng&);

LATENTPLAN_INSTANTIATE(float)
LATENTPLAN_INSTANTIATE(double)

}  // namespace latentplan
