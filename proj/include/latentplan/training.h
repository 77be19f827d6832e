#pragma once

#include <iosfwd>
#include <mutex>
#include <deque>
#include <vector>

#include "latentplan/env.h"
#include "latentplan/mcts.h"
#include "latentplan/optim.h"
#include "latentplan/world_model.h"

namespace latentplan {

struct Transition {
  Observation obs;
  Action action;
  double reward = 0.0;
  bool done = false;
  std::vector<double> policy;          // improved policy (over sampled_actions when continuous)
  std::vector<Action> sampled_actions; // continuous only
  double root_value = 0.0;
};

// One complete episode. Every stored episode ends with done = true on its
// last transition (time limits count as episode ends).
struct GameSegment {
  std::vector<Transition> steps;
  Observation final_obs;  // observation after the last transition
  int64_t task = 0;
  bool success = false;

  int64_t length() const { return static_cast<int64_t>(steps.size()); }
  double episode_return() const;
  // Throws ValidationError on a broken invariant.
  void validate() const;
};

// Bounded FIFO store of whole segments with uniform sampling. Safe for
// concurrent add/sample.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int64_t capacity = 1000000);

  void add(GameSegment seg);
  int64_t num_segments() const;
  int64_t num_transitions() const;
  int64_t capacity() const { return capacity_; }

  // Uniform indices with replacement. Throws InsufficientDataError when
  // fewer than `min_segments` segments are stored.
  std::vector<int64_t> sample_indices(int64_t n, Rng& rng, int64_t min_segments = 1) const;
  std::vector<GameSegment> sample(int64_t n, Rng& rng, int64_t min_segments = 1) const;

 private:
  mutable std::mutex mu_;
  int64_t capacity_;
  int64_t transitions_ = 0;
  std::deque<GameSegment> segments_;
};

// n-step TD target at step t: sum_{k<n} gamma^k r_{t+k} + gamma^n v[t+n].
// The sum stops at the episode end and then has no bootstrap term.
// `bootstrap[j]` is the target model's value at step j (size >= length).
double compute_value_target(const GameSegment& seg, int64_t t, int64_t n, double gamma,
                            std::span<const double> bootstrap);
// Same rule over a raw reward array whose last entry ends the episode.
double n_step_target(std::span<const double> rewards, int64_t t, int64_t n, double gamma,
                     std::span<const double> bootstrap);

struct LossWeights {
  double latent = 10.0;
  double reward = 1.0;
  double policy = 1.0;
  double value = 0.5;
  double entropy = 1e-4;
  double decode = 0.0;  // 0.05 when decode regularization is on
  // Average the latent squared error over dimensions instead of summing.
  bool latent_mean = false;
};

// Unweighted terms, each averaged over its rows.
struct LossBreakdown {
  double latent = 0, reward = 0, policy = 0, value = 0, entropy = 0, decode = 0;
  double total = 0;
};

// Training windows of `steps` timesteps starting at step 0, padded past the
// episode end with absorbing rows (final observation, zero reward).
template <std::floating_point T>
struct Batch {
  int64_t batch = 0, steps = 0, task = 0;
  Tensor<T> obs;       // [B*H, obs]
  Tensor<T> next_obs;  // [B*H, obs]
  std::vector<Action> actions;
  std::vector<double> rewards;
  std::vector<uint8_t> valid;  // real transitions
  std::vector<int64_t> length; // per sequence
  Tensor<T> policy_target;     // [B*H, A] or [B*H, K]
  std::vector<std::vector<float>> sampled;  // continuous: [B*H][K*action_dim]
  // Filled by prepare_targets.
  Tensor<T> target_latent;     // [B*H, D]
  std::vector<double> value_target;
};

template <std::floating_point T>
Batch<T> make_batch(const std::vector<GameSegment>& segs, int64_t steps, const ModelConfig& cfg,
                    Rng& rng);

// Target latents of o_{t+1} and n-step value targets from `target` (eval
// mode, no graph).
template <std::floating_point T>
void prepare_targets(Batch<T>& b, const WorldModel<T>& target, int64_t td_steps, double gamma);

template <std::floating_point T>
struct LossResult {
  Tensor<T> total;
  LossBreakdown parts;
};

template <std::floating_point T>
LossResult<T> unizero_loss(const Batch<T>& b, const WorldModel<T>& model, const LossWeights& w);

// coefficient * mean_rows ||o - d(z)||_1.
template <std::floating_point T>
Tensor<T> decode_regularization(const Tensor<T>& obs, const Tensor<T>& reconstruction,
                                double coefficient);

// Per-row -sum_i w[r, i] log N(a_i; mu_r, sigma_r^2). `samples[r]` holds K
// actions of action_dim values; weights is [R, K] (constant).
template <std::floating_point T>
Tensor<T> continuous_policy_nll(const Tensor<T>& mu, const Tensor<T>& sigma,
                                const std::vector<std::vector<float>>& samples,
                                const Tensor<T>& weights);

// Arithmetic mean. Throws UsageError on an empty list.
template <std::floating_point T>
Tensor<T> multitask_aggregate(const std::vector<Tensor<T>>& losses);

struct TrainConfig {
  int64_t batch_size = 64;
  int64_t segment_length = 18;  // training context H
  // Cut each batch's windows to its longest sampled episode instead of H.
  bool trim_windows = true;
  int64_t td_steps = 5;
  double discount = 0.997;
  double max_grad_norm = 5.0;
  TargetMode target_mode = TargetMode::kSoft;
  double target_momentum = 0.05;
  int64_t hard_interval = 100;
  LossWeights weights;
};

struct TrainMetrics {
  int64_t step = 0;
  LossBreakdown loss;
  double grad_norm = 0;          // before clipping
  double clipped_grad_norm = 0;  // after clipping
  std::vector<double> task_loss;
};

// One optimizer step: a batch per task (each from its own buffer), mean of
// the per-task losses, clip, AdamW, target update. Throws
// InsufficientDataError when a buffer holds fewer than batch_size segments.
template <std::floating_point T>
TrainMetrics train_step(const std::vector<const ReplayBuffer*>& buffers, WorldModel<T>& model,
                        WorldModel<T>& target, AdamW<T>& opt, const TrainConfig& cfg, Rng& rng);

struct CollectOptions {
  int64_t episodes = 8;
  int64_t task = 0;
  bool add_noise = true;
  bool use_target_values = true;
  std::ostream* trace = nullptr;  // per-step search traces
};

// Plays whole episodes with latent search, returning them as segments.
// The model must be in eval mode.
template <std::floating_point T>
std::vector<GameSegment> collect_experience(Environment& env, const WorldModel<T>& model,
                                            const WorldModel<T>* target, const SearchConfig& cfg,
                                            const CollectOptions& opts, Rng& rng);

extern template struct Batch<float>;
extern template struct Batch<double>;

}  // namespace latentplan
