#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "latentplan/env.h"
#include "latentplan/inference.h"
#include "latentplan/mcts.h"

namespace latentplan {

// Uses copies of a live environment as a perfect model: uniform priors,
// exact rewards and terminals, leaf value 0.
class OracleModel : public SearchModel {
 public:
  explicit OracleModel(const Environment& env) : env_(&env) {}
  Prediction root() override;
  Prediction expand(int64_t parent, const Action& action, int64_t child) override;

 private:
  Prediction uniform() const;
  const Environment* env_;
  std::vector<std::unique_ptr<Environment>> states_;
};

// Plans in latent space for one episode at a time. The episode history is
// kept as bounded KV caches (one per model); every tree node stores the
// keys/values of its own tokens so an expansion attends over
// history + root + ancestors without replaying anything. Leaf values come
// from the target model when one is given.
template <std::floating_point T>
class LatentPlanner : public SearchModel {
 public:
  LatentPlanner(const WorldModel<T>& online, const WorldModel<T>* target, int64_t task,
                int64_t context_steps);

  void begin_episode();
  // Sets the root observation for the next search at the current step.
  void observe(const Observation& obs);
  // Appends (z_t, a_t) to the history and advances the step.
  void commit(const Action& a);

  Prediction root() override;
  Prediction expand(int64_t parent, const Action& action, int64_t child) override;

  int64_t step() const { return step_; }
  const std::vector<T>& root_latent() const { return root_latent_; }
  int64_t history_tokens() const { return online_.cache.length(); }

 private:
  struct Side {
    const WorldModel<T>* model;
    InferenceEngine<T> engine;
    KVCache<T> cache;
    std::vector<KVBlock<T>> chunks;  // per tree node
  };
  struct NodeInfo {
    int64_t parent;
    int64_t step;
  };

  std::vector<const KVBlock<T>*> context(const Side& side, int64_t node) const;
  // Runs one token at `pos` for a side; returns its hidden state and
  // appends its keys/values to `out`.
  std::vector<T> run(Side& side, const std::vector<T>& token, int64_t pos,
                     std::vector<const KVBlock<T>*>& ctx, KVBlock<T>& out);
  // Fills policy fields from policy logits.
  void fill_policy(Prediction& p, const std::vector<T>& logits) const;
  bool at_horizon(int64_t step) const;

  int64_t task_;
  Side online_;
  std::optional<Side> target_;
  std::vector<NodeInfo> nodes_;
  std::vector<T> root_latent_;
  bool has_obs_ = false;
  int64_t step_ = 0;
};

extern template class LatentPlanner<float>;
extern template class LatentPlanner<double>;

}  // namespace latentplan
