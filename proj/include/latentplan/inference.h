#pragma once

// Graph-free incremental inference over a WorldModel's parameters. Keys and
// values live in KVBlocks; a forward attends over a list of context blocks
// (oldest first) followed by the new tokens themselves.

#include <span>
#include <vector>

#include "latentplan/world_model.h"

namespace latentplan {

// Keys/values of a run of consecutive tokens, one [len, D] array per layer.
template <std::floating_point T>
struct KVBlock {
  int64_t len = 0;
  std::vector<std::vector<T>> k, v;
  std::vector<int64_t> positions;

  KVBlock() = default;
  explicit KVBlock(int64_t layers) : k(static_cast<size_t>(layers)), v(static_cast<size_t>(layers)) {}
  void clear();
  void drop_front(int64_t n, int64_t dim);
  void append(const KVBlock& other);
};

// Bounded token cache. On overflow the oldest full timestep (two tokens) is
// evicted until the new tokens fit; surviving tokens keep their absolute
// positions.
template <std::floating_point T>
class KVCache {
 public:
  KVCache(int64_t layers, int64_t dim, int64_t capacity);

  int64_t length() const { return data_.len; }
  int64_t length(int64_t layer) const;
  int64_t capacity() const { return capacity_; }
  int64_t evicted() const { return evicted_; }
  const KVBlock<T>& block() const { return data_; }

  void append(const KVBlock<T>& tokens);
  // Keeps the most recent n tokens. Throws UsageError if n > length().
  void trim_to(int64_t n);
  void reset();

 private:
  int64_t dim_;
  int64_t capacity_;
  int64_t evicted_ = 0;
  KVBlock<T> data_;
};

template <std::floating_point T>
class InferenceEngine {
 public:
  explicit InferenceEngine(const WorldModel<T>& model);

  const WorldModel<T>& model() const { return *model_; }
  int64_t dim() const { return model_->config().latent_dim; }

  // Runs tokens [n, D] (raw, before position embedding) at the given
  // absolute positions. Appends their keys/values to `out_kv` and returns
  // the final hidden states [n, D]. Throws CacheOverflowError for positions
  // beyond the position table.
  std::vector<T> forward(std::span<const T> tokens, std::span<const int64_t> positions,
                         std::span<const KVBlock<T>* const> context, KVBlock<T>& out_kv) const;

  // Single-observation encoder pass (eval mode, no graph).
  std::vector<T> encode(const Observation& obs) const;
  std::vector<T> action_token(const Action& a) const;

  // Heads applied to one hidden vector.
  std::vector<T> policy_logits(std::span<const T> h, int64_t task) const;
  std::vector<T> value_logits(std::span<const T> h, int64_t task) const;
  std::vector<T> next_latent(std::span<const T> h, int64_t task) const;
  std::vector<T> reward_logits(std::span<const T> h, int64_t task) const;

 private:
  std::vector<T> mlp(const Mlp2<T>& m, std::span<const T> x) const;

  const WorldModel<T>* model_;
};

extern template class KVCache<float>;
extern template class KVCache<double>;
extern template class InferenceEngine<float>;
extern template class InferenceEngine<double>;

}  // namespace latentplan
