#pragma once

// Latent world model: observation encoder, action embedding, causal
// transformer over interleaved (latent, action) tokens, a decision head read
// at latent-token positions and a dynamics head read at action-token
// positions. Token position of step s is 2s (latent) and 2s+1 (action).

#include <map>
#include <string>
#include <vector>

#include "latentplan/ops.h"
#include "latentplan/types.h"

namespace latentplan {

enum class NormKind { kSimNorm, kSoftmax, kSigmoid };
enum class EncoderKind { kConv, kMlp };
enum class EncoderNorm { kLayer, kBatch };
enum class TargetMode { kSoft, kHard, kNone };

NormKind parse_norm_kind(const std::string& s);
EncoderKind parse_encoder_kind(const std::string& s);
EncoderNorm parse_encoder_norm(const std::string& s);
TargetMode parse_target_mode(const std::string& s);
std::string to_string(NormKind k);
std::string to_string(EncoderKind k);
std::string to_string(EncoderNorm k);
std::string to_string(TargetMode k);

struct ModelConfig {
  int64_t latent_dim = 64;
  int64_t group_size = 8;
  double temperature = 1.0;
  NormKind norm = NormKind::kSimNorm;

  int64_t layers = 2;
  int64_t heads = 4;
  double dropout = 0.1;
  int64_t max_positions = 38;  // learned position table rows

  bool continuous = false;
  int64_t num_actions = 5;  // discrete
  int64_t action_dim = 1;   // continuous
  double sigma_min = 0.05;
  double sigma_max = 2.0;

  EncoderKind encoder = EncoderKind::kConv;
  EncoderNorm encoder_norm = EncoderNorm::kLayer;
  std::vector<int64_t> obs_shape{3, 5, 5};  // conv: C,H,W; mlp: {size}
  std::vector<int64_t> conv_channels{16, 32, 64};
  int64_t mlp_hidden = 64;

  int64_t head_hidden = 64;
  int64_t bins = 101;
  int64_t num_tasks = 1;
  bool decoder = false;

  int64_t obs_size() const;
  int64_t groups() const { return latent_dim / group_size; }
  // Throws ConfigError on inconsistent fields.
  void validate() const;
};

// Per-group softmax(x / tau) over groups of `group` columns. Rows of x are
// independent latents.
template <std::floating_point T>
Tensor<T> simnorm(const Tensor<T>& x, int64_t group, T tau);

// Applies the configured latent normalization.
template <std::floating_point T>
Tensor<T> normalize_latent(const Tensor<T>& x, const ModelConfig& cfg);

template <std::floating_point T>
struct DenseLayer {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out]
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }
};

template <std::floating_point T>
struct Mlp2 {
  DenseLayer<T> l1, l2;
  Tensor<T> operator()(const Tensor<T>& x) const {
    return l2(activation(l1(x), Activation::kGelu));
  }
};

template <std::floating_point T>
struct BlockParams {
  DenseLayer<T> qkv;  // [D, 3D]
  DenseLayer<T> proj;
  Tensor<T> ln1_g, ln1_b;
  DenseLayer<T> ff1;  // [D, 4D]
  DenseLayer<T> ff2;
  Tensor<T> ln2_g, ln2_b;
};

template <std::floating_point T>
struct TaskHeads {
  Mlp2<T> policy;
  Mlp2<T> value;
  Mlp2<T> latent;
  Mlp2<T> reward;
};

// Outputs of a teacher-forced pass over B sequences of H steps. Row b*H+t of
// every field refers to step t of sequence b.
template <std::floating_point T>
struct UnrollOutput {
  Tensor<T> latents;        // encoder z_t [B*H, D]
  Tensor<T> policy;         // logits [B*H, A], or [B*H, 2*action_dim] (mu, raw sigma)
  Tensor<T> value;          // logits [B*H, bins]
  Tensor<T> next_latent;    // [B*H, D]
  Tensor<T> reward;         // logits [B*H, bins]
  Tensor<T> mu, sigma;      // continuous only, [B*H, action_dim]
};

// Attention probabilities from a full forward: probs[layer][head] is a
// row-major [seq, seq] matrix for the first batch entry.
template <std::floating_point T>
using AttentionMaps = std::vector<std::vector<std::vector<T>>>;

template <std::floating_point T>
class WorldModel {
 public:
  WorldModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  bool training() const { return training_; }
  void set_training(bool flag) { training_ = flag; }
  Rng& dropout_rng() { return dropout_rng_; }

  // Trainable tensors by stable name (checkpoint keys).
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;
  std::vector<Tensor<T>> task_parameters(int64_t task) const;
  // Non-trainable state (BatchNorm running statistics).
  std::vector<std::pair<std::string, Tensor<T>>> named_buffers() const;

  // obs [B, obs_size] -> normalized latents [B, D]. In training mode with
  // BatchNorm the running statistics are updated.
  Tensor<T> encode(const Tensor<T>& obs) const;
  Tensor<T> embed_actions(const std::vector<Action>& actions) const;
  // Position table rows for the given absolute token positions.
  Tensor<T> position_rows(std::span<const int64_t> positions) const;

  // Causal transformer over [batch*seq, D] tokens (position embeddings
  // already added). key_start, when given, limits query i to keys
  // [key_start[i], i] (a sliding window).
  Tensor<T> transformer(const Tensor<T>& tokens, int64_t batch, int64_t seq,
                        std::span<const int64_t> key_start = {},
                        AttentionMaps<T>* maps = nullptr) const;

  Tensor<T> decide_policy(const Tensor<T>& h, int64_t task) const;
  Tensor<T> decide_value(const Tensor<T>& h, int64_t task) const;
  Tensor<T> predict_latent(const Tensor<T>& h, int64_t task) const;
  Tensor<T> predict_reward(const Tensor<T>& h, int64_t task) const;
  // Continuous policy parameters from policy-head logits.
  std::pair<Tensor<T>, Tensor<T>> gaussian(const Tensor<T>& policy_logits) const;
  Tensor<T> decode(const Tensor<T>& z) const;

  // Encodes obs [B*H, obs_size], interleaves with the actions and runs the
  // backbone and all heads. Sequences start at step `first_step`.
  UnrollOutput<T> unroll(const Tensor<T>& obs, const std::vector<Action>& actions, int64_t batch,
                         int64_t steps, int64_t task = 0, int64_t first_step = 0,
                         std::span<const int64_t> key_start = {},
                         AttentionMaps<T>* maps = nullptr) const;
  // Same, starting from already encoded latents [B*H, D].
  UnrollOutput<T> unroll_latents(const Tensor<T>& latents, const std::vector<Action>& actions,
                                 int64_t batch, int64_t steps, int64_t task = 0,
                                 int64_t first_step = 0, std::span<const int64_t> key_start = {},
                                 AttentionMaps<T>* maps = nullptr) const;

  // Direct parameter access for the inference engine.
  const Mlp2<T>& action_mlp() const { return act_mlp_; }
  const std::vector<BlockParams<T>>& blocks() const { return blocks_; }
  const TaskHeads<T>& heads(int64_t task) const;
  const Tensor<T>& position_table() const { return pos_; }
  const Tensor<T>& action_table() const { return act_table_; }

  // Copies all parameters and buffers from another model of the same config.
  void copy_from(const WorldModel& other);

 private:
  Tensor<T> conv_encode(const Tensor<T>& obs) const;
  Tensor<T> mlp_encode(const Tensor<T>& obs) const;
  Tensor<T> encoder_norm(const Tensor<T>& x, size_t layer) const;
  Tensor<T> drop(const Tensor<T>& x) const;

  ModelConfig cfg_;
  bool training_ = false;
  mutable Rng dropout_rng_;

  std::vector<DenseLayer<T>> enc_layers_;
  std::vector<Tensor<T>> enc_norm_g_, enc_norm_b_;
  std::vector<Tensor<T>> bn_mean_, bn_var_;
  DenseLayer<T> enc_out_;
  std::vector<int64_t> to_channels_last_;

  Tensor<T> act_table_;
  Mlp2<T> act_mlp_;
  Tensor<T> pos_;
  std::vector<BlockParams<T>> blocks_;
  std::vector<TaskHeads<T>> heads_;
  Mlp2<T> decoder_;
};

// Soft: target <- (1-m)*target + m*online. Hard: full copy when
// step % interval == 0. None: no-op (the caller uses the online model as its
// own target). Throws ShapeError when the tensor lists differ.
template <std::floating_point T>
void update_target(const std::vector<Tensor<T>>& online, std::vector<Tensor<T>>& target,
                   TargetMode mode, double momentum, int64_t step, int64_t hard_interval = 100);

extern template class WorldModel<float>;
extern template class WorldModel<double>;

}  // namespace latentplan
