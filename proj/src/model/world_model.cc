#include "latentplan/world_model.h"

#include <cmath>

namespace latentplan {

NormKind parse_norm_kind(const std::string& s) {
  if (s == "simnorm") return NormKind::kSimNorm;
  if (s == "softmax") return NormKind::kSoftmax;
  if (s == "sigmoid") return NormKind::kSigmoid;
  throw ConfigError("unknown norm kind '" + s + "' (simnorm | softmax | sigmoid)");
}

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "conv") return EncoderKind::kConv;
  if (s == "mlp") return EncoderKind::kMlp;
  throw ConfigError("unknown encoder kind '" + s + "' (conv | mlp)");
}

EncoderNorm parse_encoder_norm(const std::string& s) {
  if (s == "layer") return EncoderNorm::kLayer;
  if (s == "batch") return EncoderNorm::kBatch;
  throw ConfigError("unknown encoder norm '" + s + "' (layer | batch)");
}

TargetMode parse_target_mode(const std::string& s) {
  if (s == "soft") return TargetMode::kSoft;
  if (s == "hard") return TargetMode::kHard;
  if (s == "none") return TargetMode::kNone;
  throw ConfigError("unknown target mode '" + s + "' (soft | hard | none)");
}

std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::kSimNorm: return "simnorm";
    case NormKind::kSoftmax: return "softmax";
    case NormKind::kSigmoid: return "sigmoid";
  }
  return "?";
}

std::string to_string(EncoderKind k) { return k == EncoderKind::kConv ? "conv" : "mlp"; }
std::string to_string(EncoderNorm k) { return k == EncoderNorm::kLayer ? "layer" : "batch"; }

std::string to_string(TargetMode k) {
  switch (k) {
    case TargetMode::kSoft: return "soft";
    case TargetMode::kHard: return "hard";
    case TargetMode::kNone: return "none";
  }
  return "?";
}

int64_t ModelConfig::obs_size() const {
  int64_t n = 1;
  for (int64_t d : obs_shape) n *= d;
  return n;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
  if (latent_dim <= 0 || group_size <= 0) fail("latent_dim and group_size must be positive");
  if (latent_dim % group_size != 0) fail("latent_dim must be divisible by group_size");
  if (heads <= 0 || latent_dim % heads != 0) fail("latent_dim must be divisible by heads");
  if (temperature <= 0) fail("temperature must be positive");
  if (layers < 1) fail("layers must be >= 1");
  if (dropout < 0 || dropout >= 1) fail("dropout must be in [0, 1)");
  if (max_positions < 2) fail("max_positions must be >= 2");
  if (bins < 3 || bins % 2 == 0) fail("bins must be odd and >= 3");
  if (!continuous && num_actions < 1) fail("num_actions must be >= 1");
  if (continuous && action_dim < 1) fail("action_dim must be >= 1");
  if (sigma_min <= 0 || sigma_max < sigma_min) fail("need 0 < sigma_min <= sigma_max");
  if (head_hidden < 1 || mlp_hidden < 1) fail("hidden sizes must be positive");
  if (num_tasks < 1) fail("num_tasks must be >= 1");
  for (int64_t d : obs_shape) {
    if (d <= 0) fail("obs_shape entries must be positive");
  }
  if (encoder == EncoderKind::kConv) {
    if (obs_shape.size() != 3) fail("conv encoder needs obs_shape [C, H, W]");
    if (conv_channels.empty()) fail("conv encoder needs at least one channel count");
    for (int64_t c : conv_channels) {
      if (c <= 0) fail("conv_channels entries must be positive");
    }
  } else if (obs_shape.empty()) {
    fail("mlp encoder needs a non-empty obs_shape");
  }
}

template <std::floating_point T>
Tensor<T> simnorm(const Tensor<T>& x, int64_t group, T tau) {
  if (x.ndim() != 2) throw ShapeError("simnorm: expected [rows, D]");
  const int64_t rows = x.dim(0), d = x.dim(1);
  if (group <= 0 || d % group != 0) {
    throw ConfigError("simnorm: D=" + std::to_string(d) + " not divisible by V=" +
                      std::to_string(group));
  }
  if (tau <= 0) throw ConfigError("simnorm: temperature must be positive");
  auto g = reshape(x, {rows * d / group, group});
  if (tau != T(1)) g = scale(g, T(1) / tau);
  return reshape(softmax(g), {rows, d});
}

template <std::floating_point T>
Tensor<T> normalize_latent(const Tensor<T>& x, const ModelConfig& cfg) {
  switch (cfg.norm) {
    case NormKind::kSimNorm:
      return simnorm(x, cfg.group_size, static_cast<T>(cfg.temperature));
    case NormKind::kSoftmax:
      return softmax(x);
    case NormKind::kSigmoid:
      return activation(x, Activation::kSigmoid);
  }
  throw ConfigError("unsupported norm kind");
}

namespace {

template <std::floating_point T>
DenseLayer<T> make_dense(int64_t in, int64_t out, double stddev, Rng& rng) {
  DenseLayer<T> d;
  if (stddev > 0) {
    d.w = Tensor<T>::randn({in, out}, rng, static_cast<T>(stddev), true);
  } else {
    d.w = Tensor<T>::zeros({in, out}, true);
  }
  d.b = Tensor<T>::zeros({out}, true);
  return d;
}

// Hidden layer scaled for unit-variance inputs; final layer optionally zero.
template <std::floating_point T>
Mlp2<T> make_mlp(int64_t in, int64_t hidden, int64_t out, bool zero_last, Rng& rng) {
  return Mlp2<T>{make_dense<T>(in, hidden, 1.0 / std::sqrt(double(in)), rng),
                 make_dense<T>(hidden, out, zero_last ? 0.0 : 1.0 / std::sqrt(double(hidden)), rng)};
}

template <std::floating_point T>
void push_dense(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& name,
                const DenseLayer<T>& d) {
  out.emplace_back(name + ".w", d.w);
  out.emplace_back(name + ".b", d.b);
}

template <std::floating_point T>
void push_mlp(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& name,
              const Mlp2<T>& m) {
  push_dense(out, name + ".l1", m.l1);
  push_dense(out, name + ".l2", m.l2);
}

}  // namespace

template <std::floating_point T>
WorldModel<T>::WorldModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  cfg_.validate();
  Rng rng(seed);
  const int64_t d = cfg_.latent_dim;

  if (cfg_.encoder == EncoderKind::kConv) {
    int64_t cin = cfg_.obs_shape[0];
    const int64_t hw = cfg_.obs_shape[1] * cfg_.obs_shape[2];
    for (int64_t cout : cfg_.conv_channels) {
      enc_layers_.push_back(make_dense<T>(9 * cin, cout, std::sqrt(2.0 / double(9 * cin)), rng));
      enc_norm_g_.push_back(Tensor<T>::ones({cout}, true));
      enc_norm_b_.push_back(Tensor<T>::zeros({cout}, true));
      bn_mean_.push_back(Tensor<T>::zeros({cout}));
      bn_var_.push_back(Tensor<T>::ones({cout}));
      cin = cout;
    }
    enc_out_ = make_dense<T>(cin, d, 1.0 / std::sqrt(double(cin)), rng);
    // (c, p) channels-first index -> row p, column c.
    const int64_t c0 = cfg_.obs_shape[0];
    to_channels_last_.resize(static_cast<size_t>(c0 * hw));
    for (int64_t p = 0; p < hw; ++p) {
      for (int64_t c = 0; c < c0; ++c) to_channels_last_[p * c0 + c] = c * hw + p;
    }
  } else {
    const int64_t in = cfg_.obs_size();
    enc_layers_.push_back(make_dense<T>(in, cfg_.mlp_hidden, 1.0 / std::sqrt(double(in)), rng));
    enc_norm_g_.push_back(Tensor<T>::ones({cfg_.mlp_hidden}, true));
    enc_norm_b_.push_back(Tensor<T>::zeros({cfg_.mlp_hidden}, true));
    bn_mean_.push_back(Tensor<T>::zeros({cfg_.mlp_hidden}));
    bn_var_.push_back(Tensor<T>::ones({cfg_.mlp_hidden}));
    enc_out_ = make_dense<T>(cfg_.mlp_hidden, d, 1.0 / std::sqrt(double(cfg_.mlp_hidden)), rng);
  }

  if (cfg_.continuous) {
    act_mlp_ = make_mlp<T>(cfg_.action_dim, d, d, false, rng);
  } else {
    act_table_ = Tensor<T>::randn({cfg_.num_actions, d}, rng, static_cast<T>(1.0 / std::sqrt(double(d))), true);
  }
  pos_ = Tensor<T>::randn({cfg_.max_positions, d}, rng, T(0.02), true);

  const double proj_std = 0.02 / std::sqrt(2.0 * double(cfg_.layers));
  for (int64_t l = 0; l < cfg_.layers; ++l) {
    BlockParams<T> b;
    b.qkv = make_dense<T>(d, 3 * d, 0.02, rng);
    b.proj = make_dense<T>(d, d, proj_std, rng);
    b.ln1_g = Tensor<T>::ones({d}, true);
    b.ln1_b = Tensor<T>::zeros({d}, true);
    b.ff1 = make_dense<T>(d, 4 * d, 0.02, rng);
    b.ff2 = make_dense<T>(4 * d, d, proj_std, rng);
    b.ln2_g = Tensor<T>::ones({d}, true);
    b.ln2_b = Tensor<T>::zeros({d}, true);
    blocks_.push_back(std::move(b));
  }

  const int64_t policy_out = cfg_.continuous ? 2 * cfg_.action_dim : cfg_.num_actions;
  for (int64_t t = 0; t < cfg_.num_tasks; ++t) {
    TaskHeads<T> h;
    h.policy = make_mlp<T>(d, cfg_.head_hidden, policy_out, true, rng);
    h.value = make_mlp<T>(d, cfg_.head_hidden, cfg_.bins, true, rng);
    h.latent = make_mlp<T>(d, cfg_.head_hidden, d, false, rng);
    h.reward = make_mlp<T>(d, cfg_.head_hidden, cfg_.bins, true, rng);
    heads_.push_back(std::move(h));
  }
  if (cfg_.decoder) decoder_ = make_mlp<T>(d, cfg_.head_hidden, cfg_.obs_size(), false, rng);
}

template <std::floating_point T>
std::vector<std::pair<std::string, Tensor<T>>> WorldModel<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  const std::string enc = cfg_.encoder == EncoderKind::kConv ? "encoder.conv" : "encoder.fc";
  for (size_t i = 0; i < enc_layers_.size(); ++i) {
    push_dense(out, enc + std::to_string(i), enc_layers_[i]);
    out.emplace_back("encoder.norm" + std::to_string(i) + ".g", enc_norm_g_[i]);
    out.emplace_back("encoder.norm" + std::to_string(i) + ".b", enc_norm_b_[i]);
  }
  push_dense(out, "encoder.out", enc_out_);
  if (cfg_.continuous) {
    push_mlp(out, "action.mlp", act_mlp_);
  } else {
    out.emplace_back("action.table", act_table_);
  }
  out.emplace_back("pos", pos_);
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const std::string p = "block" + std::to_string(l);
    const auto& b = blocks_[l];
    push_dense(out, p + ".qkv", b.qkv);
    push_dense(out, p + ".proj", b.proj);
    out.emplace_back(p + ".ln1.g", b.ln1_g);
    out.emplace_back(p + ".ln1.b", b.ln1_b);
    push_dense(out, p + ".ff1", b.ff1);
    push_dense(out, p + ".ff2", b.ff2);
    out.emplace_back(p + ".ln2.g", b.ln2_g);
    out.emplace_back(p + ".ln2.b", b.ln2_b);
  }
  for (size_t t = 0; t < heads_.size(); ++t) {
    const std::string p = "task" + std::to_string(t);
    push_mlp(out, p + ".policy", heads_[t].policy);
    push_mlp(out, p + ".value", heads_[t].value);
    push_mlp(out, p + ".latent", heads_[t].latent);
    push_mlp(out, p + ".reward", heads_[t].reward);
  }
  if (cfg_.decoder) push_mlp(out, "decoder", decoder_);
  return out;
}

template <std::floating_point T>
std::vector<Tensor<T>> WorldModel<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <std::floating_point T>
std::vector<Tensor<T>> WorldModel<T>::task_parameters(int64_t task) const {
  const auto& h = heads(task);
  std::vector<Tensor<T>> out;
  for (const Mlp2<T>* m : {&h.policy, &h.value, &h.latent, &h.reward}) {
    for (const DenseLayer<T>* l : {&m->l1, &m->l2}) {
      out.push_back(l->w);
      out.push_back(l->b);
    }
  }
  return out;
}

template <std::floating_point T>
std::vector<std::pair<std::string, Tensor<T>>> WorldModel<T>::named_buffers() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  if (cfg_.encoder_norm != EncoderNorm::kBatch) return out;
  for (size_t i = 0; i < bn_mean_.size(); ++i) {
    out.emplace_back("encoder.bn" + std::to_string(i) + ".mean", bn_mean_[i]);
    out.emplace_back("encoder.bn" + std::to_string(i) + ".var", bn_var_[i]);
  }
  return out;
}

template <std::floating_point T>
const TaskHeads<T>& WorldModel<T>::heads(int64_t task) const {
  if (task < 0 || task >= static_cast<int64_t>(heads_.size())) {
    throw DomainError("task id " + std::to_string(task) + " out of range");
  }
  return heads_[static_cast<size_t>(task)];
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::encoder_norm(const Tensor<T>& x, size_t layer) const {
  if (cfg_.encoder_norm == EncoderNorm::kLayer) {
    return layer_norm(x, enc_norm_g_[layer], enc_norm_b_[layer]);
  }
  Tensor<T> mean = bn_mean_[layer];
  Tensor<T> var = bn_var_[layer];
  return batch_norm(x, enc_norm_g_[layer], enc_norm_b_[layer], mean.values(), var.values(),
                    training_);
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::conv_encode(const Tensor<T>& obs) const {
  const int64_t batch = obs.dim(0);
  const int64_t c0 = cfg_.obs_shape[0], h = cfg_.obs_shape[1], w = cfg_.obs_shape[2];
  const int64_t per = c0 * h * w;
  std::vector<T> rows(static_cast<size_t>(batch * per));
  const auto& src = obs.values();
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t i = 0; i < per; ++i) rows[b * per + i] = src[b * per + to_channels_last_[i]];
  }
  auto x = Tensor<T>::from({batch * h * w, c0}, std::move(rows));
  for (size_t l = 0; l < enc_layers_.size(); ++l) {
    x = enc_layers_[l](im2col3x3(x, batch, h, w));
    x = activation(encoder_norm(x, l), Activation::kLeakyRelu);
  }
  x = mean_row_groups(x, h * w);
  return normalize_latent(enc_out_(x), cfg_);
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::mlp_encode(const Tensor<T>& obs) const {
  auto x = activation(encoder_norm(enc_layers_[0](obs), 0), Activation::kLeakyRelu);
  return normalize_latent(enc_out_(x), cfg_);
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::encode(const Tensor<T>& obs) const {
  if (obs.ndim() != 2 || obs.dim(1) != cfg_.obs_size()) {
    throw ShapeError("encode: expected [B, " + std::to_string(cfg_.obs_size()) + "], got " +
                     shape_str(obs.shape()));
  }
  return cfg_.encoder == EncoderKind::kConv ? conv_encode(obs) : mlp_encode(obs);
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::embed_actions(const std::vector<Action>& actions) const {
  const auto n = static_cast<int64_t>(actions.size());
  if (cfg_.continuous) {
    std::vector<T> a;
    a.reserve(static_cast<size_t>(n * cfg_.action_dim));
    for (const auto& act : actions) {
      if (static_cast<int64_t>(act.values.size()) != cfg_.action_dim) {
        throw DomainError("continuous action has dimension " + std::to_string(act.values.size()) +
                          ", expected " + std::to_string(cfg_.action_dim));
      }
      for (float v : act.values) a.push_back(static_cast<T>(v));
    }
    return act_mlp_(Tensor<T>::from({n, cfg_.action_dim}, std::move(a)));
  }
  std::vector<int64_t> idx;
  idx.reserve(actions.size());
  for (const auto& act : actions) {
    if (act.index < 0 || act.index >= cfg_.num_actions) {
      throw DomainError("action " + std::to_string(act.index) + " outside [0, " +
                        std::to_string(cfg_.num_actions) + ")");
    }
    idx.push_back(act.index);
  }
  return take_rows(act_table_, std::span<const int64_t>(idx));
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::position_rows(std::span<const int64_t> positions) const {
  for (int64_t p : positions) {
    if (p < 0 || p >= cfg_.max_positions) {
      throw CacheOverflowError("token position " + std::to_string(p) +
                               " exceeds position capacity " + std::to_string(cfg_.max_positions));
    }
  }
  return take_rows(pos_, positions);
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::drop(const Tensor<T>& x) const {
  if (!training_ || cfg_.dropout <= 0) return x;
  return dropout(x, cfg_.dropout, true, dropout_rng_);
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::transformer(const Tensor<T>& tokens, int64_t batch, int64_t seq,
                                     std::span<const int64_t> key_start,
                                     AttentionMaps<T>* maps) const {
  const int64_t d = cfg_.latent_dim;
  if (tokens.ndim() != 2 || tokens.dim(1) != d || tokens.dim(0) != batch * seq) {
    throw ShapeError("transformer: tokens " + shape_str(tokens.shape()) + " vs batch*seq x D");
  }
  if (maps != nullptr) maps->clear();
  Tensor<T> x = tokens;
  for (const auto& b : blocks_) {
    auto qkv = b.qkv(x);
    std::vector<std::vector<T>> probs;
    auto att = causal_attention(slice_cols(qkv, 0, d), slice_cols(qkv, d, 2 * d),
                                slice_cols(qkv, 2 * d, 3 * d), batch, seq, cfg_.heads, key_start,
                                maps != nullptr ? &probs : nullptr);
    if (maps != nullptr) {
      probs.resize(static_cast<size_t>(cfg_.heads));
      maps->push_back(std::move(probs));
    }
    auto a = drop(b.proj(drop(att)));
    x = layer_norm(add(x, a), b.ln1_g, b.ln1_b);
    auto f = drop(b.ff2(activation(b.ff1(x), Activation::kGelu)));
    x = layer_norm(add(x, f), b.ln2_g, b.ln2_b);
  }
  return x;
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::decide_policy(const Tensor<T>& h, int64_t task) const {
  return heads(task).policy(h);
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::decide_value(const Tensor<T>& h, int64_t task) const {
  return heads(task).value(h);
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::predict_latent(const Tensor<T>& h, int64_t task) const {
  return normalize_latent(heads(task).latent(h), cfg_);
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::predict_reward(const Tensor<T>& h, int64_t task) const {
  return heads(task).reward(h);
}

template <std::floating_point T>
std::pair<Tensor<T>, Tensor<T>> WorldModel<T>::gaussian(const Tensor<T>& logits) const {
  const int64_t a = cfg_.action_dim;
  auto mu = slice_cols(logits, 0, a);
  auto sigma = clamp(activation(slice_cols(logits, a, 2 * a), Activation::kSoftplus),
                     static_cast<T>(cfg_.sigma_min), static_cast<T>(cfg_.sigma_max));
  return {mu, sigma};
}

template <std::floating_point T>
Tensor<T> WorldModel<T>::decode(const Tensor<T>& z) const {
  if (!cfg_.decoder) throw UsageError("decode: model was built without a decoder");
  return activation(decoder_(z), Activation::kSigmoid);
}

template <std::floating_point T>
UnrollOutput<T> WorldModel<T>::unroll(const Tensor<T>& obs, const std::vector<Action>& actions,
                                      int64_t batch, int64_t steps, int64_t task,
                                      int64_t first_step, std::span<const int64_t> key_start,
                                      AttentionMaps<T>* maps) const {
  if (obs.dim(0) != batch * steps) throw ShapeError("unroll: need batch*steps observations");
  return unroll_latents(encode(obs), actions, batch, steps, task, first_step, key_start, maps);
}

template <std::floating_point T>
UnrollOutput<T> WorldModel<T>::unroll_latents(const Tensor<T>& latents,
                                              const std::vector<Action>& actions, int64_t batch,
                                              int64_t steps, int64_t task, int64_t first_step,
                                              std::span<const int64_t> key_start,
                                              AttentionMaps<T>* maps) const {
  const int64_t n = batch * steps;
  if (latents.dim(0) != n || static_cast<int64_t>(actions.size()) != n) {
    throw ShapeError("unroll: need batch*steps latents and actions");
  }
  UnrollOutput<T> out;
  out.latents = latents;
  auto tokens = interleave_rows(out.latents, embed_actions(actions));
  std::vector<int64_t> pos(static_cast<size_t>(2 * n));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t j = 0; j < 2 * steps; ++j) pos[b * 2 * steps + j] = 2 * first_step + j;
  }
  tokens = add(tokens, position_rows(pos));
  auto h = transformer(tokens, batch, 2 * steps, key_start, maps);
  std::vector<int64_t> even(static_cast<size_t>(n)), odd(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    even[i] = 2 * i;
    odd[i] = 2 * i + 1;
  }
  auto hz = take_rows(h, std::span<const int64_t>(even));
  auto hza = take_rows(h, std::span<const int64_t>(odd));
  out.policy = decide_policy(hz, task);
  out.value = decide_value(hz, task);
  out.next_latent = predict_latent(hza, task);
  out.reward = predict_reward(hza, task);
  if (cfg_.continuous) std::tie(out.mu, out.sigma) = gaussian(out.policy);
  return out;
}

template <std::floating_point T>
void WorldModel<T>::copy_from(const WorldModel& other) {
  auto dst = named_parameters();
  auto src = other.named_parameters();
  auto dst_b = named_buffers();
  auto src_b = other.named_buffers();
  if (dst.size() != src.size() || dst_b.size() != src_b.size()) {
    throw ShapeError("copy_from: models have different parameter sets");
  }
  dst.insert(dst.end(), dst_b.begin(), dst_b.end());
  src.insert(src.end(), src_b.begin(), src_b.end());
  for (size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].second.shape() != src[i].second.shape()) {
      throw ShapeError("copy_from: shape mismatch at " + dst[i].first);
    }
  }
  for (size_t i = 0; i < dst.size(); ++i) dst[i].second.values() = src[i].second.values();
}

template <std::floating_point T>
void update_target(const std::vector<Tensor<T>>& online, std::vector<Tensor<T>>& target,
                   TargetMode mode, double momentum, int64_t step, int64_t hard_interval) {
  if (online.size() != target.size()) throw ShapeError("update_target: parameter count differs");
  for (size_t i = 0; i < online.size(); ++i) {
    if (online[i].shape() != target[i].shape()) {
      throw ShapeError("update_target: shape mismatch at parameter " + std::to_string(i));
    }
  }
  switch (mode) {
    case TargetMode::kNone:
      return;
    case TargetMode::kHard:
      if (hard_interval <= 0) throw ConfigError("update_target: hard interval must be positive");
      if (step % hard_interval != 0) return;
      for (size_t i = 0; i < online.size(); ++i) target[i].values() = online[i].values();
      return;
    case TargetMode::kSoft: {
      if (momentum < 0 || momentum > 1) throw ConfigError("update_target: momentum outside [0,1]");
      const T m = static_cast<T>(momentum);
      for (size_t i = 0; i < online.size(); ++i) {
        auto dst = target[i].data();
        auto src = online[i].data();
        for (size_t j = 0; j < dst.size(); ++j) dst[j] = (T(1) - m) * dst[j] + m * src[j];
      }
      return;
    }
  }
}

#define LATENTPLAN_INSTANTIATE_MODEL(T)                                                      \
  template class WorldModel<T>;                                                              \
  template Tensor<T> simnorm(const Tensor<T>&, int64_t, T);                                  \
  template Tensor<T> normalize_latent(const Tensor<T>&, const ModelConfig&);                 \
  template void update_target(const std::vector<Tensor<T>>&, std::vector<Tensor<T>>&,        \
                              TargetMode, double, int64_t, int64_t);

LATENTPLAN_INSTANTIATE_MODEL(float)
LATENTPLAN_INSTANTIATE_MODEL(double)

}  // namespace latentplan
