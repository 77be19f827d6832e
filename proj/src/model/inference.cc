#include "latentplan/inference.h"

#include <Eigen/Dense>
#include <cmath>

namespace latentplan {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// y[n, out] = x[n, in] * W + b
template <class T>
RowMat<T> dense(const RowMat<T>& x, const DenseLayer<T>& d) {
  const int64_t in = d.w.dim(0), out = d.w.dim(1);
  ConstMap<T> w(d.w.values().data(), in, out);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(d.b.values().data(), out);
  RowMat<T> y = x * w;
  y.rowwise() += b;
  return y;
}

template <class T>
void layer_norm_rows(RowMat<T>& x, const Tensor<T>& g, const Tensor<T>& b) {
  const int64_t n = x.cols();
  for (int64_t r = 0; r < x.rows(); ++r) {
    T mu = 0;
    for (int64_t c = 0; c < n; ++c) mu += x(r, c);
    mu /= static_cast<T>(n);
    T var = 0;
    for (int64_t c = 0; c < n; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + T(1e-5));
    for (int64_t c = 0; c < n; ++c) x(r, c) = (x(r, c) - mu) * is * g.values()[c] + b.values()[c];
  }
}

template <class T>
void apply(RowMat<T>& x, Activation kind) {
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = activation_value(kind, x.data()[i]);
}

}  // namespace

template <std::floating_point T>
void KVBlock<T>::clear() {
  len = 0;
  positions.clear();
  for (auto& a : k) a.clear();
  for (auto& a : v) a.clear();
}

template <std::floating_point T>
void KVBlock<T>::drop_front(int64_t n, int64_t dim) {
  if (n > len) throw UsageError("KVBlock: dropping more tokens than stored");
  for (auto* arrays : {&k, &v}) {
    for (auto& a : *arrays) a.erase(a.begin(), a.begin() + n * dim);
  }
  positions.erase(positions.begin(), positions.begin() + n);
  len -= n;
}

template <std::floating_point T>
void KVBlock<T>::append(const KVBlock& other) {
  if (k.size() != other.k.size()) throw ShapeError("KVBlock: layer count differs");
  for (size_t l = 0; l < k.size(); ++l) {
    k[l].insert(k[l].end(), other.k[l].begin(), other.k[l].end());
    v[l].insert(v[l].end(), other.v[l].begin(), other.v[l].end());
  }
  positions.insert(positions.end(), other.positions.begin(), other.positions.end());
  len += other.len;
}

template <std::floating_point T>
KVCache<T>::KVCache(int64_t layers, int64_t dim, int64_t capacity)
    : dim_(dim), capacity_(capacity), data_(layers) {
  if (capacity < 2 || capacity % 2 != 0) {
    throw ConfigError("KVCache: capacity must be a positive even token count");
  }
}

template <std::floating_point T>
int64_t KVCache<T>::length(int64_t layer) const {
  return static_cast<int64_t>(data_.k.at(static_cast<size_t>(layer)).size()) / dim_;
}

template <std::floating_point T>
void KVCache<T>::append(const KVBlock<T>& tokens) {
  if (tokens.len > capacity_) {
    throw CacheOverflowError("KVCache: " + std::to_string(tokens.len) +
                             " tokens exceed capacity " + std::to_string(capacity_));
  }
  while (data_.len + tokens.len > capacity_) {
    const int64_t n = std::min<int64_t>(2, data_.len);
    data_.drop_front(n, dim_);
    evicted_ += n;
  }
  data_.append(tokens);
}

template <std::floating_point T>
void KVCache<T>::trim_to(int64_t n) {
  if (n < 0 || n > data_.len) {
    throw UsageError("KVCache::trim_to(" + std::to_string(n) + ") with length " +
                     std::to_string(data_.len));
  }
  const int64_t drop = data_.len - n;
  data_.drop_front(drop, dim_);
  evicted_ += drop;
}

template <std::floating_point T>
void KVCache<T>::reset() {
  data_.clear();
  evicted_ = 0;
}

template <std::floating_point T>
InferenceEngine<T>::InferenceEngine(const WorldModel<T>& model) : model_(&model) {}

template <std::floating_point T>
std::vector<T> InferenceEngine<T>::forward(std::span<const T> tokens,
                                           std::span<const int64_t> positions,
                                           std::span<const KVBlock<T>* const> context,
                                           KVBlock<T>& out_kv) const {
  const auto& cfg = model_->config();
  const int64_t d = cfg.latent_dim;
  const int64_t n = static_cast<int64_t>(positions.size());
  const int64_t heads = cfg.heads, dh = d / heads;
  if (static_cast<int64_t>(tokens.size()) != n * d) throw ShapeError("forward: tokens vs positions");
  if (static_cast<int64_t>(out_kv.k.size()) != cfg.layers) {
    out_kv.k.resize(static_cast<size_t>(cfg.layers));
    out_kv.v.resize(static_cast<size_t>(cfg.layers));
  }
  int64_t ctx_len = 0;
  for (const auto* blk : context) ctx_len += blk->len;

  const auto& pos_table = model_->position_table().values();
  RowMat<T> x(n, d);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t p = positions[i];
    if (p < 0 || p >= cfg.max_positions) {
      throw CacheOverflowError("token position " + std::to_string(p) +
                               " exceeds position capacity " + std::to_string(cfg.max_positions));
    }
    for (int64_t c = 0; c < d; ++c) x(i, c) = tokens[i * d + c] + pos_table[p * d + c];
  }

  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> scores(static_cast<size_t>(ctx_len + n));
  const size_t base = out_kv.k.empty() ? 0 : out_kv.k[0].size();
  for (size_t l = 0; l < model_->blocks().size(); ++l) {
    const auto& blk = model_->blocks()[l];
    RowMat<T> qkv = dense(x, blk.qkv);
    auto& kout = out_kv.k[l];
    auto& vout = out_kv.v[l];
    kout.resize(base + static_cast<size_t>(n * d));
    vout.resize(base + static_cast<size_t>(n * d));
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t c = 0; c < d; ++c) {
        kout[base + i * d + c] = qkv(i, d + c);
        vout[base + i * d + c] = qkv(i, 2 * d + c);
      }
    }
    RowMat<T> att(n, d);
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t h = 0; h < heads; ++h) {
        const T* q = &qkv(i, h * dh);
        auto dot = [&](const T* key) {
          T s = 0;
          for (int64_t c = 0; c < dh; ++c) s += q[c] * key[c];
          return s * inv_scale;
        };
        int64_t j = 0;
        for (const auto* cb : context) {
          const T* keys = cb->k[l].data();
          for (int64_t t = 0; t < cb->len; ++t) scores[j++] = dot(keys + t * d + h * dh);
        }
        for (int64_t t = 0; t <= i; ++t) scores[j++] = dot(kout.data() + base + t * d + h * dh);
        const int64_t total = j;
        T mx = scores[0];
        for (int64_t t = 1; t < total; ++t) mx = std::max(mx, scores[t]);
        T z = 0;
        for (int64_t t = 0; t < total; ++t) z += (scores[t] = std::exp(scores[t] - mx));
        T* o = &att(i, h * dh);
        std::fill(o, o + dh, T(0));
        j = 0;
        auto accumulate = [&](const T* val, T w) {
          for (int64_t c = 0; c < dh; ++c) o[c] += w * val[c];
        };
        for (const auto* cb : context) {
          const T* vals = cb->v[l].data();
          for (int64_t t = 0; t < cb->len; ++t) accumulate(vals + t * d + h * dh, scores[j++] / z);
        }
        for (int64_t t = 0; t <= i; ++t) {
          accumulate(vout.data() + base + t * d + h * dh, scores[j++] / z);
        }
      }
    }
    x += dense(att, blk.proj);
    layer_norm_rows(x, blk.ln1_g, blk.ln1_b);
    RowMat<T> f = dense(x, blk.ff1);
    apply(f, Activation::kGelu);
    x += dense(f, blk.ff2);
    layer_norm_rows(x, blk.ln2_g, blk.ln2_b);
  }
  out_kv.positions.insert(out_kv.positions.end(), positions.begin(), positions.end());
  out_kv.len += n;
  return std::vector<T>(x.data(), x.data() + x.size());
}

template <std::floating_point T>
std::vector<T> InferenceEngine<T>::encode(const Observation& obs) const {
  const auto& cfg = model_->config();
  if (static_cast<int64_t>(obs.size()) != cfg.obs_size()) {
    throw ShapeError("encode: observation has " + std::to_string(obs.size()) + " values, expected " +
                     std::to_string(cfg.obs_size()));
  }
  if (model_->training()) throw UsageError("InferenceEngine::encode requires eval mode");
  NoGradGuard guard;
  std::vector<T> values(obs.begin(), obs.end());
  auto z = model_->encode(Tensor<T>::from({1, cfg.obs_size()}, std::move(values)));
  return z.values();
}

template <std::floating_point T>
std::vector<T> InferenceEngine<T>::action_token(const Action& a) const {
  const auto& cfg = model_->config();
  const int64_t d = cfg.latent_dim;
  if (!cfg.continuous) {
    if (a.index < 0 || a.index >= cfg.num_actions) {
      throw DomainError("action " + std::to_string(a.index) + " outside [0, " +
                        std::to_string(cfg.num_actions) + ")");
    }
    const auto& table = model_->action_table().values();
    return std::vector<T>(table.begin() + a.index * d, table.begin() + (a.index + 1) * d);
  }
  if (static_cast<int64_t>(a.values.size()) != cfg.action_dim) {
    throw DomainError("continuous action dimension mismatch");
  }
  std::vector<T> v(a.values.begin(), a.values.end());
  return mlp(model_->action_mlp(), v);
}

template <std::floating_point T>
std::vector<T> InferenceEngine<T>::mlp(const Mlp2<T>& m, std::span<const T> x) const {
  RowMat<T> in = ConstMap<T>(x.data(), 1, static_cast<int64_t>(x.size()));
  RowMat<T> h = dense(in, m.l1);
  apply(h, Activation::kGelu);
  RowMat<T> y = dense(h, m.l2);
  return std::vector<T>(y.data(), y.data() + y.size());
}

template <std::floating_point T>
std::vector<T> InferenceEngine<T>::policy_logits(std::span<const T> h, int64_t task) const {
  return mlp(model_->heads(task).policy, h);
}

template <std::floating_point T>
std::vector<T> InferenceEngine<T>::value_logits(std::span<const T> h, int64_t task) const {
  return mlp(model_->heads(task).value, h);
}

template <std::floating_point T>
std::vector<T> InferenceEngine<T>::reward_logits(std::span<const T> h, int64_t task) const {
  return mlp(model_->heads(task).reward, h);
}

template <std::floating_point T>
std::vector<T> InferenceEngine<T>::next_latent(std::span<const T> h, int64_t task) const {
  const auto& cfg = model_->config();
  std::vector<T> raw = mlp(model_->heads(task).latent, h);
  switch (cfg.norm) {
    case NormKind::kSimNorm: {
      const int64_t v = cfg.group_size;
      const T tau = static_cast<T>(cfg.temperature);
      for (size_t g = 0; g < raw.size(); g += static_cast<size_t>(v)) {
        T mx = raw[g] / tau;
        for (int64_t i = 1; i < v; ++i) mx = std::max(mx, raw[g + i] / tau);
        T z = 0;
        for (int64_t i = 0; i < v; ++i) z += (raw[g + i] = std::exp(raw[g + i] / tau - mx));
        for (int64_t i = 0; i < v; ++i) raw[g + i] /= z;
      }
      break;
    }
    case NormKind::kSoftmax: {
      T mx = *std::max_element(raw.begin(), raw.end());
      T z = 0;
      for (auto& r : raw) z += (r = std::exp(r - mx));
      for (auto& r : raw) r /= z;
      break;
    }
    case NormKind::kSigmoid:
      for (auto& r : raw) r = activation_value(Activation::kSigmoid, r);
      break;
  }
  return raw;
}

template struct KVBlock<float>;
template struct KVBlock<double>;
template class KVCache<float>;
template class KVCache<double>;
template class InferenceEngine<float>;
template class InferenceEngine<double>;

}  // namespace latentplan
