#include "latentplan/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace latentplan {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <class T>
using Impl = TensorImpl<T>;

template <class T>
Impl<T>& parent(Impl<T>& out, size_t i) {
  return *out.parents[i];
}

template <class T>
void require_2d(const Tensor<T>& x, const char* what) {
  if (x.ndim() != 2) {
    throw ShapeError(std::string(what) + " expects a 2-D tensor, got " + shape_str(x.shape()));
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Elementwise unary op with derivative expressed through (x, y).
template <class T, class F, class D>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, D dydx) {
  std::vector<T> out(x.values().size());
  const auto& xs = x.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  return make_result<T>(name, x.shape(), std::move(out), {x}, [dydx](Impl<T>& o) {
    Impl<T>& px = parent(o, 0);
    if (!px.requires_grad) return;
    auto g = px.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * dydx(px.data[i], o.data[i]);
  });
}

template <class T>
T gelu_tanh(T x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
}

template <class T>
T gelu_tanh_grad(T x) {
  constexpr T k = T(0.7978845608028654);
  const T inner = k * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(inner);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * k * (T(1) + T(3 * 0.044715) * x * x);
}

template <class T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "gelu") return Activation::kGelu;
  if (name == "gelu_erf") return Activation::kGeluErf;
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  if (name == "softplus") return Activation::kSoftplus;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

template <std::floating_point T>
T activation_value(Activation kind, T v) {
  switch (kind) {
    case Activation::kGelu:
      return gelu_tanh(v);
    case Activation::kGeluErf:
      return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
    case Activation::kLeakyRelu:
      return v > 0 ? v : T(kLeakySlope) * v;
    case Activation::kSigmoid:
      return sigmoid(v);
    case Activation::kTanh:
      return std::tanh(v);
    case Activation::kSoftplus:
      return softplus(v);
  }
  throw ConfigError("unsupported activation kind");
}

template float activation_value(Activation, float);
template double activation_value(Activation, double);

// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<T> out(static_cast<size_t>(m * n));
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.values().data(), m, k) * ConstMatMap<T>(b.values().data(), k, n);
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Impl<T>& o) {
    ConstMatMap<T> dc(o.grad.data(), m, n);
    Impl<T>& pa = parent(o, 0);
    Impl<T>& pb = parent(o, 1);
    if (pa.requires_grad) {
      MatMap<T>(pa.grad_buffer().data(), m, k).noalias() +=
          dc * ConstMatMap<T>(pb.data.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      MatMap<T>(pb.grad_buffer().data(), k, n).noalias() +=
          ConstMatMap<T>(pa.data.data(), m, k).transpose() * dc;
    }
  });
}

template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_2d(x, "linear");
  require_2d(w, "linear");
  const int64_t m = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " +
                     shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != out_dim) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs out " +
                     std::to_string(out_dim));
  }
  std::vector<T> out(static_cast<size_t>(m * out_dim));
  MatMap<T> y(out.data(), m, out_dim);
  y.noalias() = ConstMatMap<T>(x.values().data(), m, in) *
                ConstMatMap<T>(w.values().data(), in, out_dim);
  if (has_bias) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.values().data(),
                                                                       out_dim);
  }
  std::vector<Tensor<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_result<T>(
      "linear", {m, out_dim}, std::move(out), std::move(parents),
      [m, in, out_dim, has_bias](Impl<T>& o) {
        ConstMatMap<T> dy(o.grad.data(), m, out_dim);
        Impl<T>& px = parent(o, 0);
        Impl<T>& pw = parent(o, 1);
        if (px.requires_grad) {
          MatMap<T>(px.grad_buffer().data(), m, in).noalias() +=
              dy * ConstMatMap<T>(pw.data.data(), in, out_dim).transpose();
        }
        if (pw.requires_grad) {
          MatMap<T>(pw.grad_buffer().data(), in, out_dim).noalias() +=
              ConstMatMap<T>(px.data.data(), m, in).transpose() * dy;
        }
        if (has_bias) {
          Impl<T>& pb = parent(o, 2);
          if (pb.requires_grad) {
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(pb.grad_buffer().data(), out_dim) +=
                dy.colwise().sum();
          }
        }
      });
}

// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Impl<T>& o) {
    for (size_t p = 0; p < 2; ++p) {
      Impl<T>& pp = parent(o, p);
      if (!pp.requires_grad) continue;
      auto g = pp.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Impl<T>& o) {
    Impl<T>& pa = parent(o, 0);
    Impl<T>& pb = parent(o, 1);
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Impl<T>& o) {
    Impl<T>& pa = parent(o, 0);
    Impl<T>& pb = parent(o, 1);
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa.data[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "div");
  std::vector<T> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] /= b.values()[i];
  return make_result<T>("div", a.shape(), std::move(out), {a, b}, [](Impl<T>& o) {
    Impl<T>& pa = parent(o, 0);
    Impl<T>& pb = parent(o, 1);
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / pb.data[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i] * o.data[i] / pb.data[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>("scale", x, [factor](T v) { return v * factor; },
                  [factor](T, T) { return factor; });
}

template <std::floating_point T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary<T>("add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <std::floating_point T>
Tensor<T> square(const Tensor<T>& x) {
  return unary<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <std::floating_point T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <std::floating_point T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <std::floating_point T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>("abs", x, [](T v) { return std::abs(v); },
                  [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <std::floating_point T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (lo > hi) throw UsageError("clamp: lo > hi");
  return unary<T>("clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
                  [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <std::floating_point T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  switch (kind) {
    case Activation::kGelu:
      return unary<T>("gelu", x, [](T v) { return gelu_tanh(v); },
                      [](T v, T) { return gelu_tanh_grad(v); });
    case Activation::kGeluErf:
      return unary<T>(
          "gelu_erf", x,
          [](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); },
          [](T v, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
            const T pdf = std::exp(T(-0.5) * v * v) * std::numbers::inv_sqrtpi_v<T> /
                          std::numbers::sqrt2_v<T>;
            return cdf + v * pdf;
          });
    case Activation::kLeakyRelu:
      return unary<T>("leaky_relu", x, [](T v) { return v > 0 ? v : T(kLeakySlope) * v; },
                      [](T v, T) { return v > 0 ? T(1) : T(kLeakySlope); });
    case Activation::kSigmoid:
      return unary<T>("sigmoid", x, [](T v) { return sigmoid(v); },
                      [](T, T y) { return y * (T(1) - y); });
    case Activation::kTanh:
      return unary<T>("tanh", x, [](T v) { return std::tanh(v); },
                      [](T, T y) { return T(1) - y * y; });
    case Activation::kSoftplus:
      return unary<T>("softplus", x, [](T v) { return softplus(v); },
                      [](T v, T) { return sigmoid(v); });
  }
  throw ConfigError("unsupported activation kind");
}

template <std::floating_point T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& row) {
  const int64_t n = x.shape().back();
  if (row.numel() != n) {
    throw ShapeError("add_rowvec: row " + shape_str(row.shape()) + " vs " + shape_str(x.shape()));
  }
  std::vector<T> out(x.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] += row.values()[i % static_cast<size_t>(n)];
  return make_result<T>("add_rowvec", x.shape(), std::move(out), {x, row}, [n](Impl<T>& o) {
    Impl<T>& px = parent(o, 0);
    Impl<T>& pr = parent(o, 1);
    if (px.requires_grad) {
      auto g = px.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (pr.requires_grad) {
      auto g = pr.grad_buffer();
      for (size_t i = 0; i < o.grad.size(); ++i) g[i % static_cast<size_t>(n)] += o.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  return make_result<T>("sum", {1}, {total}, {x}, [](Impl<T>& o) {
    Impl<T>& px = parent(o, 0);
    if (!px.requires_grad) return;
    auto g = px.grad_buffer();
    for (auto& v : g) v += o.grad[0];
  });
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <std::floating_point T>
Tensor<T> sum_rows(const Tensor<T>& x) {
  const int64_t n = x.shape().back();
  const int64_t rows = x.numel() / n;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  if (shape.empty()) shape = {1};
  std::vector<T> out(static_cast<size_t>(rows), T(0));
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < n; ++c) out[static_cast<size_t>(r)] += x.values()[r * n + c];
  }
  return make_result<T>("sum_rows", std::move(shape), std::move(out), {x}, [n, rows](Impl<T>& o) {
    Impl<T>& px = parent(o, 0);
    if (!px.requires_grad) return;
    auto g = px.grad_buffer();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < n; ++c) g[r * n + c] += o.grad[r];
    }
  });
}

template <std::floating_point T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights) {
  if (static_cast<int64_t>(weights.size()) != x.numel()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                     shape_str(x.shape()));
  }
  T total = 0;
  for (size_t i = 0; i < weights.size(); ++i) total += weights[i] * x.values()[i];
  std::vector<T> w(weights.begin(), weights.end());
  return make_result<T>("weighted_sum", {1}, {total}, {x}, [w = std::move(w)](Impl<T>& o) {
    Impl<T>& px = parent(o, 0);
    if (!px.requires_grad) return;
    auto g = px.grad_buffer();
    for (size_t i = 0; i < w.size(); ++i) g[i] += o.grad[0] * w[i];
  });
}

template <std::floating_point T>
Tensor<T> mean_row_groups(const Tensor<T>& x, int64_t group) {
  require_2d(x, "mean_row_groups");
  if (group <= 0 || x.dim(0) % group != 0) {
    throw ShapeError("mean_row_groups: rows not divisible by group");
  }
  const int64_t groups = x.dim(0) / group, c = x.dim(1);
  std::vector<T> out(static_cast<size_t>(groups * c), T(0));
  const T inv = T(1) / static_cast<T>(group);
  for (int64_t gi = 0; gi < groups; ++gi) {
    for (int64_t r = 0; r < group; ++r) {
      for (int64_t j = 0; j < c; ++j) out[gi * c + j] += x.values()[(gi * group + r) * c + j] * inv;
    }
  }
  return make_result<T>(
      "mean_row_groups", {groups, c}, std::move(out), {x}, [groups, group, c, inv](Impl<T>& o) {
        Impl<T>& px = parent(o, 0);
        if (!px.requires_grad) return;
        auto g = px.grad_buffer();
        for (int64_t gi = 0; gi < groups; ++gi) {
          for (int64_t r = 0; r < group; ++r) {
            for (int64_t j = 0; j < c; ++j) g[(gi * group + r) * c + j] += o.grad[gi * c + j] * inv;
          }
        }
      });
}

// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const auto nd = static_cast<int>(x.ndim());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw ShapeError("softmax: axis out of range");
  for (T v : x.values()) {
    if (std::isnan(v)) throw ValidationError("softmax: NaN input");
  }
  int64_t outer = 1, inner = 1;
  const int64_t len = x.shape()[static_cast<size_t>(axis)];
  for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<size_t>(i)];
  for (int i = axis + 1; i < nd; ++i) inner *= x.shape()[static_cast<size_t>(i)];
  std::vector<T> out(x.values().size());
  const auto& xs = x.values();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t i = 0; i < len; ++i) mx = std::max(mx, xs[base + i * inner]);
      T total = 0;
      for (int64_t i = 0; i < len; ++i) {
        out[base + i * inner] = std::exp(xs[base + i * inner] - mx);
        total += out[base + i * inner];
      }
      for (int64_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  return make_result<T>(
      "softmax", x.shape(), std::move(out), {x}, [outer, inner, len](Impl<T>& o) {
        Impl<T>& px = parent(o, 0);
        if (!px.requires_grad) return;
        auto g = px.grad_buffer();
        for (int64_t a = 0; a < outer; ++a) {
          for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = a * len * inner + in;
            T dot = 0;
            for (int64_t i = 0; i < len; ++i) dot += o.grad[base + i * inner] * o.data[base + i * inner];
            for (int64_t i = 0; i < len; ++i) {
              const int64_t idx = base + i * inner;
              g[idx] += o.data[idx] * (o.grad[idx] - dot);
            }
          }
        }
      });
}

template <std::floating_point T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  const int64_t n = x.shape().back();
  const int64_t rows = x.numel() / n;
  std::vector<T> out(x.values().size());
  const auto& xs = x.values();
  for (int64_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t c = 0; c < n; ++c) mx = std::max(mx, xs[r * n + c]);
    T total = 0;
    for (int64_t c = 0; c < n; ++c) total += std::exp(xs[r * n + c] - mx);
    const T lse = mx + std::log(total);
    for (int64_t c = 0; c < n; ++c) out[r * n + c] = xs[r * n + c] - lse;
  }
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x}, [n, rows](Impl<T>& o) {
    Impl<T>& px = parent(o, 0);
    if (!px.requires_grad) return;
    auto g = px.grad_buffer();
    for (int64_t r = 0; r < rows; ++r) {
      T gsum = 0;
      for (int64_t c = 0; c < n; ++c) gsum += o.grad[r * n + c];
      for (int64_t c = 0; c < n; ++c) {
        g[r * n + c] += o.grad[r * n + c] - std::exp(o.data[r * n + c]) * gsum;
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const int64_t n = x.shape().back();
  if (gain.numel() != n || bias.numel() != n) {
    throw ShapeError("layer_norm: gain/bias must match last dimension " + std::to_string(n));
  }
  const int64_t rows = x.numel() / n;
  std::vector<T> out(x.values().size());
  auto xhat = std::make_shared<std::vector<T>>(x.values().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const auto& xs = x.values();
  for (int64_t r = 0; r < rows; ++r) {
    T mu = 0;
    for (int64_t c = 0; c < n; ++c) mu += xs[r * n + c];
    mu /= static_cast<T>(n);
    T var = 0;
    for (int64_t c = 0; c < n; ++c) var += (xs[r * n + c] - mu) * (xs[r * n + c] - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int64_t c = 0; c < n; ++c) {
      const T h = (xs[r * n + c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gain.values()[c] + bias.values()[c];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [n, rows, xhat, inv_std](Impl<T>& o) {
        Impl<T>& px = parent(o, 0);
        Impl<T>& pg = parent(o, 1);
        Impl<T>& pb = parent(o, 2);
        if (pg.requires_grad || pb.requires_grad) {
          auto gg = pg.requires_grad ? pg.grad_buffer() : std::span<T>();
          auto gb = pb.requires_grad ? pb.grad_buffer() : std::span<T>();
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < n; ++c) {
              if (!gg.empty()) gg[c] += o.grad[r * n + c] * (*xhat)[r * n + c];
              if (!gb.empty()) gb[c] += o.grad[r * n + c];
            }
          }
        }
        if (!px.requires_grad) return;
        auto g = px.grad_buffer();
        for (int64_t r = 0; r < rows; ++r) {
          T mean_d = 0, mean_dx = 0;
          for (int64_t c = 0; c < n; ++c) {
            const T d = o.grad[r * n + c] * pg.data[c];
            mean_d += d;
            mean_dx += d * (*xhat)[r * n + c];
          }
          mean_d /= static_cast<T>(n);
          mean_dx /= static_cast<T>(n);
          for (int64_t c = 0; c < n; ++c) {
            const T d = o.grad[r * n + c] * pg.data[c];
            g[r * n + c] += (*inv_std)[r] * (d - mean_d - (*xhat)[r * n + c] * mean_dx);
          }
        }
      });
}

template <std::floating_point T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                     T momentum, T eps) {
  require_2d(x, "batch_norm");
  const int64_t m = x.dim(0), c = x.dim(1);
  if (gain.numel() != c || bias.numel() != c || static_cast<int64_t>(running_mean.size()) != c ||
      static_cast<int64_t>(running_var.size()) != c) {
    throw ShapeError("batch_norm: parameter width mismatch");
  }
  std::vector<T> mu(static_cast<size_t>(c), T(0)), var(static_cast<size_t>(c), T(0));
  const auto& xs = x.values();
  if (training) {
    for (int64_t r = 0; r < m; ++r)
      for (int64_t j = 0; j < c; ++j) mu[j] += xs[r * c + j];
    for (auto& v : mu) v /= static_cast<T>(m);
    for (int64_t r = 0; r < m; ++r)
      for (int64_t j = 0; j < c; ++j) var[j] += (xs[r * c + j] - mu[j]) * (xs[r * c + j] - mu[j]);
    for (auto& v : var) v /= static_cast<T>(m);
    const T unbias = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
    for (int64_t j = 0; j < c; ++j) {
      running_mean[j] = (T(1) - momentum) * running_mean[j] + momentum * mu[j];
      running_var[j] = (T(1) - momentum) * running_var[j] + momentum * var[j] * unbias;
    }
  } else {
    mu = running_mean;
    var = running_var;
  }
  auto xhat = std::make_shared<std::vector<T>>(xs.size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
  for (int64_t j = 0; j < c; ++j) (*inv_std)[j] = T(1) / std::sqrt(var[j] + eps);
  std::vector<T> out(xs.size());
  for (int64_t r = 0; r < m; ++r) {
    for (int64_t j = 0; j < c; ++j) {
      const T h = (xs[r * c + j] - mu[j]) * (*inv_std)[j];
      (*xhat)[r * c + j] = h;
      out[r * c + j] = h * gain.values()[j] + bias.values()[j];
    }
  }
  return make_result<T>(
      "batch_norm", x.shape(), std::move(out), {x, gain, bias},
      [m, c, xhat, inv_std, training](Impl<T>& o) {
        Impl<T>& px = parent(o, 0);
        Impl<T>& pg = parent(o, 1);
        Impl<T>& pb = parent(o, 2);
        if (pg.requires_grad) {
          auto gg = pg.grad_buffer();
          for (int64_t r = 0; r < m; ++r)
            for (int64_t j = 0; j < c; ++j) gg[j] += o.grad[r * c + j] * (*xhat)[r * c + j];
        }
        if (pb.requires_grad) {
          auto gb = pb.grad_buffer();
          for (int64_t r = 0; r < m; ++r)
            for (int64_t j = 0; j < c; ++j) gb[j] += o.grad[r * c + j];
        }
        if (!px.requires_grad) return;
        auto g = px.grad_buffer();
        if (!training) {
          for (int64_t r = 0; r < m; ++r)
            for (int64_t j = 0; j < c; ++j)
              g[r * c + j] += o.grad[r * c + j] * pg.data[j] * (*inv_std)[j];
          return;
        }
        for (int64_t j = 0; j < c; ++j) {
          T mean_d = 0, mean_dx = 0;
          for (int64_t r = 0; r < m; ++r) {
            const T d = o.grad[r * c + j] * pg.data[j];
            mean_d += d;
            mean_dx += d * (*xhat)[r * c + j];
          }
          mean_d /= static_cast<T>(m);
          mean_dx /= static_cast<T>(m);
          for (int64_t r = 0; r < m; ++r) {
            const T d = o.grad[r * c + j] * pg.data[j];
            g[r * c + j] += (*inv_std)[j] * (d - mean_d - (*xhat)[r * c + j] * mean_dx);
          }
        }
      });
}

template <std::floating_point T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const Tensor<T>& target) {
  require_same_shape(logits, target, "cross_entropy_rows");
  const int64_t k = logits.shape().back();
  const int64_t rows = logits.numel() / k;
  auto probs = std::make_shared<std::vector<T>>(logits.values().size());
  std::vector<T> out(static_cast<size_t>(rows));
  auto tgt = std::make_shared<std::vector<T>>(target.values());
  const auto& xs = logits.values();
  for (int64_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t c = 0; c < k; ++c) mx = std::max(mx, xs[r * k + c]);
    T total = 0;
    for (int64_t c = 0; c < k; ++c) total += std::exp(xs[r * k + c] - mx);
    const T lse = mx + std::log(total);
    T loss = 0;
    for (int64_t c = 0; c < k; ++c) {
      (*probs)[r * k + c] = std::exp(xs[r * k + c] - lse);
      const T t = (*tgt)[r * k + c];
      if (t != T(0)) loss -= t * (xs[r * k + c] - lse);
    }
    out[static_cast<size_t>(r)] = loss;
  }
  Shape shape(logits.shape().begin(), logits.shape().end() - 1);
  if (shape.empty()) shape = {1};
  return make_result<T>(
      "cross_entropy", std::move(shape), std::move(out), {logits},
      [k, rows, probs, tgt](Impl<T>& o) {
        Impl<T>& px = parent(o, 0);
        if (!px.requires_grad) return;
        auto g = px.grad_buffer();
        for (int64_t r = 0; r < rows; ++r) {
          T tsum = 0;
          for (int64_t c = 0; c < k; ++c) tsum += (*tgt)[r * k + c];
          for (int64_t c = 0; c < k; ++c) {
            g[r * k + c] += o.grad[r] * ((*probs)[r * k + c] * tsum - (*tgt)[r * k + c]);
          }
        }
      });
}

template <std::floating_point T>
Tensor<T> cross_entropy_from_logits(const Tensor<T>& logits, std::span<const T> target) {
  if (static_cast<int64_t>(target.size()) != logits.numel()) {
    throw ShapeError("cross_entropy_from_logits: target length mismatch");
  }
  double total = 0;
  for (T t : target) {
    if (!(t >= T(0))) throw ValidationError("cross entropy target has a negative entry");
    total += static_cast<double>(t);
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ValidationError("cross entropy target does not sum to 1");
  }
  const int64_t k = logits.numel();
  auto t = Tensor<T>::from({1, k}, std::vector<T>(target.begin(), target.end()));
  return reshape(cross_entropy_rows(reshape(logits, {1, k}), t), {1});
}

// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result<T>("reshape", std::move(shape), x.values(), {x}, [](Impl<T>& o) {
    Impl<T>& px = parent(o, 0);
    if (!px.requires_grad) return;
    auto g = px.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

template <std::floating_point T>
Tensor<T> take_rows(const Tensor<T>& x, std::span<const int64_t> rows) {
  require_2d(x, "take_rows");
  const int64_t n = x.dim(0), d = x.dim(1);
  std::vector<int64_t> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * static_cast<size_t>(d));
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= n) throw DomainError("take_rows: row index out of range");
    std::copy_n(x.values().begin() + idx[r] * d, d, out.begin() + static_cast<int64_t>(r) * d);
  }
  const auto m = static_cast<int64_t>(idx.size());
  return make_result<T>("take_rows", {m, d}, std::move(out), {x},
                        [idx = std::move(idx), d](Impl<T>& o) {
                          Impl<T>& px = parent(o, 0);
                          if (!px.requires_grad) return;
                          auto g = px.grad_buffer();
                          for (size_t r = 0; r < idx.size(); ++r) {
                            for (int64_t c = 0; c < d; ++c) {
                              g[idx[r] * d + c] += o.grad[static_cast<int64_t>(r) * d + c];
                            }
                          }
                        });
}

template <std::floating_point T>
Tensor<T> interleave_rows(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "interleave_rows");
  require_same_shape(a, b, "interleave_rows");
  const int64_t m = a.dim(0), d = a.dim(1);
  std::vector<T> out(static_cast<size_t>(2 * m * d));
  for (int64_t r = 0; r < m; ++r) {
    std::copy_n(a.values().begin() + r * d, d, out.begin() + (2 * r) * d);
    std::copy_n(b.values().begin() + r * d, d, out.begin() + (2 * r + 1) * d);
  }
  return make_result<T>("interleave_rows", {2 * m, d}, std::move(out), {a, b}, [m, d](Impl<T>& o) {
    for (int64_t p = 0; p < 2; ++p) {
      Impl<T>& pp = parent(o, static_cast<size_t>(p));
      if (!pp.requires_grad) continue;
      auto g = pp.grad_buffer();
      for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < d; ++c) g[r * d + c] += o.grad[(2 * r + p) * d + c];
    }
  });
}

template <std::floating_point T>
Tensor<T> slice_cols(const Tensor<T>& x, int64_t begin, int64_t end) {
  require_2d(x, "slice_cols");
  const int64_t m = x.dim(0), n = x.dim(1);
  if (begin < 0 || end > n || begin >= end) throw ShapeError("slice_cols: bad range");
  const int64_t w = end - begin;
  std::vector<T> out(static_cast<size_t>(m * w));
  for (int64_t r = 0; r < m; ++r) {
    std::copy_n(x.values().begin() + r * n + begin, w, out.begin() + r * w);
  }
  return make_result<T>("slice_cols", {m, w}, std::move(out), {x}, [m, n, w, begin](Impl<T>& o) {
    Impl<T>& px = parent(o, 0);
    if (!px.requires_grad) return;
    auto g = px.grad_buffer();
    for (int64_t r = 0; r < m; ++r)
      for (int64_t c = 0; c < w; ++c) g[r * n + begin + c] += o.grad[r * w + c];
  });
}

template <std::floating_point T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "concat_cols");
  require_2d(b, "concat_cols");
  if (a.dim(0) != b.dim(0)) throw ShapeError("concat_cols: row count mismatch");
  const int64_t m = a.dim(0), na = a.dim(1), nb = b.dim(1), n = na + nb;
  std::vector<T> out(static_cast<size_t>(m * n));
  for (int64_t r = 0; r < m; ++r) {
    std::copy_n(a.values().begin() + r * na, na, out.begin() + r * n);
    std::copy_n(b.values().begin() + r * nb, nb, out.begin() + r * n + na);
  }
  return make_result<T>("concat_cols", {m, n}, std::move(out), {a, b}, [m, na, nb, n](Impl<T>& o) {
    Impl<T>& pa = parent(o, 0);
    Impl<T>& pb = parent(o, 1);
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < na; ++c) g[r * na + c] += o.grad[r * n + c];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < nb; ++c) g[r * nb + c] += o.grad[r * n + na + c];
    }
  });
}

template <std::floating_point T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return make_result<T>("stop_gradient", x.shape(), x.values(), {}, nullptr);
}

// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           int64_t batch, int64_t seq, int64_t heads,
                           std::span<const int64_t> key_start,
                           std::vector<std::vector<T>>* probs_out) {
  require_2d(q, "causal_attention");
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const int64_t d = q.dim(1);
  if (q.dim(0) != batch * seq) throw ShapeError("causal_attention: rows != batch*seq");
  if (heads <= 0 || d % heads != 0) throw ShapeError("causal_attention: D not divisible by heads");
  if (!key_start.empty() && static_cast<int64_t>(key_start.size()) != seq) {
    throw ShapeError("causal_attention: key_start must have one entry per query position");
  }
  std::vector<int64_t> start(static_cast<size_t>(seq), 0);
  for (int64_t i = 0; i < static_cast<int64_t>(key_start.size()); ++i) {
    if (key_start[i] < 0 || key_start[i] > i) throw UsageError("causal_attention: bad key_start");
    start[i] = key_start[i];
  }
  const int64_t dh = d / heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(batch * heads * seq * seq), T(0));
  std::vector<T> out(static_cast<size_t>(batch * seq * d));
  RowMat<T> scores(seq, seq);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t h = 0; h < heads; ++h) {
      const int64_t off = b * seq * d + h * dh;
      ConstStridedMap<T> qm(q.values().data() + off, seq, dh, Eigen::OuterStride<>(d));
      ConstStridedMap<T> km(k.values().data() + off, seq, dh, Eigen::OuterStride<>(d));
      ConstStridedMap<T> vm(v.values().data() + off, seq, dh, Eigen::OuterStride<>(d));
      scores.noalias() = qm * km.transpose();
      MatMap<T> p(probs->data() + (b * heads + h) * seq * seq, seq, seq);
      for (int64_t i = 0; i < seq; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t j = start[i]; j <= i; ++j) mx = std::max(mx, scores(i, j) * inv_scale);
        T total = 0;
        for (int64_t j = start[i]; j <= i; ++j) {
          p(i, j) = std::exp(scores(i, j) * inv_scale - mx);
          total += p(i, j);
        }
        for (int64_t j = start[i]; j <= i; ++j) p(i, j) /= total;
      }
      StridedMap<T>(out.data() + off, seq, dh, Eigen::OuterStride<>(d)).noalias() = p * vm;
    }
  }
  if (probs_out != nullptr) {
    probs_out->clear();
    for (int64_t bh = 0; bh < batch * heads; ++bh) {
      probs_out->emplace_back(probs->begin() + bh * seq * seq, probs->begin() + (bh + 1) * seq * seq);
    }
  }
  return make_result<T>(
      "causal_attention", q.shape(), std::move(out), {q, k, v},
      [batch, seq, heads, d, dh, inv_scale, probs](Impl<T>& o) {
        Impl<T>& pq = parent(o, 0);
        Impl<T>& pk = parent(o, 1);
        Impl<T>& pv = parent(o, 2);
        T* gq = pq.requires_grad ? pq.grad_buffer().data() : nullptr;
        T* gk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
        T* gv = pv.requires_grad ? pv.grad_buffer().data() : nullptr;
        RowMat<T> dp(seq, seq), ds(seq, seq);
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t h = 0; h < heads; ++h) {
            const int64_t off = b * seq * d + h * dh;
            const Eigen::OuterStride<> stride(d);
            ConstStridedMap<T> dout(o.grad.data() + off, seq, dh, stride);
            ConstStridedMap<T> qm(pq.data.data() + off, seq, dh, stride);
            ConstStridedMap<T> km(pk.data.data() + off, seq, dh, stride);
            ConstStridedMap<T> vm(pv.data.data() + off, seq, dh, stride);
            ConstMatMap<T> p(probs->data() + (b * heads + h) * seq * seq, seq, seq);
            if (gv != nullptr) {
              StridedMap<T>(gv + off, seq, dh, stride).noalias() += p.transpose() * dout;
            }
            dp.noalias() = dout * vm.transpose();
            // Softmax backward; masked entries have p == 0 and stay 0.
            for (int64_t i = 0; i < seq; ++i) {
              const T dot = (dp.row(i).array() * p.row(i).array()).sum();
              ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix() * inv_scale;
            }
            if (gq != nullptr) StridedMap<T>(gq + off, seq, dh, stride).noalias() += ds * km;
            if (gk != nullptr) {
              StridedMap<T>(gk + off, seq, dh, stride).noalias() += ds.transpose() * qm;
            }
          }
        }
      });
}

template <std::floating_point T>
Tensor<T> im2col3x3(const Tensor<T>& x, int64_t batch, int64_t height, int64_t width) {
  require_2d(x, "im2col3x3");
  if (x.dim(0) != batch * height * width) throw ShapeError("im2col3x3: rows != B*H*W");
  const int64_t c = x.dim(1);
  const int64_t cols = 9 * c;
  // For each output column block, the source row (or -1 for padding).
  auto src = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(batch * height * width * 9));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t y = 0; y < height; ++y) {
      for (int64_t xx = 0; xx < width; ++xx) {
        const int64_t row = (b * height + y) * width + xx;
        for (int64_t dy = 0; dy < 3; ++dy) {
          for (int64_t dx = 0; dx < 3; ++dx) {
            const int64_t sy = y + dy - 1, sx = xx + dx - 1;
            const bool inside = sy >= 0 && sy < height && sx >= 0 && sx < width;
            (*src)[row * 9 + dy * 3 + dx] = inside ? (b * height + sy) * width + sx : -1;
          }
        }
      }
    }
  }
  const int64_t rows = batch * height * width;
  std::vector<T> out(static_cast<size_t>(rows * cols), T(0));
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t p = 0; p < 9; ++p) {
      const int64_t s = (*src)[r * 9 + p];
      if (s >= 0) std::copy_n(x.values().begin() + s * c, c, out.begin() + r * cols + p * c);
    }
  }
  return make_result<T>("im2col3x3", {rows, cols}, std::move(out), {x},
                        [rows, cols, c, src](Impl<T>& o) {
                          Impl<T>& px = parent(o, 0);
                          if (!px.requires_grad) return;
                          auto g = px.grad_buffer();
                          for (int64_t r = 0; r < rows; ++r) {
                            for (int64_t p = 0; p < 9; ++p) {
                              const int64_t s = (*src)[r * 9 + p];
                              if (s < 0) continue;
                              for (int64_t j = 0; j < c; ++j) {
                                g[s * c + j] += o.grad[r * cols + p * c + j];
                              }
                            }
                          }
                        });
}

template <std::floating_point T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (!training || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<T>>(x.values().size());
  std::bernoulli_distribution keep(1.0 - p);
  const T s = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> out(x.values().size());
  for (size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(rng) ? s : T(0);
    out[i] = x.values()[i] * (*mask)[i];
  }
  return make_result<T>("dropout", x.shape(), std::move(out), {x}, [mask](Impl<T>& o) {
    Impl<T>& px = parent(o, 0);
    if (!px.requires_grad) return;
    auto g = px.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------

#define LATENTPLAN_INSTANTIATE_OPS(T)                                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                           \
  template Tensor<T> square(const Tensor<T>&);                                                  \
  template Tensor<T> exp(const Tensor<T>&);                                                     \
  template Tensor<T> log(const Tensor<T>&);                                                     \
  template Tensor<T> abs(const Tensor<T>&);                                                     \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                             \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                  \
  template Tensor<T> add_rowvec(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> sum_rows(const Tensor<T>&);                                                \
  template Tensor<T> weighted_sum(const Tensor<T>&, std::span<const T>);                        \
  template Tensor<T> mean_row_groups(const Tensor<T>&, int64_t);                                \
  template Tensor<T> softmax(const Tensor<T>&, int);                                            \
  template Tensor<T> log_softmax(const Tensor<T>&);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                std::vector<T>&, std::vector<T>&, bool, T, T);                  \
  template Tensor<T> cross_entropy_rows(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> cross_entropy_from_logits(const Tensor<T>&, std::span<const T>);           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> take_rows(const Tensor<T>&, std::span<const int64_t>);                     \
  template Tensor<T> interleave_rows(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> slice_cols(const Tensor<T>&, int64_t, int64_t);                            \
  template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> stop_gradient(const Tensor<T>&);                                           \
  template Tensor<T> causal_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                      int64_t, int64_t, int64_t, std::span<const int64_t>,      \
                                      std::vector<std::vector<T>>*);                            \
  template Tensor<T> im2col3x3(const Tensor<T>&, int64_t, int64_t, int64_t);                    \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);

LATENTPLAN_INSTANTIATE_OPS(float)
LATENTPLAN_INSTANTIATE_OPS(double)

}  // namespace latentplan
