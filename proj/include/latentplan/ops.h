#pragma once

// Differentiable operations over Tensor<T>. All ops validate shapes and
// throw ShapeError on mismatch. Unless noted, 2-D inputs are [rows, cols]
// and "row-wise" means over the last dimension.

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "latentplan/tensor.h"

namespace latentplan {

enum class Activation { kGelu, kGeluErf, kLeakyRelu, kSigmoid, kTanh, kSoftplus };

Activation parse_activation(std::string_view name);

inline constexpr double kLeakySlope = 0.01;

// Scalar form of `activation`, for code paths that bypass the graph.
template <std::floating_point T>
T activation_value(Activation kind, T x);

// ---- linear algebra -------------------------------------------------------

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x[M, in] * w[in, out] + bias[out]; bias may be undefined.
template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// ---- elementwise ----------------------------------------------------------

template <std::floating_point T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <std::floating_point T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <std::floating_point T> Tensor<T> square(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> exp(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> log(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> abs(const Tensor<T>& x);
// Gradient is zero where the input was clamped.
template <std::floating_point T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);
template <std::floating_point T> Tensor<T> activation(const Tensor<T>& x, Activation kind);

// x[M, N] + row[N] broadcast over rows.
template <std::floating_point T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& row);

// ---- reductions -----------------------------------------------------------

template <std::floating_point T> Tensor<T> sum(const Tensor<T>& x);
template <std::floating_point T> Tensor<T> mean(const Tensor<T>& x);
// Sum over the last dimension: [..., N] -> [...].
template <std::floating_point T> Tensor<T> sum_rows(const Tensor<T>& x);
// Sum_i weights[i] * x[i] with constant weights; returns a scalar.
template <std::floating_point T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights);
// Mean over consecutive groups of `group` rows: [G*group, C] -> [G, C].
template <std::floating_point T>
Tensor<T> mean_row_groups(const Tensor<T>& x, int64_t group);

// ---- normalization / probability ------------------------------------------

template <std::floating_point T> Tensor<T> softmax(const Tensor<T>& x, int axis = -1);
template <std::floating_point T> Tensor<T> log_softmax(const Tensor<T>& x);
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

// Batch normalization over rows of x[M, C]. In training mode batch statistics
// are used and the running estimates are updated in place.
template <std::floating_point T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     std::vector<T>& running_mean, std::vector<T>& running_var,
                     bool training, T momentum = T(0.1), T eps = T(1e-5));

// Row-wise cross entropy -sum_k target[m,k] * log_softmax(logits)[m,k] -> [M].
// The target is treated as a constant.
template <std::floating_point T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const Tensor<T>& target);

// Single-distribution cross entropy. Rejects targets that are not a
// probability vector (ValidationError).
template <std::floating_point T>
Tensor<T> cross_entropy_from_logits(const Tensor<T>& logits, std::span<const T> target);

// ---- structural -----------------------------------------------------------

template <std::floating_point T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// Gathers rows of a 2-D tensor; repeated indices accumulate in backward.
template <std::floating_point T>
Tensor<T> take_rows(const Tensor<T>& x, std::span<const int64_t> rows);
// Rows a0, b0, a1, b1, ... from a[M, D] and b[M, D].
template <std::floating_point T>
Tensor<T> interleave_rows(const Tensor<T>& a, const Tensor<T>& b);
template <std::floating_point T>
Tensor<T> slice_cols(const Tensor<T>& x, int64_t begin, int64_t end);
template <std::floating_point T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);
// Identity on values; blocks every gradient flowing through it.
template <std::floating_point T> Tensor<T> stop_gradient(const Tensor<T>& x);

// ---- network-specific -----------------------------------------------------

// Multi-head causal self-attention over q, k, v of shape [B*S, D] laid out
// sequence-major per batch element. Query i attends to keys j with
// key_start[i] <= j <= i; an empty key_start means 0 for every query.
// When `probs_out` is given, the attention matrices are copied into it as
// [B][heads][S*S].
template <std::floating_point T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           int64_t batch, int64_t seq, int64_t heads,
                           std::span<const int64_t> key_start = {},
                           std::vector<std::vector<T>>* probs_out = nullptr);

// 3x3, stride 1, zero padding 1 patch extraction on channels-last input
// x[B*H*W, C] -> [B*H*W, 9*C]. Patch layout is (dy, dx, c).
template <std::floating_point T>
Tensor<T> im2col3x3(const Tensor<T>& x, int64_t batch, int64_t height, int64_t width);

// Inverted dropout; identity when !training or p == 0.
template <std::floating_point T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng);

}  // namespace latentplan
