#pragma once

// Scalar <-> categorical conversion over the integer support [-B, B] after
// the invertible contraction h(x) = sign(x)(sqrt(|x|+1) - 1) + eps*x.

#include <span>
#include <vector>

#include "latentplan/errors.h"

namespace latentplan {

inline constexpr double kValueEps = 0.001;

double contract(double x, double eps = kValueEps);
double expand(double y, double eps = kValueEps);

// bins must be odd; B = (bins - 1) / 2.
int64_t support_half(int64_t bins);

// Two-hot encoding of h(x), clamped to [-B, B].
std::vector<double> scalar_to_categorical(double x, int64_t bins);
// Writes the two-hot encoding into `out` (size bins, overwritten).
template <typename T>
void scalar_to_categorical(double x, std::span<T> out);

// h^-1 of the support expectation. Throws ValidationError unless probs is a
// distribution (nonnegative, sums to 1 within 1e-6).
double categorical_to_scalar(std::span<const double> probs);

// softmax(logits) followed by categorical_to_scalar.
template <typename T>
double logits_to_scalar(std::span<const T> logits);

}  // namespace latentplan
