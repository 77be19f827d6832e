#include "latentplan/value_transform.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace latentplan {

double contract(double x, double eps) {
  const double s = x < 0 ? -1.0 : 1.0;
  return s * (std::sqrt(std::abs(x) + 1.0) - 1.0) + eps * x;
}

double expand(double y, double eps) {
  const double s = y < 0 ? -1.0 : 1.0;
  const double r = (std::sqrt(1.0 + 4.0 * eps * (std::abs(y) + 1.0 + eps)) - 1.0) / (2.0 * eps);
  return s * (r * r - 1.0);
}

int64_t support_half(int64_t bins) {
  if (bins < 3 || bins % 2 == 0) throw ConfigError("bins must be odd and >= 3");
  return (bins - 1) / 2;
}

template <typename T>
void scalar_to_categorical(double x, std::span<T> out) {
  const int64_t half = support_half(static_cast<int64_t>(out.size()));
  const double y = std::clamp(contract(x), -static_cast<double>(half), static_cast<double>(half));
  std::fill(out.begin(), out.end(), T(0));
  const double lo = std::floor(y);
  const double f = y - lo;
  const auto i = static_cast<size_t>(static_cast<int64_t>(lo) + half);
  out[i] = static_cast<T>(1.0 - f);
  if (f > 0) out[i + 1] = static_cast<T>(f);
}

std::vector<double> scalar_to_categorical(double x, int64_t bins) {
  std::vector<double> out(static_cast<size_t>(bins));
  scalar_to_categorical<double>(x, out);
  return out;
}

double categorical_to_scalar(std::span<const double> probs) {
  const int64_t half = support_half(static_cast<int64_t>(probs.size()));
  double total = 0, mean = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0)) throw ValidationError("categorical: negative or NaN probability");
    total += probs[i];
    mean += probs[i] * static_cast<double>(static_cast<int64_t>(i) - half);
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ValidationError("categorical: probabilities sum to " + std::to_string(total));
  }
  return expand(mean);
}

template <typename T>
double logits_to_scalar(std::span<const T> logits) {
  const double mx = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  std::vector<double> p(logits.size());
  double z = 0;
  for (size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(static_cast<double>(logits[i]) - mx);
  for (double& v : p) v /= z;
  return categorical_to_scalar(p);
}

template void scalar_to_categorical<float>(double, std::span<float>);
template void scalar_to_categorical<double>(double, std::span<double>);
template double logits_to_scalar<float>(std::span<const float>);
template double logits_to_scalar<double>(std::span<const double>);

}  // namespace latentplan
