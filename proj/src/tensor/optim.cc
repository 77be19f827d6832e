#include "latentplan/optim.h"

#include <cmath>

namespace latentplan {

template <std::floating_point T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.lr <= 0 || config_.eps <= 0 || config_.weight_decay < 0) {
    throw ConfigError("AdamW: lr and eps must be positive, weight decay non-negative");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.values().size(), T(0));
    v_.emplace_back(p.values().size(), T(0));
  }
}

template <std::floating_point T>
void AdamW<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto theta = p.data();
    auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != theta.size()) throw ShapeError("AdamW: moment shape does not match parameter");
    for (size_t j = 0; j < theta.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      double th = static_cast<double>(theta[j]);
      th -= config_.lr * config_.weight_decay * th;
      const double mj = config_.beta1 * static_cast<double>(m[j]) + (1.0 - config_.beta1) * g;
      const double vj = config_.beta2 * static_cast<double>(v[j]) + (1.0 - config_.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      th -= config_.lr * (mj / bc1) / (std::sqrt(vj / bc2) + config_.eps);
      theta[j] = static_cast<T>(th);
    }
  }
}

template <std::floating_point T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <std::floating_point T>
double global_grad_norm(const std::vector<Tensor<T>>& params) {
  double sq = 0;
  for (const auto& p : params) {
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <std::floating_point T>
double clip_global_norm(std::vector<Tensor<T>>& params, double max_norm) {
  if (max_norm <= 0) throw UsageError("clip_global_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.mutable_grad()) g = static_cast<T>(g * factor);
    }
  }
  return norm;
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  if (max_norm <= 0) throw UsageError("clip_global_norm: max_norm must be positive");
  double sq = 0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g) x *= factor;
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double global_grad_norm(const std::vector<Tensor<float>>&);
template double global_grad_norm(const std::vector<Tensor<double>>&);
template double clip_global_norm(std::vector<Tensor<float>>&, double);
template double clip_global_norm(std::vector<Tensor<double>>&, double);

}  // namespace latentplan
