#pragma once

#include <string>
#include <vector>

#include "latentplan/tensor.h"

namespace latentplan {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// AdamW with decoupled weight decay: theta <- theta - lr*wd*theta, followed by
// the bias-corrected adaptive step.
template <std::floating_point T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWConfig config);

  // Applies one update using the gradients currently stored on the params.
  // Parameters without a gradient are treated as having a zero gradient.
  void step();
  void zero_grad();

  int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return config_; }
  AdamWConfig& mutable_config() { return config_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

  // Moment buffers, aligned with params().
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  std::vector<Tensor<T>> params_;
  AdamWConfig config_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  int64_t t_ = 0;
};

// Global L2 norm of all gradients (missing gradients count as zero).
template <std::floating_point T>
double global_grad_norm(const std::vector<Tensor<T>>& params);

// Scales all gradients by max_norm/norm when the global norm exceeds
// max_norm. Returns the norm measured before clipping.
template <std::floating_point T>
double clip_global_norm(std::vector<Tensor<T>>& params, double max_norm);

// Span flavour used by tests and by callers holding raw gradient buffers.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm);

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace latentplan
