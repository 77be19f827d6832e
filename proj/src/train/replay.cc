#include <cmath>

#include "latentplan/training.h"

namespace latentplan {

double GameSegment::episode_return() const {
  double r = 0;
  for (const auto& s : steps) r += s.reward;
  return r;
}

void GameSegment::validate() const {
  if (steps.empty()) throw ValidationError("segment: empty");
  for (size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    if (s.done != (i + 1 == steps.size())) {
      throw ValidationError("segment: done must be set exactly on the final transition");
    }
    double total = 0;
    for (double p : s.policy) {
      if (!(p >= 0)) throw ValidationError("segment: negative policy weight");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw ValidationError("segment: policy does not sum to 1");
    if (!s.sampled_actions.empty() && s.sampled_actions.size() != s.policy.size()) {
      throw ValidationError("segment: sampled actions and policy differ in size");
    }
  }
  if (final_obs.size() != steps.back().obs.size()) {
    throw ValidationError("segment: final observation has the wrong size");
  }
}

ReplayBuffer::ReplayBuffer(int64_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw ConfigError("replay: capacity must be >= 1");
}

void ReplayBuffer::add(GameSegment seg) {
  seg.validate();
  if (seg.length() > capacity_) throw ValidationError("replay: segment longer than capacity");
  std::lock_guard lock(mu_);
  transitions_ += seg.length();
  segments_.push_back(std::move(seg));
  while (transitions_ > capacity_) {
    transitions_ -= segments_.front().length();
    segments_.pop_front();
  }
}

int64_t ReplayBuffer::num_segments() const {
  std::lock_guard lock(mu_);
  return static_cast<int64_t>(segments_.size());
}

int64_t ReplayBuffer::num_transitions() const {
  std::lock_guard lock(mu_);
  return transitions_;
}

std::vector<int64_t> ReplayBuffer::sample_indices(int64_t n, Rng& rng, int64_t min_segments) const {
  std::lock_guard lock(mu_);
  const auto have = static_cast<int64_t>(segments_.size());
  if (have < std::max<int64_t>(1, min_segments)) {
    throw InsufficientDataError("replay: " + std::to_string(have) + " segments stored, need " +
                                std::to_string(std::max<int64_t>(1, min_segments)));
  }
  std::uniform_int_distribution<int64_t> pick(0, have - 1);
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (auto& i : out) i = pick(rng);
  return out;
}

std::vector<GameSegment> ReplayBuffer::sample(int64_t n, Rng& rng, int64_t min_segments) const {
  const auto idx = sample_indices(n, rng, min_segments);
  std::lock_guard lock(mu_);
  std::vector<GameSegment> out;
  out.reserve(idx.size());
  for (int64_t i : idx) out.push_back(segments_[static_cast<size_t>(i)]);
  return out;
}

double n_step_target(std::span<const double> rewards, int64_t t, int64_t n, double gamma,
                     std::span<const double> bootstrap) {
  const auto len = static_cast<int64_t>(rewards.size());
  if (t < 0 || t >= len) throw UsageError("value target: t outside the segment");
  double g = 0, discount = 1;
  for (int64_t k = 0; k < n; ++k) {
    if (t + k >= len) return g;  // episode over: no bootstrap
    g += discount * rewards[static_cast<size_t>(t + k)];
    discount *= gamma;
  }
  if (t + n >= len) return g;
  if (t + n >= static_cast<int64_t>(bootstrap.size())) {
    throw UsageError("value target: missing bootstrap value");
  }
  return g + discount * bootstrap[static_cast<size_t>(t + n)];
}

double compute_value_target(const GameSegment& seg, int64_t t, int64_t n, double gamma,
                            std::span<const double> bootstrap) {
  std::vector<double> rewards;
  for (const auto& s : seg.steps) rewards.push_back(s.reward);
  return n_step_target(rewards, t, n, gamma, bootstrap);
}

}  // namespace latentplan
