#pragma once

#include <cstdint>
#include <vector>

namespace latentplan {

// Flattened observation. Image observations are channels-first (C, H, W).
using Observation = std::vector<float>;

// A discrete action uses `index`; a continuous one uses `values`.
struct Action {
  int64_t index = 0;
  std::vector<float> values;

  static Action discrete(int64_t i) { return Action{i, {}}; }
  static Action continuous(std::vector<float> v) { return Action{0, std::move(v)}; }
  bool operator==(const Action&) const = default;
};

}  // namespace latentplan
