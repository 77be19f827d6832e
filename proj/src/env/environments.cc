#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "latentplan/env.h"

namespace latentplan {

int64_t Environment::observation_size() const {
  int64_t n = 1;
  for (int64_t d : observation_shape()) n *= d;
  return n;
}

namespace {

void require_active(bool done, const std::string& env) {
  if (done) throw UsageError(env + ": step() called on a finished episode; call reset()");
}

int64_t discrete_index(const Action& a, int64_t n, const std::string& env) {
  if (a.index < 0 || a.index >= n) {
    throw DomainError(env + ": action " + std::to_string(a.index) + " outside [0, " +
                      std::to_string(n) + ")");
  }
  return a.index;
}

}  // namespace

// ---- VisualMatch --------------------------------------------------------------

VisualMatch::VisualMatch(VisualMatchConfig cfg) : cfg_(cfg) {
  if (cfg_.memory_length < 0) throw ConfigError("visual_match: memory_length must be >= 0");
  if (cfg_.reward_steps < 1) throw ConfigError("visual_match: reward_steps must be >= 1");
  if (cfg_.num_apples < 0 || cfg_.num_apples > 24) {
    throw ConfigError("visual_match: num_apples must be in [0, 24]");
  }
}

int64_t VisualMatch::max_episode_steps() const {
  return 1 + cfg_.memory_length + cfg_.reward_steps;
}

ActionSpace VisualMatch::action_space() const {
  return {false, cfg_.four_directions ? 4 : 5, 0};
}

Phase VisualMatch::phase() const {
  if (t_ < 1) return Phase::kExploration;
  if (t_ < 1 + cfg_.memory_length) return Phase::kDistraction;
  return Phase::kReward;
}

void VisualMatch::build_room(Phase p) {
  grid_.assign(kRoom * kRoom, kWall);
  const Cell floor = p == Phase::kExploration ? kTargetFloor : kFloor;
  for (int64_t r = 1; r < kRoom - 1; ++r) {
    for (int64_t c = 1; c < kRoom - 1; ++c) grid_[r * kRoom + c] = floor;
  }
  if (p == Phase::kExploration || p == Phase::kDistraction) {
    std::uniform_int_distribution<int64_t> cell(1, kRoom - 2);
    row_ = cell(layout_rng_);
    col_ = cell(layout_rng_);
  }
  if (p == Phase::kDistraction) {
    std::vector<int64_t> free;
    for (int64_t r = 1; r < kRoom - 1; ++r) {
      for (int64_t c = 1; c < kRoom - 1; ++c) {
        if (r != row_ || c != col_) free.push_back(r * kRoom + c);
      }
    }
    std::shuffle(free.begin(), free.end(), layout_rng_);
    for (int64_t i = 0; i < cfg_.num_apples; ++i) grid_[free[i]] = kApple;
  }
  if (p == Phase::kReward) {
    row_ = 3;
    col_ = 3;
    grid_[3 * kRoom + 2] = kBlue;
    grid_[2 * kRoom + 3] = kRed;
    grid_[3 * kRoom + 4] = kGreen;
  }
}

Observation VisualMatch::render() const {
  static constexpr std::array<std::array<float, 3>, 3> kTargetRgb{{{0, 0, 1}, {1, 0, 0}, {0, 1, 0}}};
  auto rgb = [&](Cell c) -> std::array<float, 3> {
    switch (c) {
      case kWall: return {0, 0, 0};
      case kFloor: return {1, 1, 1};
      case kApple: return {1, 1, 0};
      case kTargetFloor: return kTargetRgb[static_cast<size_t>(target_)];
      case kBlue: return kTargetRgb[0];
      case kRed: return kTargetRgb[1];
      case kGreen: return kTargetRgb[2];
    }
    return {0, 0, 0};
  };
  Observation obs(3 * kView * kView);
  const int64_t half = kView / 2;
  for (int64_t y = 0; y < kView; ++y) {
    for (int64_t x = 0; x < kView; ++x) {
      const int64_t r = row_ + y - half, c = col_ + x - half;
      const bool inside = r >= 0 && r < kRoom && c >= 0 && c < kRoom;
      std::array<float, 3> px = inside ? rgb(grid_[r * kRoom + c]) : rgb(kWall);
      if (y == half && x == half) px = {0.5f, 0.0f, 0.5f};  // agent
      for (int ch = 0; ch < 3; ++ch) obs[(ch * kView + y) * kView + x] = px[ch];
    }
  }
  return obs;
}

Observation VisualMatch::reset(uint64_t seed) {
  // Separate streams: target color and room layout never share draws, so
  // phase-2 frames carry no information about the target.
  target_rng_.seed(seed * 2 + 1);
  layout_rng_.seed(seed * 2 + 2);
  target_ = cfg_.forced_target.value_or(
      static_cast<Color>(std::uniform_int_distribution<int>(0, 2)(target_rng_)));
  t_ = 0;
  done_ = false;
  success_ = false;
  build_room(Phase::kExploration);
  return render();
}

StepResult VisualMatch::step(const Action& a) {
  require_active(done_, "visual_match");
  const int64_t move = discrete_index(a, action_space().n, "visual_match");
  StepResult res;
  res.phase = phase();
  static constexpr int64_t kDr[5] = {-1, 1, 0, 0, 0};
  static constexpr int64_t kDc[5] = {0, 0, -1, 1, 0};
  const int64_t nr = row_ + kDr[move], nc = col_ + kDc[move];
  const Cell dest = grid_[nr * kRoom + nc];
  if (dest != kWall) {
    row_ = nr;
    col_ = nc;
  }
  ++t_;
  if (res.phase == Phase::kDistraction && dest == kApple) {
    grid_[nr * kRoom + nc] = kFloor;  // eaten, no reward
  }
  if (res.phase == Phase::kReward && (dest == kBlue || dest == kRed || dest == kGreen)) {
    const Color reached = dest == kBlue ? Color::kBlue : dest == kRed ? Color::kRed : Color::kGreen;
    success_ = reached == target_;
    res.reward = success_ ? 1.0 : 0.0;
    done_ = true;
  }
  if (!done_) {
    if (t_ == 1 && cfg_.memory_length > 0) build_room(Phase::kDistraction);
    if (t_ == 1 + cfg_.memory_length) build_room(Phase::kReward);
    if (t_ >= max_episode_steps()) {
      done_ = true;
      res.truncated = true;
    }
  }
  res.done = done_;
  res.obs = render();
  return res;
}

std::unique_ptr<Environment> VisualMatch::clone() const {
  return std::make_unique<VisualMatch>(*this);
}

// ---- chain ----------------------------------------------------------------------

ChainMdp::ChainMdp(ChainConfig cfg) : cfg_(cfg) {
  if (cfg_.length < 2) throw ConfigError("chain: length must be >= 2");
  if (cfg_.start < 0 || cfg_.start >= cfg_.length - 1) {
    throw ConfigError("chain: start must be a non-terminal state");
  }
  if (cfg_.max_steps < 0) throw ConfigError("chain: max_steps must be >= 0");
  max_steps_ = cfg_.max_steps > 0 ? cfg_.max_steps : 2 * cfg_.length;
}

Observation ChainMdp::render() const {
  Observation o(static_cast<size_t>(cfg_.length), 0.0f);
  o[static_cast<size_t>(state_)] = 1.0f;
  return o;
}

Observation ChainMdp::reset(uint64_t) {
  state_ = cfg_.start;
  t_ = 0;
  done_ = false;
  success_ = false;
  return render();
}

void ChainMdp::set_state(int64_t s) {
  if (s < 0 || s >= cfg_.length - 1) throw DomainError("chain: state must be non-terminal");
  state_ = s;
}

StepResult ChainMdp::step(const Action& a) {
  require_active(done_, "chain");
  const int64_t move = discrete_index(a, 2, "chain");
  StepResult res;
  state_ = move == 1 ? state_ + 1 : 0;
  ++t_;
  if (state_ == cfg_.length - 1) {
    res.reward = 1.0;
    done_ = true;
    success_ = true;
  } else if (t_ >= max_steps_) {
    done_ = true;
    res.truncated = true;
  }
  res.done = done_;
  res.obs = render();
  return res;
}

std::unique_ptr<Environment> ChainMdp::clone() const { return std::make_unique<ChainMdp>(*this); }

// ---- bandits ----------------------------------------------------------------

DiscreteBandit::DiscreteBandit(std::vector<double> rewards) : rewards_(std::move(rewards)) {
  if (rewards_.size() < 2) throw ConfigError("bandit: need at least two arms");
}

ActionSpace DiscreteBandit::action_space() const {
  return {false, static_cast<int64_t>(rewards_.size()), 0};
}

Observation DiscreteBandit::reset(uint64_t) {
  done_ = false;
  success_ = false;
  return {1.0f};
}

StepResult DiscreteBandit::step(const Action& a) {
  require_active(done_, "bandit");
  const int64_t arm = discrete_index(a, static_cast<int64_t>(rewards_.size()), "bandit");
  StepResult res;
  res.reward = rewards_[static_cast<size_t>(arm)];
  res.done = done_ = true;
  success_ = res.reward == *std::max_element(rewards_.begin(), rewards_.end());
  res.obs = {1.0f};
  return res;
}

std::unique_ptr<Environment> DiscreteBandit::clone() const {
  return std::make_unique<DiscreteBandit>(*this);
}

ContinuousBandit::ContinuousBandit(double optimum, double success_radius)
    : optimum_(optimum), radius_(success_radius) {
  if (optimum < -1 || optimum > 1) throw ConfigError("continuous_bandit: optimum outside [-1, 1]");
}

Observation ContinuousBandit::reset(uint64_t) {
  done_ = false;
  success_ = false;
  return {1.0f};
}

StepResult ContinuousBandit::step(const Action& a) {
  require_active(done_, "continuous_bandit");
  if (a.values.size() != 1) throw DomainError("continuous_bandit: expects a 1-D action");
  const double x = std::clamp(static_cast<double>(a.values[0]), -1.0, 1.0);
  StepResult res;
  res.reward = -(x - optimum_) * (x - optimum_);
  res.done = done_ = true;
  success_ = std::abs(x - optimum_) <= radius_;
  res.obs = {1.0f};
  return res;
}

std::unique_ptr<Environment> ContinuousBandit::clone() const {
  return std::make_unique<ContinuousBandit>(*this);
}

// ---- padding wrapper --------------------------------------------------------

PaddedEnv::PaddedEnv(std::unique_ptr<Environment> inner, int64_t size)
    : inner_(std::move(inner)), size_(size) {
  if (inner_->observation_size() > size_) {
    throw ConfigError("padded env: observation larger than the padded size");
  }
}

Observation PaddedEnv::pad(Observation o) const {
  o.resize(static_cast<size_t>(size_), 0.0f);
  return o;
}

Observation PaddedEnv::reset(uint64_t seed) { return pad(inner_->reset(seed)); }

StepResult PaddedEnv::step(const Action& a) {
  auto r = inner_->step(a);
  r.obs = pad(std::move(r.obs));
  return r;
}

std::unique_ptr<Environment> PaddedEnv::clone() const {
  return std::make_unique<PaddedEnv>(inner_->clone(), size_);
}

void write_ppm(const std::filesystem::path& path, const Observation& obs, int64_t height,
               int64_t width, int64_t cell) {
  if (static_cast<int64_t>(obs.size()) != 3 * height * width) {
    throw ShapeError("write_ppm: observation is not 3 x height x width");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path.string());
  out << "P6\n" << width * cell << ' ' << height * cell << "\n255\n";
  for (int64_t y = 0; y < height * cell; ++y) {
    for (int64_t x = 0; x < width * cell; ++x) {
      for (int64_t ch = 0; ch < 3; ++ch) {
        const float v = obs[(ch * height + y / cell) * width + x / cell];
        out.put(static_cast<char>(static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255))));
      }
    }
  }
}

}  // namespace latentplan
