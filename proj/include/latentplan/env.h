#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "latentplan/errors.h"
#include "latentplan/tensor.h"
#include "latentplan/types.h"

namespace latentplan {

enum class Phase { kNone, kExploration, kDistraction, kReward };

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;  // done because of the step limit
  Phase phase = Phase::kNone;  // phase in which the action was taken
};

struct ActionSpace {
  bool continuous = false;
  int64_t n = 0;     // discrete
  int64_t dim = 0;   // continuous
  float low = -1.0f, high = 1.0f;
};

// Episodic environment. All environments are deterministic functions of the
// reset seed and the action sequence.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual Observation reset(uint64_t seed) = 0;
  virtual StepResult step(const Action& a) = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
  virtual ActionSpace action_space() const = 0;
  virtual std::vector<int64_t> observation_shape() const = 0;
  virtual int64_t max_episode_steps() const = 0;
  // Whether the finished episode counts as solved.
  virtual bool success() const = 0;
  virtual bool done() const = 0;
  virtual std::string name() const = 0;

  int64_t observation_size() const;
};

// ---- VisualMatch --------------------------------------------------------------

enum class Color { kBlue = 0, kRed = 1, kGreen = 2 };

struct VisualMatchConfig {
  int64_t memory_length = 2;
  int64_t reward_steps = 15;
  int64_t num_apples = 5;
  bool four_directions = false;  // drop the "stay" action
  std::optional<Color> forced_target;  // tests only
};

// Three-phase memory task on a 7x7 walled room seen through a 5x5 egocentric
// window. Phase 1 (one step) paints the floor with the target color. Phase 2
// (memory_length steps) scatters apples that give no reward. Phase 3 (up to
// reward_steps steps) starts the agent at the room center with blue on its
// left, red above and green on its right; stepping onto any of them ends the
// episode, with reward 1 only for the target color.
class VisualMatch : public Environment {
 public:
  static constexpr int64_t kRoom = 7;
  static constexpr int64_t kView = 5;
  enum Move { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };

  explicit VisualMatch(VisualMatchConfig cfg);

  Observation reset(uint64_t seed) override;
  StepResult step(const Action& a) override;
  std::unique_ptr<Environment> clone() const override;
  ActionSpace action_space() const override;
  std::vector<int64_t> observation_shape() const override { return {3, kView, kView}; }
  int64_t max_episode_steps() const override;
  bool success() const override { return success_; }
  bool done() const override { return done_; }
  std::string name() const override { return "visual_match"; }

  Color target() const { return target_; }
  Phase phase() const;
  int64_t steps_taken() const { return t_; }
  std::pair<int64_t, int64_t> agent() const { return {row_, col_}; }

 private:
  enum Cell : uint8_t { kWall, kFloor, kApple, kTargetFloor, kBlue, kRed, kGreen };
  void build_room(Phase p);
  Observation render() const;

  VisualMatchConfig cfg_;
  Rng target_rng_{0};
  Rng layout_rng_{0};
  Color target_ = Color::kBlue;
  std::vector<Cell> grid_;
  int64_t row_ = 3, col_ = 3;
  int64_t t_ = 0;
  bool done_ = true;
  bool success_ = false;
};

// ---- micro environments -------------------------------------------------------

// N-state chain: action 1 (right) advances, action 0 (left) returns to state 0.
// Reaching state N-1 gives reward 1 and ends the episode.
struct ChainConfig {
  int64_t length = 3;
  int64_t start = 0;
  int64_t max_steps = 0;  // 0 means 2*length
};

class ChainMdp : public Environment {
 public:
  explicit ChainMdp(ChainConfig cfg);
  Observation reset(uint64_t seed) override;
  StepResult step(const Action& a) override;
  std::unique_ptr<Environment> clone() const override;
  ActionSpace action_space() const override { return {false, 2, 0}; }
  std::vector<int64_t> observation_shape() const override { return {cfg_.length}; }
  int64_t max_episode_steps() const override { return max_steps_; }
  bool success() const override { return success_; }
  bool done() const override { return done_; }
  std::string name() const override { return "chain"; }

  int64_t state() const { return state_; }
  void set_state(int64_t s);

 private:
  Observation render() const;
  ChainConfig cfg_;
  int64_t max_steps_;
  int64_t state_ = 0;
  int64_t t_ = 0;
  bool done_ = true;
  bool success_ = false;
};

// One-step bandit with deterministic arm rewards.
class DiscreteBandit : public Environment {
 public:
  explicit DiscreteBandit(std::vector<double> rewards);
  Observation reset(uint64_t seed) override;
  StepResult step(const Action& a) override;
  std::unique_ptr<Environment> clone() const override;
  ActionSpace action_space() const override;
  std::vector<int64_t> observation_shape() const override { return {1}; }
  int64_t max_episode_steps() const override { return 1; }
  bool success() const override { return success_; }
  bool done() const override { return done_; }
  std::string name() const override { return "bandit"; }

 private:
  std::vector<double> rewards_;
  bool done_ = true;
  bool success_ = false;
};

// One-step continuous bandit: reward -(a - a*)^2 with a clipped to [-1, 1].
class ContinuousBandit : public Environment {
 public:
  explicit ContinuousBandit(double optimum = 0.3, double success_radius = 0.05);
  Observation reset(uint64_t seed) override;
  StepResult step(const Action& a) override;
  std::unique_ptr<Environment> clone() const override;
  ActionSpace action_space() const override { return {true, 0, 1, -1.0f, 1.0f}; }
  std::vector<int64_t> observation_shape() const override { return {1}; }
  int64_t max_episode_steps() const override { return 1; }
  bool success() const override { return success_; }
  bool done() const override { return done_; }
  std::string name() const override { return "continuous_bandit"; }
  double optimum() const { return optimum_; }

 private:
  double optimum_;
  double radius_;
  bool done_ = true;
  bool success_ = false;
};

// Zero-pads a wrapped environment's flat observations to a fixed size so
// several tasks can share one encoder.
class PaddedEnv : public Environment {
 public:
  PaddedEnv(std::unique_ptr<Environment> inner, int64_t size);
  Observation reset(uint64_t seed) override;
  StepResult step(const Action& a) override;
  std::unique_ptr<Environment> clone() const override;
  ActionSpace action_space() const override { return inner_->action_space(); }
  std::vector<int64_t> observation_shape() const override { return {size_}; }
  int64_t max_episode_steps() const override { return inner_->max_episode_steps(); }
  bool success() const override { return inner_->success(); }
  bool done() const override { return inner_->done(); }
  std::string name() const override { return inner_->name(); }

 private:
  Observation pad(Observation o) const;
  std::unique_ptr<Environment> inner_;
  int64_t size_;
};

// Writes a channels-first RGB observation in [0,1] as a binary PPM, each
// cell scaled up to `cell` pixels.
void write_ppm(const std::filesystem::path& path, const Observation& obs, int64_t height,
               int64_t width, int64_t cell = 16);

}  // namespace latentplan
