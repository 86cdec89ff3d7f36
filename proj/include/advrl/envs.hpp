#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "advrl/rng.hpp"
#include "advrl/tensor.hpp"

namespace advrl {

/// One luminance image, h×w, values in [0, 1].
struct Frame {
  Tensor grid;
};

/// The k most recent frames stacked oldest first, k×h×w.
struct Observation {
  Tensor frames;
};

struct StepResult {
  Frame frame;
  double reward = 0.0;
  bool done = false;
};

struct EnvConfig {
  std::string name = "minipong";
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t step_cap = 300;
  std::size_t frame_skip = 1;
  std::size_t frame_stack = 4;
  std::size_t paddle_width = 3;
  std::size_t hazard_count = 4;
  // Base seed for evaluation rollouts in this environment.
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

class Environment {
 public:
  virtual ~Environment() = default;

  /// Restart from an initial state derived only from `seed`.
  virtual Frame reset(std::uint64_t seed) = 0;
  /// Advance one agent step. Throws ContractError on an out-of-range action
  /// or when called after the episode finished.
  virtual StepResult step(std::size_t action) = 0;

  virtual std::size_t action_count() const = 0;
  virtual std::size_t height() const = 0;
  virtual std::size_t width() const = 0;
  /// Bounds on the undiscounted episode return.
  virtual double min_return() const = 0;
  virtual double max_return() const = 0;
};

using EnvFactory = std::function<std::unique_ptr<Environment>()>;

namespace luminance {
inline constexpr double background = 0.0;
inline constexpr double ball = 1.0;
inline constexpr double paddle = 1.0;
inline constexpr double agent = 1.0;
inline constexpr double goal = 0.6;
inline constexpr double hazard = 0.3;
}  // namespace luminance

// Shared bookkeeping for step caps and done-state contracts.
class TickEnvironment : public Environment {
 public:
  StepResult step(std::size_t action) final;

 protected:
  explicit TickEnvironment(std::size_t step_cap);
  void begin_episode() { ticks_ = 0; done_ = false; }
  // One tick of dynamics; returns reward and sets `terminal` when the
  // episode ends on its own terms.
  virtual double tick(std::size_t action, bool& terminal) = 0;
  virtual Frame render() const = 0;

 private:
  std::size_t step_cap_;
  std::size_t ticks_ = 0;
  bool done_ = true;
};

/// Single-paddle Pong on a small grid.
///
/// The ball moves one cell per tick diagonally and reflects off the left,
/// right and top walls. When it reaches the bottom row the agent scores +1 if
/// a paddle cell shares its column and −1 otherwise; the ball then relaunches
/// from row 1. The episode ends after `kResolutions` such events or the step
/// cap. Actions: 0 = left, 1 = stay, 2 = right.
class MiniPong final : public TickEnvironment {
 public:
  static constexpr std::size_t kResolutions = 16;

  struct State {
    int ball_row = 1;
    int ball_col = 0;
    int ball_vrow = 1;
    int ball_vcol = 1;
    int paddle_col = 0;  // leftmost paddle cell
    std::size_t resolutions = 0;
  };

  explicit MiniPong(const EnvConfig& config);

  Frame reset(std::uint64_t seed) override;
  std::size_t action_count() const override { return 3; }
  std::size_t height() const override { return height_; }
  std::size_t width() const override { return width_; }
  double min_return() const override { return -static_cast<double>(kResolutions); }
  double max_return() const override { return static_cast<double>(kResolutions); }

  const State& state() const { return state_; }
  // Test hook: overwrite ball/paddle placement mid-episode.
  void set_state(const State& state) { state_ = state; }

 protected:
  double tick(std::size_t action, bool& terminal) override;
  Frame render() const override;

 private:
  void launch_ball();

  int height_;
  int width_;
  int paddle_width_;
  Rng rng_;
  State state_;
};

/// Navigation on a small grid: reach the goal in the bottom-right corner
/// (+1) without stepping on a hazard (−1). Both end the episode. Actions:
/// 0 = up, 1 = down, 2 = left, 3 = right; moves into walls are no-ops.
class HazardGrid final : public TickEnvironment {
 public:
  struct Cell {
    int row;
    int col;
    friend bool operator==(const Cell&, const Cell&) = default;
  };

  explicit HazardGrid(const EnvConfig& config);

  Frame reset(std::uint64_t seed) override;
  std::size_t action_count() const override { return 4; }
  std::size_t height() const override { return height_; }
  std::size_t width() const override { return width_; }
  double min_return() const override { return -1.0; }
  double max_return() const override { return 1.0; }

  Cell agent() const { return agent_; }
  Cell goal() const { return goal_; }
  const std::vector<Cell>& hazards() const { return hazards_; }

 protected:
  double tick(std::size_t action, bool& terminal) override;
  Frame render() const override;

 private:
  bool goal_reachable() const;

  int height_;
  int width_;
  std::size_t hazard_count_;
  Cell agent_{0, 0};
  Cell goal_{0, 0};
  std::vector<Cell> hazards_;
};

/// One-step bandit with a constant 1×1 frame; action i pays rewards[i].
class Bandit final : public TickEnvironment {
 public:
  explicit Bandit(std::vector<double> rewards);

  Frame reset(std::uint64_t seed) override;
  std::size_t action_count() const override { return rewards_.size(); }
  std::size_t height() const override { return 1; }
  std::size_t width() const override { return 1; }
  double min_return() const override;
  double max_return() const override;

 protected:
  double tick(std::size_t action, bool& terminal) override;
  Frame render() const override;

 private:
  std::vector<double> rewards_;
};

/// Repeats each chosen action `skip` times, summing rewards and stopping
/// early if the episode ends.
class FrameSkip final : public Environment {
 public:
  FrameSkip(std::unique_ptr<Environment> inner, std::size_t skip);

  Frame reset(std::uint64_t seed) override { return inner_->reset(seed); }
  StepResult step(std::size_t action) override;
  std::size_t action_count() const override { return inner_->action_count(); }
  std::size_t height() const override { return inner_->height(); }
  std::size_t width() const override { return inner_->width(); }
  double min_return() const override { return inner_->min_return(); }
  double max_return() const override { return inner_->max_return(); }

 private:
  std::unique_ptr<Environment> inner_;
  std::size_t skip_;
};

/// Builds the environment named by `config` (minipong | hazardgrid), wrapped
/// in FrameSkip when frame_skip > 1.
std::unique_ptr<Environment> make_env(const EnvConfig& config);
EnvFactory env_factory(const EnvConfig& config);

/// Stacks the last `depth` frames of `history` (oldest first). With fewer
/// than `depth` frames the earliest one is repeated at the front.
Observation stack_frames(std::span<const Frame> history, std::size_t depth);

/// Sliding window of recent frames.
class FrameStack {
 public:
  explicit FrameStack(std::size_t depth);

  void reset(const Frame& first);
  void push(const Frame& frame);
  Observation observation() const;
  std::size_t depth() const { return depth_; }

 private:
  std::size_t depth_;
  std::deque<Frame> history_;
};

}  // namespace advrl
