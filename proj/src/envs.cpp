#include "advrl/envs.hpp"

#include <algorithm>
#include <queue>

#include "advrl/errors.hpp"

namespace advrl {

void EnvConfig::validate() const {
  if (name != "minipong" && name != "hazardgrid") {
    throw ConfigError("env.name: unknown environment '" + name + "' (expected minipong or hazardgrid)");
  }
  if (step_cap < 1) throw ConfigError("env.step_cap: must be >= 1");
  if (frame_skip < 1) throw ConfigError("env.frame_skip: must be >= 1");
  if (frame_stack < 1) throw ConfigError("env.frame_stack: must be >= 1");
  if (height < 4 || width < 4) throw ConfigError("env.height/width: grid must be at least 4x4");
  if (name == "minipong" && (paddle_width < 1 || paddle_width > width)) {
    throw ConfigError("env.paddle_width: must be in [1, width]");
  }
  if (name == "hazardgrid" && hazard_count + 2 > height * width) {
    throw ConfigError("env.hazard_count: too many hazards for the grid");
  }
}

// ---------------------------------------------------------------------------

TickEnvironment::TickEnvironment(std::size_t step_cap) : step_cap_(step_cap) {
  if (step_cap_ < 1) throw ContractError("step cap must be >= 1");
}

StepResult TickEnvironment::step(std::size_t action) {
  if (done_) throw ContractError("step() called on a finished episode; call reset() first");
  if (action >= action_count()) {
    throw ContractError("action " + std::to_string(action) + " out of range [0, " +
                        std::to_string(action_count()) + ")");
  }
  bool terminal = false;
  const double reward = tick(action, terminal);
  ++ticks_;
  done_ = terminal || ticks_ >= step_cap_;
  return {render(), reward, done_};
}

// ---------------------------------------------------------------------------

MiniPong::MiniPong(const EnvConfig& config)
    : TickEnvironment(config.step_cap),
      height_(static_cast<int>(config.height)),
      width_(static_cast<int>(config.width)),
      paddle_width_(static_cast<int>(config.paddle_width)) {
  if (paddle_width_ < 1 || paddle_width_ > width_) throw ContractError("paddle does not fit the grid");
}

void MiniPong::launch_ball() {
  state_.ball_row = 1;
  state_.ball_col = static_cast<int>(uniform_index(rng_, static_cast<std::size_t>(width_)));
  state_.ball_vrow = 1;
  state_.ball_vcol = uniform_index(rng_, 2) == 0 ? -1 : 1;
}

Frame MiniPong::reset(std::uint64_t seed) {
  rng_.seed(seed);
  begin_episode();
  state_ = State{};
  state_.paddle_col = (width_ - paddle_width_) / 2;
  launch_ball();
  return render();
}

double MiniPong::tick(std::size_t action, bool& terminal) {
  const int move = static_cast<int>(action) - 1;
  state_.paddle_col = std::clamp(state_.paddle_col + move, 0, width_ - paddle_width_);

  int col = state_.ball_col + state_.ball_vcol;
  if (col < 0 || col >= width_) {
    state_.ball_vcol = -state_.ball_vcol;
    col = state_.ball_col + state_.ball_vcol;
  }
  int row = state_.ball_row + state_.ball_vrow;
  if (row < 0) {
    state_.ball_vrow = -state_.ball_vrow;
    row = state_.ball_row + state_.ball_vrow;
  }
  state_.ball_row = row;
  state_.ball_col = col;

  double reward = 0.0;
  if (row >= height_ - 1) {
    const bool hit = col >= state_.paddle_col && col < state_.paddle_col + paddle_width_;
    reward = hit ? 1.0 : -1.0;
    ++state_.resolutions;
    if (state_.resolutions >= kResolutions) {
      terminal = true;
    } else {
      launch_ball();
    }
  }
  return reward;
}

Frame MiniPong::render() const {
  Tensor grid({static_cast<std::size_t>(height_), static_cast<std::size_t>(width_)},
              luminance::background);
  const auto w = static_cast<std::size_t>(width_);
  for (int c = state_.paddle_col; c < state_.paddle_col + paddle_width_; ++c) {
    grid[static_cast<std::size_t>(height_ - 1) * w + static_cast<std::size_t>(c)] = luminance::paddle;
  }
  if (state_.ball_row < height_ - 1) {
    grid[static_cast<std::size_t>(state_.ball_row) * w + static_cast<std::size_t>(state_.ball_col)] =
        luminance::ball;
  }
  return {std::move(grid)};
}

// ---------------------------------------------------------------------------

HazardGrid::HazardGrid(const EnvConfig& config)
    : TickEnvironment(config.step_cap),
      height_(static_cast<int>(config.height)),
      width_(static_cast<int>(config.width)),
      hazard_count_(config.hazard_count) {
  goal_ = {height_ - 1, width_ - 1};
}

bool HazardGrid::goal_reachable() const {
  std::vector<char> blocked(static_cast<std::size_t>(height_ * width_), 0);
  for (const auto& h : hazards_) blocked[static_cast<std::size_t>(h.row * width_ + h.col)] = 1;
  std::vector<char> seen(blocked.size(), 0);
  std::queue<Cell> frontier;
  frontier.push(agent_);
  seen[static_cast<std::size_t>(agent_.row * width_ + agent_.col)] = 1;
  constexpr int dr[] = {-1, 1, 0, 0};
  constexpr int dc[] = {0, 0, -1, 1};
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop();
    if (c == goal_) return true;
    for (int k = 0; k < 4; ++k) {
      const Cell n{c.row + dr[k], c.col + dc[k]};
      if (n.row < 0 || n.row >= height_ || n.col < 0 || n.col >= width_) continue;
      const auto idx = static_cast<std::size_t>(n.row * width_ + n.col);
      if (blocked[idx] || seen[idx]) continue;
      seen[idx] = 1;
      frontier.push(n);
    }
  }
  return false;
}

Frame HazardGrid::reset(std::uint64_t seed) {
  Rng rng(seed);
  begin_episode();
  const auto cells = static_cast<std::size_t>(height_ * width_);
  auto to_cell = [&](std::size_t i) {
    return Cell{static_cast<int>(i) / width_, static_cast<int>(i) % width_};
  };
  do {
    do {
      agent_ = to_cell(uniform_index(rng, cells));
    } while (agent_ == goal_);
    hazards_.clear();
    while (hazards_.size() < hazard_count_) {
      const Cell h = to_cell(uniform_index(rng, cells));
      if (h == goal_ || h == agent_) continue;
      if (std::find(hazards_.begin(), hazards_.end(), h) != hazards_.end()) continue;
      hazards_.push_back(h);
    }
  } while (!goal_reachable());
  return render();
}

double HazardGrid::tick(std::size_t action, bool& terminal) {
  constexpr int dr[] = {-1, 1, 0, 0};
  constexpr int dc[] = {0, 0, -1, 1};
  agent_.row = std::clamp(agent_.row + dr[action], 0, height_ - 1);
  agent_.col = std::clamp(agent_.col + dc[action], 0, width_ - 1);
  if (agent_ == goal_) {
    terminal = true;
    return 1.0;
  }
  if (std::find(hazards_.begin(), hazards_.end(), agent_) != hazards_.end()) {
    terminal = true;
    return -1.0;
  }
  return 0.0;
}

Frame HazardGrid::render() const {
  Tensor grid({static_cast<std::size_t>(height_), static_cast<std::size_t>(width_)},
              luminance::background);
  auto put = [&](Cell c, double v) {
    grid[static_cast<std::size_t>(c.row * width_ + c.col)] = v;
  };
  for (const auto& h : hazards_) put(h, luminance::hazard);
  put(goal_, luminance::goal);
  put(agent_, luminance::agent);
  return {std::move(grid)};
}

// ---------------------------------------------------------------------------

Bandit::Bandit(std::vector<double> rewards) : TickEnvironment(1), rewards_(std::move(rewards)) {
  if (rewards_.size() < 2) throw ContractError("bandit needs at least two arms");
}

Frame Bandit::reset(std::uint64_t) {
  begin_episode();
  return render();
}

double Bandit::min_return() const { return *std::min_element(rewards_.begin(), rewards_.end()); }
double Bandit::max_return() const { return *std::max_element(rewards_.begin(), rewards_.end()); }

double Bandit::tick(std::size_t action, bool& terminal) {
  terminal = true;
  return rewards_[action];
}

Frame Bandit::render() const { return {Tensor({1, 1}, 1.0)}; }

// ---------------------------------------------------------------------------

FrameSkip::FrameSkip(std::unique_ptr<Environment> inner, std::size_t skip)
    : inner_(std::move(inner)), skip_(skip) {
  if (skip_ < 1) throw ContractError("frame skip must be >= 1");
}

StepResult FrameSkip::step(std::size_t action) {
  StepResult out = inner_->step(action);
  for (std::size_t i = 1; i < skip_ && !out.done; ++i) {
    StepResult next = inner_->step(action);
    next.reward += out.reward;
    out = std::move(next);
  }
  return out;
}

std::unique_ptr<Environment> make_env(const EnvConfig& config) {
  config.validate();
  std::unique_ptr<Environment> env;
  if (config.name == "minipong") {
    env = std::make_unique<MiniPong>(config);
  } else {
    env = std::make_unique<HazardGrid>(config);
  }
  if (config.frame_skip > 1) env = std::make_unique<FrameSkip>(std::move(env), config.frame_skip);
  return env;
}

EnvFactory env_factory(const EnvConfig& config) {
  config.validate();
  return [config] { return make_env(config); };
}

// ---------------------------------------------------------------------------

Observation stack_frames(std::span<const Frame> history, std::size_t depth) {
  if (history.empty()) throw ContractError("stack_frames needs at least one frame");
  if (depth < 1) throw ContractError("stack depth must be >= 1");
  const Shape& fs = history.front().grid.shape();
  const std::size_t plane = shape_size(fs);
  Tensor out({depth, fs.at(0), fs.at(1)});
  const std::size_t have = std::min(history.size(), depth);
  const std::size_t first = history.size() - have;
  for (std::size_t slot = 0; slot < depth; ++slot) {
    // Slots before the available frames repeat the earliest one.
    const std::size_t pad = depth - have;
    const std::size_t src = first + (slot < pad ? 0 : slot - pad);
    const Frame& f = history[src];
    if (f.grid.shape() != fs) throw DimensionError("frames in a stack must share a shape");
    std::copy(f.grid.data().begin(), f.grid.data().end(), out.data().begin() + slot * plane);
  }
  return {std::move(out)};
}

FrameStack::FrameStack(std::size_t depth) : depth_(depth) {
  if (depth_ < 1) throw ContractError("stack depth must be >= 1");
}

void FrameStack::reset(const Frame& first) {
  history_.clear();
  history_.push_back(first);
}

void FrameStack::push(const Frame& frame) {
  history_.push_back(frame);
  while (history_.size() > depth_) history_.pop_front();
}

Observation FrameStack::observation() const {
  std::vector<Frame> frames(history_.begin(), history_.end());
  return stack_frames(frames, depth_);
}

}  // namespace advrl
