#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "vinlab/rng.hpp"

namespace vinlab {

struct Cell {
  int i = 0;
  int j = 0;
  auto operator<=>(const Cell&) const = default;
};

/// Eight compass moves in fixed order. Row index grows southwards.
enum class Action : std::uint8_t { N = 0, NE, E, SE, S, SW, W, NW };

inline constexpr int kNumActions = 8;

inline constexpr std::array<Cell, kNumActions> kActionOffsets{{
    {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1},
}};

inline constexpr double kSqrt2 = 1.4142135623730950488;

constexpr Cell offset(Action a) { return kActionOffsets[static_cast<int>(a)]; }
constexpr bool is_diagonal(Action a) { return static_cast<int>(a) % 2 == 1; }
inline double step_cost(Action a) { return is_diagonal(a) ? kSqrt2 : 1.0; }
constexpr Cell moved(Cell s, Action a) { return {s.i + offset(a).i, s.j + offset(a).j}; }

std::string action_name(Action a);

class GridError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One gridworld instance. Cells outside the grid act as walls.
struct GridMap {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> obstacles;  // rows*cols, 1 = obstacle
  Cell goal;

  GridMap() = default;
  GridMap(int m, int n) : rows(m), cols(n), obstacles(static_cast<std::size_t>(m) * n, 0) {}

  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.i) * cols + c.j; }
  Cell cell(std::size_t idx) const { return {static_cast<int>(idx / cols), static_cast<int>(idx % cols)}; }
  std::size_t cells() const { return obstacles.size(); }
  bool in_bounds(Cell c) const { return c.i >= 0 && c.j >= 0 && c.i < rows && c.j < cols; }
  bool blocked(Cell c) const { return obstacles[index(c)] != 0; }
  bool is_free(Cell c) const { return in_bounds(c) && !blocked(c); }
  /// A move is legal when it stays on the grid and lands on a free cell.
  bool legal(Cell s, Action a) const { return is_free(moved(s, a)); }

  /// Throws GridError unless the goal is a free cell reachable from another free cell.
  void validate() const;

  friend bool operator==(const GridMap&, const GridMap&) = default;
};

/// Independent Bernoulli obstacles on every cell, goal uniform over free
/// cells; maps where no other free cell reaches the goal are redrawn.
GridMap generate_map(int rows, int cols, double obstacle_fraction, Rng& rng, int max_attempts = 1000);
GridMap generate_map(int rows, int cols, double obstacle_fraction, std::uint64_t seed);

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();
inline constexpr int kNoAction = -1;

struct ShortestPaths {
  std::vector<double> dist;  // path cost to goal, kUnreachable if none
  std::vector<int> policy;   // optimal action index, kNoAction at goal/obstacles/unreachable
};

/// Dijkstra from the goal over 8-connected free cells (axis cost 1, diagonal
/// cost sqrt 2). The policy picks the lowest-index action minimising
/// step cost + successor distance.
ShortestPaths shortest_paths(const GridMap& map);

/// Fewest moves to the goal, -1 if unreachable (breadth-first search).
std::vector<int> step_distances(const GridMap& map);

struct Trajectory {
  Cell start;
  std::vector<Action> actions;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Follows `policy` from `start` to the goal.
Trajectory sample_trajectory(const GridMap& map, Cell start, const std::vector<int>& policy);

/// States visited before each action of `t` (same length as t.actions).
std::vector<Cell> trajectory_states(const Trajectory& t);

/// Path cost of a trajectory under the axis-1 / diagonal-sqrt2 metric.
double trajectory_cost(const Trajectory& t);

/// How a tabular value iteration interprets the map.
enum class ValueModel {
  /// Goal and holes terminate. Reward is paid on entering the next cell:
  /// goal_reward for the goal, obstacle_reward for bumping into an obstacle
  /// (agent stays), step_reward otherwise, including off-grid moves (agent stays).
  episodic,
  /// Reward R(s) is paid at the current cell (goal_reward at the goal,
  /// obstacle_reward on obstacles, step_reward elsewhere), nothing terminates
  /// and off-grid successors are worth 0. This is the planning problem a VI
  /// module with zero-padded 3x3 transition kernels computes.
  state_reward,
};

struct OracleSpec {
  double goal_reward = 1.0;
  double obstacle_reward = -1.0;
  double step_reward = -0.01;
  double gamma = 0.99;
  ValueModel model = ValueModel::episodic;

  void validate() const;
};

/// `iters` synchronous Bellman sweeps from V = initial_value on every cell.
std::vector<double> exact_value_iteration(const GridMap& map, const OracleSpec& spec, int iters,
                                          double initial_value = 0.0);

struct StepResult {
  Cell next;
  double reward = 0.0;
  bool done = false;
};

/// Deterministic environment transition. Off-grid moves keep the agent in
/// place; stepping on an obstacle ends the episode as a hole.
StepResult env_step(const GridMap& map, Cell state, Action action, const OracleSpec& rewards = {});

}  // namespace vinlab
