#include "vinlab/gridworld.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <queue>

namespace vinlab {

namespace {

constexpr double kTieTolerance = 1e-9;

std::size_t count_reaching(const GridMap& map, Cell from) {
  std::vector<std::uint8_t> seen(map.cells(), 0);
  std::deque<Cell> queue{from};
  seen[map.index(from)] = 1;
  std::size_t count = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    ++count;
    for (int a = 0; a < kNumActions; ++a) {
      const Cell n = moved(c, static_cast<Action>(a));
      if (!map.is_free(n) || seen[map.index(n)]) continue;
      seen[map.index(n)] = 1;
      queue.push_back(n);
    }
  }
  return count;
}

}  // namespace

std::string action_name(Action a) {
  static constexpr const char* kNames[] = {"N", "NE", "E", "SE", "S", "SW", "W", "NW"};
  return kNames[static_cast<int>(a)];
}

void GridMap::validate() const {
  if (rows <= 0 || cols <= 0) throw GridError("grid extents must be positive");
  if (obstacles.size() != static_cast<std::size_t>(rows) * cols) throw GridError("obstacle mask size mismatch");
  if (!in_bounds(goal)) throw GridError("goal outside the grid");
  if (blocked(goal)) throw GridError("goal is an obstacle");
  if (count_reaching(*this, goal) < 2) throw GridError("no free cell can reach the goal");
}

GridMap generate_map(int rows, int cols, double obstacle_fraction, Rng& rng, int max_attempts) {
  if (rows <= 0 || cols <= 0) throw GridError("grid extents must be positive");
  if (!(obstacle_fraction >= 0.0 && obstacle_fraction < 0.5)) {
    throw GridError("obstacle fraction must lie in [0, 0.5)");
  }
  if (static_cast<long>(rows) * cols < 2) throw GridError("grid needs at least two cells");
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    GridMap map(rows, cols);
    std::vector<std::size_t> free_cells;
    for (std::size_t k = 0; k < map.cells(); ++k) {
      map.obstacles[k] = rng.bernoulli(obstacle_fraction) ? 1 : 0;
      if (!map.obstacles[k]) free_cells.push_back(k);
    }
    if (free_cells.size() < 2) continue;
    map.goal = map.cell(free_cells[rng.below(free_cells.size())]);
    if (count_reaching(map, map.goal) >= 2) return map;
  }
  throw GridError("no valid map after " + std::to_string(max_attempts) + " attempts");
}

GridMap generate_map(int rows, int cols, double obstacle_fraction, std::uint64_t seed) {
  Rng rng(seed);
  try {
    return generate_map(rows, cols, obstacle_fraction, rng);
  } catch (const GridError& e) {
    throw GridError(std::string(e.what()) + " (seed " + std::to_string(seed) + ")");
  }
}

ShortestPaths shortest_paths(const GridMap& map) {
  ShortestPaths out;
  out.dist.assign(map.cells(), kUnreachable);
  out.policy.assign(map.cells(), kNoAction);
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  out.dist[map.index(map.goal)] = 0.0;
  open.emplace(0.0, map.index(map.goal));
  while (!open.empty()) {
    const auto [d, idx] = open.top();
    open.pop();
    if (d > out.dist[idx]) continue;
    const Cell c = map.cell(idx);
    for (int a = 0; a < kNumActions; ++a) {
      const Action act = static_cast<Action>(a);
      const Cell n = moved(c, act);
      if (!map.is_free(n)) continue;
      const double nd = d + step_cost(act);
      const std::size_t nidx = map.index(n);
      if (nd < out.dist[nidx]) {
        out.dist[nidx] = nd;
        open.emplace(nd, nidx);
      }
    }
  }
  for (std::size_t idx = 0; idx < map.cells(); ++idx) {
    const Cell s = map.cell(idx);
    if (map.blocked(s) || s == map.goal || out.dist[idx] == kUnreachable) continue;
    double best = kUnreachable;
    for (int a = 0; a < kNumActions; ++a) {
      const Action act = static_cast<Action>(a);
      if (!map.legal(s, act)) continue;
      const double v = step_cost(act) + out.dist[map.index(moved(s, act))];
      if (v < best - kTieTolerance) {
        best = v;
        out.policy[idx] = a;
      }
    }
  }
  return out;
}

std::vector<int> step_distances(const GridMap& map) {
  std::vector<int> steps(map.cells(), -1);
  std::deque<Cell> queue{map.goal};
  steps[map.index(map.goal)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (int a = 0; a < kNumActions; ++a) {
      const Cell n = moved(c, static_cast<Action>(a));
      if (!map.is_free(n) || steps[map.index(n)] >= 0) continue;
      steps[map.index(n)] = steps[map.index(c)] + 1;
      queue.push_back(n);
    }
  }
  return steps;
}

Trajectory sample_trajectory(const GridMap& map, Cell start, const std::vector<int>& policy) {
  if (!map.is_free(start)) throw GridError("trajectory start is not a free cell");
  if (start == map.goal) throw GridError("trajectory start equals the goal");
  Trajectory t{start, {}};
  Cell s = start;
  const std::size_t cap = map.cells();
  while (s != map.goal) {
    const int a = policy.at(map.index(s));
    if (a == kNoAction) throw GridError("trajectory start cannot reach the goal");
    if (t.actions.size() >= cap) throw GridError("policy field does not lead to the goal");
    t.actions.push_back(static_cast<Action>(a));
    s = moved(s, static_cast<Action>(a));
    if (!map.is_free(s)) throw GridError("policy field leaves the free cells");
  }
  return t;
}

std::vector<Cell> trajectory_states(const Trajectory& t) {
  std::vector<Cell> states;
  states.reserve(t.actions.size());
  Cell s = t.start;
  for (Action a : t.actions) {
    states.push_back(s);
    s = moved(s, a);
  }
  return states;
}

double trajectory_cost(const Trajectory& t) {
  // Counting first makes equal move mixes give bit-identical costs.
  std::size_t diagonal = 0;
  for (Action a : t.actions) diagonal += is_diagonal(a);
  return static_cast<double>(t.actions.size() - diagonal) + kSqrt2 * static_cast<double>(diagonal);
}

void OracleSpec::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw GridError("discount must lie strictly inside (0, 1)");
}

std::vector<double> exact_value_iteration(const GridMap& map, const OracleSpec& spec, int iters,
                                          double initial_value) {
  spec.validate();
  if (iters < 1) throw GridError("value iteration needs at least one sweep");
  std::vector<double> v(map.cells(), initial_value);
  std::vector<double> next(map.cells());
  const std::size_t goal = map.index(map.goal);

  if (spec.model == ValueModel::episodic) {
    for (std::size_t idx = 0; idx < map.cells(); ++idx) {
      if (idx == goal || map.obstacles[idx]) v[idx] = 0.0;
    }
  }

  for (int k = 0; k < iters; ++k) {
    for (std::size_t idx = 0; idx < map.cells(); ++idx) {
      const Cell s = map.cell(idx);
      if (spec.model == ValueModel::episodic) {
        if (idx == goal || map.obstacles[idx]) {
          next[idx] = 0.0;
          continue;
        }
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < kNumActions; ++a) {
          const Cell t = moved(s, static_cast<Action>(a));
          double q;
          if (!map.in_bounds(t)) {
            q = spec.step_reward + spec.gamma * v[idx];
          } else if (map.blocked(t)) {
            q = spec.obstacle_reward + spec.gamma * v[idx];
          } else if (t == map.goal) {
            q = spec.goal_reward;
          } else {
            q = spec.step_reward + spec.gamma * v[map.index(t)];
          }
          best = std::max(best, q);
        }
        next[idx] = best;
      } else {
        const double r = idx == goal ? spec.goal_reward : (map.obstacles[idx] ? spec.obstacle_reward : spec.step_reward);
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < kNumActions; ++a) {
          const Cell t = moved(s, static_cast<Action>(a));
          best = std::max(best, map.in_bounds(t) ? v[map.index(t)] : 0.0);
        }
        next[idx] = r + spec.gamma * best;
      }
    }
    v.swap(next);
  }
  return v;
}

StepResult env_step(const GridMap& map, Cell state, Action action, const OracleSpec& rewards) {
  if (!map.in_bounds(state) || map.blocked(state)) throw GridError("env_step: agent is not on a free cell");
  if (state == map.goal) throw GridError("env_step: episode already ended at the goal");
  const Cell t = moved(state, action);
  if (!map.in_bounds(t)) return {state, rewards.step_reward, false};
  if (map.blocked(t)) return {t, rewards.obstacle_reward, true};
  if (t == map.goal) return {t, rewards.goal_reward, true};
  return {t, rewards.step_reward, false};
}

}  // namespace vinlab
