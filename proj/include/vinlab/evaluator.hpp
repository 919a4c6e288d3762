#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "vinlab/dataset.hpp"
#include "vinlab/gridworld.hpp"
#include "vinlab/weights.hpp"

namespace vinlab {

using Logits = std::array<double, kNumActions>;

/// Action scores of one policy on one fixed map.
using MapPolicy = std::function<Logits(Cell)>;
/// Builds a MapPolicy for a map; per-map work (the VI forward) happens here once.
using PolicyFactory = std::function<MapPolicy(const GridMap&)>;

/// Network policy for any model family; evaluation runs at 32-bit.
PolicyFactory network_policy(const ModelWeights& weights);

/// Shortest-path expert as a policy: one-hot logits on its action.
PolicyFactory expert_policy();

/// Lowest-index argmax.
Action predict_action(const Logits& logits);

struct Rollout {
  Trajectory trajectory;
  bool success = false;
};

/// Greedy rollout. Off-grid moves leave the agent in place; entering an
/// obstacle or running out of steps fails. start == goal succeeds at once.
Rollout rollout_greedy(const MapPolicy& policy, const GridMap& map, Cell start, int step_cap);

struct Metrics {
  double prediction_loss = 0.0;  // mean 0-1 error against the stored labels
  double success_rate = 0.0;
  double traj_diff = 0.0;        // mean extra path cost of successful rollouts
  std::size_t samples = 0;
  std::size_t rollouts = 0;
  std::size_t successes = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

void to_json(nlohmann::json& j, const Metrics& m);

/// Default rollout cap: 4 * (rows + cols).
int default_step_cap(int rows, int cols);

/// Prediction loss over every stored (state, label) pair and one greedy
/// rollout per stored trajectory start. step_cap <= 0 selects the default.
Metrics evaluate(const PolicyFactory& policy, const Dataset& test, int step_cap = 0, int threads = 1);
Metrics evaluate(const ModelWeights& weights, const Dataset& test, int step_cap = 0, int threads = 1);

/// Prediction loss only (no rollouts).
double prediction_loss(const PolicyFactory& policy, const Dataset& test, int threads = 1);

/// Aligned plain-text table, one row per named result.
std::string metrics_table(const std::vector<std::pair<std::string, Metrics>>& rows);

}  // namespace vinlab
