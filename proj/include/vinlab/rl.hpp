#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"

#include "vinlab/evaluator.hpp"
#include "vinlab/gridworld.hpp"
#include "vinlab/optim.hpp"
#include "vinlab/rng.hpp"
#include "vinlab/weights.hpp"

namespace vinlab {

// Curriculum policy-gradient training. The learner is REINFORCE with a
// baseline, standing in for a trust-region method.

enum class Baseline { none, mean_return };

struct IterationLog {
  int iteration = 0;  // 0-based
  int difficulty = 1;
  double average_return = 0.0;  // mean discounted return of the iteration's episodes
  double goal_fraction = 0.0;
  double seconds = 0.0;
};

struct RLConfig {
  int rows = 8;
  int cols = 8;
  ModelFamily family = ModelFamily::vin;
  /// Network shape; rows == 0 selects default_config(family, rows, cols).
  VinConfig model{0, 0};
  double gamma = 0.99;
  int episodes_per_iteration = 512;
  int max_steps = 0;  // 0 selects 4 * (rows + cols)
  int iterations = 500;
  RmsPropConfig optim{0.005, 0.9, 1e-6};
  Baseline baseline = Baseline::mean_return;
  std::uint64_t seed = 1;
  double obstacle_fraction = 0.3;
  int train_maps = 1000;
  int test_maps = 200;
  int test_starts = 7;
  int max_difficulty = 0;  // 0 selects the largest step distance in the map pool
  int threads = 1;
  std::optional<ModelWeights> warm_start;
  std::function<void(const IterationLog&)> on_iteration;

  void validate() const;
  VinConfig resolved_model() const;
  int resolved_max_steps() const;
};

/// Return a policy must beat to advance from difficulty n: 1 - n/35.
double curriculum_threshold(int n);

struct Advancement {
  int iteration = 0;
  int from = 1;
  int to = 2;
  double average_return = 0.0;
};

struct CurriculumState {
  int difficulty = 1;
  std::vector<double> average_returns;  // one per iteration
  std::vector<Advancement> advancements;

  /// Records an iteration; advances by one level when the return exceeds the
  /// threshold of the current level. Returns true on advancement.
  bool record(int iteration, double average_return);
};

struct EpisodeStep {
  Cell state;
  Action action = Action::N;
  double reward = 0.0;
};

struct Episode {
  std::vector<EpisodeStep> steps;
  bool reached_goal = false;
  double discounted_return = 0.0;
};

/// Samples actions from softmax(logits) until the goal, a hole or the cap.
Episode rollout_episode(const MapPolicy& policy, const GridMap& map, Cell start, Rng& rng, int max_steps,
                        double gamma);

/// Discounted reward-to-go G_t of every step.
std::vector<double> returns_to_go(const Episode& episode, double gamma);

struct EpisodeOnMap {
  const GridMap* map = nullptr;
  Episode episode;
};

struct PolicyGradient {
  std::vector<Tensor<float>> grads;  // gradient of sum_t A_t * CE_t / T
  double baseline = 0.0;
  std::size_t timesteps = 0;
};

/// Surrogate-loss gradient: A_t = G_t - b with b the mean G_t over every
/// timestep of the batch (zero for Baseline::none); loss = sum_t A_t * CE_t / T.
PolicyGradient policy_gradient(const ModelWeights& weights, const std::vector<EpisodeOnMap>& batch, double gamma,
                               Baseline baseline, int threads = 1);

/// policy_gradient followed by one RMSProp step.
void policy_gradient_update(ModelWeights& weights, RmsPropState<float>& state, const std::vector<EpisodeOnMap>& batch,
                            double gamma, Baseline baseline, const RmsPropConfig& optim, int threads = 1);

struct RLResult {
  ModelWeights weights;
  CurriculumState curriculum;
  std::vector<IterationLog> log;
  Metrics test;
  int max_difficulty = 0;
  double wall_seconds = 0.0;
};

void to_json(nlohmann::json& j, const IterationLog& l);
void to_json(nlohmann::json& j, const Advancement& a);
void to_json(nlohmann::json& j, const RLResult& r);

RLResult curriculum_train(const RLConfig& config);

}  // namespace vinlab
