#include "vinlab/evaluator.hpp"

#include <cstdio>
#include <memory>
#include <sstream>

#include "vinlab/models.hpp"
#include "vinlab/parallel.hpp"

namespace vinlab {

namespace {

struct NetworkState {
  explicit NetworkState(std::shared_ptr<const ModelWeights> w) : weights(std::move(w)), params(tape, weights->tensors, false) {}

  std::shared_ptr<const ModelWeights> weights;
  Tape<float> tape;
  BoundParams<float> params;
  Var plan;
};

struct DomainResult {
  std::size_t errors = 0;
  std::size_t samples = 0;
  std::size_t rollouts = 0;
  std::size_t successes = 0;
  double diff_sum = 0.0;
};

DomainResult evaluate_domain(const PolicyFactory& factory, const Domain& domain, int step_cap, bool rollouts) {
  DomainResult r;
  const MapPolicy policy = factory(domain.map);
  const ShortestPaths sp = rollouts ? shortest_paths(domain.map) : ShortestPaths{};
  for (const Trajectory& t : domain.trajectories) {
    Cell s = t.start;
    for (Action label : t.actions) {
      if (predict_action(policy(s)) != label) ++r.errors;
      ++r.samples;
      s = moved(s, label);
    }
    if (!rollouts) continue;
    const Rollout ro = rollout_greedy(policy, domain.map, t.start, step_cap);
    ++r.rollouts;
    if (ro.success) {
      ++r.successes;
      const Trajectory optimal = sample_trajectory(domain.map, t.start, sp.policy);
      r.diff_sum += trajectory_cost(ro.trajectory) - trajectory_cost(optimal);
    }
  }
  return r;
}

std::vector<DomainResult> evaluate_all(const PolicyFactory& policy, const Dataset& test, int step_cap, int threads,
                                       bool rollouts) {
  std::vector<DomainResult> results(test.domains.size());
  parallel_for(test.domains.size(), threads,
               [&](std::size_t d) { results[d] = evaluate_domain(policy, test.domains[d], step_cap, rollouts); });
  return results;
}

}  // namespace

PolicyFactory network_policy(const ModelWeights& weights) {
  auto shared = std::make_shared<const ModelWeights>(weights);
  return [shared](const GridMap& map) -> MapPolicy {
    if (map.rows != shared->config.rows || map.cols != shared->config.cols) {
      throw std::invalid_argument("map is " + std::to_string(map.rows) + "x" + std::to_string(map.cols) +
                                  " but the weights were built for " + std::to_string(shared->config.rows) + "x" +
                                  std::to_string(shared->config.cols));
    }
    auto state = std::make_shared<NetworkState>(shared);
    state->plan = policy_plan(state->tape, state->params, shared->family, shared->config, map);
    return [state, map](Cell s) {
      const Var logits =
          policy_logits(state->tape, state->params, state->weights->family, state->weights->config, map, state->plan, s);
      const Tensor<float>& v = state->tape.value(logits);
      Logits out{};
      for (int a = 0; a < kNumActions; ++a) out[a] = v[a];
      return out;
    };
  };
}

PolicyFactory expert_policy() {
  return [](const GridMap& map) -> MapPolicy {
    auto sp = std::make_shared<ShortestPaths>(shortest_paths(map));
    return [sp, map](Cell s) {
      Logits out{};
      if (map.in_bounds(s)) {
        const int a = sp->policy[map.index(s)];
        if (a != kNoAction) out[a] = 1.0;
      }
      return out;
    };
  };
}

Action predict_action(const Logits& logits) {
  int best = 0;
  for (int a = 1; a < kNumActions; ++a) {
    if (logits[a] > logits[best]) best = a;
  }
  return static_cast<Action>(best);
}

Rollout rollout_greedy(const MapPolicy& policy, const GridMap& map, Cell start, int step_cap) {
  if (!map.is_free(start)) throw GridError("rollout start is not a free cell");
  Rollout r;
  r.trajectory.start = start;
  Cell s = start;
  if (s == map.goal) {
    r.success = true;
    return r;
  }
  for (int step = 0; step < step_cap; ++step) {
    const Action a = predict_action(policy(s));
    r.trajectory.actions.push_back(a);
    const Cell next = moved(s, a);
    if (!map.in_bounds(next)) continue;
    if (map.blocked(next)) return r;
    s = next;
    if (s == map.goal) {
      r.success = true;
      return r;
    }
  }
  return r;
}

void to_json(nlohmann::json& j, const Metrics& m) {
  j = nlohmann::json{{"prediction_loss", m.prediction_loss},
                     {"success_rate", m.success_rate},
                     {"traj_diff", m.traj_diff},
                     {"samples", m.samples},
                     {"rollouts", m.rollouts},
                     {"successes", m.successes}};
}

int default_step_cap(int rows, int cols) { return 4 * (rows + cols); }

Metrics evaluate(const PolicyFactory& policy, const Dataset& test, int step_cap, int threads) {
  if (step_cap <= 0) step_cap = default_step_cap(test.rows, test.cols);
  Metrics m;
  std::size_t errors = 0;
  double diff_sum = 0.0;
  for (const DomainResult& r : evaluate_all(policy, test, step_cap, threads, true)) {
    errors += r.errors;
    m.samples += r.samples;
    m.rollouts += r.rollouts;
    m.successes += r.successes;
    diff_sum += r.diff_sum;
  }
  if (m.samples > 0) m.prediction_loss = static_cast<double>(errors) / static_cast<double>(m.samples);
  if (m.rollouts > 0) m.success_rate = static_cast<double>(m.successes) / static_cast<double>(m.rollouts);
  if (m.successes > 0) m.traj_diff = diff_sum / static_cast<double>(m.successes);
  return m;
}

Metrics evaluate(const ModelWeights& weights, const Dataset& test, int step_cap, int threads) {
  return evaluate(network_policy(weights), test, step_cap, threads);
}

double prediction_loss(const PolicyFactory& policy, const Dataset& test, int threads) {
  std::size_t errors = 0, samples = 0;
  for (const DomainResult& r : evaluate_all(policy, test, 0, threads, false)) {
    errors += r.errors;
    samples += r.samples;
  }
  return samples > 0 ? static_cast<double>(errors) / static_cast<double>(samples) : 0.0;
}

std::string metrics_table(const std::vector<std::pair<std::string, Metrics>>& rows) {
  std::size_t width = 5;
  for (const auto& [name, m] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %15s  %12s  %11s  %8s\n", static_cast<int>(width), "model",
                "prediction loss", "success rate", "traj. diff.", "rollouts");
  out << line;
  for (const auto& [name, m] : rows) {
    std::snprintf(line, sizeof line, "%-*s  %15.4f  %12.4f  %11.4f  %8zu\n", static_cast<int>(width), name.c_str(),
                  m.prediction_loss, m.success_rate, m.traj_diff, m.rollouts);
    out << line;
  }
  return out.str();
}

}  // namespace vinlab
