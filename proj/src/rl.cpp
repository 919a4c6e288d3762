#include "vinlab/rl.hpp"

#include <chrono>
#include <cmath>

#include "vinlab/dataset.hpp"
#include "vinlab/models.hpp"
#include "vinlab/ops.hpp"
#include "vinlab/parallel.hpp"

namespace vinlab {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kPoolStream = 0x504F4F4C;     // "POOL"
constexpr std::uint64_t kEpisodeStream = 0x45504953;  // "EPIS"
constexpr std::uint64_t kTestStream = 0x54455354;     // "TEST"
constexpr int kMapTries = 10000;

using Clock = std::chrono::steady_clock;

struct PoolMap {
  GridMap map;
  std::vector<int> steps;
};

Action sample_action(const Logits& logits, Rng& rng) {
  const Tensor<double> p = softmax<double>(std::span<const double>(logits.data(), logits.size()));
  const double u = rng.uniform();
  double acc = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    acc += p[a];
    if (u < acc) return static_cast<Action>(a);
  }
  // Rounding left u above the total; take the last action with mass.
  for (int a = kNumActions - 1; a > 0; --a) {
    if (p[a] > 0.0) return static_cast<Action>(a);
  }
  return Action::N;
}

}  // namespace

void RLConfig::validate() const {
  if (rows < 2 || cols < 2) throw std::invalid_argument("rl: grid must be at least 2x2");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("rl: gamma must lie in (0, 1)");
  if (episodes_per_iteration < 1) throw std::invalid_argument("rl: episodes per iteration must be >= 1");
  if (iterations < 0) throw std::invalid_argument("rl: iterations must be >= 0");
  if (max_steps != 0 && max_steps < 2 * (rows + cols)) {
    throw std::invalid_argument("rl: max steps must be >= 2 * (rows + cols)");
  }
  if (!(optim.lr > 0.0)) throw std::invalid_argument("rl: learning rate must be positive");
  if (train_maps < 1 || test_maps < 1 || test_starts < 1) throw std::invalid_argument("rl: map counts must be positive");
  if (threads < 1) throw std::invalid_argument("rl: threads must be >= 1");
  resolved_model().validate();
}

VinConfig RLConfig::resolved_model() const {
  if (model.rows == 0) return default_config(family, rows, cols);
  if (model.rows != rows || model.cols != cols) throw std::invalid_argument("rl: model size differs from grid size");
  return model;
}

int RLConfig::resolved_max_steps() const { return max_steps > 0 ? max_steps : 4 * (rows + cols); }

double curriculum_threshold(int n) { return 1.0 - static_cast<double>(n) / 35.0; }

bool CurriculumState::record(int iteration, double average_return) {
  average_returns.push_back(average_return);
  if (!(average_return > curriculum_threshold(difficulty))) return false;
  advancements.push_back({iteration, difficulty, difficulty + 1, average_return});
  ++difficulty;
  return true;
}

Episode rollout_episode(const MapPolicy& policy, const GridMap& map, Cell start, Rng& rng, int max_steps,
                        double gamma) {
  if (!map.is_free(start)) throw GridError("episode start is not a free cell");
  Episode ep;
  Cell s = start;
  double discount = 1.0;
  for (int t = 0; t < max_steps && s != map.goal; ++t) {
    const Action a = sample_action(policy(s), rng);
    const StepResult r = env_step(map, s, a);
    ep.steps.push_back({s, a, r.reward});
    ep.discounted_return += discount * r.reward;
    discount *= gamma;
    s = r.next;
    if (r.done) break;
  }
  ep.reached_goal = s == map.goal;
  return ep;
}

std::vector<double> returns_to_go(const Episode& episode, double gamma) {
  std::vector<double> g(episode.steps.size());
  double acc = 0.0;
  for (std::size_t t = episode.steps.size(); t-- > 0;) {
    acc = episode.steps[t].reward + gamma * acc;
    g[t] = acc;
  }
  return g;
}

PolicyGradient policy_gradient(const ModelWeights& weights, const std::vector<EpisodeOnMap>& batch, double gamma,
                               Baseline baseline, int threads) {
  if (batch.empty()) throw std::invalid_argument("policy gradient needs at least one episode");
  std::vector<std::vector<double>> returns;
  PolicyGradient out;
  double sum = 0.0;
  for (const EpisodeOnMap& e : batch) {
    returns.push_back(returns_to_go(e.episode, gamma));
    for (double g : returns.back()) sum += g;
    out.timesteps += e.episode.steps.size();
  }
  for (const Tensor<float>& t : weights.tensors.tensors()) out.grads.push_back(Tensor<float>::zeros(t.shape()));
  if (out.timesteps == 0) return out;
  if (baseline == Baseline::mean_return) out.baseline = sum / static_cast<double>(out.timesteps);

  const double inv_t = 1.0 / static_cast<double>(out.timesteps);
  std::vector<std::vector<Tensor<float>>> per_episode(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t e) {
    const Episode& ep = batch[e].episode;
    if (ep.steps.empty()) return;
    const GridMap& map = *batch[e].map;
    Tape<float> tape;
    const BoundParams<float> p(tape, weights.tensors, true);
    const Var plan = policy_plan(tape, p, weights.family, weights.config, map);
    std::vector<Var> ce;
    std::vector<float> coef;
    for (std::size_t t = 0; t < ep.steps.size(); ++t) {
      const Var logits = policy_logits(tape, p, weights.family, weights.config, map, plan, ep.steps[t].state);
      ce.push_back(softmax_cross_entropy(tape, logits, static_cast<int>(ep.steps[t].action)).loss);
      coef.push_back(static_cast<float>((returns[e][t] - out.baseline) * inv_t));
    }
    tape.backward(weighted_sum(tape, std::span<const Var>(ce), std::span<const float>(coef)));
    for (Var v : p.vars()) per_episode[e].push_back(tape.grad(v));
  });
  for (const auto& grads : per_episode) {
    for (std::size_t k = 0; k < grads.size(); ++k) {
      float* dst = out.grads[k].data();
      const float* src = grads[k].data();
      for (std::size_t i = 0; i < grads[k].size(); ++i) dst[i] += src[i];
    }
  }
  return out;
}

void policy_gradient_update(ModelWeights& weights, RmsPropState<float>& state, const std::vector<EpisodeOnMap>& batch,
                            double gamma, Baseline baseline, const RmsPropConfig& optim, int threads) {
  const PolicyGradient pg = policy_gradient(weights, batch, gamma, baseline, threads);
  std::vector<Tensor<float>*> handles;
  for (Tensor<float>& t : weights.tensors.tensors()) handles.push_back(&t);
  rmsprop_update<float>(handles, pg.grads, state, optim);
}

void to_json(nlohmann::json& j, const IterationLog& l) {
  j = nlohmann::json{{"iteration", l.iteration},
                     {"difficulty", l.difficulty},
                     {"average_return", l.average_return},
                     {"goal_fraction", l.goal_fraction},
                     {"seconds", l.seconds}};
}

void to_json(nlohmann::json& j, const Advancement& a) {
  j = nlohmann::json{
      {"iteration", a.iteration}, {"from", a.from}, {"to", a.to}, {"average_return", a.average_return}};
}

void to_json(nlohmann::json& j, const RLResult& r) {
  j = nlohmann::json{{"algorithm", "REINFORCE with a mean-return baseline, RMSProp steps (TRPO substitute)"},
                     {"model", family_name(r.weights.family)},
                     {"config", r.weights.config},
                     {"final_difficulty", r.curriculum.difficulty},
                     {"max_difficulty", r.max_difficulty},
                     {"advancements", r.curriculum.advancements},
                     {"iterations", r.log},
                     {"test", r.test},
                     {"wall_seconds", r.wall_seconds}};
}

RLResult curriculum_train(const RLConfig& config) {
  config.validate();
  const auto t0 = Clock::now();
  const VinConfig model = config.resolved_model();
  const int max_steps = config.resolved_max_steps();

  std::vector<PoolMap> pool;
  pool.reserve(static_cast<std::size_t>(config.train_maps));
  int deepest = 0;
  for (int k = 0; k < config.train_maps; ++k) {
    Rng rng(mix_seed(mix_seed(config.seed, kPoolStream), static_cast<std::uint64_t>(k)));
    PoolMap pm{generate_map(config.rows, config.cols, config.obstacle_fraction, rng), {}};
    pm.steps = step_distances(pm.map);
    for (int s : pm.steps) deepest = std::max(deepest, s);
    pool.push_back(std::move(pm));
  }

  RLResult result;
  result.max_difficulty = config.max_difficulty > 0 ? config.max_difficulty : deepest;
  if (config.warm_start) {
    result.weights = *config.warm_start;
    if (result.weights.config.rows != config.rows || result.weights.config.cols != config.cols) {
      throw std::invalid_argument("rl: warm-start weights were built for a different grid size");
    }
  } else {
    result.weights = init_weights(config.family, model, mix_seed(config.seed, kInitStream));
  }
  check_weights(result.weights);

  RmsPropState<float> optim_state;
  const std::size_t episodes = static_cast<std::size_t>(config.episodes_per_iteration);
  for (int it = 0; it < config.iterations; ++it) {
    if (result.curriculum.difficulty > result.max_difficulty) break;
    const auto ti = Clock::now();
    const int n = result.curriculum.difficulty;
    const PolicyFactory factory = network_policy(result.weights);
    std::vector<EpisodeOnMap> batch(episodes);
    parallel_for(episodes, config.threads, [&](std::size_t e) {
      Rng rng(mix_seed(mix_seed(config.seed, kEpisodeStream), static_cast<std::uint64_t>(it) * episodes + e));
      for (int attempt = 0; attempt < kMapTries; ++attempt) {
        const PoolMap& pm = pool[rng.below(pool.size())];
        std::vector<std::size_t> starts;
        for (std::size_t c = 0; c < pm.steps.size(); ++c) {
          if (pm.steps[c] == n) starts.push_back(c);
        }
        if (starts.empty()) continue;
        const Cell start = pm.map.cell(starts[rng.below(starts.size())]);
        batch[e] = {&pm.map, rollout_episode(factory(pm.map), pm.map, start, rng, max_steps, config.gamma)};
        return;
      }
      throw GridError("rl: no map in the pool has a start at difficulty " + std::to_string(n));
    });

    IterationLog log;
    log.iteration = it;
    log.difficulty = n;
    for (const EpisodeOnMap& e : batch) {
      log.average_return += e.episode.discounted_return;
      log.goal_fraction += e.episode.reached_goal ? 1.0 : 0.0;
    }
    log.average_return /= static_cast<double>(episodes);
    log.goal_fraction /= static_cast<double>(episodes);

    policy_gradient_update(result.weights, optim_state, batch, config.gamma, config.baseline, config.optim,
                           config.threads);
    result.curriculum.record(it, log.average_return);
    log.seconds = std::chrono::duration<double>(Clock::now() - ti).count();
    result.log.push_back(log);
    if (config.on_iteration) config.on_iteration(log);
  }

  DatasetConfig test;
  test.domains = config.test_maps;
  test.trajectories = config.test_starts;
  test.rows = config.rows;
  test.cols = config.cols;
  test.obstacle_fraction = config.obstacle_fraction;
  test.seed = mix_seed(config.seed, kTestStream);
  result.test = evaluate(result.weights, build_dataset(test), max_steps, config.threads);
  result.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

}  // namespace vinlab
