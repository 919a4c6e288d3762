#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "vinlab/models.hpp"
#include "vinlab/rl.hpp"

using namespace vinlab;

namespace {

GridMap open3() {
  GridMap g(3, 3);
  g.goal = {1, 1};
  return g;
}

MapPolicy constant_policy(Logits l) {
  return [l](Cell) { return l; };
}

VinConfig tiny_model(int size) {
  VinConfig c = default_config(ModelFamily::vin, size, size);
  c.k = 4;
  c.fr_hidden = 8;
  return c;
}

nlohmann::json without_timing(nlohmann::json j) {
  j.erase("wall_seconds");
  for (auto& it : j["iterations"]) it.erase("seconds");
  return j;
}

}  // namespace

TEST_SUITE("curriculum") {
  TEST_CASE("threshold is 1 - n/35") {
    CHECK(curriculum_threshold(1) == doctest::Approx(1.0 - 1.0 / 35.0).epsilon(1e-15));
    CHECK(curriculum_threshold(7) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(curriculum_threshold(35) == 0.0);
  }

  TEST_CASE("record advances only strictly above the threshold") {
    CurriculumState s;
    CHECK(s.record(0, 0.98));
    CHECK(s.difficulty == 2);
    REQUIRE(s.advancements.size() == 1);
    CHECK(s.advancements[0].iteration == 0);
    CHECK(s.advancements[0].from == 1);
    CHECK(s.advancements[0].to == 2);
    CHECK(s.advancements[0].average_return == 0.98);
    CHECK_FALSE(s.record(1, 0.94));  // threshold at n=2 is 0.9428...
    CHECK(s.difficulty == 2);
    CHECK_FALSE(s.record(2, curriculum_threshold(2)));
    CHECK(s.record(3, 0.95));
    CHECK(s.difficulty == 3);
    CHECK(s.average_returns == std::vector<double>{0.98, 0.94, curriculum_threshold(2), 0.95});
  }

  TEST_CASE("synthetic return sequence advances monotonically, one level at a time") {
    // A slowly improving learner whose return drops after each advancement.
    std::vector<double> returns;
    double r = 0.5;
    for (int t = 0; t < 400; ++t) {
      returns.push_back(r);
      r = std::min(0.999, r + 0.01);
      if (t % 37 == 36) r -= 0.3;
    }
    CurriculumState s;
    int expected = 1;
    for (int t = 0; t < static_cast<int>(returns.size()); ++t) {
      const int before = s.difficulty;
      const bool advanced = s.record(t, returns[t]);
      const bool should = returns[t] > 1.0 - expected / 35.0;
      CHECK(advanced == should);
      if (should) ++expected;
      CHECK(s.difficulty == expected);
      CHECK(s.difficulty >= before);
      CHECK(s.difficulty - before <= 1);
    }
    CHECK(s.difficulty > 5);
    for (std::size_t k = 1; k < s.advancements.size(); ++k) {
      CHECK(s.advancements[k].from == s.advancements[k - 1].to);
      CHECK(s.advancements[k].iteration > s.advancements[k - 1].iteration);
    }
  }
}

TEST_SUITE("rl") {
  TEST_CASE("a one-step optimal episode returns exactly 1") {
    const GridMap g = open3();
    Logits l{};
    l[static_cast<int>(Action::SE)] = 1000.0;
    Rng rng(1);
    const Episode e = rollout_episode(constant_policy(l), g, {0, 0}, rng, 10, 0.99);
    REQUIRE(e.steps.size() == 1);
    CHECK(e.reached_goal);
    CHECK(e.steps[0].action == Action::SE);
    CHECK(e.discounted_return == 1.0);
    CHECK(returns_to_go(e, 0.99) == std::vector<double>{1.0});
  }

  TEST_CASE("uniform policy on an open 3x3 with a central goal") {
    // Every non-goal cell has exactly one action into the goal, so the
    // episode length is geometric with p = 1/8.
    const GridMap g = open3();
    const MapPolicy uniform = constant_policy(Logits{});
    Rng rng(2);
    const int n = 4000;
    int within = 0;
    for (int e = 0; e < n; ++e) {
      const std::size_t pick = rng.below(8);
      const Cell start = g.cell(pick < 4 ? pick : pick + 1);
      const Episode ep = rollout_episode(uniform, g, start, rng, 200, 0.99);
      REQUIRE(ep.reached_goal);
      within += ep.steps.size() <= 24;
      for (std::size_t t = 0; t + 1 < ep.steps.size(); ++t) CHECK(ep.steps[t].reward == -0.01);
    }
    const double p = 1.0 - std::pow(7.0 / 8.0, 24);
    const double rate = static_cast<double>(within) / n;
    CHECK(std::abs(rate - p) < 3.0 * std::sqrt(p * (1 - p) / n));
  }

  TEST_CASE("discounted return equals the re-summed rewards and the first reward-to-go") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      const GridMap g = generate_map(6, 6, 0.3, 500 + trial);
      Logits l;
      for (double& v : l) v = rng.uniform(-2, 2);
      Cell start = g.goal;
      while (start == g.goal || !g.is_free(start)) start = g.cell(rng.below(g.cells()));
      const double gamma = 0.9;
      const Episode ep = rollout_episode(constant_policy(l), g, start, rng, 30, gamma);
      REQUIRE_FALSE(ep.steps.empty());
      CHECK(ep.steps.size() <= 30);
      CHECK(ep.steps[0].state == start);
      double sum = 0, disc = 1;
      for (const EpisodeStep& s : ep.steps) {
        sum += disc * s.reward;
        disc *= gamma;
      }
      CHECK(std::abs(sum - ep.discounted_return) < 1e-12);
      const std::vector<double> g2 = returns_to_go(ep, gamma);
      CHECK(std::abs(g2[0] - ep.discounted_return) < 1e-12);
      for (std::size_t t = 0; t + 1 < g2.size(); ++t)
        CHECK(std::abs(g2[t] - (ep.steps[t].reward + gamma * g2[t + 1])) < 1e-12);
      // Only the last step may terminate.
      for (std::size_t t = 0; t + 1 < ep.steps.size(); ++t) CHECK(ep.steps[t].reward == -0.01);
      const double last = ep.steps.back().reward;
      CHECK((last == 1.0) == ep.reached_goal);
      if (ep.steps.size() < 30) CHECK((last == 1.0 || last == -1.0));
    }
  }

  TEST_CASE("rollout rejects a blocked start") {
    GridMap g = open3();
    g.obstacles[0] = 1;
    Rng rng(4);
    CHECK_THROWS_AS(rollout_episode(constant_policy(Logits{}), g, {0, 0}, rng, 10, 0.99), GridError);
    CHECK_THROWS_AS(rollout_episode(constant_policy(Logits{}), g, {5, 0}, rng, 10, 0.99), GridError);
  }

  TEST_CASE("zero advantage gives a zero gradient and leaves the weights unchanged") {
    const GridMap g = open3();
    const ModelWeights w0 = init_weights(ModelFamily::vin, tiny_model(3), 5);
    Logits l{};
    l[static_cast<int>(Action::S)] = 1000.0;
    Rng rng(6);
    std::vector<EpisodeOnMap> batch;
    for (int e = 0; e < 3; ++e) batch.push_back({&g, rollout_episode(constant_policy(l), g, {0, 1}, rng, 5, 0.99)});
    const PolicyGradient pg = policy_gradient(w0, batch, 0.99, Baseline::mean_return);
    CHECK(pg.baseline == 1.0);
    CHECK(pg.timesteps == 3);
    for (const Tensor<float>& t : pg.grads)
      for (float v : t.values()) CHECK(v == 0.0f);
    ModelWeights w = w0;
    RmsPropState<float> st;
    policy_gradient_update(w, st, batch, 0.99, Baseline::mean_return, {0.01, 0.9, 1e-6});
    CHECK(w == w0);
  }

  TEST_CASE("policy head bias gradient is A * (p - onehot) / T") {
    const GridMap g = generate_map(5, 5, 0.2, 7);
    ModelWeights w = init_weights(ModelFamily::vin, tiny_model(5), 8);
    Rng rng(9);
    for (float& v : w.tensors.at("policy_b").values()) v = static_cast<float>(rng.uniform(-1, 1));
    Cell s = g.goal;
    while (s == g.goal || !g.is_free(s)) s = g.cell(rng.below(g.cells()));
    const Action a = Action::E;
    const StepResult r = env_step(g, s, a);
    Episode ep;
    ep.steps.push_back({s, a, r.reward});
    ep.discounted_return = r.reward;
    const PolicyGradient pg = policy_gradient(w, {{&g, ep}}, 0.99, Baseline::none);
    const Logits logits = network_policy(w)(g)(s);
    double z = 0, mx = *std::max_element(logits.begin(), logits.end());
    for (double v : logits) z += std::exp(v - mx);
    const std::size_t b = *w.tensors.find("policy_b");
    for (int k = 0; k < kNumActions; ++k) {
      const double p = std::exp(logits[k] - mx) / z;
      const double expected = r.reward * (p - (k == static_cast<int>(a) ? 1.0 : 0.0));
      CHECK(std::abs(pg.grads[b][k] - expected) < 1e-5);
    }
  }

  TEST_CASE("positive advantage makes the taken action more likely") {
    const GridMap g = open3();
    ModelWeights w = init_weights(ModelFamily::vin, tiny_model(3), 10);
    Episode ep;
    ep.steps.push_back({{0, 0}, Action::SE, 1.0});
    ep.discounted_return = 1.0;
    auto prob = [&](const ModelWeights& m) {
      const Logits l = network_policy(m)(g)({0, 0});
      double z = 0;
      for (double v : l) z += std::exp(v);
      return std::exp(l[static_cast<int>(Action::SE)]) / z;
    };
    const double before = prob(w);
    RmsPropState<float> st;
    policy_gradient_update(w, st, {{&g, ep}}, 0.99, Baseline::none, {0.001, 0.9, 1e-6});
    CHECK(prob(w) > before);
  }

  TEST_CASE("policy gradient rejects an empty batch") {
    const ModelWeights w = init_weights(ModelFamily::vin, tiny_model(3), 11);
    CHECK_THROWS_AS(policy_gradient(w, {}, 0.99, Baseline::mean_return), std::invalid_argument);
  }

  TEST_CASE("configuration validation") {
    RLConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.resolved_max_steps() == 64);
    CHECK(c.resolved_model() == default_config(ModelFamily::vin, 8, 8));
    auto bad = [](auto edit) {
      RLConfig r;
      edit(r);
      CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    };
    bad([](RLConfig& r) { r.rows = 1; });
    bad([](RLConfig& r) { r.gamma = 1.0; });
    bad([](RLConfig& r) { r.gamma = 0.0; });
    bad([](RLConfig& r) { r.max_steps = 31; });
    bad([](RLConfig& r) { r.optim.lr = 0.0; });
    bad([](RLConfig& r) { r.episodes_per_iteration = 0; });
    bad([](RLConfig& r) { r.threads = 0; });
    c.max_steps = 32;
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("tiny curriculum run is deterministic and logs every iteration") {
    RLConfig c;
    c.rows = c.cols = 5;
    c.model = tiny_model(5);
    c.iterations = 4;
    c.episodes_per_iteration = 6;
    c.train_maps = 12;
    c.test_maps = 6;
    c.test_starts = 2;
    c.seed = 12;
    int calls = 0;
    c.on_iteration = [&](const IterationLog&) { ++calls; };
    const RLResult a = curriculum_train(c);
    const RLResult b = curriculum_train(c);
    CHECK(calls == 8);
    REQUIRE(a.log.size() == 4);
    for (int t = 0; t < 4; ++t) {
      CHECK(a.log[t].iteration == t);
      CHECK(a.log[t].average_return == b.log[t].average_return);
      CHECK(a.log[t].goal_fraction >= 0.0);
      CHECK(a.log[t].goal_fraction <= 1.0);
    }
    CHECK(a.weights == b.weights);
    CHECK(a.test == b.test);
    CHECK(a.test.rollouts == 12);
    CHECK(a.max_difficulty >= 1);
    nlohmann::json ja = a, jb = b;
    CHECK(without_timing(ja) == without_timing(jb));
    for (const char* key : {"algorithm", "advancements", "iterations", "test", "wall_seconds"}) CHECK(ja.contains(key));
    c.seed = 13;
    c.on_iteration = nullptr;
    CHECK_FALSE(curriculum_train(c).weights == a.weights);
  }
}
