#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "vinlab/dataset.hpp"
#include "vinlab/evaluator.hpp"
#include "vinlab/models.hpp"
#include "vinlab/trainer.hpp"

using namespace vinlab;

namespace {

Dataset small_dataset(int domains, int traj, int size, std::uint64_t seed) {
  DatasetConfig c;
  c.domains = domains;
  c.trajectories = traj;
  c.rows = c.cols = size;
  c.seed = seed;
  return build_dataset(c);
}

TrainConfig small_config(ModelFamily family, int size) {
  TrainConfig c;
  c.family = family;
  c.model = default_config(family, size, size);
  c.model.fr_hidden = 16;
  c.model.k = std::min(c.model.k, 5);
  if (c.model.hierarchical) c.model.k_high = 2;
  c.epochs = 2;
  c.batch_size = 32;
  return c;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("memorises a single trajectory") {
    const Dataset ds = small_dataset(1, 1, 8, 3);
    TrainConfig c;
    c.model = default_config(ModelFamily::vin, 8, 8);
    c.epochs = 200;
    c.gradcheck = false;
    const TrainResult r = train(c, ds);
    REQUIRE(r.report.epochs.size() == 200);
    CHECK(r.report.epochs.back().train_error == 0.0);
    const Metrics m = evaluate(r.weights, ds);
    CHECK(m.prediction_loss == 0.0);
  }

  TEST_CASE("one epoch lowers the loss below its initial value for every family") {
    const Dataset ds = small_dataset(40, 7, 8, 4);
    for (ModelFamily f : {ModelFamily::vin, ModelFamily::vin_untied, ModelFamily::hvin, ModelFamily::cnn,
                          ModelFamily::fcn}) {
      TrainConfig c = small_config(f, 8);
      c.epochs = 1;
      c.gradcheck = false;
      const TrainResult r = train(c, ds);
      REQUIRE(r.report.initial_loss);
      const std::vector<Sample> samples = expand_samples(ds);
      const double after = mean_loss<float>(f, c.model, r.weights.tensors, ds, samples);
      CHECK(after < *r.report.initial_loss);
      CHECK(std::isfinite(r.report.epochs[0].train_loss));
    }
  }

  TEST_CASE("training is reproducible for a fixed seed") {
    const Dataset ds = small_dataset(20, 7, 8, 5);
    TrainConfig c = small_config(ModelFamily::vin, 8);
    const TrainResult a = train(c, ds);
    const TrainResult b = train(c, ds);
    REQUIRE(a.report.epochs.size() == b.report.epochs.size());
    for (std::size_t e = 0; e < a.report.epochs.size(); ++e) {
      CHECK(a.report.epochs[e].epoch == static_cast<int>(e + 1));
      CHECK(a.report.epochs[e].train_loss == b.report.epochs[e].train_loss);
    }
    CHECK(a.weights == b.weights);
    c.seed = 6;
    CHECK_FALSE(train(c, ds).weights == a.weights);
  }

  TEST_CASE("pre-training gradient check reports below 1e-4") {
    const Dataset ds = small_dataset(5, 3, 6, 7);
    const TrainResult r = train(small_config(ModelFamily::vin, 6), ds);
    REQUIRE(r.report.gradcheck_error);
    CHECK(*r.report.gradcheck_error < 1e-4);
  }

  TEST_CASE("the shared per-domain plan is transparent at 64-bit") {
    const Dataset ds = small_dataset(6, 7, 8, 8);
    const std::vector<Sample> samples = expand_samples(ds);
    for (ModelFamily f : {ModelFamily::vin, ModelFamily::hvin, ModelFamily::fcn}) {
      const TrainConfig tc = small_config(f, 8);
      const NamedTensors<double> p = init_weights(f, tc.model, 9).tensors.cast<double>();
      const auto shared = batch_gradient<double>(f, tc.model, p, ds, samples, true);
      const auto separate = batch_gradient<double>(f, tc.model, p, ds, samples, false);
      CHECK(std::abs(shared.loss - separate.loss) < 1e-9);
      CHECK(shared.errors == separate.errors);
      for (std::size_t k = 0; k < shared.grads.size(); ++k)
        for (std::size_t i = 0; i < shared.grads[k].size(); ++i)
          CHECK(std::abs(shared.grads[k][i] - separate.grads[k][i]) < 1e-9);
    }
    TrainConfig c = small_config(ModelFamily::vin, 8);
    c.double_precision = true;
    c.gradcheck = false;
    const TrainResult a = train(c, ds);
    c.share_plan = false;
    const TrainResult b = train(c, ds);
    for (std::size_t e = 0; e < a.report.epochs.size(); ++e)
      CHECK(std::abs(a.report.epochs[e].train_loss - b.report.epochs[e].train_loss) < 1e-9);
  }

  TEST_CASE("batch gradients do not depend on the thread count") {
    const Dataset ds = small_dataset(8, 7, 8, 10);
    const std::vector<Sample> samples = expand_samples(ds);
    const TrainConfig tc = small_config(ModelFamily::vin, 8);
    const NamedTensors<double> p = init_weights(ModelFamily::vin, tc.model, 11).tensors.cast<double>();
    const auto one = batch_gradient<double>(ModelFamily::vin, tc.model, p, ds, samples, true, 1);
    const auto four = batch_gradient<double>(ModelFamily::vin, tc.model, p, ds, samples, true, 4);
    CHECK(one.loss == four.loss);
    for (std::size_t k = 0; k < one.grads.size(); ++k) CHECK(one.grads[k] == four.grads[k]);
  }

  TEST_CASE("batch gradient matches the mean of per-sample gradients") {
    const Dataset ds = small_dataset(3, 3, 6, 12);
    const std::vector<Sample> samples = expand_samples(ds);
    const TrainConfig tc = small_config(ModelFamily::vin, 6);
    const NamedTensors<double> p = init_weights(ModelFamily::vin, tc.model, 13).tensors.cast<double>();
    const auto all = batch_gradient<double>(ModelFamily::vin, tc.model, p, ds, samples);
    std::vector<Tensor<double>> sum;
    double loss = 0;
    for (const Sample& s : samples) {
      const auto g = batch_gradient<double>(ModelFamily::vin, tc.model, p, ds, std::span(&s, 1));
      loss += g.loss;
      if (sum.empty()) {
        sum = g.grads;
      } else {
        for (std::size_t k = 0; k < sum.size(); ++k)
          for (std::size_t i = 0; i < sum[k].size(); ++i) sum[k][i] += g.grads[k][i];
      }
    }
    const double n = static_cast<double>(samples.size());
    CHECK(all.loss == doctest::Approx(loss / n).epsilon(1e-12));
    for (std::size_t k = 0; k < sum.size(); ++k)
      for (std::size_t i = 0; i < sum[k].size(); ++i) CHECK(std::abs(all.grads[k][i] - sum[k][i] / n) < 1e-12);
  }

  TEST_CASE("non-finite loss aborts with the epoch and batch in the message") {
    const Dataset ds = small_dataset(4, 3, 6, 14);
    TrainConfig c = small_config(ModelFamily::vin, 6);
    c.gradcheck = false;
    c.measure_initial_loss = false;
    ModelWeights w = init_weights(ModelFamily::vin, c.model, 15);
    w.tensors.at("policy_w").fill(3e38f);
    w.tensors.at("fr_conv2.bias").fill(1.0f);
    CHECK_THROWS_WITH_AS(train(c, ds, nullptr, w), doctest::Contains("epoch 1, batch 0"), TrainingError);
  }

  TEST_CASE("configuration errors") {
    const Dataset ds = small_dataset(2, 2, 6, 16);
    TrainConfig c = small_config(ModelFamily::vin, 8);
    CHECK_THROWS_AS(train(c, ds), std::invalid_argument);  // model built for 8x8
    c = small_config(ModelFamily::vin, 6);
    c.optim.lr = 0.0;
    CHECK_THROWS_AS(train(c, ds), std::invalid_argument);
    c = small_config(ModelFamily::vin, 6);
    c.data_fraction = 0.0;
    CHECK_THROWS_AS(train(c, ds), std::invalid_argument);
    c = small_config(ModelFamily::vin, 6);
    c.data_fraction = 1.5;
    CHECK_THROWS_AS(train(c, ds), std::invalid_argument);
    c = small_config(ModelFamily::vin, 6);
    c.family = ModelFamily::hvin;
    CHECK_THROWS_AS(train(c, ds), std::invalid_argument);
  }

  TEST_CASE("validation metrics reported by training equal a fresh evaluation") {
    const Dataset ds = small_dataset(10, 5, 6, 17);
    DatasetConfig hc;
    hc.domains = 10;
    hc.rows = hc.cols = 6;
    hc.seed = 17;
    const Dataset val = build_heldout(hc, ds);
    const TrainResult r = train(small_config(ModelFamily::vin, 6), ds, &val);
    REQUIRE(r.report.validation);
    CHECK(*r.report.validation == evaluate(r.weights, val));
    for (const EpochStats& e : r.report.epochs) CHECK(e.val_error.has_value());
    CHECK(r.report.epochs.back().val_error == r.report.validation->prediction_loss);
  }

  TEST_CASE("after training on 8x8 the reward map is higher at goals than at obstacles") {
    const Dataset ds = small_dataset(300, 7, 8, 18);
    TrainConfig c;
    c.model = default_config(ModelFamily::vin, 8, 8);
    c.epochs = 8;
    c.gradcheck = false;
    const TrainResult r = train(c, ds);
    double goal = 0, obstacle = 0;
    std::size_t n_goal = 0, n_obstacle = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      const GridMap g = generate_map(8, 8, 0.3, 100000 + s);
      const PlanFields f = plan_fields(r.weights, g);
      for (std::size_t i = 0; i < g.cells(); ++i) {
        if (g.cell(i) == g.goal) {
          goal += f.reward[i];
          ++n_goal;
        } else if (g.obstacles[i]) {
          obstacle += f.reward[i];
          ++n_obstacle;
        }
      }
    }
    CHECK(goal / static_cast<double>(n_goal) > obstacle / static_cast<double>(n_obstacle));
  }
}

TEST_SUITE("subsample") {
  TEST_CASE("fraction 1 is the identity") {
    const Dataset ds = small_dataset(30, 2, 4, 20);
    CHECK(subsample_dataset(ds, 1.0, 1) == ds);
  }

  TEST_CASE("keeps ceil(fraction * domains) whole domains in original order") {
    const Dataset ds = small_dataset(1000, 1, 4, 21);
    const Dataset s = subsample_dataset(ds, 0.2, 5);
    CHECK(s.domains.size() == 200);
    CHECK(subsample_dataset(ds, 0.0015, 5).domains.size() == 2);
    std::map<std::vector<std::uint8_t>, std::size_t> position;
    for (std::size_t i = 0; i < ds.domains.size(); ++i) position.emplace(ds.domains[i].map.obstacles, i);
    // Maps are unique enough on 4x4 to locate most kept domains; the order must increase.
    std::size_t last = 0;
    bool first = true;
    for (const Domain& d : s.domains) {
      auto it = std::find(ds.domains.begin(), ds.domains.end(), d);
      REQUIRE(it != ds.domains.end());
      const std::size_t idx = static_cast<std::size_t>(it - ds.domains.begin());
      if (!first) CHECK(idx > last);
      last = idx;
      first = false;
    }
    CHECK(subsample_dataset(ds, 0.2, 5) == s);
    CHECK_FALSE(subsample_dataset(ds, 0.2, 6) == s);
    CHECK_THROWS_AS(subsample_dataset(ds, 0.0, 5), std::invalid_argument);
    CHECK_THROWS_AS(subsample_dataset(Dataset{}, 0.5, 5), std::invalid_argument);
  }

  TEST_CASE("epoch order is a permutation made of per-domain runs") {
    const Dataset ds = small_dataset(12, 7, 8, 22);
    const std::vector<Sample> samples = expand_samples(ds);
    for (int chunk : {1, 3, 10}) {
      Rng rng(23);
      const std::vector<Sample> order = epoch_order(samples, chunk, rng);
      REQUIRE(order.size() == samples.size());
      std::multiset<std::tuple<std::uint32_t, int, int, int>> a, b;
      for (const Sample& s : samples) a.emplace(s.domain, s.state.i, s.state.j, static_cast<int>(s.label));
      for (const Sample& s : order) b.emplace(s.domain, s.state.i, s.state.j, static_cast<int>(s.label));
      CHECK(a == b);
      // Runs of one domain never exceed `chunk` unless two runs of it happen to meet.
      std::size_t runs = 1;
      for (std::size_t i = 1; i < order.size(); ++i) runs += order[i].domain != order[i - 1].domain;
      std::map<std::uint32_t, std::size_t> per_domain;
      for (const Sample& s : samples) ++per_domain[s.domain];
      std::size_t max_runs = 0;
      for (auto [d, n] : per_domain) max_runs += (n + static_cast<std::size_t>(chunk) - 1) / static_cast<std::size_t>(chunk);
      CHECK(runs <= max_runs);
    }
  }
}
