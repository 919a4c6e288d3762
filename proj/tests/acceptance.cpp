// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   vinlab_acceptance            all criteria
//   vinlab_acceptance 1 2 9      a subset

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "vinlab/binary_io.hpp"
#include "vinlab/checks.hpp"
#include "vinlab/dataset.hpp"
#include "vinlab/evaluator.hpp"
#include "vinlab/models.hpp"
#include "vinlab/rl.hpp"
#include "vinlab/trainer.hpp"

using namespace vinlab;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  int threads = 1;
  bool verbose = false;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

constexpr int kDomains = 1000;
constexpr int kTestMaps = 200;
constexpr std::uint64_t kDataSeed = 1;

struct Split {
  Dataset train;
  Dataset test;
};

Split desk_split(int size) {
  DatasetConfig c;
  c.rows = c.cols = size;
  c.domains = kDomains;
  c.seed = kDataSeed;
  Split s;
  s.train = build_dataset(c);
  c.domains = kTestMaps;
  s.test = build_heldout(c, s.train);
  return s;
}

struct Trained {
  Metrics test;
  double seconds = 0.0;
};

Trained train_and_test(ModelFamily family, const Split& split, const Options& opt, double data_fraction = 1.0,
                       std::optional<VinConfig> model = std::nullopt) {
  TrainConfig c;
  c.family = family;
  c.model = model ? *model : default_config(family, split.train.rows, split.train.cols);
  c.data_fraction = data_fraction;
  c.threads = opt.threads;
  if (opt.verbose) {
    c.on_epoch = [family](const EpochStats& e) {
      std::fprintf(stderr, "  [%s] epoch %d loss %.4f err %.4f (%.1f s)\n", family_name(family).c_str(), e.epoch,
                   e.train_loss, e.train_error, e.seconds);
    };
  }
  const auto t0 = Clock::now();
  const TrainResult r = train(c, split.train);
  Trained out;
  out.test = evaluate(r.weights, split.test, 0, opt.threads);
  out.seconds = seconds_since(t0);
  if (opt.verbose) {
    std::fprintf(stderr, "  [%s] success %.4f traj_diff %.4f loss %.4f in %.0f s\n", family_name(family).c_str(),
                 out.test.success_rate, out.test.traj_diff, out.test.prediction_loss, out.seconds);
  }
  return out;
}

// 1. Gradient checks of every operator and every model family at 64-bit.
Outcome gradients(const Options&) {
  const auto t0 = Clock::now();
  std::vector<CheckResult> results = op_gradchecks(1);
  for (ModelFamily f :
       {ModelFamily::vin, ModelFamily::vin_untied, ModelFamily::hvin, ModelFamily::cnn, ModelFamily::fcn}) {
    const bool small = f == ModelFamily::vin || f == ModelFamily::vin_untied;
    results.push_back(model_gradcheck_result({f, small ? 4 : 8, f == ModelFamily::hvin ? 4 : 3, 0, 1, 0}));
  }
  const double secs = seconds_since(t0);
  double op_worst = 0.0, model_worst = 0.0;
  bool pass = secs < 60.0;
  std::string failed;
  for (const CheckResult& r : results) {
    (r.tolerance == kOpTolerance ? op_worst : model_worst) =
        std::max(r.tolerance == kOpTolerance ? op_worst : model_worst, r.max_rel_error);
    if (!r.passed()) {
      pass = false;
      failed += " " + r.name;
    }
  }
  return {pass, std::to_string(results.size()) + " checks, worst op " + fmt("%.2e", op_worst) + " (< 1e-6), worst model " +
                    fmt("%.2e", model_worst) + " (< 1e-4), " + fmt("%.1f", secs) + " s (< 60 s)" +
                    (failed.empty() ? "" : ", failed:" + failed)};
}

// 2. Hand-set VI kernels against tabular value iteration on 20 empty 8x8 maps.
Outcome oracle_equivalence(const Options&) {
  const double gamma = 0.9;
  const int k = 32;
  ModelWeights w = oracle_vin_weights(8, 8, gamma, k);
  NamedTensors<double> p = w.tensors.cast<double>();
  for (double& v : p.at("vi_wv").values())
    if (v != 0.0) v = gamma;  // the float file rounds gamma
  OracleSpec spec;
  spec.goal_reward = 1.0;
  spec.obstacle_reward = 0.0;
  spec.step_reward = 0.0;
  spec.gamma = gamma;
  spec.model = ValueModel::state_reward;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const GridMap g = generate_map(8, 8, 0.0, 9000 + s);
    Tape<double> t;
    const BoundParams<double> bp(t, p, false);
    const Var r = reward_map_fR(t, bp, t.constant(observation_image<double>(g)));
    const Tensor<double>& v = t.value(vi_module_forward(t, bp, r, k, true).v);
    const std::vector<double> ref = exact_value_iteration(g, spec, k);
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(v[i] - ref[i]));
  }
  return {worst < 1e-5, "max abs error " + fmt("%.2e", worst) + " over 20 maps (< 1e-5)"};
}

// 3. VIN on 8x8 at desk scale.
Outcome vin8(const Options& opt) {
  const Split s = desk_split(8);
  const Trained t = train_and_test(ModelFamily::vin, s, opt);
  const double budget = opt.threads >= 4 ? 600.0 : 1800.0;
  const bool pass = t.test.success_rate >= 0.95 && t.test.traj_diff <= 0.05 && t.seconds <= budget;
  return {pass, "success " + fmt("%.4f", t.test.success_rate) + " (>= 0.95), traj_diff " +
                    fmt("%.4f", t.test.traj_diff) + " (<= 0.05), " + fmt("%.0f", t.seconds) + " s (<= " +
                    fmt("%.0f", budget) + " s)"};
}

// 4. VIN against the CNN and FCN baselines on 16x16.
Outcome baselines16(const Options& opt) {
  const Split s = desk_split(16);
  const Trained vin = train_and_test(ModelFamily::vin, s, opt);
  const Trained cnn = train_and_test(ModelFamily::cnn, s, opt);
  const Trained fcn = train_and_test(ModelFamily::fcn, s, opt);
  const double gap_cnn = 100.0 * (vin.test.success_rate - cnn.test.success_rate);
  const double gap_fcn = 100.0 * (vin.test.success_rate - fcn.test.success_rate);
  const double secs = vin.seconds + cnn.seconds + fcn.seconds;
  const bool pass = gap_cnn >= 5.0 && gap_fcn >= 3.0 && secs <= 7200.0;
  return {pass, "success vin " + fmt("%.4f", vin.test.success_rate) + ", cnn " + fmt("%.4f", cnn.test.success_rate) +
                    ", fcn " + fmt("%.4f", fcn.test.success_rate) + "; gaps " + fmt("%.1f", gap_cnn) +
                    " (>= 5) and " + fmt("%.1f", gap_fcn) + " (>= 3) points, " + fmt("%.0f", secs) +
                    " s (<= 7200 s)"};
}

// 5. Tied against untied VI weights on 16x16 with 20% of the maps.
Outcome weight_sharing(const Options& opt) {
  const Split s = desk_split(16);
  const Trained tied = train_and_test(ModelFamily::vin, s, opt, 0.2);
  const Trained untied = train_and_test(ModelFamily::vin_untied, s, opt, 0.2);
  const double secs = tied.seconds + untied.seconds;
  const bool pass = tied.test.success_rate >= untied.test.success_rate && secs <= 7200.0;
  return {pass, "success tied " + fmt("%.4f", tied.test.success_rate) + " >= untied " +
                    fmt("%.4f", untied.test.success_rate) + ", " + fmt("%.0f", secs) + " s (<= 7200 s)"};
}

// 6. Hierarchical VIN on 8x8 with K = 4.
Outcome hvin8(const Options& opt) {
  const Split s = desk_split(8);
  VinConfig c = default_config(ModelFamily::hvin, 8, 8);
  c.k = 4;
  const Trained t = train_and_test(ModelFamily::hvin, s, opt, 1.0, c);
  return {t.test.success_rate >= 0.93, "success " + fmt("%.4f", t.test.success_rate) + " (>= 0.93), K " +
                                           std::to_string(c.k) + ", K_high " + std::to_string(c.k_high) + ", " +
                                           fmt("%.0f", t.seconds) + " s"};
}

// 7. Curriculum policy gradient on 8x8, plus the threshold rule on a synthetic sequence.
Outcome reinforcement(const Options& opt) {
  CurriculumState synthetic;
  bool rule_ok = true;
  int expected = 1;
  for (int t = 0; t < 200; ++t) {
    const double r = 0.6 + 0.4 * std::sin(0.05 * t) * std::sin(0.05 * t);
    const bool should = r > 1.0 - expected / 35.0;
    rule_ok = rule_ok && synthetic.record(t, r) == should;
    expected += should;
  }
  rule_ok = rule_ok && synthetic.difficulty == expected && std::abs(curriculum_threshold(7) - 0.8) < 1e-15;

  RLConfig c;
  c.threads = opt.threads;
  c.iterations = 500;
  c.test_maps = kTestMaps;
  if (opt.verbose) {
    c.on_iteration = [](const IterationLog& l) {
      if (l.iteration % 25 == 0)
        std::fprintf(stderr, "  [rl] iteration %d difficulty %d return %.3f\n", l.iteration, l.difficulty,
                     l.average_return);
    };
  }
  const RLResult r = curriculum_train(c);
  int reached = 1, reached_at = -1;
  for (const Advancement& a : r.curriculum.advancements) {
    if (a.iteration < 500) reached = std::max(reached, a.to);
    if (a.to == 6 && reached_at < 0) reached_at = a.iteration;
  }
  const bool pass = rule_ok && reached >= 6 && r.test.success_rate >= 0.70;
  return {pass, std::string("threshold rule ") + (rule_ok ? "ok" : "violated") + ", difficulty " +
                    std::to_string(reached) + " (>= 6" +
                    (reached_at >= 0 ? ", reached 6 at iteration " + std::to_string(reached_at) : std::string()) +
                    "), test success " + fmt("%.4f", r.test.success_rate) + " (>= 0.70) on " +
                    std::to_string(r.test.rollouts) + " rollouts, " + fmt("%.0f", r.wall_seconds) + " s"};
}

// 8. generate / train / eval twice in separate processes.
Outcome determinism(const Options&) {
  const fs::path dir = fs::temp_directory_path() / ("vinlab_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string bin = VINLAB_CLI_PATH;
  auto sh = [&](const std::string& args, const std::string& stdout_file) {
    const std::string cmd = bin + " " + args + " > " + (dir / stdout_file).string() + " 2>/dev/null";
    const int s = std::system(cmd.c_str());
    return WIFEXITED(s) && WEXITSTATUS(s) == 0;
  };
  auto text = [&](const std::string& name) {
    const std::vector<std::uint8_t> b = read_file(dir / name);
    return std::string(b.begin(), b.end());
  };
  bool ok = true;
  for (const std::string run : {"a", "b"}) {
    const std::string p = (dir / run).string();
    ok = ok && sh("generate --size 8 --domains 60 --seed 11 --out " + p + ".vind --heldout-out " + p +
                      "_test.vind --heldout-domains 20",
                  run + "_gen.txt");
    ok = ok && sh("train --model vin --dataset " + p + ".vind --val " + p + "_test.vind --epochs 3 --seed 12 " +
                      "--quiet --threads 1 --out " + p + ".vinw",
                  run + "_train.txt");
    ok = ok && sh("eval --weights " + p + ".vinw --dataset " + p + "_test.vind --threads 1", run + "_eval.txt");
  }
  bool same = ok;
  std::string detail = ok ? "" : "a command failed; ";
  if (ok) {
    const bool data = read_file(dir / "a.vind") == read_file(dir / "b.vind") &&
                      read_file(dir / "a_test.vind") == read_file(dir / "b_test.vind");
    const bool weights = read_file(dir / "a.vinw") == read_file(dir / "b.vinw");
    const bool metrics = text("a_eval.txt") == text("b_eval.txt");
    auto strip = [](nlohmann::json j) {
      j.erase("wall_seconds");
      j.erase("weights");
      for (auto& e : j["epochs"]) e.erase("seconds");
      return j;
    };
    const bool report = strip(nlohmann::json::parse(text("a.vinw.json"))) ==
                        strip(nlohmann::json::parse(text("b.vinw.json")));
    same = data && weights && metrics && report;
    detail = std::string("datasets ") + (data ? "identical" : "DIFFER") + ", weights " +
             (weights ? "identical" : "DIFFER") + ", metric JSON " + (metrics ? "identical" : "DIFFERS") +
             ", report " + (report ? "identical" : "DIFFERS");
  }
  fs::remove_all(dir);
  return {same, detail};
}

// 9. The shortest-path expert scores perfectly on generated test sets.
Outcome expert_sanity(const Options& opt) {
  bool pass = true;
  std::size_t rollouts = 0;
  int sets = 0;
  for (int size : {4, 8, 16, 28}) {
    for (double frac : {0.0, 0.1, 0.3, 0.45}) {
      DatasetConfig c;
      c.rows = c.cols = size;
      c.domains = 100;
      c.obstacle_fraction = frac;
      c.seed = 77 + static_cast<std::uint64_t>(size);
      const Metrics m = evaluate(expert_policy(), build_dataset(c), 0, opt.threads);
      pass = pass && m.success_rate == 1.0 && m.traj_diff == 0.0;
      rollouts += m.rollouts;
      ++sets;
    }
  }
  return {pass, std::to_string(sets) + " test sets, " + std::to_string(rollouts) +
                    " rollouts: success 1.0 and traj_diff 0.0 " + (pass ? "everywhere" : "NOT everywhere")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vinlab acceptance criteria"};
  std::vector<int> which;
  Options opt;
  std::string json_out;
  app.add_option("criteria", which, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--threads", opt.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--verbose", opt.verbose, "Progress on stderr");
  app.add_option("--json", json_out, "Also write the results as JSON");
  CLI11_PARSE(app, argc, argv);
  if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const std::map<int, std::pair<std::string, std::function<Outcome(const Options&)>>> criteria{
      {1, {"gradient correctness", gradients}},
      {2, {"oracle equivalence", oracle_equivalence}},
      {3, {"VIN 8x8 imitation", vin8}},
      {4, {"16x16 baseline gap", baselines16}},
      {5, {"weight sharing 16x16 at 20%", weight_sharing}},
      {6, {"HVIN 8x8 K=4", hvin8}},
      {7, {"curriculum RL 8x8", reinforcement}},
      {8, {"determinism", determinism}},
      {9, {"expert sanity", expert_sanity}},
  };

  bool all = true;
  nlohmann::json report = nlohmann::json::array();
  for (int id : which) {
    const auto& [name, fn] = criteria.at(id);
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn(opt);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %d %-28s %s  %s  [%.0f s]\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    report.push_back({{"criterion", id}, {"name", name}, {"pass", o.pass}, {"detail", o.detail},
                      {"seconds", seconds_since(t0)}});
  }
  if (!json_out.empty()) {
    const std::string s = report.dump(2) + "\n";
    write_file(json_out, std::vector<std::uint8_t>(s.begin(), s.end()));
  }
  return all ? 0 : 1;
}
