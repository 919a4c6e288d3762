#include "vinlab/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "vinlab/binary_io.hpp"
#include "vinlab/checks.hpp"
#include "vinlab/dataset.hpp"
#include "vinlab/evaluator.hpp"
#include "vinlab/image_io.hpp"
#include "vinlab/models.hpp"
#include "vinlab/ops.hpp"
#include "vinlab/rl.hpp"
#include "vinlab/trainer.hpp"

namespace vinlab {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr std::uint64_t kDefaultSeed = 1;
constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kGreen{0, 170, 0};
constexpr Rgb kBlue{40, 90, 255};
constexpr Rgb kPurple{150, 40, 180};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("VINLAB_SEED")) {
    try {
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("VINLAB_SEED is not an unsigned integer: '") + env + "'");
  }
  return kDefaultSeed;
}

ModelFamily family_flag(const std::string& name) {
  try {
    return parse_family(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write failed: " + path);
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
  int size = 8;
  int rows = 0;
  int cols = 0;
  int domains = 1000;
  int traj = 7;
  double obstacle_fraction = 0.3;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string heldout_out;
  int heldout_domains = 200;
};

void add_generate(CLI::App& app, GenerateArgs& a) {
  auto* c = app.add_subcommand("generate", "Generate an expert dataset");
  c->add_option("--size", a.size, "Square grid extent")->check(CLI::PositiveNumber);
  c->add_option("--rows", a.rows, "Grid rows (overrides --size)")->check(CLI::PositiveNumber);
  c->add_option("--cols", a.cols, "Grid columns (overrides --size)")->check(CLI::PositiveNumber);
  c->add_option("--domains", a.domains, "Number of maps")->check(CLI::PositiveNumber);
  c->add_option("--traj", a.traj, "Trajectories per map")->check(CLI::PositiveNumber);
  c->add_option("--obstacle-fraction", a.obstacle_fraction, "Obstacle probability per cell")
      ->check(CLI::Range(0.0, 0.4999999));
  c->add_option("--seed", a.seed, "RNG seed (default: $VINLAB_SEED or 1)");
  c->add_option("--out", a.out, "Output dataset file")->required();
  c->add_option("--heldout-out", a.heldout_out, "Also write a held-out split of fresh maps here");
  c->add_option("--heldout-domains", a.heldout_domains, "Maps in the held-out split")->check(CLI::PositiveNumber);
}

int run_generate(const GenerateArgs& a, std::ostream& out) {
  DatasetConfig c;
  c.rows = a.rows > 0 ? a.rows : a.size;
  c.cols = a.cols > 0 ? a.cols : a.size;
  c.domains = a.domains;
  c.trajectories = a.traj;
  c.obstacle_fraction = a.obstacle_fraction;
  c.seed = resolve_seed(a.seed);
  const Dataset ds = build_dataset(c);
  save_dataset(a.out, ds);
  out << "wrote " << a.out << ": " << ds.domains.size() << " maps, " << expand_samples(ds).size() << " samples\n";
  if (!a.heldout_out.empty()) {
    DatasetConfig h = c;
    h.domains = a.heldout_domains;
    const Dataset ho = build_heldout(h, ds);
    save_dataset(a.heldout_out, ho);
    out << "wrote " << a.heldout_out << ": " << ho.domains.size() << " held-out maps\n";
  }
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string model = "vin";
  std::string dataset;
  std::string val;
  int k = 0;
  int k_high = 0;
  int q = 0;
  int fr_hidden = 0;
  int epochs = TrainConfig{}.epochs;
  double lr = RmsPropConfig{}.lr;
  double decay = RmsPropConfig{}.decay;
  double eps = RmsPropConfig{}.eps;
  int batch = TrainConfig{}.batch_size;
  double data_fraction = 1.0;
  int domain_chunk = TrainConfig{}.domain_chunk;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string report;
  int threads = 1;
  bool no_gradcheck = false;
  bool no_share_plan = false;
  bool double_precision = false;
  bool quiet = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Train a policy network by imitation");
  c->add_option("--model", a.model, "vin | vin-untied | hvin | cnn | fcn")
      ->check(CLI::IsMember({"vin", "vin-untied", "hvin", "cnn", "fcn"}));
  c->add_option("--dataset", a.dataset, "Training dataset")->required();
  c->add_option("--val", a.val, "Held-out dataset scored after every epoch");
  c->add_option("--k", a.k, "VI recurrences (default by grid size)")->check(CLI::PositiveNumber);
  c->add_option("--k-high", a.k_high, "Coarse VI recurrences (hvin)")->check(CLI::PositiveNumber);
  c->add_option("--q", a.q, "Q-layer channels (default 10)")->check(CLI::PositiveNumber);
  c->add_option("--fr-hidden", a.fr_hidden, "Hidden channels of the reward map (default 150)")
      ->check(CLI::PositiveNumber);
  c->add_option("--epochs", a.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  c->add_option("--lr", a.lr, "RMSProp step size")->check(CLI::PositiveNumber);
  c->add_option("--decay", a.decay, "RMSProp decay")->check(CLI::Range(0.0, 0.999999));
  c->add_option("--eps", a.eps, "RMSProp epsilon")->check(CLI::PositiveNumber);
  c->add_option("--batch", a.batch, "Batch size")->check(CLI::PositiveNumber);
  c->add_option("--data-fraction", a.data_fraction, "Fraction of training maps kept")
      ->check(CLI::Range(1e-9, 1.0));
  c->add_option("--domain-chunk", a.domain_chunk, "Samples of one map kept together when shuffling")
      ->check(CLI::PositiveNumber);
  c->add_option("--seed", a.seed, "RNG seed (default: $VINLAB_SEED or 1)");
  c->add_option("--out", a.out, "Output weights file")->required();
  c->add_option("--report", a.report, "Training report JSON (default: <out>.json)");
  c->add_option("--threads", a.threads, "Worker threads")->check(CLI::PositiveNumber);
  c->add_flag("--no-gradcheck", a.no_gradcheck, "Skip the pre-training gradient check");
  c->add_flag("--no-share-plan", a.no_share_plan, "Recompute the plan for every sample");
  c->add_flag("--double", a.double_precision, "Train in 64-bit");
  c->add_flag("--quiet", a.quiet, "No per-epoch progress");
}

int run_train(const TrainArgs& a, std::ostream& out) {
  const Dataset train_set = load_dataset(a.dataset);
  std::optional<Dataset> val;
  if (!a.val.empty()) val = load_dataset(a.val);

  TrainConfig c;
  c.family = family_flag(a.model);
  c.model = default_config(c.family, train_set.rows, train_set.cols);
  if (a.k > 0) {
    c.model.k = a.k;
    if (c.model.hierarchical && a.k_high == 0) c.model.k_high = a.k;
  }
  if (a.k_high > 0) {
    if (!c.model.hierarchical) throw UsageError("--k-high applies to --model hvin only");
    c.model.k_high = a.k_high;
  }
  if (a.q > 0) c.model.q_channels = a.q;
  if (a.fr_hidden > 0) c.model.fr_hidden = a.fr_hidden;
  c.epochs = a.epochs;
  c.batch_size = a.batch;
  c.optim = {a.lr, a.decay, a.eps};
  c.seed = resolve_seed(a.seed);
  c.data_fraction = a.data_fraction;
  c.domain_chunk = a.domain_chunk;
  c.share_plan = !a.no_share_plan;
  c.threads = a.threads;
  c.double_precision = a.double_precision;
  c.gradcheck = !a.no_gradcheck;
  if (!a.quiet) {
    c.on_epoch = [&out](const EpochStats& e) {
      out << "epoch " << e.epoch << "  loss " << e.train_loss << "  train error " << e.train_error;
      if (e.val_error) out << "  val error " << *e.val_error;
      out << "  (" << e.seconds << " s)\n" << std::flush;
    };
  }
  if (val && (val->rows != train_set.rows || val->cols != train_set.cols)) {
    throw UsageError("--val maps differ in size from the training maps");
  }

  TrainResult r = train(c, train_set, val ? &*val : nullptr);
  save_weights(a.out, r.weights);
  r.report.weights_path = a.out;
  const std::string report_path = a.report.empty() ? a.out + ".json" : a.report;
  write_json(report_path, r.report);
  out << "wrote " << a.out << " and " << report_path << "\n";
  if (r.report.validation) out << nlohmann::json(*r.report.validation).dump() << "\n";
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string weights;
  bool expert = false;
  std::string dataset;
  bool json = false;
  bool table = false;
  int step_cap = 0;
  int threads = 1;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* c = app.add_subcommand("eval", "Score a policy on a held-out dataset");
  auto* w = c->add_option("--weights", a.weights, "Weights file");
  auto* e = c->add_flag("--expert", a.expert, "Score the shortest-path expert instead");
  w->excludes(e);
  c->add_option("--dataset", a.dataset, "Test dataset")->required();
  auto* j = c->add_flag("--json", a.json, "JSON output (default)");
  auto* t = c->add_flag("--table", a.table, "Plain-text table output");
  j->excludes(t);
  c->add_option("--step-cap", a.step_cap, "Rollout step cap (default 4*(rows+cols))")->check(CLI::PositiveNumber);
  c->add_option("--threads", a.threads, "Worker threads")->check(CLI::PositiveNumber);
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  if (a.weights.empty() && !a.expert) throw UsageError("eval needs --weights or --expert");
  const Dataset test = load_dataset(a.dataset);
  std::string name = "expert";
  PolicyFactory policy = expert_policy();
  if (!a.expert) {
    const ModelWeights w = load_weights(a.weights);
    check_weights(w);
    name = family_name(w.family);
    policy = network_policy(w);
  }
  const Metrics m = evaluate(policy, test, a.step_cap, a.threads);
  if (a.table) {
    out << metrics_table({{name, m}});
  } else {
    out << nlohmann::json(m).dump() << "\n";
  }
  return kExitOk;
}

// ---- rl ---------------------------------------------------------------------

struct RlArgs {
  int size = 8;
  int iterations = 500;
  double gamma = 0.99;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string log;
  std::string model = "vin";
  int episodes = 0;
  double lr = 0.0;
  std::string warm_start;
  int threads = 1;
  int train_maps = 1000;
  int test_maps = 200;
  double obstacle_fraction = 0.3;
  int max_difficulty = 0;
  bool quiet = false;
};

void add_rl(CLI::App& app, RlArgs& a) {
  auto* c = app.add_subcommand("rl", "Curriculum policy-gradient training");
  c->add_option("--size", a.size, "Square grid extent")->check(CLI::Range(2, 4096));
  c->add_option("--iterations", a.iterations, "Iteration cap")->check(CLI::NonNegativeNumber);
  c->add_option("--gamma", a.gamma, "Discount")->check(CLI::Range(1e-9, 0.999999999));
  c->add_option("--seed", a.seed, "RNG seed (default: $VINLAB_SEED or 1)");
  c->add_option("--out", a.out, "Output weights file")->required();
  c->add_option("--log", a.log, "Curriculum log JSON (default: <out>.json)");
  c->add_option("--model", a.model, "vin | vin-untied | hvin | cnn | fcn")
      ->check(CLI::IsMember({"vin", "vin-untied", "hvin", "cnn", "fcn"}));
  c->add_option("--episodes", a.episodes, "Episodes per iteration")->check(CLI::PositiveNumber);
  c->add_option("--lr", a.lr, "RMSProp step size")->check(CLI::PositiveNumber);
  c->add_option("--warm-start", a.warm_start, "Start from these (imitation-trained) weights");
  c->add_option("--threads", a.threads, "Worker threads")->check(CLI::PositiveNumber);
  c->add_option("--train-maps", a.train_maps, "Size of the training map pool")->check(CLI::PositiveNumber);
  c->add_option("--test-maps", a.test_maps, "Fresh test maps")->check(CLI::PositiveNumber);
  c->add_option("--obstacle-fraction", a.obstacle_fraction, "Obstacle probability per cell")
      ->check(CLI::Range(0.0, 0.4999999));
  c->add_option("--max-difficulty", a.max_difficulty, "Stop after this level (default: deepest start)")
      ->check(CLI::PositiveNumber);
  c->add_flag("--quiet", a.quiet, "No per-iteration progress");
}

int run_rl(const RlArgs& a, std::ostream& out) {
  RLConfig c;
  c.rows = c.cols = a.size;
  c.family = family_flag(a.model);
  c.iterations = a.iterations;
  c.gamma = a.gamma;
  c.seed = resolve_seed(a.seed);
  if (a.episodes > 0) c.episodes_per_iteration = a.episodes;
  if (a.lr > 0.0) c.optim.lr = a.lr;
  c.threads = a.threads;
  c.train_maps = a.train_maps;
  c.test_maps = a.test_maps;
  c.obstacle_fraction = a.obstacle_fraction;
  c.max_difficulty = a.max_difficulty;
  if (!a.warm_start.empty()) {
    c.warm_start = load_weights(a.warm_start);
    c.family = c.warm_start->family;
    c.model = c.warm_start->config;
  }
  if (!a.quiet) {
    c.on_iteration = [&out](const IterationLog& l) {
      if (l.iteration % 10 != 0) return;
      out << "iteration " << l.iteration << "  difficulty " << l.difficulty << "  return " << l.average_return
          << "  reached goal " << l.goal_fraction << "\n"
          << std::flush;
    };
  }
  const RLResult r = curriculum_train(c);
  save_weights(a.out, r.weights);
  const std::string log_path = a.log.empty() ? a.out + ".json" : a.log;
  write_json(log_path, r);
  for (const Advancement& adv : r.curriculum.advancements) {
    out << "iteration " << adv.iteration << ": difficulty " << adv.from << " -> " << adv.to << " (return "
        << adv.average_return << ")\n";
  }
  out << "final difficulty " << r.curriculum.difficulty << ", test " << nlohmann::json(r.test).dump() << "\n";
  out << "wrote " << a.out << " and " << log_path << "\n";
  return kExitOk;
}

// ---- plot -------------------------------------------------------------------

struct PlotArgs {
  std::string weights;
  bool expert = false;
  std::string dataset;
  int domain_index = 0;
  int trajectory_index = 0;
  std::string what = "value";
  std::string out;
  int scale = 1;
};

void add_plot(CLI::App& app, PlotArgs& a) {
  auto* c = app.add_subcommand("plot", "Render a reward map, value map or trajectories");
  auto* w = c->add_option("--weights", a.weights, "Weights file");
  auto* e = c->add_flag("--expert", a.expert, "Use the shortest-path expert as the predicted path");
  w->excludes(e);
  c->add_option("--dataset", a.dataset, "Dataset holding the map")->required();
  c->add_option("--domain-index", a.domain_index, "Map index")->check(CLI::NonNegativeNumber);
  c->add_option("--trajectory-index", a.trajectory_index, "Stored trajectory whose start is used")
      ->check(CLI::NonNegativeNumber);
  c->add_option("--what", a.what, "reward | value | trajectory")
      ->check(CLI::IsMember({"reward", "value", "trajectory"}));
  c->add_option("--out", a.out, "Output PGM/PPM file")->required();
  c->add_option("--scale", a.scale, "Pixels per cell")->check(CLI::Range(1, 64));
}

Image upscale(const Image& img, int scale) {
  if (scale == 1) return img;
  Image out{img.width * scale, img.height * scale, img.channels, {}};
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        out.pixels[(static_cast<std::size_t>(y) * out.width + x) * img.channels + c] =
            img.pixels[(static_cast<std::size_t>(y / scale) * img.width + x / scale) * img.channels + c];
      }
    }
  }
  return out;
}

int run_plot(const PlotArgs& a, std::ostream& out) {
  if (a.weights.empty() && !a.expert) throw UsageError("plot needs --weights or --expert");
  if (a.expert && a.what != "trajectory") throw UsageError("--expert can only render --what trajectory");
  const Dataset ds = load_dataset(a.dataset);
  if (a.domain_index >= static_cast<int>(ds.domains.size())) {
    throw UsageError("--domain-index " + std::to_string(a.domain_index) + " out of range (dataset has " +
                     std::to_string(ds.domains.size()) + " maps)");
  }
  const Domain& dom = ds.domains[static_cast<std::size_t>(a.domain_index)];
  const GridMap& map = dom.map;
  std::optional<ModelWeights> weights;
  if (!a.expert) {
    weights = load_weights(a.weights);
    check_weights(*weights);
  }

  Image img;
  if (a.what == "reward" || a.what == "value") {
    const PlanFields fields = plan_fields(*weights, map);
    const Tensor<float>& t = a.what == "reward" ? fields.reward : fields.value;
    const std::vector<double> values(t.values().begin(), t.values().end());
    img = grayscale_field(values, map.rows, map.cols);
  } else {
    if (a.trajectory_index >= static_cast<int>(dom.trajectories.size())) {
      throw UsageError("--trajectory-index out of range (map has " + std::to_string(dom.trajectories.size()) +
                       " trajectories)");
    }
    const Trajectory& optimal = dom.trajectories[static_cast<std::size_t>(a.trajectory_index)];
    const PolicyFactory policy = a.expert ? expert_policy() : network_policy(*weights);
    const Rollout predicted =
        rollout_greedy(policy(map), map, optimal.start, default_step_cap(map.rows, map.cols));
    img = Image{map.cols, map.rows, 3, std::vector<std::uint8_t>(map.cells() * 3)};
    auto paint = [&](Cell c, const Rgb& rgb) {
      if (!map.in_bounds(c)) return;
      std::copy(rgb.begin(), rgb.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(map.index(c) * 3));
    };
    for (std::size_t k = 0; k < map.cells(); ++k) paint(map.cell(k), map.obstacles[k] ? kBlack : kWhite);
    auto paint_path = [&](const Trajectory& t, const Rgb& rgb) {
      Cell s = t.start;
      paint(s, rgb);
      for (Action act : t.actions) {
        const Cell next = moved(s, act);
        if (map.in_bounds(next)) s = next;
        paint(s, rgb);
      }
    };
    paint_path(optimal, kBlue);
    paint_path(predicted.trajectory, kPurple);
    paint(map.goal, kGreen);
  }
  write_pnm(a.out, upscale(img, a.scale));
  out << "wrote " << a.out << " (" << img.width * a.scale << "x" << img.height * a.scale << ")\n";
  return kExitOk;
}

// ---- gradcheck --------------------------------------------------------------

struct GradcheckArgs {
  std::string model = "vin";
  int size = 4;
  int k = 3;
  int k_high = 0;
  std::optional<std::uint64_t> seed;
  std::size_t coords = 0;
  bool corrupt_backward = false;
  bool skip_ops = false;
};

void add_gradcheck(CLI::App& app, GradcheckArgs& a) {
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of operators and a full model");
  c->add_option("--model", a.model, "vin | vin-untied | hvin | cnn | fcn")
      ->check(CLI::IsMember({"vin", "vin-untied", "hvin", "cnn", "fcn"}));
  c->add_option("--size", a.size, "Square grid extent")->check(CLI::Range(2, 64));
  c->add_option("--k", a.k, "VI recurrences")->check(CLI::PositiveNumber);
  c->add_option("--k-high", a.k_high, "Coarse VI recurrences (hvin; default K/2)")->check(CLI::PositiveNumber);
  c->add_option("--seed", a.seed, "RNG seed (default: $VINLAB_SEED or 1)");
  c->add_option("--coords", a.coords, "Coordinates per tensor (0: all for small models)");
  c->add_flag("--corrupt-backward", a.corrupt_backward, "Negative control: perturb the convolution gradient");
  c->add_flag("--skip-ops", a.skip_ops, "Only check the full model");
}

int run_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const std::uint64_t seed = resolve_seed(a.seed);
  set_backward_fault(a.corrupt_backward);
  std::vector<CheckResult> results;
  try {
    if (!a.skip_ops) results = op_gradchecks(seed);
    results.push_back(model_gradcheck_result({family_flag(a.model), a.size, a.k, a.k_high, seed, a.coords}));
  } catch (...) {
    set_backward_fault(false);
    throw;
  }
  set_backward_fault(false);
  bool ok = true;
  for (const CheckResult& r : results) {
    ok = ok && r.passed();
    char line[200];
    std::snprintf(line, sizeof line, "%-4s %-28s max rel error %.3e (tolerance %.0e, %zu coords)\n",
                  r.passed() ? "ok" : "FAIL", r.name.c_str(), r.max_rel_error, r.tolerance, r.coords);
    out << line;
  }
  out << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Value iteration network laboratory"};
  app.name("vinlab");
  app.require_subcommand(1);
  GenerateArgs gen;
  TrainArgs tr;
  EvalArgs ev;
  RlArgs rl;
  PlotArgs pl;
  GradcheckArgs gc;
  add_generate(app, gen);
  add_train(app, tr);
  add_eval(app, ev);
  add_rl(app, rl);
  add_plot(app, pl);
  add_gradcheck(app, gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (app.got_subcommand("generate")) return run_generate(gen, out);
    if (app.got_subcommand("train")) return run_train(tr, out);
    if (app.got_subcommand("eval")) return run_eval(ev, out);
    if (app.got_subcommand("rl")) return run_rl(rl, out);
    if (app.got_subcommand("plot")) return run_plot(pl, out);
    if (app.got_subcommand("gradcheck")) return run_gradcheck(gc, out);
  } catch (const UsageError& e) {
    err << "vinlab: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "vinlab: error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace vinlab
