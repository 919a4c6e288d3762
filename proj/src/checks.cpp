#include "vinlab/checks.hpp"

#include <functional>

#include "vinlab/dataset.hpp"
#include "vinlab/gradcheck.hpp"
#include "vinlab/models.hpp"
#include "vinlab/ops.hpp"
#include "vinlab/trainer.hpp"

namespace vinlab {

namespace {

constexpr std::size_t kSmallModel = 20000;
constexpr std::size_t kSampledCoords = 64;

Tensor<double> random_tensor(Shape shape, Rng& rng, double margin = 0.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) {
    do {
      v = rng.uniform(-1.0, 1.0);
    } while (std::abs(v) < margin);
  }
  return t;
}

using Body = std::function<Var(Tape<double>&, std::span<const Var>)>;

// Checks `body` reduced to a scalar by a fixed random projection.
CheckResult check_op(const std::string& name, std::vector<Tensor<double>> inputs, const Body& body, Rng& rng,
                     bool scalar = false) {
  std::optional<Tensor<double>> projection;
  if (!scalar) {
    Tape<double> probe;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(probe.constant_ref(t));
    const std::size_t n = probe.value(body(probe, vars)).size();
    projection = random_tensor({1, static_cast<int>(n)}, rng);
  }
  ScalarFunction f = [&](Tape<double>& tape, std::span<const Var> vars) {
    const Var y = body(tape, vars);
    return projection ? dense(tape, y, tape.constant_ref(*projection)) : y;
  };
  GradCheckOptions opts;
  opts.seed = rng.next();
  const GradCheckReport r = grad_check(inputs, f, opts);
  return {name, r.max_rel_error, kOpTolerance, r.coords_checked};
}

}  // namespace

std::vector<CheckResult> op_gradchecks(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4F5053));
  std::vector<CheckResult> out;
  out.push_back(check_op("conv2d_same", {random_tensor({2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
                                         random_tensor({3}, rng)},
                         [](Tape<double>& t, std::span<const Var> v) { return conv2d_same(t, v[0], v[1], v[2]); },
                         rng));
  out.push_back(check_op("conv2d_same_wide", {random_tensor({2, 4, 4}, rng), random_tensor({2, 2, 7, 7}, rng)},
                         [](Tape<double>& t, std::span<const Var> v) { return conv2d_same(t, v[0], v[1]); }, rng));
  out.push_back(check_op("relu", {random_tensor({3, 4, 4}, rng, 0.1)},
                         [](Tape<double>& t, std::span<const Var> v) { return relu(t, v[0]); }, rng));
  out.push_back(check_op("add", {random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 3}, rng)},
                         [](Tape<double>& t, std::span<const Var> v) { return add(t, v[0], v[1]); }, rng));
  out.push_back(check_op("channel_max", {random_tensor({5, 3, 3}, rng)},
                         [](Tape<double>& t, std::span<const Var> v) { return channel_max(t, v[0]).values; }, rng));
  out.push_back(check_op("maxpool2d", {random_tensor({3, 5, 5}, rng)},
                         [](Tape<double>& t, std::span<const Var> v) { return maxpool2d(t, v[0]); }, rng));
  out.push_back(check_op("dense", {random_tensor({4}, rng), random_tensor({3, 4}, rng), random_tensor({3}, rng)},
                         [](Tape<double>& t, std::span<const Var> v) { return dense(t, v[0], v[1], v[2]); }, rng));
  out.push_back(check_op(
      "softmax_cross_entropy", {random_tensor({8}, rng)},
      [](Tape<double>& t, std::span<const Var> v) { return softmax_cross_entropy(t, v[0], 3).loss; }, rng, true));
  out.push_back(check_op("concat_channels", {random_tensor({1, 3, 3}, rng), random_tensor({2, 3, 3}, rng)},
                         [](Tape<double>& t, std::span<const Var> v) { return concat_channels(t, v[0], v[1]); },
                         rng));
  out.push_back(check_op("upsample_nearest", {random_tensor({2, 3, 3}, rng)},
                         [](Tape<double>& t, std::span<const Var> v) { return upsample_nearest(t, v[0]); }, rng));
  out.push_back(check_op("crop", {random_tensor({2, 6, 6}, rng)},
                         [](Tape<double>& t, std::span<const Var> v) { return crop(t, v[0], 5, 4); }, rng));
  out.push_back(check_op("attention", {random_tensor({4, 3, 3}, rng)},
                         [](Tape<double>& t, std::span<const Var> v) { return attention(t, v[0], 1, 2); }, rng));
  out.push_back(check_op(
      "weighted_sum", {random_tensor({1}, rng), random_tensor({1}, rng), random_tensor({1}, rng)},
      [](Tape<double>& t, std::span<const Var> v) {
        const double w[3] = {0.5, -1.0, 2.0};
        return weighted_sum(t, v, std::span<const double>(w));
      },
      rng, true));
  return out;
}

CheckResult model_gradcheck_result(const ModelCheckOptions& options) {
  VinConfig config = default_config(options.family, options.size, options.size);
  if (options.k > 0) config.k = options.k;
  if (config.hierarchical) config.k_high = options.k_high > 0 ? options.k_high : std::max(1, config.k / 2);

  DatasetConfig dc;
  dc.domains = 1;
  dc.trajectories = 2;
  dc.rows = dc.cols = options.size;
  dc.seed = options.seed;
  const Dataset data = build_dataset(dc);
  std::vector<Sample> samples = expand_samples(data);
  samples.resize(std::min<std::size_t>(samples.size(), 4));

  const ModelWeights weights = init_weights(options.family, config, mix_seed(options.seed, 1));
  GradCheckOptions opts;
  opts.seed = mix_seed(options.seed, 2);
  opts.max_coords_per_tensor = options.coords;
  if (opts.max_coords_per_tensor == 0 && weights.tensors.parameter_count() > kSmallModel) {
    opts.max_coords_per_tensor = kSampledCoords;
  }
  const GradCheckReport r = model_gradcheck(weights, data, samples, opts);
  std::string name = family_name(options.family) + " " + std::to_string(options.size) + "x" +
                     std::to_string(options.size);
  if (options.family != ModelFamily::cnn && options.family != ModelFamily::fcn) {
    name += " K=" + std::to_string(config.k);
  }
  if (config.hierarchical) name += " K_high=" + std::to_string(config.k_high);
  return {name, r.max_rel_error, kModelTolerance, r.coords_checked};
}

}  // namespace vinlab
