#include "vinlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <map>

#include "vinlab/models.hpp"
#include "vinlab/parallel.hpp"

namespace vinlab {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kSubsampleStream = 3;
constexpr std::uint64_t kGradcheckStream = 4;
constexpr std::size_t kGradcheckSamples = 4;
constexpr std::size_t kGradcheckCoords = 16;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Samples grouped by domain, in order of first appearance.
std::vector<std::vector<const Sample*>> group_by_domain(std::span<const Sample> samples) {
  std::vector<std::vector<const Sample*>> groups;
  std::map<std::uint32_t, std::size_t> slot;
  for (const Sample& s : samples) {
    auto [it, fresh] = slot.try_emplace(s.domain, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(&s);
  }
  return groups;
}

template <typename T>
int logits_argmax(const Tensor<T>& v) {
  int best = 0;
  for (int a = 1; a < kNumActions; ++a) {
    if (v[a] > v[best]) best = a;
  }
  return best;
}

template <typename T>
struct GroupResult {
  double loss_sum = 0.0;
  std::size_t errors = 0;
  std::vector<Tensor<T>> grads;
};

double max_abs(const std::vector<Tensor<float>>& grads) {
  double m = 0.0;
  for (const auto& g : grads) {
    for (float v : g.values()) m = std::max(m, static_cast<double>(std::abs(v)));
  }
  return m;
}

double max_abs(const std::vector<Tensor<double>>& grads) {
  double m = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values()) m = std::max(m, std::abs(v));
  }
  return m;
}

std::string where(int epoch, std::size_t batch) {
  return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch);
}

template <typename T>
TrainResult train_impl(const TrainConfig& config, const Dataset& full, const Dataset* val,
                       std::optional<ModelWeights> initial) {
  const auto t0 = Clock::now();
  const Dataset data = config.data_fraction < 1.0 ? subsample_dataset(full, config.data_fraction, config.seed) : full;
  if (data.rows != config.model.rows || data.cols != config.model.cols) {
    throw std::invalid_argument("dataset maps are " + std::to_string(data.rows) + "x" + std::to_string(data.cols) +
                                " but the model is configured for " + std::to_string(config.model.rows) + "x" +
                                std::to_string(config.model.cols));
  }
  const std::vector<Sample> samples = expand_samples(data);
  if (samples.empty()) throw std::invalid_argument("training set holds no samples");

  ModelWeights weights =
      initial ? std::move(*initial) : init_weights(config.family, config.model, mix_seed(config.seed, kInitStream));
  if (weights.family != config.family || weights.config != config.model) {
    throw std::invalid_argument("initial weights do not match the configured model");
  }
  check_weights(weights);

  TrainReport report;
  report.family = config.family;
  report.model = config.model;
  report.domains = data.domains.size();
  report.samples = samples.size();

  if (config.gradcheck) {
    const std::size_t n = std::min(kGradcheckSamples, samples.size());
    GradCheckOptions opts;
    opts.max_coords_per_tensor = kGradcheckCoords;
    opts.seed = mix_seed(config.seed, kGradcheckStream);
    const GradCheckReport gc = model_gradcheck(weights, data, std::span(samples).first(n), opts);
    report.gradcheck_error = gc.max_rel_error;
    if (!(gc.max_rel_error < config.gradcheck_tolerance)) {
      throw TrainingError("pre-training gradient check failed: max relative error " +
                          std::to_string(gc.max_rel_error) + " in tensor '" +
                          weights.tensors.names()[gc.worst_tensor] + "'");
    }
  }

  NamedTensors<T> params = weights.tensors.template cast<T>();
  if (config.measure_initial_loss) {
    report.initial_loss = mean_loss<T>(config.family, config.model, params, data, samples, config.threads);
  }

  std::vector<Tensor<T>*> handles;
  for (Tensor<T>& t : params.tensors()) handles.push_back(&t);
  RmsPropState<T> state;
  Rng rng(mix_seed(config.seed, kShuffleStream));
  double last_max_grad = 0.0;

  auto current_weights = [&] {
    ModelWeights w;
    w.family = config.family;
    w.config = config.model;
    w.tensors = params.template cast<float>();
    return w;
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto te = Clock::now();
    const std::vector<Sample> order = epoch_order(samples, config.domain_chunk, rng);
    double loss_sum = 0.0;
    std::size_t errors = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - start);
      BatchGradient<T> bg;
      try {
        bg = batch_gradient<T>(config.family, config.model, params, data, std::span(order).subspan(start, n),
                               config.share_plan, config.threads);
      } catch (const NonFiniteError& e) {
        throw TrainingError("non-finite value at " + where(epoch, batch_index) + " (previous max |grad| " +
                            std::to_string(last_max_grad) + "): " + e.what());
      }
      const double gmax = max_abs(bg.grads);
      if (!std::isfinite(bg.loss) || !std::isfinite(gmax)) {
        throw TrainingError("non-finite loss or gradient at " + where(epoch, batch_index) + ": loss " +
                            std::to_string(bg.loss) + ", max |grad| " + std::to_string(gmax));
      }
      last_max_grad = gmax;
      rmsprop_update<T>(handles, bg.grads, state, config.optim);
      loss_sum += bg.loss * static_cast<double>(n);
      errors += bg.errors;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_error = static_cast<double>(errors) / static_cast<double>(order.size());
    if (val) stats.val_error = prediction_loss(network_policy(current_weights()), *val, config.threads);
    stats.seconds = seconds_since(te);
    report.epochs.push_back(stats);
    if (config.on_epoch) config.on_epoch(stats);
  }

  TrainResult result{current_weights(), std::move(report)};
  if (val) result.report.validation = evaluate(result.weights, *val, 0, config.threads);
  result.report.wall_seconds = seconds_since(t0);
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(optim.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(optim.decay >= 0.0 && optim.decay < 1.0)) throw std::invalid_argument("RMSProp decay must lie in [0, 1)");
  if (!(optim.eps > 0.0)) throw std::invalid_argument("RMSProp eps must be positive");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw std::invalid_argument("data fraction must lie in (0, 1]");
  if (domain_chunk < 1) throw std::invalid_argument("domain chunk must be >= 1");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if ((family == ModelFamily::hvin) != model.hierarchical) {
    throw std::invalid_argument("hierarchical flag does not match the model family");
  }
  if ((family == ModelFamily::vin_untied) == model.tied && family != ModelFamily::cnn && family != ModelFamily::fcn) {
    throw std::invalid_argument("tied flag does not match the model family");
  }
}

void to_json(nlohmann::json& j, const EpochStats& e) {
  j = nlohmann::json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_error", e.train_error},
                     {"seconds", e.seconds}};
  j["val_error"] = e.val_error ? nlohmann::json(*e.val_error) : nlohmann::json(nullptr);
}

void to_json(nlohmann::json& j, const TrainReport& r) {
  j = nlohmann::json{{"model", family_name(r.family)},
                     {"config", r.model},
                     {"domains", r.domains},
                     {"samples", r.samples},
                     {"epochs", r.epochs},
                     {"wall_seconds", r.wall_seconds},
                     {"weights", r.weights_path}};
  j["initial_loss"] = r.initial_loss ? nlohmann::json(*r.initial_loss) : nlohmann::json(nullptr);
  j["gradcheck_max_rel_error"] = r.gradcheck_error ? nlohmann::json(*r.gradcheck_error) : nlohmann::json(nullptr);
  j["validation"] = r.validation ? nlohmann::json(*r.validation) : nlohmann::json(nullptr);
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset* val,
                  std::optional<ModelWeights> initial) {
  config.validate();
  if (config.double_precision) return train_impl<double>(config, train_set, val, std::move(initial));
  return train_impl<float>(config, train_set, val, std::move(initial));
}

Dataset subsample_dataset(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("data fraction must lie in (0, 1]");
  const std::size_t total = dataset.domains.size();
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(total) - 1e-9));
  if (keep == 0) throw std::invalid_argument("data fraction selects no domains");
  std::vector<std::size_t> idx(total);
  for (std::size_t k = 0; k < total; ++k) idx[k] = k;
  Rng rng(mix_seed(seed, kSubsampleStream));
  rng.shuffle(idx);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  Dataset out = dataset;
  out.domains.clear();
  for (std::size_t k : idx) out.domains.push_back(dataset.domains[k]);
  return out;
}

std::vector<Sample> epoch_order(const std::vector<Sample>& samples, int domain_chunk, Rng& rng) {
  if (domain_chunk < 1) throw std::invalid_argument("domain chunk must be >= 1");
  std::map<std::uint32_t, std::vector<Sample>> by_domain;
  for (const Sample& s : samples) by_domain[s.domain].push_back(s);
  std::vector<std::vector<Sample>> chunks;
  for (auto& [domain, list] : by_domain) {
    rng.shuffle(list);
    for (std::size_t k = 0; k < list.size(); k += domain_chunk) {
      const auto end = list.begin() + static_cast<std::ptrdiff_t>(std::min(list.size(), k + domain_chunk));
      chunks.emplace_back(list.begin() + static_cast<std::ptrdiff_t>(k), end);
    }
  }
  rng.shuffle(chunks);
  std::vector<Sample> order;
  order.reserve(samples.size());
  for (const auto& c : chunks) order.insert(order.end(), c.begin(), c.end());
  return order;
}

template <typename T>
BatchGradient<T> batch_gradient(ModelFamily family, const VinConfig& config, const NamedTensors<T>& params,
                                const Dataset& dataset, std::span<const Sample> batch, bool share_plan,
                                int threads) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const auto groups = group_by_domain(batch);
  const T scale = T(1) / static_cast<T>(batch.size());
  std::vector<GroupResult<T>> results(groups.size());
  parallel_for(groups.size(), threads, [&](std::size_t g) {
    Tape<T> tape;
    const BoundParams<T> p(tape, params, true);
    const GridMap& map = dataset.domains.at(groups[g].front()->domain).map;
    std::optional<Var> plan;
    std::vector<Var> losses;
    GroupResult<T>& r = results[g];
    for (const Sample* s : groups[g]) {
      if (!share_plan || !plan) plan = policy_plan(tape, p, family, config, map);
      const Var logits = policy_logits(tape, p, family, config, map, *plan, s->state);
      const auto ce = softmax_cross_entropy(tape, logits, static_cast<int>(s->label));
      losses.push_back(ce.loss);
      r.loss_sum += static_cast<double>(tape.value(ce.loss)[0]);
      if (logits_argmax(tape.value(logits)) != static_cast<int>(s->label)) ++r.errors;
    }
    const std::vector<T> w(losses.size(), scale);
    tape.backward(weighted_sum(tape, std::span<const Var>(losses), std::span<const T>(w)));
    r.grads.reserve(p.vars().size());
    for (Var v : p.vars()) r.grads.push_back(tape.grad(v));
  });

  BatchGradient<T> out;
  out.grads = std::move(results[0].grads);
  double loss_sum = results[0].loss_sum;
  out.errors = results[0].errors;
  for (std::size_t g = 1; g < results.size(); ++g) {
    loss_sum += results[g].loss_sum;
    out.errors += results[g].errors;
    for (std::size_t k = 0; k < out.grads.size(); ++k) {
      T* dst = out.grads[k].data();
      const T* src = results[g].grads[k].data();
      for (std::size_t i = 0; i < out.grads[k].size(); ++i) dst[i] += src[i];
    }
  }
  out.loss = loss_sum / static_cast<double>(batch.size());
  return out;
}

template <typename T>
double mean_loss(ModelFamily family, const VinConfig& config, const NamedTensors<T>& params, const Dataset& dataset,
                 std::span<const Sample> samples, int threads) {
  if (samples.empty()) return 0.0;
  const auto groups = group_by_domain(samples);
  std::vector<double> sums(groups.size(), 0.0);
  parallel_for(groups.size(), threads, [&](std::size_t g) {
    Tape<T> tape;
    const BoundParams<T> p(tape, params, false);
    const GridMap& map = dataset.domains.at(groups[g].front()->domain).map;
    const Var plan = policy_plan(tape, p, family, config, map);
    for (const Sample* s : groups[g]) {
      const Var logits = policy_logits(tape, p, family, config, map, plan, s->state);
      sums[g] += static_cast<double>(tape.value(softmax_cross_entropy(tape, logits, static_cast<int>(s->label)).loss)[0]);
    }
  });
  double total = 0.0;
  for (double s : sums) total += s;
  return total / static_cast<double>(samples.size());
}

GradCheckReport model_gradcheck(const ModelWeights& weights, const Dataset& dataset, std::span<const Sample> samples,
                                const GradCheckOptions& options) {
  if (samples.empty()) throw std::invalid_argument("gradient check needs at least one sample");
  NamedTensors<double> layout = weights.tensors.cast<double>();
  Rng rng(mix_seed(options.seed, kGradcheckStream));
  for (Tensor<double>& t : layout.tensors()) {
    if (t.rank() != 1) continue;
    for (double& v : t.values()) v += rng.uniform(-0.1, 0.1);
  }
  std::vector<Tensor<double>> params = layout.tensors();
  const ModelFamily family = weights.family;
  const VinConfig config = weights.config;
  const auto groups = group_by_domain(samples);
  const double scale = 1.0 / static_cast<double>(samples.size());
  ScalarFunction f = [&](Tape<double>& tape, std::span<const Var> vars) {
    const BoundParams<double> p(layout, std::vector<Var>(vars.begin(), vars.end()));
    std::vector<Var> losses;
    for (const auto& group : groups) {
      const GridMap& map = dataset.domains.at(group.front()->domain).map;
      const Var plan = policy_plan(tape, p, family, config, map);
      for (const Sample* s : group) {
        const Var logits = policy_logits(tape, p, family, config, map, plan, s->state);
        losses.push_back(softmax_cross_entropy(tape, logits, static_cast<int>(s->label)).loss);
      }
    }
    const std::vector<double> w(losses.size(), scale);
    return weighted_sum(tape, std::span<const Var>(losses), std::span<const double>(w));
  };
  return grad_check(params, f, options);
}

template BatchGradient<float> batch_gradient<float>(ModelFamily, const VinConfig&, const NamedTensors<float>&,
                                                    const Dataset&, std::span<const Sample>, bool, int);
template BatchGradient<double> batch_gradient<double>(ModelFamily, const VinConfig&, const NamedTensors<double>&,
                                                      const Dataset&, std::span<const Sample>, bool, int);
template double mean_loss<float>(ModelFamily, const VinConfig&, const NamedTensors<float>&, const Dataset&,
                                 std::span<const Sample>, int);
template double mean_loss<double>(ModelFamily, const VinConfig&, const NamedTensors<double>&, const Dataset&,
                                  std::span<const Sample>, int);

}  // namespace vinlab
