#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "vinlab/dataset.hpp"
#include "vinlab/evaluator.hpp"
#include "vinlab/gradcheck.hpp"
#include "vinlab/optim.hpp"
#include "vinlab/rng.hpp"
#include "vinlab/weights.hpp"

namespace vinlab {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochStats {
  int epoch = 0;               // 1-based
  double train_loss = 0.0;     // mean cross-entropy over the epoch's batches
  double train_error = 0.0;    // 0-1 error of the batch predictions
  std::optional<double> val_error;
  double seconds = 0.0;
};

struct TrainConfig {
  ModelFamily family = ModelFamily::vin;
  /// Network shape; rows/cols must match the dataset. Use default_config().
  VinConfig model;
  int epochs = 30;
  int batch_size = 128;
  RmsPropConfig optim;
  std::uint64_t seed = 1;
  double data_fraction = 1.0;
  /// Each epoch shuffles the samples of every domain, cuts them into runs of
  /// this many samples and shuffles the runs; 1 gives a plain sample shuffle.
  int domain_chunk = 10;
  /// Share one reward map and VI pass between the batch samples of a domain.
  bool share_plan = true;
  int threads = 1;
  /// Train in 64-bit (slow; used to compare code paths exactly).
  bool double_precision = false;
  /// Finite-difference check of one batch at 64-bit before training.
  bool gradcheck = true;
  double gradcheck_tolerance = 1e-4;
  bool measure_initial_loss = true;
  std::function<void(const EpochStats&)> on_epoch;

  void validate() const;
};

struct TrainReport {
  ModelFamily family = ModelFamily::vin;
  VinConfig model;
  std::size_t domains = 0;
  std::size_t samples = 0;
  std::optional<double> initial_loss;
  std::optional<double> gradcheck_error;
  std::vector<EpochStats> epochs;
  std::optional<Metrics> validation;
  double wall_seconds = 0.0;
  std::string weights_path;
};

void to_json(nlohmann::json& j, const EpochStats& e);
void to_json(nlohmann::json& j, const TrainReport& r);

struct TrainResult {
  ModelWeights weights;
  TrainReport report;
};

/// Supervised training with RMSProp on minibatch-mean cross-entropy.
/// `val`, when given, is scored after every epoch (prediction loss) and fully
/// evaluated at the end.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset* val = nullptr,
                  std::optional<ModelWeights> initial = std::nullopt);

/// Keeps ceil(fraction * domains) whole domains chosen with `seed`, in their
/// original order.
Dataset subsample_dataset(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Sample order of one epoch (see TrainConfig::domain_chunk).
std::vector<Sample> epoch_order(const std::vector<Sample>& samples, int domain_chunk, Rng& rng);

template <typename T>
struct BatchGradient {
  double loss = 0.0;  // mean cross-entropy
  std::size_t errors = 0;
  std::vector<Tensor<T>> grads;  // d(loss)/d(param), parameter order
};

/// Loss and gradient of one batch. Samples of the same domain are grouped;
/// groups are processed independently and summed in order of first appearance.
template <typename T>
BatchGradient<T> batch_gradient(ModelFamily family, const VinConfig& config, const NamedTensors<T>& params,
                                const Dataset& dataset, std::span<const Sample> batch, bool share_plan = true,
                                int threads = 1);

/// Mean cross-entropy of `samples` without recording gradients.
template <typename T>
double mean_loss(ModelFamily family, const VinConfig& config, const NamedTensors<T>& params, const Dataset& dataset,
                 std::span<const Sample> samples, int threads = 1);

/// 64-bit finite-difference check of the batch loss of `samples`. Biases are
/// moved off zero first so no ReLU sits exactly on its kink.
GradCheckReport model_gradcheck(const ModelWeights& weights, const Dataset& dataset,
                                std::span<const Sample> samples, const GradCheckOptions& options);

}  // namespace vinlab
