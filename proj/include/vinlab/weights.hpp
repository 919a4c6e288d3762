#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "vinlab/tensor.hpp"

namespace vinlab {

enum class ModelFamily : std::uint8_t { vin = 0, vin_untied = 1, hvin = 2, cnn = 3, fcn = 4 };

std::string family_name(ModelFamily family);
/// Accepts the CLI spellings: vin, vin-untied, hvin, cnn, fcn.
ModelFamily parse_family(std::string_view name);

/// Network hyperparameters. Baselines read only rows/cols.
struct VinConfig {
  int rows = 8;
  int cols = 8;
  int k = 10;             // VI recurrences
  int q_channels = 10;    // channels of the Q layer
  int fr_hidden = 150;    // hidden channels of the reward map
  bool tied = true;       // one transition kernel pair shared by all recurrences
  bool hierarchical = false;
  int k_high = 0;         // recurrences of the coarse VI module (hierarchical only)

  void validate() const;
  friend bool operator==(const VinConfig&, const VinConfig&) = default;
};

/// Recurrence count used for a grid of this size: 10 / 20 / 36 for 8 / 16 / 28,
/// ceil(1.25 * max(rows, cols)) otherwise.
int default_k(int rows, int cols);
/// Hierarchical variant: 4 / 10 / 16 for 8 / 16 / 28, ceil(0.6 * max) otherwise.
int default_k_hierarchical(int rows, int cols);

/// Defaults for `family` on a rows x cols grid (tied/hierarchical set from the family).
VinConfig default_config(ModelFamily family, int rows, int cols);

void to_json(nlohmann::json& j, const VinConfig& c);
void from_json(const nlohmann::json& j, VinConfig& c);

/// Insertion-ordered collection of named tensors.
template <typename T>
class NamedTensors {
 public:
  void add(std::string name, Tensor<T> tensor);

  std::optional<std::size_t> find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name).has_value(); }
  const Tensor<T>& at(std::string_view name) const;
  Tensor<T>& at(std::string_view name);

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }

  std::size_t parameter_count() const;

  template <typename U>
  NamedTensors<U> cast() const {
    NamedTensors<U> out;
    for (std::size_t k = 0; k < tensors_.size(); ++k) out.add(names_[k], tensors_[k].template cast<U>());
    return out;
  }

  /// Zero tensors with the same names and shapes.
  NamedTensors zeros_like() const;

  friend bool operator==(const NamedTensors&, const NamedTensors&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
};

/// A trained or initialised network: family tag, hyperparameters and the
/// 32-bit parameter tensors.
struct ModelWeights {
  ModelFamily family = ModelFamily::vin;
  VinConfig config;
  NamedTensors<float> tensors;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// "VINW" file format, version 1. See README.
std::vector<std::uint8_t> encode_weights(const ModelWeights& weights);
ModelWeights decode_weights(std::span<const std::uint8_t> bytes);
void save_weights(const std::filesystem::path& path, const ModelWeights& weights);
ModelWeights load_weights(const std::filesystem::path& path);

extern template class NamedTensors<float>;
extern template class NamedTensors<double>;

}  // namespace vinlab
