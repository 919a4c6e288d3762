#include "vinlab/weights.hpp"

#include <cmath>
#include <set>

#include "vinlab/binary_io.hpp"

namespace vinlab {

namespace {

constexpr std::uint32_t kWeightsVersion = 1;

struct FamilyName {
  ModelFamily family;
  const char* name;
};

constexpr FamilyName kFamilies[] = {
    {ModelFamily::vin, "vin"},   {ModelFamily::vin_untied, "vin-untied"}, {ModelFamily::hvin, "hvin"},
    {ModelFamily::cnn, "cnn"},   {ModelFamily::fcn, "fcn"},
};

}  // namespace

std::string family_name(ModelFamily family) {
  for (const auto& f : kFamilies) {
    if (f.family == family) return f.name;
  }
  throw std::invalid_argument("unknown model family tag " + std::to_string(static_cast<int>(family)));
}

ModelFamily parse_family(std::string_view name) {
  for (const auto& f : kFamilies) {
    if (name == f.name) return f.family;
  }
  throw std::invalid_argument("unknown model family '" + std::string(name) + "'");
}

void VinConfig::validate() const {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("model config: grid extents must be positive");
  if (k < 1) throw std::invalid_argument("model config: K must be >= 1");
  if (q_channels < 1) throw std::invalid_argument("model config: q_channels must be >= 1");
  if (fr_hidden < 1) throw std::invalid_argument("model config: fr_hidden must be >= 1");
  if (hierarchical && k_high < 1) throw std::invalid_argument("model config: k_high must be >= 1");
}

int default_k(int rows, int cols) {
  const int size = std::max(rows, cols);
  switch (size) {
    case 8: return 10;
    case 16: return 20;
    case 28: return 36;
    default: return static_cast<int>(std::ceil(1.25 * size));
  }
}

int default_k_hierarchical(int rows, int cols) {
  const int size = std::max(rows, cols);
  switch (size) {
    case 8: return 4;
    case 16: return 10;
    case 28: return 16;
    default: return static_cast<int>(std::ceil(0.6 * size));
  }
}

VinConfig default_config(ModelFamily family, int rows, int cols) {
  VinConfig c;
  c.rows = rows;
  c.cols = cols;
  c.tied = family != ModelFamily::vin_untied;
  c.hierarchical = family == ModelFamily::hvin;
  c.k = c.hierarchical ? default_k_hierarchical(rows, cols) : default_k(rows, cols);
  c.k_high = c.hierarchical ? c.k : 0;
  return c;
}

void to_json(nlohmann::json& j, const VinConfig& c) {
  j = nlohmann::json{{"rows", c.rows},          {"cols", c.cols},
                     {"k", c.k},                {"q_channels", c.q_channels},
                     {"fr_hidden", c.fr_hidden}, {"tied", c.tied},
                     {"hierarchical", c.hierarchical}, {"k_high", c.k_high}};
}

void from_json(const nlohmann::json& j, VinConfig& c) {
  c.rows = j.at("rows").get<int>();
  c.cols = j.at("cols").get<int>();
  c.k = j.at("k").get<int>();
  c.q_channels = j.at("q_channels").get<int>();
  c.fr_hidden = j.at("fr_hidden").get<int>();
  c.tied = j.at("tied").get<bool>();
  c.hierarchical = j.at("hierarchical").get<bool>();
  c.k_high = j.at("k_high").get<int>();
}

template <typename T>
void NamedTensors<T>::add(std::string name, Tensor<T> tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate tensor name '" + name + "'");
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(tensor));
}

template <typename T>
std::optional<std::size_t> NamedTensors<T>::find(std::string_view name) const {
  for (std::size_t k = 0; k < names_.size(); ++k) {
    if (names_[k] == name) return k;
  }
  return std::nullopt;
}

template <typename T>
const Tensor<T>& NamedTensors<T>::at(std::string_view name) const {
  if (auto k = find(name)) return tensors_[*k];
  throw std::out_of_range("no tensor named '" + std::string(name) + "'");
}

template <typename T>
Tensor<T>& NamedTensors<T>::at(std::string_view name) {
  if (auto k = find(name)) return tensors_[*k];
  throw std::out_of_range("no tensor named '" + std::string(name) + "'");
}

template <typename T>
std::size_t NamedTensors<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
NamedTensors<T> NamedTensors<T>::zeros_like() const {
  NamedTensors out;
  for (std::size_t k = 0; k < tensors_.size(); ++k) out.add(names_[k], Tensor<T>::zeros(tensors_[k].shape()));
  return out;
}

template class NamedTensors<float>;
template class NamedTensors<double>;

std::vector<std::uint8_t> encode_weights(const ModelWeights& weights) {
  ByteWriter w;
  w.tag("VINW");
  w.u32(kWeightsVersion);
  w.u8(static_cast<std::uint8_t>(weights.family));
  w.string(nlohmann::json(weights.config).dump());
  const auto& names = weights.tensors.names();
  const auto& tensors = weights.tensors.tensors();
  for (std::size_t k = 0; k < names.size(); ++k) {
    w.string(names[k]);
    const Tensor<float>& t = tensors[k];
    if (t.rank() > 255) throw FormatError("weights: tensor rank exceeds 255");
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values()) w.f32(v);
  }
  return std::move(w.buffer());
}

ModelWeights decode_weights(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("VINW", "weights");
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion) throw FormatError("weights: unsupported version " + std::to_string(version));
  ModelWeights out;
  const std::uint8_t tag = r.u8();
  try {
    out.family = static_cast<ModelFamily>(tag);
    (void)family_name(out.family);
    out.config = nlohmann::json::parse(r.string()).get<VinConfig>();
  } catch (const std::exception& e) {
    throw FormatError(std::string("weights: bad header: ") + e.what());
  }
  while (!r.done()) {
    std::string name = r.string();
    const std::uint8_t ndim = r.u8();
    Shape shape;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const std::uint32_t extent = r.u32();
      if (extent > (1u << 30)) throw FormatError("weights: implausible extent in '" + name + "'");
      shape.push_back(static_cast<int>(extent));
    }
    const std::size_t n = shape_size(shape);
    if (n * 4 > r.remaining()) throw FormatError("weights: truncated payload for '" + name + "'");
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    if (out.tensors.contains(name)) throw FormatError("weights: duplicate tensor '" + name + "'");
    out.tensors.add(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  return out;
}

void save_weights(const std::filesystem::path& path, const ModelWeights& weights) {
  write_file(path, encode_weights(weights));
}

ModelWeights load_weights(const std::filesystem::path& path) {
  try {
    return decode_weights(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace vinlab
