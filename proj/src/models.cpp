#include "vinlab/models.hpp"

#include <cmath>
#include <stdexcept>

#include "vinlab/dataset.hpp"
#include "vinlab/rng.hpp"

namespace vinlab {

namespace {

constexpr int kFcnHidden = 150;
constexpr int kHvPreChannels = 2;
constexpr int kCnnChannels[5] = {50, 50, 100, 100, 100};

std::string cat(std::string_view a, std::string_view b) { return std::string(a) + std::string(b); }

std::string vi_name(std::string_view prefix, std::string_view base, bool tied, int k) {
  std::string name = cat(prefix, base);
  if (!tied) name += "." + std::to_string(k);
  return name;
}

int pooled(int extent) { return (extent + 1) / 2; }

void add_fr_shapes(std::vector<std::pair<std::string, Shape>>& out, std::string_view prefix, int in_channels,
                   int hidden) {
  out.emplace_back(cat(prefix, "fr_conv1"), Shape{hidden, in_channels, 3, 3});
  out.emplace_back(cat(prefix, "fr_conv1.bias"), Shape{hidden});
  out.emplace_back(cat(prefix, "fr_conv2"), Shape{1, hidden, 3, 3});
  out.emplace_back(cat(prefix, "fr_conv2.bias"), Shape{1});
}

void add_vi_shapes(std::vector<std::pair<std::string, Shape>>& out, std::string_view prefix, int reward_channels,
                   const VinConfig& c, int k) {
  const int copies = c.tied ? 1 : k;
  for (int t = 0; t < copies; ++t) {
    out.emplace_back(vi_name(prefix, "vi_wr", c.tied, t), Shape{c.q_channels, reward_channels, 3, 3});
    out.emplace_back(vi_name(prefix, "vi_wv", c.tied, t), Shape{c.q_channels, 1, 3, 3});
  }
}

bool is_bias(const std::string& name, const Shape& shape) {
  return shape.size() == 1 && (name.ends_with(".bias") || name == "policy_b");
}

// Observation padded with a wall row/column so both extents are even.
template <typename T>
Tensor<T> padded_image(const GridMap& map) {
  const int rows = map.rows + map.rows % 2;
  const int cols = map.cols + map.cols % 2;
  Tensor<T> img({2, rows, cols});
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const bool outside = i >= map.rows || j >= map.cols;
      img.at(0, i, j) = (outside || map.blocked({i, j})) ? T(1) : T(0);
    }
  }
  img.at(1, map.goal.i, map.goal.j) = T(1);
  return img;
}

template <typename T>
ViResult vin_levels(Tape<T>& tape, const BoundParams<T>& p, const VinConfig& c, const GridMap& map, Var* rbar_out) {
  const Var image = tape.constant(observation_image<T>(map));
  const Var rbar = reward_map_fR(tape, p, image);
  *rbar_out = rbar;
  return vi_module_forward(tape, p, rbar, c.k, c.tied);
}

template <typename T>
ViResult hvin_levels(Tape<T>& tape, const BoundParams<T>& p, const VinConfig& c, const GridMap& map, Var* rbar_out) {
  const Var coarse_in = tape.constant(padded_image<T>(map));
  Var coarse = conv2d_same(tape, coarse_in, p("hv_pre"), p("hv_pre.bias"));
  coarse = maxpool2d(tape, coarse);
  const Var coarse_r = reward_map_fR(tape, p, coarse, "hv_");
  const Var coarse_v = vi_module_forward(tape, p, coarse_r, c.k_high, c.tied, "hv_").v;
  const Var v_up = crop(tape, upsample_nearest(tape, coarse_v), map.rows, map.cols);

  const Var image = tape.constant(observation_image<T>(map));
  const Var rbar = reward_map_fR(tape, p, image);
  *rbar_out = rbar;
  return vi_module_forward(tape, p, concat_channels(tape, rbar, v_up), c.k, c.tied);
}

template <typename T>
Var fcn_plan(Tape<T>& tape, const BoundParams<T>& p, const GridMap& map) {
  const Var image = tape.constant(observation_image<T>(map));
  Var h = relu(tape, conv2d_same(tape, image, p("fcn_conv1"), p("fcn_conv1.bias")));
  h = relu(tape, conv2d_same(tape, h, p("fcn_conv2"), p("fcn_conv2.bias")));
  return conv2d_same(tape, h, p("fcn_conv3"), p("fcn_conv3.bias"));
}

template <typename T>
Var cnn_logits(Tape<T>& tape, const BoundParams<T>& p, const GridMap& map, Cell state) {
  Var h = tape.constant(observation_image_with_position<T>(map, state));
  for (int l = 1; l <= 5; ++l) {
    const std::string name = "cnn_conv" + std::to_string(l);
    h = relu(tape, conv2d_same(tape, h, p(name), p(name + ".bias")));
    if (l == 1 || l == 3) h = maxpool2d(tape, h);
  }
  return dense(tape, h, p("cnn_fc"), p("cnn_fc.bias"));
}

void check_state(const GridMap& map, Cell state) {
  if (!map.in_bounds(state)) {
    throw std::out_of_range("state (" + std::to_string(state.i) + "," + std::to_string(state.j) +
                            ") outside the grid");
  }
}

}  // namespace

template <typename T>
BoundParams<T>::BoundParams(Tape<T>& tape, const NamedTensors<T>& tensors, bool trainable) : tensors_(&tensors) {
  vars_.reserve(tensors.size());
  for (const Tensor<T>& t : tensors.tensors()) vars_.push_back(trainable ? tape.parameter(t) : tape.constant_ref(t));
}

template <typename T>
BoundParams<T>::BoundParams(const NamedTensors<T>& layout, std::vector<Var> vars)
    : tensors_(&layout), vars_(std::move(vars)) {
  if (vars_.size() != layout.size()) throw std::invalid_argument("BoundParams: one Var per tensor required");
}

template <typename T>
Var BoundParams<T>::operator()(std::string_view name) const {
  if (auto k = tensors_->find(name)) return vars_[*k];
  throw std::invalid_argument("model weights lack tensor '" + std::string(name) + "'");
}

template <typename T>
Var reward_map_fR(Tape<T>& tape, const BoundParams<T>& p, Var image, std::string_view prefix) {
  const Var hidden =
      relu(tape, conv2d_same(tape, image, p(cat(prefix, "fr_conv1")), p(cat(prefix, "fr_conv1.bias"))));
  return conv2d_same(tape, hidden, p(cat(prefix, "fr_conv2")), p(cat(prefix, "fr_conv2.bias")));
}

template <typename T>
ViResult vi_module_forward(Tape<T>& tape, const BoundParams<T>& p, Var reward_stack, int k, bool tied,
                           std::string_view prefix) {
  if (k < 1) throw std::invalid_argument("VI module needs K >= 1");
  std::optional<Var> reward_term;
  ViResult out{};
  for (int t = 0; t < k; ++t) {
    // Tied kernels see the same reward stack every time, so its convolution is reused.
    Var r;
    if (tied && reward_term) {
      r = *reward_term;
    } else {
      r = conv2d_same(tape, reward_stack, p(vi_name(prefix, "vi_wr", tied, t)));
      reward_term = r;
    }
    // V_0 = 0 contributes nothing on the first recurrence.
    out.q = t == 0 ? r : add(tape, r, conv2d_same(tape, out.v, p(vi_name(prefix, "vi_wv", tied, t))));
    out.v = channel_max(tape, out.q).values;
  }
  return out;
}

template <typename T>
Var policy_plan(Tape<T>& tape, const BoundParams<T>& p, ModelFamily family, const VinConfig& config,
                const GridMap& map) {
  switch (family) {
    case ModelFamily::vin:
    case ModelFamily::vin_untied:
    case ModelFamily::hvin: {
      Var rbar;
      return (family == ModelFamily::hvin ? hvin_levels(tape, p, config, map, &rbar)
                                          : vin_levels(tape, p, config, map, &rbar))
          .q;
    }
    case ModelFamily::fcn:
      return fcn_plan(tape, p, map);
    case ModelFamily::cnn:
      return tape.constant(observation_image<T>(map));
  }
  throw std::invalid_argument("unknown model family");
}

template <typename T>
Var policy_logits(Tape<T>& tape, const BoundParams<T>& p, ModelFamily family, const VinConfig&,
                  const GridMap& map, Var plan, Cell state) {
  check_state(map, state);
  if (family == ModelFamily::cnn) return cnn_logits(tape, p, map, state);
  return dense(tape, attention(tape, plan, state.i, state.j), p("policy_w"), p("policy_b"));
}

template <typename T>
Var vin_forward(Tape<T>& tape, const BoundParams<T>& p, const VinConfig& config, const GridMap& map, Cell state) {
  const ModelFamily f = config.tied ? ModelFamily::vin : ModelFamily::vin_untied;
  return policy_logits(tape, p, f, config, map, policy_plan(tape, p, f, config, map), state);
}

template <typename T>
Var hvin_forward(Tape<T>& tape, const BoundParams<T>& p, const VinConfig& config, const GridMap& map,
                 Cell state) {
  const Var plan = policy_plan(tape, p, ModelFamily::hvin, config, map);
  return policy_logits(tape, p, ModelFamily::hvin, config, map, plan, state);
}

template <typename T>
Var cnn_baseline_forward(Tape<T>& tape, const BoundParams<T>& p, const GridMap& map, Cell state) {
  check_state(map, state);
  return cnn_logits(tape, p, map, state);
}

template <typename T>
Var fcn_baseline_forward(Tape<T>& tape, const BoundParams<T>& p, const VinConfig& config, const GridMap& map,
                         Cell state) {
  const Var plan = policy_plan(tape, p, ModelFamily::fcn, config, map);
  return policy_logits(tape, p, ModelFamily::fcn, config, map, plan, state);
}

PlanFields plan_fields(const ModelWeights& weights, const GridMap& map) {
  if (weights.family == ModelFamily::cnn || weights.family == ModelFamily::fcn) {
    throw std::invalid_argument(family_name(weights.family) + " has no reward or value map");
  }
  Tape<float> tape;
  const BoundParams<float> p(tape, weights.tensors, false);
  Var rbar;
  const ViResult vi = weights.family == ModelFamily::hvin ? hvin_levels(tape, p, weights.config, map, &rbar)
                                                          : vin_levels(tape, p, weights.config, map, &rbar);
  return {tape.value(rbar), tape.value(vi.v)};
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(ModelFamily family, const VinConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, Shape>> out;
  switch (family) {
    case ModelFamily::vin:
    case ModelFamily::vin_untied:
      add_fr_shapes(out, "", 2, c.fr_hidden);
      add_vi_shapes(out, "", 1, c, c.k);
      break;
    case ModelFamily::hvin:
      if (!c.hierarchical) throw std::invalid_argument("hvin needs a hierarchical config");
      out.emplace_back("hv_pre", Shape{kHvPreChannels, 2, 3, 3});
      out.emplace_back("hv_pre.bias", Shape{kHvPreChannels});
      add_fr_shapes(out, "hv_", kHvPreChannels, c.fr_hidden);
      add_vi_shapes(out, "hv_", 1, c, c.k_high);
      add_fr_shapes(out, "", 2, c.fr_hidden);
      add_vi_shapes(out, "", 2, c, c.k);
      break;
    case ModelFamily::cnn: {
      int in = 3;
      for (int l = 0; l < 5; ++l) {
        const std::string name = "cnn_conv" + std::to_string(l + 1);
        out.emplace_back(name, Shape{kCnnChannels[l], in, 3, 3});
        out.emplace_back(name + ".bias", Shape{kCnnChannels[l]});
        in = kCnnChannels[l];
      }
      const int features = in * pooled(pooled(c.rows)) * pooled(pooled(c.cols));
      out.emplace_back("cnn_fc", Shape{kNumActions, features});
      out.emplace_back("cnn_fc.bias", Shape{kNumActions});
      return out;
    }
    case ModelFamily::fcn:
      out.emplace_back("fcn_conv1", Shape{kFcnHidden, 2, 2 * c.rows - 1, 2 * c.cols - 1});
      out.emplace_back("fcn_conv1.bias", Shape{kFcnHidden});
      out.emplace_back("fcn_conv2", Shape{kFcnHidden, kFcnHidden, 1, 1});
      out.emplace_back("fcn_conv2.bias", Shape{kFcnHidden});
      out.emplace_back("fcn_conv3", Shape{c.q_channels, kFcnHidden, 1, 1});
      out.emplace_back("fcn_conv3.bias", Shape{c.q_channels});
      break;
  }
  out.emplace_back("policy_w", Shape{kNumActions, c.q_channels});
  out.emplace_back("policy_b", Shape{kNumActions});
  return out;
}

ModelWeights init_weights(ModelFamily family, const VinConfig& config, std::uint64_t seed) {
  ModelWeights w;
  w.family = family;
  w.config = config;
  Rng rng(seed);
  for (auto& [name, shape] : parameter_shapes(family, config)) {
    Tensor<float> t(shape);
    if (!is_bias(name, shape)) {
      double fan_in = 0, fan_out = 0;
      if (shape.size() == 4) {
        const double taps = static_cast<double>(shape[2]) * shape[3];
        fan_in = shape[1] * taps;
        fan_out = shape[0] * taps;
      } else {
        fan_in = shape[1];
        fan_out = shape[0];
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (float& v : t.values()) v = static_cast<float>(rng.uniform(-limit, limit));
    }
    w.tensors.add(name, std::move(t));
  }
  return w;
}

void check_weights(const ModelWeights& weights) {
  const auto expected = parameter_shapes(weights.family, weights.config);
  if (expected.size() != weights.tensors.size()) {
    throw std::invalid_argument(family_name(weights.family) + " weights: expected " +
                                std::to_string(expected.size()) + " tensors, found " +
                                std::to_string(weights.tensors.size()));
  }
  for (const auto& [name, shape] : expected) {
    const auto k = weights.tensors.find(name);
    if (!k) throw std::invalid_argument(family_name(weights.family) + " weights: missing '" + name + "'");
    const Tensor<float>& t = weights.tensors.tensors()[*k];
    if (t.shape() != shape) {
      throw std::invalid_argument("tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                                  shape_string(shape));
    }
    if (!t.all_finite()) throw std::invalid_argument("tensor '" + name + "' holds non-finite values");
  }
}

std::size_t cnn_parameter_count(int rows, int cols) {
  std::size_t total = 0;
  int in = 3;
  for (int out : kCnnChannels) {
    total += static_cast<std::size_t>(out) * in * 9 + out;
    in = out;
  }
  const std::size_t features = static_cast<std::size_t>(in) * pooled(pooled(rows)) * pooled(pooled(cols));
  return total + kNumActions * features + kNumActions;
}

ModelWeights oracle_vin_weights(int rows, int cols, double gamma, int k, double obstacle_reward) {
  VinConfig c;
  c.rows = rows;
  c.cols = cols;
  c.k = k;
  c.q_channels = kNumActions;
  c.fr_hidden = 2;
  ModelWeights w;
  w.family = ModelFamily::vin;
  w.config = c;
  for (auto& [name, shape] : parameter_shapes(ModelFamily::vin, c)) w.tensors.add(name, Tensor<float>(shape));

  // Hidden channel 0 copies the goal plane, channel 1 the obstacle plane.
  Tensor<float>& fr1 = w.tensors.at("fr_conv1");
  fr1[((0 * 2 + 1) * 3 + 1) * 3 + 1] = 1.0f;
  fr1[((1 * 2 + 0) * 3 + 1) * 3 + 1] = 1.0f;
  Tensor<float>& fr2 = w.tensors.at("fr_conv2");
  fr2[(0 * 3 + 1) * 3 + 1] = 1.0f;
  fr2[(1 * 3 + 1) * 3 + 1] = static_cast<float>(obstacle_reward);

  Tensor<float>& wr = w.tensors.at("vi_wr");
  Tensor<float>& wv = w.tensors.at("vi_wv");
  Tensor<float>& pw = w.tensors.at("policy_w");
  for (int a = 0; a < kNumActions; ++a) {
    wr[(a * 3 + 1) * 3 + 1] = 1.0f;
    // The kernel is flipped: tap (1-di, 1-dj) reads V at (i+di, j+dj).
    const Cell d = kActionOffsets[a];
    wv[(a * 3 + (1 - d.i)) * 3 + (1 - d.j)] = static_cast<float>(gamma);
    pw[a * kNumActions + a] = 1.0f;
  }
  return w;
}

template class BoundParams<float>;
template class BoundParams<double>;

#define VINLAB_INSTANTIATE_MODELS(T)                                                                           \
  template Var reward_map_fR<T>(Tape<T>&, const BoundParams<T>&, Var, std::string_view);                      \
  template ViResult vi_module_forward<T>(Tape<T>&, const BoundParams<T>&, Var, int, bool, std::string_view);  \
  template Var policy_plan<T>(Tape<T>&, const BoundParams<T>&, ModelFamily, const VinConfig&, const GridMap&); \
  template Var policy_logits<T>(Tape<T>&, const BoundParams<T>&, ModelFamily, const VinConfig&,               \
                                const GridMap&, Var, Cell);                                                    \
  template Var vin_forward<T>(Tape<T>&, const BoundParams<T>&, const VinConfig&, const GridMap&, Cell);       \
  template Var hvin_forward<T>(Tape<T>&, const BoundParams<T>&, const VinConfig&, const GridMap&, Cell);      \
  template Var cnn_baseline_forward<T>(Tape<T>&, const BoundParams<T>&, const GridMap&, Cell);                \
  template Var fcn_baseline_forward<T>(Tape<T>&, const BoundParams<T>&, const VinConfig&, const GridMap&, Cell);

VINLAB_INSTANTIATE_MODELS(float)
VINLAB_INSTANTIATE_MODELS(double)

}  // namespace vinlab
