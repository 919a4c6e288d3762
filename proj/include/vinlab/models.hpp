#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vinlab/gridworld.hpp"
#include "vinlab/ops.hpp"
#include "vinlab/tape.hpp"
#include "vinlab/weights.hpp"

namespace vinlab {

// Parameter names
//   VIN:   fr_conv1 [h,2,3,3], fr_conv1.bias [h], fr_conv2 [1,h,3,3], fr_conv2.bias [1],
//          vi_wr [q,1,3,3], vi_wv [q,1,3,3] (untied: vi_wr.<k>, vi_wv.<k> for k = 0..K-1),
//          policy_w [8,q], policy_b [8]
//   HVIN:  VIN set with vi_wr [q,2,3,3], plus hv_pre [2,2,3,3], hv_pre.bias and a coarse
//          copy of f_R and the VI kernels under the hv_ prefix
//   CNN:   cnn_conv1..5 with .bias, cnn_fc [8, 100*h'*w'], cnn_fc.bias
//   FCN:   fcn_conv1 [150,2,2m-1,2n-1], fcn_conv2 [150,150,1,1], fcn_conv3 [q,150,1,1]
//          (each with .bias), policy_w [8,q], policy_b [8]

/// Tape leaves for every tensor of a NamedTensors, in the same order.
template <typename T>
class BoundParams {
 public:
  /// trainable=false binds constants, so no gradient closures are recorded.
  BoundParams(Tape<T>& tape, const NamedTensors<T>& tensors, bool trainable = true);
  /// Uses existing leaves; vars[k] stands for the k-th tensor of `layout`.
  BoundParams(const NamedTensors<T>& layout, std::vector<Var> vars);

  Var operator()(std::string_view name) const;
  bool contains(std::string_view name) const { return tensors_->contains(name); }
  const std::vector<Var>& vars() const { return vars_; }

 private:
  const NamedTensors<T>* tensors_;
  std::vector<Var> vars_;
};

/// conv(h, 3x3) + bias -> relu -> conv(1, 3x3) + bias. `prefix` selects the
/// parameter set ("" or "hv_").
template <typename T>
Var reward_map_fR(Tape<T>& tape, const BoundParams<T>& p, Var image, std::string_view prefix = "");

struct ViResult {
  Var q;  // [q, m, n]
  Var v;  // [1, m, n]
};

/// K recurrences of Q = conv(reward_stack, wr) + conv(V, wv), V = max_c Q,
/// starting from V = 0. No biases. The reward stack may hold several channels.
template <typename T>
ViResult vi_module_forward(Tape<T>& tape, const BoundParams<T>& p, Var reward_stack, int k, bool tied,
                           std::string_view prefix = "");

/// Per-map part of a forward pass, shared by every state on that map:
/// Q for VIN/HVIN, the last feature map for FCN, the observation for CNN.
template <typename T>
Var policy_plan(Tape<T>& tape, const BoundParams<T>& p, ModelFamily family, const VinConfig& config,
                const GridMap& map);

/// Action logits [8] at `state`, given the plan of the same map.
template <typename T>
Var policy_logits(Tape<T>& tape, const BoundParams<T>& p, ModelFamily family, const VinConfig& config,
                  const GridMap& map, Var plan, Cell state);

template <typename T>
Var vin_forward(Tape<T>& tape, const BoundParams<T>& p, const VinConfig& config, const GridMap& map, Cell state);
template <typename T>
Var hvin_forward(Tape<T>& tape, const BoundParams<T>& p, const VinConfig& config, const GridMap& map,
                 Cell state);
template <typename T>
Var cnn_baseline_forward(Tape<T>& tape, const BoundParams<T>& p, const GridMap& map, Cell state);
template <typename T>
Var fcn_baseline_forward(Tape<T>& tape, const BoundParams<T>& p, const VinConfig& config, const GridMap& map,
                         Cell state);

/// Reward map and final value map of a VIN-family model on `map` (for HVIN
/// the fine level). Throws for the reactive baselines.
struct PlanFields {
  Tensor<float> reward;  // [1, m, n]
  Tensor<float> value;   // [1, m, n]
};
PlanFields plan_fields(const ModelWeights& weights, const GridMap& map);

/// Tensor shapes a family expects, in canonical order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(ModelFamily family, const VinConfig& config);

/// Glorot-uniform kernels, zero biases; deterministic in `seed`.
ModelWeights init_weights(ModelFamily family, const VinConfig& config, std::uint64_t seed);

/// Throws std::invalid_argument unless names and shapes match parameter_shapes.
void check_weights(const ModelWeights& weights);

/// Closed-form parameter count of the CNN baseline on a rows x cols grid.
std::size_t cnn_parameter_count(int rows, int cols);

/// Hand-set VIN whose VI module performs exact value iteration with
/// discount `gamma`: R = goal indicator + obstacle_reward * obstacle indicator,
/// q = 8 with Q[a] = R(s) + gamma * V(s + offset(a)), and identity policy head.
ModelWeights oracle_vin_weights(int rows, int cols, double gamma, int k, double obstacle_reward = 0.0);

extern template class BoundParams<float>;
extern template class BoundParams<double>;

}  // namespace vinlab
