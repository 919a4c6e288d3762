#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "vinlab/tape.hpp"
#include "vinlab/tensor.hpp"

namespace vinlab {

// Differentiable operators used by the policy networks. Image tensors are
// [C, H, W]; vectors are rank 1. Every op records its own backward closure.

/// Zero-padded "same" convolution (true convolution, kernel flipped):
///   out[o,y,x] = bias[o] + sum_{c,a,b} k[o,c,a,b] * in[c, y-a+kh/2, x-b+kw/2]
/// Kernels are [Cout, Cin, kh, kw] with odd kh, kw. No activation.
template <typename T>
Var conv2d_same(Tape<T>& tape, Var input, Var kernels, std::optional<Var> bias = std::nullopt);

template <typename T>
Var relu(Tape<T>& tape, Var x);

/// Elementwise sum of two same-shaped tensors.
template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
struct ChannelMaxResult {
  Var values;               // [1, H, W]
  std::vector<int> argmax;  // H*W entries, lowest channel index on ties
};

/// Max over the channel axis. Gradient flows to the argmax channel only.
template <typename T>
ChannelMaxResult<T> channel_max(Tape<T>& tape, Var input);

/// 2x2 max pooling with stride 2; odd trailing rows/columns pool a partial patch.
template <typename T>
Var maxpool2d(Tape<T>& tape, Var input);

/// W * x + b with W [k, d]; x may have any shape holding d elements.
template <typename T>
Var dense(Tape<T>& tape, Var x, Var weights, std::optional<Var> bias = std::nullopt);

template <typename T>
struct CrossEntropyResult {
  Var loss;         // shape [1]
  Tensor<T> probs;  // softmax(logits)
};

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(Tape<T>& tape, Var logits, int label);

/// Channel-wise concatenation, `a` first.
template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b);

/// Nearest-neighbour 2x upsampling: every cell becomes a 2x2 block.
template <typename T>
Var upsample_nearest(Tape<T>& tape, Var input);

/// Top-left [C, rows, cols] window of a [C, H, W] tensor.
template <typename T>
Var crop(Tape<T>& tape, Var input, int rows, int cols);

/// Channel vector at cell (i, j) of a [C, H, W] tensor.
template <typename T>
Var attention(Tape<T>& tape, Var q, int i, int j);

/// sum_k w[k] * s[k] over scalar vars; returns shape [1].
template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> scalars, std::span<const T> weights);

// Plain tensor helpers (not recorded).

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int first_channels);

template <typename T>
Tensor<T> softmax(std::span<const T> logits);

/// Negative control for gradient checking: when enabled, conv2d_same reports
/// a kernel gradient scaled by 1.01. Process-wide; off by default.
void set_backward_fault(bool enabled);
bool backward_fault_enabled();

}  // namespace vinlab
