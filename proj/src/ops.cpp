#include "vinlab/ops.hpp"

#include <Eigen/Core>
#include <atomic>
#include <cstring>
#include <limits>
#include <string>

namespace vinlab {

namespace {

std::atomic<bool> g_backward_fault{false};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void require_image(const Tensor<T>& t, const char* op) {
  require(t.rank() == 3, std::string(op) + ": expected [C,H,W], got " + shape_string(t.shape()));
}

struct ConvGeom {
  int cin, h, w, cout, kh, kw;
  int rows() const { return cin * kh * kw; }
  int cells() const { return h * w; }
};

// col[(c*kh + a)*kw + b, y*w + x] = in[c, y - a + kh/2, x - b + kw/2], zero outside.
template <typename T>
void im2col(const T* in, const ConvGeom& g, RowMat<T>& col) {
  col.setZero(g.rows(), g.cells());
  const int ph = g.kh / 2, pw = g.kw / 2;
  for (int c = 0; c < g.cin; ++c) {
    const T* plane = in + static_cast<std::size_t>(c) * g.h * g.w;
    for (int a = 0; a < g.kh; ++a) {
      for (int b = 0; b < g.kw; ++b) {
        T* dst = col.data() + static_cast<std::size_t>((c * g.kh + a) * g.kw + b) * g.cells();
        const int dx = pw - b;
        const int x0 = std::max(0, -dx), x1 = std::min(g.w, g.w - dx);
        if (x0 >= x1) continue;
        for (int y = 0; y < g.h; ++y) {
          const int sy = y - a + ph;
          if (sy < 0 || sy >= g.h) continue;
          std::memcpy(dst + y * g.w + x0, plane + sy * g.w + x0 + dx,
                      sizeof(T) * static_cast<std::size_t>(x1 - x0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const RowMat<T>& col, const ConvGeom& g, T* in_grad) {
  const int ph = g.kh / 2, pw = g.kw / 2;
  for (int c = 0; c < g.cin; ++c) {
    T* plane = in_grad + static_cast<std::size_t>(c) * g.h * g.w;
    for (int a = 0; a < g.kh; ++a) {
      for (int b = 0; b < g.kw; ++b) {
        const T* src = col.data() + static_cast<std::size_t>((c * g.kh + a) * g.kw + b) * g.cells();
        const int dx = pw - b;
        const int x0 = std::max(0, -dx), x1 = std::min(g.w, g.w - dx);
        if (x0 >= x1) continue;
        for (int y = 0; y < g.h; ++y) {
          const int sy = y - a + ph;
          if (sy < 0 || sy >= g.h) continue;
          T* drow = plane + sy * g.w + dx;
          const T* srow = src + y * g.w;
          for (int x = x0; x < x1; ++x) drow[x] += srow[x];
        }
      }
    }
  }
}

}  // namespace

void set_backward_fault(bool enabled) { g_backward_fault.store(enabled); }
bool backward_fault_enabled() { return g_backward_fault.load(); }

template <typename T>
Var conv2d_same(Tape<T>& tape, Var input, Var kernels, std::optional<Var> bias) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& k = tape.value(kernels);
  require_image(x, "conv2d_same");
  require(k.rank() == 4, "conv2d_same: kernels must be [Cout,Cin,kh,kw], got " + shape_string(k.shape()));
  require(k.dim(1) == x.dim(0), "conv2d_same: kernel expects " + std::to_string(k.dim(1)) +
                                    " input channels, input has " + std::to_string(x.dim(0)));
  require(k.dim(2) % 2 == 1 && k.dim(3) % 2 == 1,
          "conv2d_same: kernel extents must be odd, got " + shape_string(k.shape()));
  const ConvGeom g{x.dim(0), x.dim(1), x.dim(2), k.dim(0), k.dim(2), k.dim(3)};
  if (bias) {
    const Tensor<T>& bv = tape.value(*bias);
    require(bv.rank() == 1 && bv.dim(0) == g.cout,
            "conv2d_same: bias must be [" + std::to_string(g.cout) + "], got " + shape_string(bv.shape()));
  }

  Tensor<T> out({g.cout, g.h, g.w});
  if (g.cells() > 0 && g.cout > 0) {
    RowMat<T> col;
    im2col(x.data(), g, col);
    MatMap<T> y(out.data(), g.cout, g.cells());
    ConstMatMap<T> w(k.data(), g.cout, g.rows());
    y.noalias() = w * col;
    if (bias) {
      const Tensor<T>& bv = tape.value(*bias);
      for (int o = 0; o < g.cout; ++o) y.row(o).array() += bv[o];
    }
  }

  auto backward = [input, kernels, bias, g](Tape<T>& t, Var self) {
    const Tensor<T>& dy_t = t.grad_buffer(self);
    ConstMatMap<T> dy(dy_t.data(), g.cout, g.cells());
    const bool need_k = t.requires_grad(kernels);
    const bool need_x = t.requires_grad(input);
    if (need_k) {
      RowMat<T> col;
      im2col(t.value(input).data(), g, col);
      Tensor<T>& dk_t = t.grad_buffer(kernels);
      MatMap<T> dk(dk_t.data(), g.cout, g.rows());
      if (backward_fault_enabled()) {
        dk.noalias() += T(1.01) * (dy * col.transpose());
      } else {
        dk.noalias() += dy * col.transpose();
      }
    }
    if (bias && t.requires_grad(*bias)) {
      Tensor<T>& db = t.grad_buffer(*bias);
      // Plain loop: Eigen's vectorised sum depends on buffer alignment.
      for (int o = 0; o < g.cout; ++o) {
        const T* row = dy_t.data() + static_cast<std::size_t>(o) * g.cells();
        T s = 0;
        for (int c = 0; c < g.cells(); ++c) s += row[c];
        db[o] += s;
      }
    }
    if (need_x) {
      ConstMatMap<T> w(t.value(kernels).data(), g.cout, g.rows());
      RowMat<T> dcol = w.transpose() * dy;
      col2im_add(dcol, g, t.grad_buffer(input).data());
    }
  };
  if (bias) return tape.record(std::move(out), {input, kernels, *bias}, backward, "conv2d_same");
  return tape.record(std::move(out), {input, kernels}, backward, "conv2d_same");
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
  return tape.record(
      std::move(out), {x},
      [x](Tape<T>& t, Var self) {
        const Tensor<T>& dy = t.grad_buffer(self);
        const Tensor<T>& in = t.value(x);
        Tensor<T>& dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (in[i] > T(0)) dx[i] += dy[i];
        }
      },
      "relu");
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  require(va.shape() == vb.shape(),
          "add: shape mismatch " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return tape.record(
      std::move(out), {a, b},
      [a, b](Tape<T>& t, Var self) {
        const Tensor<T>& dy = t.grad_buffer(self);
        for (Var in : {a, b}) {
          if (!t.requires_grad(in)) continue;
          Tensor<T>& d = t.grad_buffer(in);
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
        }
      },
      "add");
}

template <typename T>
ChannelMaxResult<T> channel_max(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  require_image(x, "channel_max");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(c >= 1, "channel_max: empty channel axis");
  const std::size_t cells = static_cast<std::size_t>(h) * w;
  Tensor<T> out({1, h, w});
  std::vector<int> arg(cells, 0);
  for (std::size_t p = 0; p < cells; ++p) out[p] = x[p];
  for (int ch = 1; ch < c; ++ch) {
    const T* plane = x.data() + ch * cells;
    for (std::size_t p = 0; p < cells; ++p) {
      if (plane[p] > out[p]) {
        out[p] = plane[p];
        arg[p] = ch;
      }
    }
  }
  Var v = tape.record(
      std::move(out), {input},
      [input, arg, cells](Tape<T>& t, Var self) {
        const Tensor<T>& dy = t.grad_buffer(self);
        Tensor<T>& dx = t.grad_buffer(input);
        for (std::size_t p = 0; p < cells; ++p) dx[arg[p] * cells + p] += dy[p];
      },
      "channel_max");
  return {v, std::move(arg)};
}

template <typename T>
Var maxpool2d(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  require_image(x, "maxpool2d");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(h > 0 && w > 0, "maxpool2d: empty spatial extent " + shape_string(x.shape()));
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor<T> out({c, oh, ow});
  std::vector<std::size_t> src(out.size());
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j, ++o) {
        std::size_t best = (static_cast<std::size_t>(ch) * h + 2 * i) * w + 2 * j;
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            const int y = 2 * i + a, xx = 2 * j + b;
            if (y >= h || xx >= w) continue;
            const std::size_t idx = (static_cast<std::size_t>(ch) * h + y) * w + xx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        out[o] = x[best];
        src[o] = best;
      }
    }
  }
  return tape.record(
      std::move(out), {input},
      [input, src](Tape<T>& t, Var self) {
        const Tensor<T>& dy = t.grad_buffer(self);
        Tensor<T>& dx = t.grad_buffer(input);
        for (std::size_t k = 0; k < src.size(); ++k) dx[src[k]] += dy[k];
      },
      "maxpool2d");
}

template <typename T>
Var dense(Tape<T>& tape, Var x, Var weights, std::optional<Var> bias) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(weights);
  require(wv.rank() == 2, "dense: weights must be [k,d], got " + shape_string(wv.shape()));
  const int k = wv.dim(0), d = wv.dim(1);
  require(xv.size() == static_cast<std::size_t>(d),
          "dense: input holds " + std::to_string(xv.size()) + " values, weights expect " + std::to_string(d));
  if (bias) {
    const Tensor<T>& bv = tape.value(*bias);
    require(bv.rank() == 1 && bv.dim(0) == k, "dense: bias must be [" + std::to_string(k) + "]");
  }
  Tensor<T> out({k});
  {
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> y(out.data(), k);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xm(xv.data(), d);
    y.noalias() = ConstMatMap<T>(wv.data(), k, d) * xm;
    if (bias) {
      const Tensor<T>& bv = tape.value(*bias);
      for (int r = 0; r < k; ++r) out[r] += bv[r];
    }
  }
  auto backward = [x, weights, bias, k, d](Tape<T>& t, Var self) {
    const Tensor<T>& dy_t = t.grad_buffer(self);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> dy(dy_t.data(), k);
    if (t.requires_grad(weights)) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xm(t.value(x).data(), d);
      MatMap<T>(t.grad_buffer(weights).data(), k, d).noalias() += dy * xm.transpose();
    }
    if (bias && t.requires_grad(*bias)) {
      Tensor<T>& db = t.grad_buffer(*bias);
      for (int r = 0; r < k; ++r) db[r] += dy_t[r];
    }
    if (t.requires_grad(x)) {
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dx(t.grad_buffer(x).data(), d);
      dx.noalias() += ConstMatMap<T>(t.value(weights).data(), k, d).transpose() * dy;
    }
  };
  if (bias) return tape.record(std::move(out), {x, weights, *bias}, backward, "dense");
  return tape.record(std::move(out), {x, weights}, backward, "dense");
}

template <typename T>
Tensor<T> softmax(std::span<const T> logits) {
  Tensor<T> p({static_cast<int>(logits.size())});
  if (logits.empty()) return p;
  T mx = logits[0];
  for (T z : logits) mx = std::max(mx, z);
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] /= sum;
  return p;
}

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(Tape<T>& tape, Var logits, int label) {
  const Tensor<T>& z = tape.value(logits);
  require(z.rank() == 1 && z.dim(0) >= 2, "softmax_cross_entropy: logits must be [k], k >= 2");
  if (label < 0 || label >= z.dim(0)) {
    throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) +
                            " outside [0," + std::to_string(z.dim(0)) + ")");
  }
  T mx = z[0];
  for (std::size_t i = 1; i < z.size(); ++i) mx = std::max(mx, z[i]);
  T sum = 0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += std::exp(z[i] - mx);
  const T loss = std::log(sum) - (z[label] - mx);
  Tensor<T> probs = softmax<T>(z.values());
  Var v = tape.record(
      Tensor<T>({1}, std::vector<T>{loss}), {logits},
      [logits, label, probs](Tape<T>& t, Var self) {
        const T g = t.grad_buffer(self)[0];
        Tensor<T>& dz = t.grad_buffer(logits);
        for (std::size_t i = 0; i < probs.size(); ++i) {
          dz[i] += g * (probs[i] - (static_cast<int>(i) == label ? T(1) : T(0)));
        }
      },
      "softmax_cross_entropy");
  return {v, std::move(probs)};
}

template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  require_image(va, "concat_channels");
  require_image(vb, "concat_channels");
  require(va.dim(1) == vb.dim(1) && va.dim(2) == vb.dim(2),
          "concat_channels: spatial mismatch " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
  Tensor<T> out({va.dim(0) + vb.dim(0), va.dim(1), va.dim(2)});
  std::copy(va.storage().begin(), va.storage().end(), out.storage().begin());
  std::copy(vb.storage().begin(), vb.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(va.size()));
  const std::size_t na = va.size();
  return tape.record(
      std::move(out), {a, b},
      [a, b, na](Tape<T>& t, Var self) {
        const Tensor<T>& dy = t.grad_buffer(self);
        if (t.requires_grad(a)) {
          Tensor<T>& da = t.grad_buffer(a);
          for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
        }
        if (t.requires_grad(b)) {
          Tensor<T>& db = t.grad_buffer(b);
          for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[na + i];
        }
      },
      "concat_channels");
}

template <typename T>
Var upsample_nearest(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  require_image(x, "upsample_nearest");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < 2 * h; ++i) {
      for (int j = 0; j < 2 * w; ++j) out.at(ch, i, j) = x.at(ch, i / 2, j / 2);
    }
  }
  return tape.record(
      std::move(out), {input},
      [input, c, h, w](Tape<T>& t, Var self) {
        const Tensor<T>& dy = t.grad_buffer(self);
        Tensor<T>& dx = t.grad_buffer(input);
        for (int ch = 0; ch < c; ++ch) {
          for (int i = 0; i < 2 * h; ++i) {
            for (int j = 0; j < 2 * w; ++j) dx.at(ch, i / 2, j / 2) += dy.at(ch, i, j);
          }
        }
      },
      "upsample_nearest");
}

template <typename T>
Var crop(Tape<T>& tape, Var input, int rows, int cols) {
  const Tensor<T>& x = tape.value(input);
  require_image(x, "crop");
  require(rows >= 0 && cols >= 0 && rows <= x.dim(1) && cols <= x.dim(2),
          "crop: window " + std::to_string(rows) + "x" + std::to_string(cols) + " exceeds " + shape_string(x.shape()));
  const int c = x.dim(0);
  Tensor<T> out({c, rows, cols});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) out.at(ch, i, j) = x.at(ch, i, j);
    }
  }
  return tape.record(
      std::move(out), {input},
      [input, c, rows, cols](Tape<T>& t, Var self) {
        const Tensor<T>& dy = t.grad_buffer(self);
        Tensor<T>& dx = t.grad_buffer(input);
        for (int ch = 0; ch < c; ++ch) {
          for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) dx.at(ch, i, j) += dy.at(ch, i, j);
          }
        }
      },
      "crop");
}

template <typename T>
Var attention(Tape<T>& tape, Var q, int i, int j) {
  const Tensor<T>& x = tape.value(q);
  require_image(x, "attention");
  if (i < 0 || j < 0 || i >= x.dim(1) || j >= x.dim(2)) {
    throw std::out_of_range("attention: cell (" + std::to_string(i) + "," + std::to_string(j) +
                            ") outside " + shape_string(x.shape()));
  }
  const int c = x.dim(0);
  Tensor<T> out({c});
  for (int ch = 0; ch < c; ++ch) out[ch] = x.at(ch, i, j);
  return tape.record(
      std::move(out), {q},
      [q, i, j, c](Tape<T>& t, Var self) {
        const Tensor<T>& dy = t.grad_buffer(self);
        Tensor<T>& dx = t.grad_buffer(q);
        for (int ch = 0; ch < c; ++ch) dx.at(ch, i, j) += dy[ch];
      },
      "attention");
}

template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> scalars, std::span<const T> weights) {
  require(scalars.size() == weights.size(), "weighted_sum: operand/weight count mismatch");
  require(!scalars.empty(), "weighted_sum: no operands");
  T total = 0;
  for (std::size_t k = 0; k < scalars.size(); ++k) {
    const Tensor<T>& s = tape.value(scalars[k]);
    require(s.size() == 1, "weighted_sum: operands must be scalars");
    total += weights[k] * s[0];
  }
  std::vector<Var> ins(scalars.begin(), scalars.end());
  std::vector<T> ws(weights.begin(), weights.end());
  return tape.record(
      Tensor<T>({1}, std::vector<T>{total}), std::span<const Var>(ins),
      [ins, ws](Tape<T>& t, Var self) {
        const T g = t.grad_buffer(self)[0];
        for (std::size_t k = 0; k < ins.size(); ++k) {
          if (t.requires_grad(ins[k])) t.grad_buffer(ins[k])[0] += g * ws[k];
        }
      },
      "weighted_sum");
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int first_channels) {
  if (t.rank() != 3 || first_channels < 0 || first_channels > t.dim(0)) {
    throw ShapeError("split_channels: cannot take " + std::to_string(first_channels) + " channels from " +
                     shape_string(t.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(t.dim(1)) * t.dim(2);
  const std::size_t na = plane * first_channels;
  Tensor<T> a({first_channels, t.dim(1), t.dim(2)},
              std::vector<T>(t.storage().begin(), t.storage().begin() + static_cast<std::ptrdiff_t>(na)));
  Tensor<T> b({t.dim(0) - first_channels, t.dim(1), t.dim(2)},
              std::vector<T>(t.storage().begin() + static_cast<std::ptrdiff_t>(na), t.storage().end()));
  return {std::move(a), std::move(b)};
}

#define VINLAB_INSTANTIATE_OPS(T)                                                              \
  template Var conv2d_same<T>(Tape<T>&, Var, Var, std::optional<Var>);                         \
  template Var relu<T>(Tape<T>&, Var);                                                         \
  template Var add<T>(Tape<T>&, Var, Var);                                                     \
  template ChannelMaxResult<T> channel_max<T>(Tape<T>&, Var);                                  \
  template Var maxpool2d<T>(Tape<T>&, Var);                                                    \
  template Var dense<T>(Tape<T>&, Var, Var, std::optional<Var>);                               \
  template CrossEntropyResult<T> softmax_cross_entropy<T>(Tape<T>&, Var, int);                 \
  template Var concat_channels<T>(Tape<T>&, Var, Var);                                         \
  template Var upsample_nearest<T>(Tape<T>&, Var);                                             \
  template Var crop<T>(Tape<T>&, Var, int, int);                                               \
  template Var attention<T>(Tape<T>&, Var, int, int);                                          \
  template Var weighted_sum<T>(Tape<T>&, std::span<const Var>, std::span<const T>);            \
  template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, int);           \
  template Tensor<T> softmax<T>(std::span<const T>);

VINLAB_INSTANTIATE_OPS(float)
VINLAB_INSTANTIATE_OPS(double)

}  // namespace vinlab
