#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "emi/kernels.hpp"
#include "emi/tape.hpp"
#include "emi/tensor.hpp"

// Differentiable operations. Forward runs through the kernels (or plain
// loops for the memory-bound ops); when the tape has grad enabled and an
// input requires grad, a backward closure is recorded. Shapes must match
// exactly everywhere: there is no implicit broadcast, in particular never
// along the time axis. The only feature-axis broadcast is the explicit
// add_bias op.

namespace emi {

namespace detail {

template <class S>
void check_2d(const TensorT<S>& t, const char* op) {
  if (t.ndim() != 2)
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " +
                     shape_str(t.shape()));
}

template <class S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b,
                      const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": mismatched shapes " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()) +
                     " (no implicit broadcast)");
}

}  // namespace detail

template <class S>
TensorT<S> matmul(TapeT<S>& tp, const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_2d(a, "matmul");
  detail::check_2d(b, "matmul");
  if (a.extent(1) != b.extent(0))
    throw ShapeError("matmul: inner extents differ: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  auto out = TensorT<S>::zeros({m, n});
  kern::matmul(a.value().data(), b.value().data(), out.value().data(), m, k, n);
  if (tp.grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    TensorT<S> ac = a, bc = b, oc = out;
    tp.record(out, [ac, bc, oc, m, k, n]() mutable {
      if (!oc.has_grad()) return;
      const S* g = oc.grad().data();
      if (ac.requires_grad()) {
        ac.ensure_grad();
        kern::matmul_acc_gbt(g, bc.value().data(), ac.grad().data(), m, n, k);
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        kern::matmul_acc_atg(ac.value().data(), g, bc.grad().data(), m, k, n);
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> transpose(TapeT<S>& tp, const TensorT<S>& x) {
  detail::check_2d(x, "transpose");
  const int m = x.extent(0), n = x.extent(1);
  auto out = TensorT<S>::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
  if (tp.grad_enabled() && x.requires_grad()) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, oc = out;
    tp.record(out, [xc, oc, m, n]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          xc.grad()[size_t(i) * n + j] += oc.grad()[size_t(j) * m + i];
    });
  }
  return out;
}

template <class S>
TensorT<S> add(TapeT<S>& tp, const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = TensorT<S>::zeros(a.shape());
  for (size_t i = 0; i < out.numel(); ++i)
    out.value()[i] = a.value()[i] + b.value()[i];
  if (tp.grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    TensorT<S> ac = a, bc = b, oc = out;
    tp.record(out, [ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad();
      if (ac.requires_grad()) {
        ac.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) ac.grad()[i] += g[i];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) bc.grad()[i] += g[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> sub(TapeT<S>& tp, const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = TensorT<S>::zeros(a.shape());
  for (size_t i = 0; i < out.numel(); ++i)
    out.value()[i] = a.value()[i] - b.value()[i];
  if (tp.grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    TensorT<S> ac = a, bc = b, oc = out;
    tp.record(out, [ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad();
      if (ac.requires_grad()) {
        ac.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) ac.grad()[i] += g[i];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) bc.grad()[i] -= g[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> mul(TapeT<S>& tp, const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = TensorT<S>::zeros(a.shape());
  for (size_t i = 0; i < out.numel(); ++i)
    out.value()[i] = a.value()[i] * b.value()[i];
  if (tp.grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    TensorT<S> ac = a, bc = b, oc = out;
    tp.record(out, [ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad();
      if (ac.requires_grad()) {
        ac.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i)
          ac.grad()[i] += g[i] * bc.value()[i];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i)
          bc.grad()[i] += g[i] * ac.value()[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> scale(TapeT<S>& tp, const TensorT<S>& x, S c) {
  auto out = TensorT<S>::zeros(x.shape());
  for (size_t i = 0; i < out.numel(); ++i) out.value()[i] = c * x.value()[i];
  if (tp.grad_enabled() && x.requires_grad()) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, oc = out;
    tp.record(out, [xc, oc, c]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (size_t i = 0; i < oc.grad().size(); ++i)
        xc.grad()[i] += c * oc.grad()[i];
    });
  }
  return out;
}

// out[t,j] = x[t,j] + bias[j]. The one sanctioned feature-axis broadcast.
template <class S>
TensorT<S> add_bias(TapeT<S>& tp, const TensorT<S>& x, const TensorT<S>& bias) {
  detail::check_2d(x, "add_bias");
  if (bias.ndim() != 1 || bias.extent(0) != x.extent(1))
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                     " does not match feature extent of " +
                     shape_str(x.shape()));
  const int T = x.extent(0), d = x.extent(1);
  auto out = TensorT<S>::zeros({T, d});
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < d; ++j) out.at(t, j) = x.at(t, j) + bias.at(j);
  if (tp.grad_enabled() && (x.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, bc = bias, oc = out;
    tp.record(out, [xc, bc, oc, T, d]() mutable {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad();
      if (xc.requires_grad()) {
        xc.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) xc.grad()[i] += g[i];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (int t = 0; t < T; ++t)
          for (int j = 0; j < d; ++j) bc.grad()[j] += g[size_t(t) * d + j];
      }
    });
  }
  return out;
}

// Gradient at exactly 0 is 0 (strict > below).
template <class S>
TensorT<S> relu(TapeT<S>& tp, const TensorT<S>& x) {
  auto out = TensorT<S>::zeros(x.shape());
  for (size_t i = 0; i < out.numel(); ++i)
    out.value()[i] = x.value()[i] > S(0) ? x.value()[i] : S(0);
  if (tp.grad_enabled() && x.requires_grad()) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, oc = out;
    tp.record(out, [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      const auto& g = oc.grad();
      for (size_t i = 0; i < g.size(); ++i)
        if (xc.value()[i] > S(0)) xc.grad()[i] += g[i];
    });
  }
  return out;
}

namespace detail {

// Describes the 1-D lines a reduction axis induces on a 1-D/2-D tensor.
struct AxisLines {
  int lines, len;
  size_t base_stride, step;
};

template <class S>
AxisLines axis_lines(const TensorT<S>& x, int axis, const char* op) {
  if (x.ndim() == 1) {
    if (axis != 0)
      throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                       " invalid for " + shape_str(x.shape()));
    return {1, x.extent(0), 0, 1};
  }
  if (x.ndim() == 2) {
    if (axis == 1) return {x.extent(0), x.extent(1), size_t(x.extent(1)), 1};
    if (axis == 0) return {x.extent(1), x.extent(0), 1, size_t(x.extent(1))};
  }
  throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                   " invalid for " + shape_str(x.shape()));
}

}  // namespace detail

// Max-shifted exponentials normalized along the given axis.
template <class S>
TensorT<S> softmax(TapeT<S>& tp, const TensorT<S>& x, int axis) {
  const auto ln = detail::axis_lines(x, axis, "softmax");
  auto out = TensorT<S>::zeros(x.shape());
  for (int l = 0; l < ln.lines; ++l) {
    const size_t base = size_t(l) * ln.base_stride;
    S mx = x.value()[base];
    for (int i = 1; i < ln.len; ++i)
      mx = std::max(mx, x.value()[base + size_t(i) * ln.step]);
    S sum = S(0);
    for (int i = 0; i < ln.len; ++i) {
      const size_t idx = base + size_t(i) * ln.step;
      out.value()[idx] = std::exp(x.value()[idx] - mx);
      sum += out.value()[idx];
    }
    for (int i = 0; i < ln.len; ++i) out.value()[base + size_t(i) * ln.step] /= sum;
  }
  if (tp.grad_enabled() && x.requires_grad()) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, oc = out;
    tp.record(out, [xc, oc, ln]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int l = 0; l < ln.lines; ++l) {
        const size_t base = size_t(l) * ln.base_stride;
        S dot = S(0);
        for (int i = 0; i < ln.len; ++i) {
          const size_t idx = base + size_t(i) * ln.step;
          dot += oc.grad()[idx] * oc.value()[idx];
        }
        for (int i = 0; i < ln.len; ++i) {
          const size_t idx = base + size_t(i) * ln.step;
          xc.grad()[idx] += (oc.grad()[idx] - dot) * oc.value()[idx];
        }
      }
    });
  }
  return out;
}

// Row-wise softmax over unmasked key positions only. Masked columns come
// out exactly 0 and are skipped, never touched, so their logits cannot
// leak into unmasked outputs even at the last bit.
template <class S>
TensorT<S> masked_softmax_rows(TapeT<S>& tp, const TensorT<S>& x,
                               const std::vector<uint8_t>& key_mask) {
  detail::check_2d(x, "masked_softmax_rows");
  const int R = x.extent(0), C = x.extent(1);
  if (int(key_mask.size()) != C)
    throw ShapeError("masked_softmax_rows: mask length " +
                     std::to_string(key_mask.size()) + " vs " +
                     std::to_string(C) + " columns");
  int valid = 0;
  for (uint8_t m : key_mask) valid += m ? 1 : 0;
  if (valid == 0)
    throw ContractError("masked_softmax_rows: all key positions masked");
  auto out = TensorT<S>::zeros({R, C});
  for (int r = 0; r < R; ++r) {
    S mx = S(0);
    bool first = true;
    for (int c = 0; c < C; ++c) {
      if (!key_mask[size_t(c)]) continue;
      mx = first ? x.at(r, c) : std::max(mx, x.at(r, c));
      first = false;
    }
    S sum = S(0);
    for (int c = 0; c < C; ++c) {
      if (!key_mask[size_t(c)]) continue;
      out.at(r, c) = std::exp(x.at(r, c) - mx);
      sum += out.at(r, c);
    }
    for (int c = 0; c < C; ++c)
      if (key_mask[size_t(c)]) out.at(r, c) /= sum;
  }
  if (tp.grad_enabled() && x.requires_grad()) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, oc = out;
    auto mask = key_mask;
    tp.record(out, [xc, oc, mask, R, C]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int r = 0; r < R; ++r) {
        S dot = S(0);
        for (int c = 0; c < C; ++c)
          if (mask[size_t(c)])
            dot += oc.grad()[size_t(r) * C + c] * oc.value()[size_t(r) * C + c];
        for (int c = 0; c < C; ++c)
          if (mask[size_t(c)])
            xc.grad()[size_t(r) * C + c] +=
                (oc.grad()[size_t(r) * C + c] - dot) *
                oc.value()[size_t(r) * C + c];
      }
    });
  }
  return out;
}

// Per-position normalization over the feature axis, then affine. A row of
// zero variance normalizes to zeros (eps keeps the division finite), so a
// constant row maps to beta.
template <class S>
TensorT<S> layer_norm(TapeT<S>& tp, const TensorT<S>& x,
                      const TensorT<S>& gamma, const TensorT<S>& beta, S eps) {
  const bool one_d = x.ndim() == 1;
  if (!one_d) detail::check_2d(x, "layer_norm");
  const int T = one_d ? 1 : x.extent(0);
  const int d = one_d ? x.extent(0) : x.extent(1);
  if (gamma.ndim() != 1 || gamma.extent(0) != d || beta.ndim() != 1 ||
      beta.extent(0) != d)
    throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) +
                     " / beta " + shape_str(beta.shape()) +
                     " do not match feature extent " + std::to_string(d));
  auto out = TensorT<S>::zeros(x.shape());
  std::vector<S> xhat(size_t(T) * d);
  std::vector<S> inv(size_t(T), S(0));
  for (int t = 0; t < T; ++t) {
    const S* row = x.value().data() + size_t(t) * d;
    S mean = S(0);
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= S(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= S(d);
    const S iv = S(1) / std::sqrt(var + eps);
    inv[size_t(t)] = iv;
    for (int j = 0; j < d; ++j) {
      const S xh = (row[j] - mean) * iv;
      xhat[size_t(t) * d + j] = xh;
      out.value()[size_t(t) * d + j] = gamma.at(j) * xh + beta.at(j);
    }
  }
  if (tp.grad_enabled() &&
      (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, gc = gamma, bc = beta, oc = out;
    tp.record(out, [xc, gc, bc, oc, xhat = std::move(xhat),
                    inv = std::move(inv), T, d]() mutable {
      if (!oc.has_grad()) return;
      const auto& g = oc.grad();
      if (gc.requires_grad()) {
        gc.ensure_grad();
        for (int t = 0; t < T; ++t)
          for (int j = 0; j < d; ++j)
            gc.grad()[j] += g[size_t(t) * d + j] * xhat[size_t(t) * d + j];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (int t = 0; t < T; ++t)
          for (int j = 0; j < d; ++j) bc.grad()[j] += g[size_t(t) * d + j];
      }
      if (xc.requires_grad()) {
        xc.ensure_grad();
        for (int t = 0; t < T; ++t) {
          S m1 = S(0), m2 = S(0);
          for (int j = 0; j < d; ++j) {
            const S gh = g[size_t(t) * d + j] * gc.value()[j];
            m1 += gh;
            m2 += gh * xhat[size_t(t) * d + j];
          }
          m1 /= S(d);
          m2 /= S(d);
          for (int j = 0; j < d; ++j) {
            const S gh = g[size_t(t) * d + j] * gc.value()[j];
            xc.grad()[size_t(t) * d + j] +=
                inv[size_t(t)] * (gh - m1 - xhat[size_t(t) * d + j] * m2);
          }
        }
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> sum_all(TapeT<S>& tp, const TensorT<S>& x) {
  S s = S(0);
  for (S v : x.value()) s += v;
  auto out = TensorT<S>::scalar(s);
  if (tp.grad_enabled() && x.requires_grad()) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, oc = out;
    tp.record(out, [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (size_t i = 0; i < xc.grad().size(); ++i)
        xc.grad()[i] += oc.grad()[0];
    });
  }
  return out;
}

template <class S>
TensorT<S> mean_all(TapeT<S>& tp, const TensorT<S>& x) {
  const size_t n = x.numel();
  S s = S(0);
  for (S v : x.value()) s += v;
  auto out = TensorT<S>::scalar(s / S(n));
  if (tp.grad_enabled() && x.requires_grad()) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, oc = out;
    tp.record(out, [xc, oc, n]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      const S g = oc.grad()[0] / S(n);
      for (size_t i = 0; i < xc.grad().size(); ++i) xc.grad()[i] += g;
    });
  }
  return out;
}

// Feature-axis concatenation, left block first.
template <class S>
TensorT<S> concat_cols(TapeT<S>& tp, const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_2d(a, "concat_cols");
  detail::check_2d(b, "concat_cols");
  if (a.extent(0) != b.extent(0))
    throw ShapeError("concat_cols: row counts differ: " +
                     std::to_string(a.extent(0)) + " vs " +
                     std::to_string(b.extent(0)));
  const int T = a.extent(0), da = a.extent(1), db = b.extent(1);
  auto out = TensorT<S>::zeros({T, da + db});
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < da; ++j) out.at(t, j) = a.at(t, j);
    for (int j = 0; j < db; ++j) out.at(t, da + j) = b.at(t, j);
  }
  if (tp.grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    TensorT<S> ac = a, bc = b, oc = out;
    tp.record(out, [ac, bc, oc, T, da, db]() mutable {
      if (!oc.has_grad()) return;
      const int dc = da + db;
      if (ac.requires_grad()) {
        ac.ensure_grad();
        for (int t = 0; t < T; ++t)
          for (int j = 0; j < da; ++j)
            ac.grad()[size_t(t) * da + j] += oc.grad()[size_t(t) * dc + j];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (int t = 0; t < T; ++t)
          for (int j = 0; j < db; ++j)
            bc.grad()[size_t(t) * db + j] += oc.grad()[size_t(t) * dc + da + j];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> slice_cols(TapeT<S>& tp, const TensorT<S>& x, int c0, int c1) {
  detail::check_2d(x, "slice_cols");
  const int T = x.extent(0), d = x.extent(1);
  if (c0 < 0 || c1 > d || c0 >= c1)
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " +
                     std::to_string(c1) + ") invalid for " +
                     shape_str(x.shape()));
  const int w = c1 - c0;
  auto out = TensorT<S>::zeros({T, w});
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < w; ++j) out.at(t, j) = x.at(t, c0 + j);
  if (tp.grad_enabled() && x.requires_grad()) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, oc = out;
    tp.record(out, [xc, oc, T, d, c0, w]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int t = 0; t < T; ++t)
        for (int j = 0; j < w; ++j)
          xc.grad()[size_t(t) * d + c0 + j] += oc.grad()[size_t(t) * w + j];
    });
  }
  return out;
}

// Stacks N length-d vectors into an [N x d] matrix.
template <class S>
TensorT<S> stack_rows(TapeT<S>& tp, const std::vector<TensorT<S>>& rows) {
  if (rows.empty()) throw ContractError("stack_rows: no rows given");
  const int d = rows[0].extent(0);
  for (const auto& r : rows)
    if (r.ndim() != 1 || r.extent(0) != d)
      throw ShapeError("stack_rows: row " + shape_str(r.shape()) +
                       " does not match first row length " + std::to_string(d));
  const int n = int(rows.size());
  auto out = TensorT<S>::zeros({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = rows[size_t(i)].at(j);
  bool any = false;
  for (const auto& r : rows) any = any || r.requires_grad();
  if (tp.grad_enabled() && any) {
    out.set_requires_grad(true);
    auto rc = rows;
    TensorT<S> oc = out;
    tp.record(out, [rc, oc, n, d]() mutable {
      if (!oc.has_grad()) return;
      for (int i = 0; i < n; ++i) {
        if (!rc[size_t(i)].requires_grad()) continue;
        rc[size_t(i)].ensure_grad();
        for (int j = 0; j < d; ++j)
          rc[size_t(i)].grad()[size_t(j)] += oc.grad()[size_t(i) * d + j];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> reshape(TapeT<S>& tp, const TensorT<S>& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  auto out = TensorT<S>::from_data(std::move(shape), x.value());
  if (tp.grad_enabled() && x.requires_grad()) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, oc = out;
    tp.record(out, [xc, oc]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (size_t i = 0; i < xc.grad().size(); ++i)
        xc.grad()[i] += oc.grad()[i];
    });
  }
  return out;
}

// Mean over valid time positions only; padded rows never contribute.
template <class S>
TensorT<S> masked_mean_pool(TapeT<S>& tp, const TensorT<S>& x,
                            const std::vector<uint8_t>& mask) {
  detail::check_2d(x, "masked_mean_pool");
  const int T = x.extent(0), d = x.extent(1);
  if (int(mask.size()) != T)
    throw ShapeError("masked_mean_pool: mask length " +
                     std::to_string(mask.size()) + " vs " + std::to_string(T) +
                     " time steps");
  int count = 0;
  for (uint8_t m : mask) count += m ? 1 : 0;
  if (count == 0)
    throw ContractError("masked_mean_pool: all positions masked");
  auto out = TensorT<S>::zeros({d});
  for (int t = 0; t < T; ++t) {
    if (!mask[size_t(t)]) continue;
    for (int j = 0; j < d; ++j) out.at(j) += x.at(t, j);
  }
  for (int j = 0; j < d; ++j) out.at(j) /= S(count);
  if (tp.grad_enabled() && x.requires_grad()) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, oc = out;
    auto mc = mask;
    tp.record(out, [xc, oc, mc, T, d, count]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int t = 0; t < T; ++t) {
        if (!mc[size_t(t)]) continue;
        for (int j = 0; j < d; ++j)
          xc.grad()[size_t(t) * d + j] += oc.grad()[size_t(j)] / S(count);
      }
    });
  }
  return out;
}

// Left-padded dilated causal convolution, no activation. Output length
// equals input length; output at t sees inputs at times <= t only.
template <class S>
TensorT<S> conv1d_causal(TapeT<S>& tp, const TensorT<S>& x,
                         const TensorT<S>& w, const TensorT<S>& b,
                         int dilation) {
  detail::check_2d(x, "conv1d_causal");
  if (w.ndim() != 3)
    throw ShapeError("conv1d_causal: weight must be [out x in x k], got " +
                     shape_str(w.shape()));
  const int T = x.extent(0), din = x.extent(1);
  const int dout = w.extent(0), kk = w.extent(2);
  if (w.extent(1) != din)
    throw ShapeError("conv1d_causal: input feature extent " +
                     std::to_string(din) + " does not match weight " +
                     shape_str(w.shape()));
  if (b.ndim() != 1 || b.extent(0) != dout)
    throw ShapeError("conv1d_causal: bias " + shape_str(b.shape()) +
                     " does not match out extent " + std::to_string(dout));
  if (dilation < 1)
    throw ContractError("conv1d_causal: dilation must be positive");
  auto out = TensorT<S>::zeros({T, dout});
  kern::conv1d_causal(x.value().data(), w.value().data(), b.value().data(),
                      out.value().data(), T, din, dout, kk, dilation);
  if (tp.grad_enabled() &&
      (x.requires_grad() || w.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    TensorT<S> xc = x, wc = w, bc = b, oc = out;
    tp.record(out, [xc, wc, bc, oc, T, din, dout, kk, dilation]() mutable {
      if (!oc.has_grad()) return;
      const S* g = oc.grad().data();
      if (xc.requires_grad()) {
        xc.ensure_grad();
        kern::conv1d_acc_dx(g, wc.value().data(), xc.grad().data(), T, din,
                            dout, kk, dilation);
      }
      if (wc.requires_grad() || bc.requires_grad()) {
        // The kernel fills both accumulators in one pass; route any
        // unwanted one into scratch.
        std::vector<S> wscratch, bscratch;
        S* dw;
        S* db;
        if (wc.requires_grad()) {
          wc.ensure_grad();
          dw = wc.grad().data();
        } else {
          wscratch.assign(wc.numel(), S(0));
          dw = wscratch.data();
        }
        if (bc.requires_grad()) {
          bc.ensure_grad();
          db = bc.grad().data();
        } else {
          bscratch.assign(bc.numel(), S(0));
          db = bscratch.data();
        }
        kern::conv1d_acc_dwdb(g, xc.value().data(), dw, db, T, din, dout, kk,
                              dilation);
      }
    });
  }
  return out;
}

}  // namespace emi
