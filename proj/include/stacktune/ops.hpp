#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "stacktune/rng.hpp"
#include "stacktune/tensor.hpp"

// Differentiable primitives. Every op validates its input shapes, computes the
// forward value, and registers a backward rule that accumulates into the
// inputs' gradient buffers.

namespace stacktune {

inline constexpr int kIgnoreIndex = -100;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kCosineEps = 1e-8;

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, dim = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.dim = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

inline Shape broadcast_shapes(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::size_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1) shape_mismatch(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

/// Flat source index into `src` for every element of the broadcast `out`.
inline std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& src) {
  const std::size_t r = out.size();
  std::vector<std::size_t> src_stride(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t k = src.size() - 1 - i;
    const std::size_t o = r - 1 - i;
    src_stride[o] = src[k] == 1 ? 0 : stride;
    stride *= src[k];
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> map(n);
  // Fast paths: src repeats along leading axes only (i % size), or along
  // trailing axes only (i / repeat).
  const std::size_t size = numel(src);
  auto src_dim = [&](std::size_t d) { return d + src.size() >= r ? src[d + src.size() - r] : std::size_t(1); };
  std::size_t lead = r;
  while (lead > 0 && src_dim(lead - 1) == out[lead - 1]) --lead;
  bool ones = true;
  for (std::size_t d = 0; d < lead; ++d) ones = ones && src_dim(d) == 1;
  if (ones) {
    for (std::size_t i = 0; i < n; i += size) {
      for (std::size_t j = 0; j < size; ++j) map[i + j] = j;
    }
    return map;
  }
  std::size_t split = 0;
  while (split < r && src_dim(split) == out[split]) ++split;
  ones = true;
  for (std::size_t d = split; d < r; ++d) ones = ones && src_dim(d) == 1;
  if (ones) {
    const std::size_t repeat = n / size;
    for (std::size_t j = 0; j < size; ++j) {
      for (std::size_t t = 0; t < repeat; ++t) map[j * repeat + t] = j;
    }
    return map;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = pos;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      pos += src_stride[d];
      if (idx[d] < out[d]) break;
      pos -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

inline std::uint64_t hash_bits(std::uint64_t h, std::uint64_t v) {
  return (h ^ v) * 0x100000001B3ULL;
}

// Elementwise binary op with numpy-style broadcasting.
// fwd(a, b) -> y; da(g, a, b) and db(g, a, b) give the local contributions.
template <class T, class Fwd, class Da, class Db>
BasicTensor<T> binary(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd,
                      Da da, Db db) {
  const Shape out_shape = broadcast_shapes(op, a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  const bool same_a = a.shape() == out_shape;
  const bool same_b = b.shape() == out_shape;
  std::vector<std::size_t> map_a, map_b;
  if (!same_a) map_a = broadcast_map(out_shape, a.shape());
  if (!same_b) map_b = broadcast_map(out_shape, b.shape());

  std::vector<T> y(n);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = fwd(av[same_a ? i : map_a[i]], bv[same_b ? i : map_b[i]]);
  }
  return make_result<T>(
      op, out_shape, std::move(y), {a, b},
      [same_a, same_b, map_a = std::move(map_a), map_b = std::move(map_b), da, db](Node<T>& out) {
        Node<T>& na = *out.inputs[0];
        Node<T>& nb = *out.inputs[1];
        const std::size_t n = out.data.size();
        if (na.requires_grad) {
          na.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ia = same_a ? i : map_a[i];
            const std::size_t ib = same_b ? i : map_b[i];
            na.grad[ia] += da(out.grad[i], na.data[ia], nb.data[ib]);
          }
        }
        if (nb.requires_grad) {
          nb.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ia = same_a ? i : map_a[i];
            const std::size_t ib = same_b ? i : map_b[i];
            nb.grad[ib] += db(out.grad[i], na.data[ia], nb.data[ib]);
          }
        }
      });
}

template <class T, class Fwd, class Dx>
BasicTensor<T> unary(const char* op, const BasicTensor<T>& x, Fwd fwd, Dx dx) {
  const auto xv = x.data();
  std::vector<T> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xv[i]);
  return make_result<T>(op, x.shape(), std::move(y), {x}, [dx](Node<T>& out) {
    Node<T>& in = *out.inputs[0];
    in.ensure_grad();
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      in.grad[i] += dx(out.grad[i], in.data[i], out.data[i]);
    }
  });
}

// C[n,m] += A[n,k] * B[k,m]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c + i * m;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// GA[n,k] += G[n,m] * B[k,m]^T
// B is transposed first so the inner loop is an independent axpy over k,
// which vectorizes without reassociating any sum.
template <class T>
void gemm_nt(const T* g, const T* b, T* ga, std::size_t n, std::size_t k, std::size_t m) {
  std::vector<T> bt(k * m);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = b[p * m + j];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const T* gi = g + i * m;
    T* gai = ga + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const T gv = gi[j];
      const T* btj = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) gai[p] += gv * btj[p];
    }
  }
}

// GB[k,m] += A[n,k]^T * G[n,m]
template <class T>
void gemm_tn(const T* a, const T* g, T* gb, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * k;
    const T* gi = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* gbp = gb + p * m;
      for (std::size_t j = 0; j < m; ++j) gbp[j] += av * gi[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <class T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
      [](T g, T x, T y) { return -g * x / (y * y); });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T c) {
  return detail::unary<T>(
      "scale", x, [c](T v) { return v * c; }, [c](T g, T, T) { return g * c; });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T c) {
  return detail::unary<T>(
      "add_scalar", x, [c](T v) { return v + c; }, [](T g, T, T) { return g; });
}

/// 1 - x, the complement used by gates.
template <class T>
BasicTensor<T> one_minus(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "one_minus", x, [](T v) { return T(1) - v; }, [](T g, T, T) { return -g; });
}

template <class T>
BasicTensor<T> broadcast_to(const BasicTensor<T>& x, const Shape& shape) {
  const Shape out = detail::broadcast_shapes("broadcast_to", x.shape(), shape);
  if (out != shape) detail::shape_mismatch("broadcast_to", x.shape(), shape);
  auto map = detail::broadcast_map(shape, x.shape());
  std::vector<T> y(map.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[map[i]];
  return make_result<T>("broadcast_to", shape, std::move(y), {x},
                        [map = std::move(map)](Node<T>& out) {
                          Node<T>& in = *out.inputs[0];
                          in.ensure_grad();
                          for (std::size_t i = 0; i < map.size(); ++i) in.grad[map[i]] += out.grad[i];
                        });
}

// ---------------------------------------------------------------------------
// Activations

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  if (detail::branch_trace) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (T v : x.data()) h = detail::hash_bits(h, v > T(0));
    detail::record_branch(h);
  }
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T g, T v, T) { return v > T(0) ? g : T(0); });
}

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T g, T, T y) { return g * (T(1) - y * y); });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T g, T, T y) { return g * y * (T(1) - y); });
}

/// Keeps |x| >= eps by snapping small values to +-eps (sign preserved, zero
/// maps to +eps). Gradient is 1 on the identity branch and 0 on the floor.
template <class T>
BasicTensor<T> abs_floor(const BasicTensor<T>& x, T eps) {
  if (detail::branch_trace) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    // Branch is (identity or floor, sign); a sign change is a jump when the
    // result is used as a divisor.
    for (T v : x.data()) h = detail::hash_bits(h, (std::abs(v) >= eps ? 0u : 2u) + (v < T(0) ? 1u : 0u));
    detail::record_branch(h);
  }
  return detail::unary<T>(
      "abs_floor", x,
      [eps](T v) { return std::abs(v) >= eps ? v : (v < T(0) ? -eps : eps); },
      [eps](T g, T v, T) { return std::abs(v) >= eps ? g : T(0); });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [..., k] x [k, m] -> [..., m]. Leading axes of `a` are flattened.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.dim(-1) != b.dim(0)) {
    detail::shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t k = b.dim(0), m = b.dim(1);
  const std::size_t n = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = m;
  std::vector<T> y(n * m, T(0));
  detail::gemm_nn(a.data().data(), b.data().data(), y.data(), n, k, m);
  return make_result<T>("matmul", std::move(out_shape), std::move(y), {a, b},
                        [n, k, m](Node<T>& out) {
                          Node<T>& na = *out.inputs[0];
                          Node<T>& nb = *out.inputs[1];
                          if (na.requires_grad) {
                            na.ensure_grad();
                            detail::gemm_nt(out.grad.data(), nb.data.data(), na.grad.data(), n, k, m);
                          }
                          if (nb.requires_grad) {
                            nb.ensure_grad();
                            detail::gemm_tn(na.data.data(), out.grad.data(), nb.grad.data(), n, k, m);
                          }
                        });
}

/// Batched matmul: [B, n, k] x [B, k, m] -> [B, n, m].
template <class T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    detail::shape_mismatch("bmm", a.shape(), b.shape());
  }
  const std::size_t batch = a.dim(0), n = a.dim(1), k = a.dim(2), m = b.dim(2);
  std::vector<T> y(batch * n * m, T(0));
  for (std::size_t s = 0; s < batch; ++s) {
    detail::gemm_nn(a.data().data() + s * n * k, b.data().data() + s * k * m, y.data() + s * n * m,
                    n, k, m);
  }
  return make_result<T>(
      "bmm", Shape{batch, n, m}, std::move(y), {a, b}, [batch, n, k, m](Node<T>& out) {
        Node<T>& na = *out.inputs[0];
        Node<T>& nb = *out.inputs[1];
        if (na.requires_grad) na.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        for (std::size_t s = 0; s < batch; ++s) {
          const T* g = out.grad.data() + s * n * m;
          if (na.requires_grad) {
            detail::gemm_nt(g, nb.data.data() + s * k * m, na.grad.data() + s * n * k, n, k, m);
          }
          if (nb.requires_grad) {
            detail::gemm_tn(na.data.data() + s * n * k, g, nb.grad.data() + s * k * m, n, k, m);
          }
        }
      });
}

/// Swaps two axes.
template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x, int axis0, int axis1) {
  const std::size_t a0 = x.normalize_axis(axis0), a1 = x.normalize_axis(axis1);
  const Shape& in_shape = x.shape();
  Shape out_shape = in_shape;
  std::swap(out_shape[a0], out_shape[a1]);
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * in_shape[d];
  std::vector<std::size_t> perm_stride = in_stride;
  std::swap(perm_stride[a0], perm_stride[a1]);

  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = pos;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      pos += perm_stride[d];
      if (idx[d] < out_shape[d]) break;
      pos -= perm_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[map[i]];
  return make_result<T>("transpose", std::move(out_shape), std::move(y), {x},
                        [map = std::move(map)](Node<T>& out) {
                          Node<T>& in = *out.inputs[0];
                          in.ensure_grad();
                          for (std::size_t i = 0; i < map.size(); ++i) in.grad[map[i]] += out.grad[i];
                        });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) detail::shape_mismatch("reshape", x.shape(), shape);
  std::vector<T> y(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(y), {x}, [](Node<T>& out) {
    Node<T>& in = *out.inputs[0];
    in.ensure_grad();
    for (std::size_t i = 0; i < out.grad.size(); ++i) in.grad[i] += out.grad[i];
  });
}

template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t ax = parts[0].normalize_axis(axis);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) detail::shape_mismatch("concat", parts[0].shape(), p.shape());
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d]) {
        detail::shape_mismatch("concat", parts[0].shape(), p.shape());
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  const auto split = detail::split_axis(out_shape, ax);
  std::vector<T> y(numel(out_shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[ax] * split.inner;
    widths.push_back(w);
    const auto pv = p.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pv.data() + o * w, w, y.data() + o * split.dim * split.inner + offset);
    }
    offset += w;
  }
  const std::size_t row = split.dim * split.inner;
  const std::size_t outer = split.outer;
  return make_result<T>("concat", std::move(out_shape), std::move(y), parts,
                        [widths = std::move(widths), row, outer](Node<T>& out) {
                          std::size_t offset = 0;
                          for (std::size_t i = 0; i < out.inputs.size(); ++i) {
                            Node<T>& in = *out.inputs[i];
                            const std::size_t w = widths[i];
                            if (in.requires_grad) {
                              in.ensure_grad();
                              for (std::size_t o = 0; o < outer; ++o) {
                                const T* g = out.grad.data() + o * row + offset;
                                T* dst = in.grad.data() + o * w;
                                for (std::size_t j = 0; j < w; ++j) dst[j] += g[j];
                              }
                            }
                            offset += w;
                          }
                        });
}

template <class T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = x.normalize_axis(axis);
  if (start + length > x.shape()[ax] || length == 0) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for axis " +
                     std::to_string(axis) + " of shape " + shape_str(x.shape()));
  }
  const auto split = detail::split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  const std::size_t w = length * split.inner;
  const std::size_t row = split.dim * split.inner;
  const std::size_t off = start * split.inner;
  std::vector<T> y(split.outer * w);
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(x.data().data() + o * row + off, w, y.data() + o * w);
  }
  const std::size_t outer = split.outer;
  return make_result<T>("slice", std::move(out_shape), std::move(y), {x},
                        [outer, w, row, off](Node<T>& out) {
                          Node<T>& in = *out.inputs[0];
                          in.ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            T* dst = in.grad.data() + o * row + off;
                            const T* g = out.grad.data() + o * w;
                            for (std::size_t j = 0; j < w; ++j) dst[j] += g[j];
                          }
                        });
}

/// Row lookup: table [V, h], ids of shape `ids_shape` -> ids_shape + [h].
template <class T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int> ids, Shape ids_shape) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  if (numel(ids_shape) != ids.size()) {
    throw ShapeError("embedding: ids shape " + shape_str(ids_shape) + " does not match " +
                     std::to_string(ids.size()) + " ids");
  }
  const std::size_t vocab = table.dim(0), h = table.dim(1);
  std::vector<T> y(ids.size() * h);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw Error("embedding: id " + std::to_string(ids[i]) + " out of range for table with " +
                  std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().data() + ids[i] * h, h, y.data() + i * h);
  }
  Shape out_shape = std::move(ids_shape);
  out_shape.push_back(h);
  std::vector<int> saved(ids.begin(), ids.end());
  return make_result<T>("embedding", std::move(out_shape), std::move(y), {table},
                        [saved = std::move(saved), h](Node<T>& out) {
                          Node<T>& tbl = *out.inputs[0];
                          tbl.ensure_grad();
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            T* dst = tbl.grad.data() + saved[i] * h;
                            const T* g = out.grad.data() + i * h;
                            for (std::size_t j = 0; j < h; ++j) dst[j] += g[j];
                          }
                        });
}

// ---------------------------------------------------------------------------
// Normalizations and reductions

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis = -1) {
  const auto s = detail::split_axis(x.shape(), x.normalize_axis(axis));
  std::vector<T> y(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.dim * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t d = 0; d < s.dim; ++d) mx = std::max(mx, xv[base + d * s.inner]);
      T total = T(0);
      for (std::size_t d = 0; d < s.dim; ++d) {
        const T e = std::exp(xv[base + d * s.inner] - mx);
        y[base + d * s.inner] = e;
        total += e;
      }
      for (std::size_t d = 0; d < s.dim; ++d) y[base + d * s.inner] /= total;
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(y), {x}, [s](Node<T>& out) {
    Node<T>& in_node = *out.inputs[0];
    in_node.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.dim * s.inner + in;
        T dot = T(0);
        for (std::size_t d = 0; d < s.dim; ++d) {
          const std::size_t i = base + d * s.inner;
          dot += out.grad[i] * out.data[i];
        }
        for (std::size_t d = 0; d < s.dim; ++d) {
          const std::size_t i = base + d * s.inner;
          in_node.grad[i] += out.data[i] * (out.grad[i] - dot);
        }
      }
    }
  });
}

template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x, int axis = -1) {
  const auto s = detail::split_axis(x.shape(), x.normalize_axis(axis));
  std::vector<T> y(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.dim * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t d = 0; d < s.dim; ++d) mx = std::max(mx, xv[base + d * s.inner]);
      T total = T(0);
      for (std::size_t d = 0; d < s.dim; ++d) total += std::exp(xv[base + d * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t d = 0; d < s.dim; ++d) y[base + d * s.inner] = xv[base + d * s.inner] - lse;
    }
  }
  return make_result<T>("log_softmax", x.shape(), std::move(y), {x}, [s](Node<T>& out) {
    Node<T>& in_node = *out.inputs[0];
    in_node.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.dim * s.inner + in;
        T total = T(0);
        for (std::size_t d = 0; d < s.dim; ++d) total += out.grad[base + d * s.inner];
        for (std::size_t d = 0; d < s.dim; ++d) {
          const std::size_t i = base + d * s.inner;
          in_node.grad[i] += out.grad[i] - std::exp(out.data[i]) * total;
        }
      }
    }
  });
}

/// Normalizes over the last axis, then applies gain and bias (both [h]).
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, double eps = kLayerNormEps) {
  const std::size_t h = x.dim(-1);
  if (gain.shape() != Shape{h} || bias.shape() != Shape{h}) {
    detail::shape_mismatch("layer_norm", x.shape(), gain.shape() != Shape{h} ? gain.shape() : bias.shape());
  }
  const std::size_t rows = x.numel() / h;
  std::vector<T> y(x.numel());
  // Normalized activations and inverse deviations, kept for backward.
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * h;
    T mean = T(0);
    for (std::size_t j = 0; j < h; ++j) mean += row[j];
    mean /= static_cast<T>(h);
    T var = T(0);
    for (std::size_t j = 0; j < h; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(h);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[r] = is;
    for (std::size_t j = 0; j < h; ++j) {
      const T xh = (row[j] - mean) * is;
      xhat[r * h + j] = xh;
      y[r * h + j] = xh * gv[j] + bv[j];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(y), {x, gain, bias},
      [h, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& out) {
        Node<T>& nx = *out.inputs[0];
        Node<T>& ng = *out.inputs[1];
        Node<T>& nb = *out.inputs[2];
        if (ng.requires_grad) ng.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        if (nx.requires_grad) nx.ensure_grad();
        std::vector<T> gxh(h);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = out.grad.data() + r * h;
          const T* xh = xhat.data() + r * h;
          if (ng.requires_grad) {
            for (std::size_t j = 0; j < h; ++j) ng.grad[j] += g[j] * xh[j];
          }
          if (nb.requires_grad) {
            for (std::size_t j = 0; j < h; ++j) nb.grad[j] += g[j];
          }
          if (nx.requires_grad) {
            T mean_g = T(0), mean_gx = T(0);
            for (std::size_t j = 0; j < h; ++j) {
              gxh[j] = g[j] * ng.data[j];
              mean_g += gxh[j];
              mean_gx += gxh[j] * xh[j];
            }
            mean_g /= static_cast<T>(h);
            mean_gx /= static_cast<T>(h);
            for (std::size_t j = 0; j < h; ++j) {
              nx.grad[r * h + j] += inv_std[r] * (gxh[j] - mean_g - xh[j] * mean_gx);
            }
          }
        }
      });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x, int axis, bool keepdim = false) {
  const std::size_t ax = x.normalize_axis(axis);
  const auto s = detail::split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) out_shape[ax] = 1;
  else out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> y(s.outer * s.inner, T(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t d = 0; d < s.dim; ++d) {
      const T* src = xv.data() + (o * s.dim + d) * s.inner;
      T* dst = y.data() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  return make_result<T>("sum", std::move(out_shape), std::move(y), {x}, [s](Node<T>& out) {
    Node<T>& in_node = *out.inputs[0];
    in_node.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t d = 0; d < s.dim; ++d) {
        T* dst = in_node.grad.data() + (o * s.dim + d) * s.inner;
        const T* g = out.grad.data() + o * s.inner;
        for (std::size_t in = 0; in < s.inner; ++in) dst[in] += g[in];
      }
    }
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x, int axis, bool keepdim = false) {
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(x.dim(axis)));
}

/// Sum of every element, shape [].
template <class T>
BasicTensor<T> sum_all(const BasicTensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_result<T>("sum_all", Shape{}, std::vector<T>{total}, {x}, [](Node<T>& out) {
    Node<T>& in = *out.inputs[0];
    in.ensure_grad();
    for (auto& g : in.grad) g += out.grad[0];
  });
}

template <class T>
BasicTensor<T> mean_all(const BasicTensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

/// Max along `axis`; the gradient flows to the first maximal element.
template <class T>
BasicTensor<T> max(const BasicTensor<T>& x, int axis, bool keepdim = false) {
  const std::size_t ax = x.normalize_axis(axis);
  const auto s = detail::split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) out_shape[ax] = 1;
  else out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> y(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner);
  const auto xv = x.data();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.dim * s.inner + in;
      std::size_t best = 0;
      for (std::size_t d = 1; d < s.dim; ++d) {
        if (xv[base + d * s.inner] > xv[base + best * s.inner]) best = d;
      }
      y[o * s.inner + in] = xv[base + best * s.inner];
      arg[o * s.inner + in] = base + best * s.inner;
      h = detail::hash_bits(h, best);
    }
  }
  detail::record_branch(h);
  return make_result<T>("max", std::move(out_shape), std::move(y), {x},
                        [arg = std::move(arg)](Node<T>& out) {
                          Node<T>& in = *out.inputs[0];
                          in.ensure_grad();
                          for (std::size_t i = 0; i < arg.size(); ++i) in.grad[arg[i]] += out.grad[i];
                        });
}

// ---------------------------------------------------------------------------
// Regularization, masking, losses

/// Inverted dropout: survivors are scaled by 1/(1-p) so eval is identity.
template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Rng* rng, bool train) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw Error("dropout: probability must be in [0, 1), got " + std::to_string(p));
  }
  if (!train || p == 0.0) return x;
  if (!rng) throw Error("dropout: training mode requires an rng");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng->uniform() >= p ? keep_scale : T(0);
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * mask[i];
  return make_result<T>("dropout", x.shape(), std::move(y), {x},
                        [mask = std::move(mask)](Node<T>& out) {
                          Node<T>& in = *out.inputs[0];
                          in.ensure_grad();
                          for (std::size_t i = 0; i < mask.size(); ++i) in.grad[i] += out.grad[i] * mask[i];
                        });
}

/// Replaces elements where mask != 0 by `value`; those positions get no gradient.
template <class T>
BasicTensor<T> masked_fill(const BasicTensor<T>& x, std::span<const std::uint8_t> mask, T value) {
  if (mask.size() != x.numel()) {
    throw ShapeError("masked_fill: mask has " + std::to_string(mask.size()) +
                     " entries for shape " + shape_str(x.shape()));
  }
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = mask[i] ? value : x[i];
  std::vector<std::uint8_t> saved(mask.begin(), mask.end());
  return make_result<T>("masked_fill", x.shape(), std::move(y), {x},
                        [saved = std::move(saved)](Node<T>& out) {
                          Node<T>& in = *out.inputs[0];
                          in.ensure_grad();
                          for (std::size_t i = 0; i < saved.size(); ++i) {
                            if (!saved[i]) in.grad[i] += out.grad[i];
                          }
                        });
}

/// Mean negative log-likelihood over rows whose target is not `ignore_index`.
/// logits [N, C]; returns a scalar (0 when every row is ignored).
template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets,
                             int ignore_index = kIgnoreIndex) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<T> probs(n * c);
  std::vector<int> saved(targets.begin(), targets.end());
  T total = T(0);
  std::size_t count = 0;
  const auto lv = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = lv.data() + i * c;
    T mx = *std::max_element(row, row + c);
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - mx) / z;
    const int t = targets[i];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw Error("cross_entropy: target " + std::to_string(t) + " out of range for " +
                  std::to_string(c) + " classes");
    }
    total += -(row[t] - mx - std::log(z));
    ++count;
  }
  const T denom = count ? static_cast<T>(count) : T(1);
  return make_result<T>(
      "cross_entropy", Shape{}, std::vector<T>{total / denom}, {logits},
      [probs = std::move(probs), saved = std::move(saved), n, c, denom, ignore_index](Node<T>& out) {
        Node<T>& in = *out.inputs[0];
        in.ensure_grad();
        const T g = out.grad[0] / denom;
        for (std::size_t i = 0; i < n; ++i) {
          if (saved[i] == ignore_index) continue;
          for (std::size_t j = 0; j < c; ++j) {
            const T target = static_cast<int>(j) == saved[i] ? T(1) : T(0);
            in.grad[i * c + j] += g * (probs[i * c + j] - target);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Similarity

/// Cosine similarity along `axis` of two equally shaped tensors. The
/// denominator ||a||*||b|| is floored at kCosineEps.
template <class T>
BasicTensor<T> cosine_similarity(const BasicTensor<T>& a, const BasicTensor<T>& b, int axis = -1) {
  if (a.shape() != b.shape()) detail::shape_mismatch("cosine_similarity", a.shape(), b.shape());
  const std::size_t ax = a.normalize_axis(axis);
  const auto s = detail::split_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  const std::size_t lines = s.outer * s.inner;
  std::vector<T> y(lines);
  // Per line: dot, |a|^2, |b|^2, denominator.
  std::vector<T> stats(lines * 4);
  const auto av = a.data();
  const auto bv = b.data();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.dim * s.inner + in;
      T dot = T(0), aa = T(0), bb = T(0);
      for (std::size_t d = 0; d < s.dim; ++d) {
        const T x = av[base + d * s.inner], z = bv[base + d * s.inner];
        dot += x * z;
        aa += x * x;
        bb += z * z;
      }
      const T prod = std::sqrt(aa) * std::sqrt(bb);
      const bool floored = prod < static_cast<T>(kCosineEps);
      h = detail::hash_bits(h, floored);
      const T den = floored ? static_cast<T>(kCosineEps) : prod;
      const std::size_t line = o * s.inner + in;
      y[line] = dot / den;
      stats[line * 4 + 0] = dot;
      stats[line * 4 + 1] = aa;
      stats[line * 4 + 2] = bb;
      stats[line * 4 + 3] = floored ? T(0) : den;
    }
  }
  detail::record_branch(h);
  return make_result<T>(
      "cosine_similarity", std::move(out_shape), std::move(y), {a, b},
      [s, stats = std::move(stats)](Node<T>& out) {
        Node<T>& na = *out.inputs[0];
        Node<T>& nb = *out.inputs[1];
        if (na.requires_grad) na.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t line = o * s.inner + in;
            const std::size_t base = o * s.dim * s.inner + in;
            const T g = out.grad[line];
            const T c = out.data[line];
            const T den = stats[line * 4 + 3];
            const bool floored = den == T(0);
            const T inv_den = floored ? T(1) / static_cast<T>(kCosineEps) : T(1) / den;
            const T aa = stats[line * 4 + 1], bb = stats[line * 4 + 2];
            for (std::size_t d = 0; d < s.dim; ++d) {
              const std::size_t i = base + d * s.inner;
              if (na.requires_grad) {
                T ga = nb.data[i] * inv_den;
                if (!floored) ga -= c * na.data[i] / aa;
                na.grad[i] += g * ga;
              }
              if (nb.requires_grad) {
                T gb = na.data[i] * inv_den;
                if (!floored) gb -= c * nb.data[i] / bb;
                nb.grad[i] += g * gb;
              }
            }
          }
        }
      });
}

/// All-pairs cosine: A [N, S1, d], B [N, S2, d] -> [N, S1, S2].
template <class T>
BasicTensor<T> pairwise_cosine(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    detail::shape_mismatch("pairwise_cosine", a.shape(), b.shape());
  }
  const std::size_t batch = a.dim(0), s1 = a.dim(1), s2 = b.dim(1), d = a.dim(2);
  std::vector<T> na(batch * s1), nb(batch * s2);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < batch * s1; ++i) {
    T acc = T(0);
    for (std::size_t k = 0; k < d; ++k) acc += av[i * d + k] * av[i * d + k];
    na[i] = std::sqrt(acc);
  }
  for (std::size_t j = 0; j < batch * s2; ++j) {
    T acc = T(0);
    for (std::size_t k = 0; k < d; ++k) acc += bv[j * d + k] * bv[j * d + k];
    nb[j] = std::sqrt(acc);
  }
  std::vector<T> y(batch * s1 * s2);
  std::vector<T> den(batch * s1 * s2);  // 0 marks a floored denominator
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < s1; ++i) {
      const T* ai = av.data() + (n * s1 + i) * d;
      for (std::size_t j = 0; j < s2; ++j) {
        const T* bj = bv.data() + (n * s2 + j) * d;
        T dot = T(0);
        for (std::size_t k = 0; k < d; ++k) dot += ai[k] * bj[k];
        const T prod = na[n * s1 + i] * nb[n * s2 + j];
        const bool floored = prod < static_cast<T>(kCosineEps);
        h = detail::hash_bits(h, floored);
        const std::size_t o = (n * s1 + i) * s2 + j;
        y[o] = dot / (floored ? static_cast<T>(kCosineEps) : prod);
        den[o] = floored ? T(0) : prod;
      }
    }
  }
  detail::record_branch(h);
  return make_result<T>(
      "pairwise_cosine", Shape{batch, s1, s2}, std::move(y), {a, b},
      [batch, s1, s2, d, na = std::move(na), nb = std::move(nb), den = std::move(den)](Node<T>& out) {
        Node<T>& ta = *out.inputs[0];
        Node<T>& tb = *out.inputs[1];
        if (ta.requires_grad) ta.ensure_grad();
        if (tb.requires_grad) tb.ensure_grad();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t i = 0; i < s1; ++i) {
            const T* ai = ta.data.data() + (n * s1 + i) * d;
            for (std::size_t j = 0; j < s2; ++j) {
              const std::size_t o = (n * s1 + i) * s2 + j;
              const T g = out.grad[o];
              if (g == T(0)) continue;
              const T* bj = tb.data.data() + (n * s2 + j) * d;
              const T c = out.data[o];
              const bool floored = den[o] == T(0);
              const T inv_den = floored ? T(1) / static_cast<T>(kCosineEps) : T(1) / den[o];
              const T naa = na[n * s1 + i] * na[n * s1 + i];
              const T nbb = nb[n * s2 + j] * nb[n * s2 + j];
              if (ta.requires_grad) {
                T* gai = ta.grad.data() + (n * s1 + i) * d;
                for (std::size_t k = 0; k < d; ++k) {
                  T v = bj[k] * inv_den;
                  if (!floored) v -= c * ai[k] / naa;
                  gai[k] += g * v;
                }
              }
              if (tb.requires_grad) {
                T* gbj = tb.grad.data() + (n * s2 + j) * d;
                for (std::size_t k = 0; k < d; ++k) {
                  T v = ai[k] * inv_den;
                  if (!floored) v -= c * bj[k] / nbb;
                  gbj[k] += g * v;
                }
              }
            }
          }
        }
      });
}

}  // namespace stacktune
