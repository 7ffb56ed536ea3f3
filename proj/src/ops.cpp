// SPDX-License-Identifier: Apache-2.0

#include "ternarycl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ternarycl::ops {

namespace {

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch(op, a.shape(), b.shape());
}

template <typename T>
T stable_logsumexp(std::span<const T> x) {
  T m = -std::numeric_limits<T>::infinity();
  for (T v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  T s = 0;
  for (T v : x) s += std::exp(v - m);
  return m + std::log(s);
}

template <typename T, typename Fwd, typename Deriv>
NodeRef unary(Tape<T>& tape, NodeRef a, Fwd fwd, Deriv deriv) {
  const auto& x = tape.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return tape.record(std::move(out), [a, deriv](Tape<T>& t, NodeRef self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    const auto& xin = t.value(a);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xin[i], y[i]);
  });
}

}  // namespace

template <typename T>
NodeRef matmul(Tape<T>& tape, NodeRef a, NodeRef b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  if (A.rank() != 2 || (B.rank() != 1 && B.rank() != 2) || A.dim(1) != B.dim(0)) mismatch("matmul", A.shape(), B.shape());
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.rank() == 2 ? B.dim(1) : 1;
  Tensor<T> out(B.rank() == 2 ? Shape{m, n} : Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    T* o = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
    }
  }
  return tape.record(std::move(out), [a, b, m, k, n](Tape<T>& t, NodeRef self) {
    const auto& g = t.grad(self);
    const auto& Av = t.value(a);
    const auto& Bv = t.value(b);
    {
      auto& ga = t.grad(a);
      for (std::size_t i = 0; i < m; ++i) {
        const T* gi = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = &Bv[p * n];
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += gi[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    auto& gb = t.grad(b);
    for (std::size_t i = 0; i < m; ++i) {
      const T* gi = &g[i * n];
      for (std::size_t p = 0; p < k; ++p) {
        const T av = Av[i * k + p];
        T* gbrow = &gb[p * n];
        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * gi[j];
      }
    }
  });
}

template <typename T>
NodeRef add(Tape<T>& tape, NodeRef a, NodeRef b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  require_same("add", A, B);
  Tensor<T> out = A;
  out.add_(B);
  return tape.record(std::move(out), [a, b](Tape<T>& t, NodeRef self) {
    const auto g = t.grad(self);
    t.grad(a).add_(g);
    t.grad(b).add_(g);
  });
}

template <typename T>
NodeRef sub(Tape<T>& tape, NodeRef a, NodeRef b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  require_same("sub", A, B);
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return tape.record(std::move(out), [a, b](Tape<T>& t, NodeRef self) {
    const auto g = t.grad(self);
    t.grad(a).add_(g);
    auto& gb = t.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

template <typename T>
NodeRef mul(Tape<T>& tape, NodeRef a, NodeRef b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  require_same("mul", A, B);
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return tape.record(std::move(out), [a, b](Tape<T>& t, NodeRef self) {
    const auto g = t.grad(self);
    const auto& Av = t.value(a);
    const auto& Bv = t.value(b);
    {
      auto& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * Bv[i];
    }
    auto& gb = t.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * Av[i];
  });
}

template <typename T>
NodeRef scale(Tape<T>& tape, NodeRef a, T factor) {
  Tensor<T> out = tape.value(a);
  for (auto& v : out.data()) v *= factor;
  return tape.record(std::move(out), [a, factor](Tape<T>& t, NodeRef self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

template <typename T>
NodeRef concat(Tape<T>& tape, std::span<const NodeRef> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = tape.value(parts[0]).shape();
  Shape out_shape = first;
  out_shape[0] = 0;
  std::vector<T> data;
  for (NodeRef p : parts) {
    const auto& v = tape.value(p);
    if (v.rank() != first.size() || !std::equal(first.begin() + 1, first.end(), v.shape().begin() + 1)) {
      mismatch("concat", first, v.shape());
    }
    out_shape[0] += v.dim(0);
    data.insert(data.end(), v.storage().begin(), v.storage().end());
  }
  std::vector<NodeRef> inputs(parts.begin(), parts.end());
  return tape.record(Tensor<T>(out_shape, std::move(data)), [inputs](Tape<T>& t, NodeRef self) {
    const auto g = t.grad(self);
    std::size_t offset = 0;
    for (NodeRef p : inputs) {
      auto& gp = t.grad(p);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      offset += gp.size();
    }
  });
}

template <typename T>
NodeRef reshape(Tape<T>& tape, NodeRef a, Shape shape) {
  Tensor<T> out = tape.value(a).reshaped(std::move(shape));
  return tape.record(std::move(out), [a](Tape<T>& t, NodeRef self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
NodeRef relu(Tape<T>& tape, NodeRef a) {
  const auto& x = tape.value(a);
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > T{0}) word |= (1ULL << (i % 64));
    if (i % 64 == 63 || i + 1 == x.size()) {
      tape.mix_signature(word);
      word = 0;
    }
  }
  return unary(
      tape, a, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
NodeRef sigmoid(Tape<T>& tape, NodeRef a) {
  return unary(
      tape, a,
      [](T v) { return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v)); },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
NodeRef tanh(Tape<T>& tape, NodeRef a) {
  return unary(
      tape, a, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
NodeRef conv2d(Tape<T>& tape, NodeRef input, NodeRef filters, NodeRef bias) {
  const auto& X = tape.value(input);
  const auto& W = tape.value(filters);
  const auto& B = tape.value(bias);
  if (X.rank() != 2 && X.rank() != 3) throw ShapeError("conv2d: input must be [H,W] or [C,H,W], got " + shape_string(X.shape()));
  const std::size_t C = X.rank() == 3 ? X.dim(0) : 1;
  const std::size_t H = X.dim(X.rank() - 2), Wd = X.dim(X.rank() - 1);
  if (W.rank() != 4 || W.dim(1) != C) mismatch("conv2d", X.shape(), W.shape());
  const std::size_t F = W.dim(0), kh = W.dim(2), kw = W.dim(3);
  if (kh > H || kw > Wd) mismatch("conv2d", X.shape(), W.shape());
  if (B.rank() != 1 || B.dim(0) != F) mismatch("conv2d", W.shape(), B.shape());
  const std::size_t Ho = H - kh + 1, Wo = Wd - kw + 1;

  Tensor<T> out(Shape{F, Ho, Wo});
  for (std::size_t f = 0; f < F; ++f) {
    T* of = &out[f * Ho * Wo];
    for (std::size_t i = 0; i < Ho * Wo; ++i) of[i] = B[f];
    for (std::size_t c = 0; c < C; ++c) {
      const T* xc = &X[c * H * Wd];
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const T w = W[((f * C + c) * kh + ki) * kw + kj];
          for (std::size_t y = 0; y < Ho; ++y) {
            const T* xr = xc + (y + ki) * Wd + kj;
            T* orow = of + y * Wo;
            for (std::size_t x = 0; x < Wo; ++x) orow[x] += w * xr[x];
          }
        }
      }
    }
  }
  return tape.record(std::move(out), [input, filters, bias, C, H, Wd, F, kh, kw, Ho, Wo](Tape<T>& t, NodeRef self) {
    const auto g = t.grad(self);
    const auto& Xv = t.value(input);
    const auto& Wv = t.value(filters);
    {
      auto& gbias = t.grad(bias);
      for (std::size_t f = 0; f < F; ++f) {
        T acc = 0;
        for (std::size_t i = 0; i < Ho * Wo; ++i) acc += g[f * Ho * Wo + i];
        gbias[f] += acc;
      }
    }
    {
      auto& gw = t.grad(filters);
      for (std::size_t f = 0; f < F; ++f) {
        const T* gf = &g[f * Ho * Wo];
        for (std::size_t c = 0; c < C; ++c) {
          const T* xc = &Xv[c * H * Wd];
          for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
              T acc = 0;
              for (std::size_t y = 0; y < Ho; ++y) {
                const T* xr = xc + (y + ki) * Wd + kj;
                const T* gr = gf + y * Wo;
                for (std::size_t x = 0; x < Wo; ++x) acc += gr[x] * xr[x];
              }
              gw[((f * C + c) * kh + ki) * kw + kj] += acc;
            }
          }
        }
      }
    }
    auto& gx = t.grad(input);
    for (std::size_t f = 0; f < F; ++f) {
      const T* gf = &g[f * Ho * Wo];
      for (std::size_t c = 0; c < C; ++c) {
        T* gxc = &gx[c * H * Wd];
        for (std::size_t ki = 0; ki < kh; ++ki) {
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const T w = Wv[((f * C + c) * kh + ki) * kw + kj];
            for (std::size_t y = 0; y < Ho; ++y) {
              T* xr = gxc + (y + ki) * Wd + kj;
              const T* gr = gf + y * Wo;
              for (std::size_t x = 0; x < Wo; ++x) xr[x] += w * gr[x];
            }
          }
        }
      }
    }
  });
}

template <typename T>
NodeRef embedding_lookup(Tape<T>& tape, NodeRef table, std::span<const std::size_t> ids) {
  const auto& E = tape.value(table);
  if (E.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_string(E.shape()));
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  const std::size_t D = E.dim(1);
  Tensor<T> out(Shape{ids.size(), D});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= E.dim(0)) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " outside table " + shape_string(E.shape()));
    }
    std::copy_n(&E[ids[i] * D], D, &out[i * D]);
  }
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return tape.record(std::move(out), [table, rows = std::move(rows), D](Tape<T>& t, NodeRef self) {
    const auto& g = t.grad(self);
    auto& gt = t.grad(table);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      T* dst = &gt[rows[i] * D];
      const T* src = &g[i * D];
      for (std::size_t j = 0; j < D; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
NodeRef dot_rows(Tape<T>& tape, NodeRef a, NodeRef b) {
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  require_same("dot_rows", A, B);
  if (A.rank() > 2) mismatch("dot_rows", A.shape(), B.shape());
  const std::size_t n = A.rank() == 2 ? A.dim(0) : 1;
  const std::size_t D = A.size() / n;
  Tensor<T> out(Shape{n});
  for (std::size_t r = 0; r < n; ++r) {
    T acc = 0;
    for (std::size_t j = 0; j < D; ++j) acc += A[r * D + j] * B[r * D + j];
    out[r] = acc;
  }
  return tape.record(std::move(out), [a, b, n, D](Tape<T>& t, NodeRef self) {
    const auto g = t.grad(self);
    const auto& Av = t.value(a);
    const auto& Bv = t.value(b);
    {
      auto& ga = t.grad(a);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < D; ++j) ga[r * D + j] += g[r] * Bv[r * D + j];
    }
    auto& gb = t.grad(b);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < D; ++j) gb[r * D + j] += g[r] * Av[r * D + j];
  });
}

template <typename T>
NodeRef logsumexp(Tape<T>& tape, NodeRef a) {
  const auto& x = tape.value(a);
  Tensor<T> out(Shape{1}, stable_logsumexp<T>(x.data()));
  return tape.record(std::move(out), [a](Tape<T>& t, NodeRef self) {
    const T g = t.grad(self)[0];
    const T lse = t.value(self)[0];
    const auto& xv = t.value(a);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < xv.size(); ++i) ga[i] += g * std::exp(xv[i] - lse);
  });
}

template <typename T>
NodeRef softmax_rows(Tape<T>& tape, NodeRef a) {
  const auto& x = tape.value(a);
  if (x.rank() > 2) throw ShapeError("softmax_rows: expected rank <= 2, got " + shape_string(x.shape()));
  const std::size_t n = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t k = x.size() / n;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T lse = stable_logsumexp<T>(x.data().subspan(r * k, k));
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = std::exp(x[r * k + j] - lse);
  }
  return tape.record(std::move(out), [a, n, k](Tape<T>& t, NodeRef self) {
    const auto& g = t.grad(self);
    const auto y = t.value(self);
    auto& ga = t.grad(a);
    for (std::size_t r = 0; r < n; ++r) {
      T dotgy = 0;
      for (std::size_t j = 0; j < k; ++j) dotgy += g[r * k + j] * y[r * k + j];
      for (std::size_t j = 0; j < k; ++j) ga[r * k + j] += y[r * k + j] * (g[r * k + j] - dotgy);
    }
  });
}

template <typename T>
NodeRef softmax_cross_rows(Tape<T>& tape, NodeRef logits, std::span<const std::size_t> targets) {
  const auto& x = tape.value(logits);
  if (x.rank() > 2) throw ShapeError("softmax_cross_rows: expected rank <= 2, got " + shape_string(x.shape()));
  const std::size_t n = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t k = x.size() / n;
  if (targets.size() != n) {
    throw ShapeError("softmax_cross_rows: " + std::to_string(targets.size()) + " targets for logits " + shape_string(x.shape()));
  }
  std::vector<T> lses(n);
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= k) throw std::out_of_range("softmax_cross_rows: target index out of range");
    lses[r] = stable_logsumexp<T>(x.data().subspan(r * k, k));
    total += lses[r] - x[r * k + targets[r]];
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return tape.record(Tensor<T>(Shape{1}, total),
                     [logits, tg = std::move(tg), lses = std::move(lses), n, k](Tape<T>& t, NodeRef self) {
                       const T g = t.grad(self)[0];
                       const auto& xv = t.value(logits);
                       auto& gx = t.grad(logits);
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += g * std::exp(xv[r * k + j] - lses[r]);
                         gx[r * k + tg[r]] -= g;
                       }
                     });
}

template <typename T>
NodeRef gather(Tape<T>& tape, NodeRef a, std::span<const std::size_t> indices) {
  const auto& x = tape.value(a);
  if (indices.empty()) throw ShapeError("gather: empty index list");
  Tensor<T> out(Shape{indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.size()) throw std::out_of_range("gather: index out of range");
    out[i] = x[indices[i]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return tape.record(std::move(out), [a, idx = std::move(idx)](Tape<T>& t, NodeRef self) {
    const auto g = t.grad(self);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
  });
}

template <typename T>
NodeRef sum(Tape<T>& tape, NodeRef a) {
  T acc = 0;
  for (T v : tape.value(a).data()) acc += v;
  return tape.record(Tensor<T>(Shape{1}, acc), [a](Tape<T>& t, NodeRef self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(a).data()) v += g;
  });
}

template <typename T>
NodeRef mean(Tape<T>& tape, NodeRef a) {
  const auto n = static_cast<T>(tape.value(a).size());
  return scale(tape, sum(tape, a), T{1} / n);
}

template <typename T>
NodeRef bce_with_logits(Tape<T>& tape, NodeRef logits, const Tensor<T>& targets) {
  const auto& x = tape.value(logits);
  require_same("bce_with_logits", x, targets);
  T total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    total += std::max(v, T{0}) - v * targets[i] + std::log1p(std::exp(-std::abs(v)));
  }
  const auto n = static_cast<T>(x.size());
  return tape.record(Tensor<T>(Shape{1}, total / n), [logits, targets, n](Tape<T>& t, NodeRef self) {
    const T g = t.grad(self)[0] / n;
    const auto& xv = t.value(logits);
    auto& gx = t.grad(logits);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T v = xv[i];
      const T s = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
      gx[i] += g * (s - targets[i]);
    }
  });
}

#define TERNARYCL_INSTANTIATE_OPS(T)                                                             \
  template NodeRef matmul<T>(Tape<T>&, NodeRef, NodeRef);                                         \
  template NodeRef add<T>(Tape<T>&, NodeRef, NodeRef);                                            \
  template NodeRef sub<T>(Tape<T>&, NodeRef, NodeRef);                                            \
  template NodeRef mul<T>(Tape<T>&, NodeRef, NodeRef);                                            \
  template NodeRef scale<T>(Tape<T>&, NodeRef, T);                                                \
  template NodeRef concat<T>(Tape<T>&, std::span<const NodeRef>);                                 \
  template NodeRef reshape<T>(Tape<T>&, NodeRef, Shape);                                          \
  template NodeRef relu<T>(Tape<T>&, NodeRef);                                                    \
  template NodeRef sigmoid<T>(Tape<T>&, NodeRef);                                                 \
  template NodeRef tanh<T>(Tape<T>&, NodeRef);                                                    \
  template NodeRef conv2d<T>(Tape<T>&, NodeRef, NodeRef, NodeRef);                                \
  template NodeRef embedding_lookup<T>(Tape<T>&, NodeRef, std::span<const std::size_t>);          \
  template NodeRef dot_rows<T>(Tape<T>&, NodeRef, NodeRef);                                       \
  template NodeRef logsumexp<T>(Tape<T>&, NodeRef);                                               \
  template NodeRef softmax_rows<T>(Tape<T>&, NodeRef);                                            \
  template NodeRef softmax_cross_rows<T>(Tape<T>&, NodeRef, std::span<const std::size_t>);        \
  template NodeRef gather<T>(Tape<T>&, NodeRef, std::span<const std::size_t>);                    \
  template NodeRef sum<T>(Tape<T>&, NodeRef);                                                     \
  template NodeRef mean<T>(Tape<T>&, NodeRef);                                                    \
  template NodeRef bce_with_logits<T>(Tape<T>&, NodeRef, const Tensor<T>&);

TERNARYCL_INSTANTIATE_OPS(float)
TERNARYCL_INSTANTIATE_OPS(double)

}  // namespace ternarycl::ops
