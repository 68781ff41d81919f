#pragma once

// Differentiable primitives over invlab::Tensor.
//
// Broadcasting is trailing-dimension only: two shapes are compatible when they
// are equal or when the shorter one is a suffix of the longer one (a rank-0
// scalar is a suffix of everything).

#include <cmath>
#include <numbers>
#include <limits>
#include <string>
#include <vector>

#include "invlab/tensor.hpp"

namespace invlab {

namespace detail {

/// Grad buffer of input i, or nullptr when that input does not require grad.
inline double* input_grad(Node& self, std::size_t i) {
  auto& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                   " are not trailing-broadcast compatible");
}

template <class Fwd, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da, DB db) {
  Shape out = broadcast_shape(a.shape(), b.shape(), op);
  const std::size_t n = shape_numel(out);
  const std::size_t na = a.numel(), nb = b.numel();
  std::vector<double> v(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) v[i] = fwd(av[i % na], bv[i % nb]);
  return make_op_result(std::move(out), std::move(v), op, {a, b}, [=](Node& self) {
    const auto& x = self.inputs[0]->value;
    const auto& y = self.inputs[1]->value;
    double* ga = input_grad(self, 0);
    double* gb = input_grad(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = self.grad[i];
      if (ga) ga[i % na] += g * da(x[i % na], y[i % nb], self.value[i]);
      if (gb) gb[i % nb] += g * db(x[i % na], y[i % nb], self.value[i]);
    }
  });
}

template <class Fwd, class D>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, D d) {
  const std::size_t n = a.numel();
  std::vector<double> v(n);
  auto av = a.data();
  for (std::size_t i = 0; i < n; ++i) v[i] = fwd(av[i]);
  return make_op_result(a.shape(), std::move(v), op, {a}, [=](Node& self) {
    const auto& x = self.inputs[0]->value;
    double* ga = input_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * d(x[i], self.value[i]);
  });
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  long r = static_cast<long>(rank);
  long ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(ax);
}

// outer × len × inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
  AxisSplit(const Shape& s, std::size_t axis) {
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  }
  std::size_t index(std::size_t o, std::size_t k, std::size_t i) const {
    return (o * len + k) * inner + i;
  }
};

inline Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  return out;
}

}  // namespace detail

// ---- elementwise --------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  for (double y : b.data()) {
    if (y == 0.0) throw DomainError("div: division by zero");
  }
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

inline Tensor neg(const Tensor& a) {
  return detail::unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(
      a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  for (double x : a.data()) {
    if (!(x > 0.0)) throw DomainError("log: argument must be positive, got " + std::to_string(x));
  }
  return detail::unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor log10(const Tensor& a) {
  for (double x : a.data()) {
    if (!(x > 0.0)) throw DomainError("log10: argument must be positive, got " + std::to_string(x));
  }
  return detail::unary(
      a, "log10", [](double x) { return std::log10(x); },
      [](double x, double) { return 1.0 / (x * std::numbers::ln10); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

/// Subgradient at 0 is 0.
inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Subgradient at 0 is 0.
inline Tensor abs(const Tensor& a) {
  return detail::unary(
      a, "abs", [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor power(const Tensor& a, double p) {
  const bool integral = std::floor(p) == p;
  for (double x : a.data()) {
    if (x < 0.0 && !integral) throw DomainError("power: fractional exponent of negative base");
    if (x == 0.0 && p < 0.0) throw DomainError("power: negative exponent of zero");
  }
  return detail::unary(
      a, "power", [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// max(a, floor) elementwise; gradient passes only where a > floor.
inline Tensor clamp_min(const Tensor& a, double floor) {
  return detail::unary(
      a, "clamp_min", [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---- shape ----------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  const std::size_t n = a.numel();
  return make_op_result(std::move(shape), a.values(), "reshape", {a}, [n](detail::Node& self) {
    double* ga = detail::input_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
  });
}

inline Tensor flatten(const Tensor& a) { return reshape(a, Shape{a.numel()}); }

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> v(r * c);
  auto av = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = av[i * c + j];
  return make_op_result(Shape{c, r}, std::move(v), "transpose", {a}, [r, c](detail::Node& self) {
    double* ga = detail::input_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

/// Concatenates along axis 0. Trailing extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape tail(parts[0].shape().begin() + (parts[0].rank() ? 1 : 0), parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> v;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rank() == 0) throw ShapeError("concat: rank-0 input");
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) throw ShapeError("concat: trailing extents differ");
    offsets.push_back(v.size());
    rows += p.dim(0);
    v.insert(v.end(), p.values().begin(), p.values().end());
  }
  Shape out{rows};
  out.insert(out.end(), tail.begin(), tail.end());
  return make_op_result(std::move(out), std::move(v), "concat", parts,
                        [offsets](detail::Node& self) {
                          for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                            double* g = detail::input_grad(self, k);
                            if (!g) continue;
                            const std::size_t n = self.inputs[k]->value.size();
                            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offsets[k] + i];
                          }
                        });
}

/// Rows [begin, end) of a tensor whose leading axis is sliced.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin >= end || end > a.dim(0)) {
    throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") on " + shape_str(a.shape()));
  }
  const std::size_t row = a.numel() / a.dim(0);
  Shape out = a.shape();
  out[0] = end - begin;
  std::vector<double> v(a.values().begin() + begin * row, a.values().begin() + end * row);
  const std::size_t off = begin * row, n = v.size();
  return make_op_result(std::move(out), std::move(v), "slice_rows", {a},
                        [off, n](detail::Node& self) {
                          double* ga = detail::input_grad(self, 0);
                          if (!ga) return;
                          for (std::size_t i = 0; i < n; ++i) ga[off + i] += self.grad[i];
                        });
}

/// Gathers rows of a matrix by index (embedding lookup).
inline Tensor take_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  if (table.rank() != 2) throw ShapeError("take_rows expects a matrix");
  if (ids.empty()) throw ShapeError("take_rows: empty index list");
  const std::size_t rows = table.dim(0), w = table.dim(1);
  std::vector<double> v;
  v.reserve(ids.size() * w);
  for (auto id : ids) {
    if (id >= rows) throw ShapeError("take_rows: index " + std::to_string(id) + " out of range");
    v.insert(v.end(), table.values().begin() + id * w, table.values().begin() + (id + 1) * w);
  }
  return make_op_result(Shape{ids.size(), w}, std::move(v), "take_rows", {table},
                        [ids, w](detail::Node& self) {
                          double* g = detail::input_grad(self, 0);
                          if (!g) return;
                          for (std::size_t r = 0; r < ids.size(); ++r)
                            for (std::size_t j = 0; j < w; ++j) g[ids[r] * w + j] += self.grad[r * w + j];
                        });
}

/// out.flat[i] = a.flat[src[i]]; covers permutations, padding and patch extraction.
inline Tensor gather(const Tensor& a, std::vector<std::size_t> src, Shape out_shape) {
  if (shape_numel(out_shape) != src.size()) throw ShapeError("gather: index count does not match shape");
  std::vector<double> v(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] >= a.numel()) throw ShapeError("gather: source index out of range");
    v[i] = a.data()[src[i]];
  }
  return make_op_result(std::move(out_shape), std::move(v), "gather", {a},
                        [src = std::move(src)](detail::Node& self) {
                          double* g = detail::input_grad(self, 0);
                          if (!g) return;
                          for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
                        });
}

/// out[r] = a[r, ids[r]] for a matrix a.
inline Tensor pick(const Tensor& a, const std::vector<std::size_t>& ids) {
  if (a.rank() != 2 || ids.size() != a.dim(0)) {
    throw ShapeError("pick: need one index per row of a matrix");
  }
  const std::size_t c = a.dim(1);
  std::vector<double> v(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= c) throw ShapeError("pick: column " + std::to_string(ids[r]) + " out of range");
    v[r] = a.values()[r * c + ids[r]];
  }
  return make_op_result(Shape{ids.size()}, std::move(v), "pick", {a}, [ids, c](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < ids.size(); ++r) g[r * c + ids[r]] += self.grad[r];
  });
}

// ---- matmul ---------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects matrices, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> v(m * n, 0.0);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) v[i * n + j] += x * bv[p * n + j];
    }
  return make_op_result(Shape{m, n}, std::move(v), "matmul", {a, b}, [m, k, n](detail::Node& self) {
    const auto& A = self.inputs[0]->value;
    const auto& B = self.inputs[1]->value;
    const auto& G = self.grad;
    if (double* ga = detail::input_grad(self, 0)) {  // g · bᵀ
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (double* gb = detail::input_grad(self, 1)) {  // aᵀ · g
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * G[i * n + j];
        }
    }
  });
}

// ---- reductions -------------------------------------------------------------

inline Tensor sum(const Tensor& a, long axis) {
  const auto ax = detail::normalize_axis(axis, a.rank(), "sum");
  detail::AxisSplit s(a.shape(), ax);
  std::vector<double> v(s.outer * s.inner, 0.0);
  auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.len; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) v[o * s.inner + i] += av[s.index(o, k, i)];
  return make_op_result(detail::drop_axis(a.shape(), ax), std::move(v), "sum", {a},
                        [s](detail::Node& self) {
                          double* g = detail::input_grad(self, 0);
                          if (!g) return;
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t k = 0; k < s.len; ++k)
                              for (std::size_t i = 0; i < s.inner; ++i)
                                g[s.index(o, k, i)] += self.grad[o * s.inner + i];
                        });
}

inline Tensor mean(const Tensor& a, long axis) {
  const auto ax = detail::normalize_axis(axis, a.rank(), "mean");
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(ax)));
}

/// Sum of every element, as a rank-0 tensor.
inline Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  const std::size_t n = a.numel();
  return make_op_result(Shape{}, {acc}, "sum_all", {a}, [n](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

inline Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

/// Maximum along an axis; the gradient goes to the first maximal entry.
inline Tensor max(const Tensor& a, long axis) {
  const auto ax = detail::normalize_axis(axis, a.rank(), "max");
  detail::AxisSplit s(a.shape(), ax);
  std::vector<double> v(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner);
  auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < s.len; ++k)
        if (av[s.index(o, k, i)] > av[s.index(o, best, i)]) best = k;
      v[o * s.inner + i] = av[s.index(o, best, i)];
      arg[o * s.inner + i] = s.index(o, best, i);
    }
  return make_op_result(detail::drop_axis(a.shape(), ax), std::move(v), "max", {a},
                        [arg](detail::Node& self) {
                          double* g = detail::input_grad(self, 0);
                          if (!g) return;
                          for (std::size_t j = 0; j < arg.size(); ++j) g[arg[j]] += self.grad[j];
                        });
}

/// log(softmax(a)) along an axis, stabilized by subtracting the maximum.
inline Tensor log_softmax(const Tensor& a, long axis) {
  const auto ax = detail::normalize_axis(axis, a.rank(), "log_softmax");
  detail::AxisSplit s(a.shape(), ax);
  std::vector<double> v(a.numel());
  auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, av[s.index(o, k, i)]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) z += std::exp(av[s.index(o, k, i)] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < s.len; ++k) v[s.index(o, k, i)] = av[s.index(o, k, i)] - lse;
    }
  return make_op_result(a.shape(), std::move(v), "log_softmax", {a}, [s](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        double gs = 0.0;
        for (std::size_t k = 0; k < s.len; ++k) gs += self.grad[s.index(o, k, i)];
        for (std::size_t k = 0; k < s.len; ++k) {
          const auto idx = s.index(o, k, i);
          g[idx] += self.grad[idx] - std::exp(self.value[idx]) * gs;
        }
      }
  });
}

inline Tensor softmax(const Tensor& a, long axis) {
  const auto ax = detail::normalize_axis(axis, a.rank(), "softmax");
  detail::AxisSplit s(a.shape(), ax);
  std::vector<double> v(a.numel());
  auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, av[s.index(o, k, i)]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const auto idx = s.index(o, k, i);
        v[idx] = std::exp(av[idx] - mx);
        z += v[idx];
      }
      for (std::size_t k = 0; k < s.len; ++k) v[s.index(o, k, i)] /= z;
    }
  return make_op_result(a.shape(), std::move(v), "softmax", {a}, [s](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < s.len; ++k) {
          const auto idx = s.index(o, k, i);
          dot += self.grad[idx] * self.value[idx];
        }
        for (std::size_t k = 0; k < s.len; ++k) {
          const auto idx = s.index(o, k, i);
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

}  // namespace invlab
