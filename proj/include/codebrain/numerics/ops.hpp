#pragma once

// Differentiable primitives. Every tensor is read as a matrix whose columns
// are its last dimension. Reductions and products accumulate in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "codebrain/numerics/fft.hpp"
#include "codebrain/numerics/tensor.hpp"

namespace codebrain::num {

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

// C[m x n] = A[m x k] * B[k x n]
template <class A, class B>
std::vector<double> mm_nn(const A* a, const B* b, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = static_cast<double>(a[i * k + p]);
      if (av == 0.0) continue;
      const B* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * static_cast<double>(bp[j]);
    }
  }
  return c;
}

// C[m x n] = A[m x k] * B[n x k]^T
template <class A, class B>
std::vector<double> mm_nt(const A* a, const B* b, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const A* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const B* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(ai[p]) * static_cast<double>(bj[p]);
      c[i * n + j] = acc;
    }
  }
  return c;
}

// C[m x n] = A[k x m]^T * B[k x n]
template <class A, class B>
std::vector<double> mm_tn(const A* a, const B* b, std::size_t k, std::size_t m, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const B* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = static_cast<double>(a[p * m + i]);
      if (av == 0.0) continue;
      double* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * static_cast<double>(bp[j]);
    }
  }
  return c;
}

template <class T>
std::vector<T> narrow(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(fwd(static_cast<double>(x[i])));
  auto out = result<T>(op, x.shape(), std::move(v), {&x});
  set_backward<T>(out, [xn = x.node(), deriv](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      xn->accumulate(i, static_cast<double>(g[i]) * deriv(static_cast<double>(xn->value[i])));
    }
  });
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  auto out = detail::result<T>("add", a.shape(), std::move(v), {&a, &b});
  detail::set_backward<T>(out, [an = a.node(), bn = b.node()](const std::vector<T>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (an->requires_grad) an->accumulate(i, g[i]);
      if (bn->requires_grad) bn->accumulate(i, g[i]);
    }
  });
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  auto out = detail::result<T>("sub", a.shape(), std::move(v), {&a, &b});
  detail::set_backward<T>(out, [an = a.node(), bn = b.node()](const std::vector<T>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (an->requires_grad) an->accumulate(i, g[i]);
      if (bn->requires_grad) bn->accumulate(i, -static_cast<double>(g[i]));
    }
  });
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  auto out = detail::result<T>("mul", a.shape(), std::move(v), {&a, &b});
  detail::set_backward<T>(out, [an = a.node(), bn = b.node()](const std::vector<T>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      if (an->requires_grad) an->accumulate(i, gi * static_cast<double>(bn->value[i]));
      if (bn->requires_grad) bn->accumulate(i, gi * static_cast<double>(an->value[i]));
    }
  });
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, double c) {
  return detail::unary<T>("scale", x, [c](double v) { return c * v; }, [c](double) { return c; });
}

// x[r, j] + b[j]
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const std::size_t n = x.cols();
  detail::require(b.size() == n, "add_bias: bias length " + std::to_string(b.size()) + " != cols " +
                                     std::to_string(n));
  std::vector<T> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + b[i % n];
  auto out = detail::result<T>("add_bias", x.shape(), std::move(v), {&x, &b});
  detail::set_backward<T>(out, [xn = x.node(), bn = b.node(), n](const std::vector<T>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xn->requires_grad) xn->accumulate(i, g[i]);
      if (bn->requires_grad) bn->accumulate(i % n, g[i]);
    }
  });
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>("relu", x, [](double v) { return v > 0 ? v : 0.0; },
                          [](double v) { return v > 0 ? 1.0 : 0.0; });
}

template <class T>
Tensor<T> elu(const Tensor<T>& x, double alpha = 1.0) {
  return detail::unary<T>(
      "elu", x, [alpha](double v) { return v > 0 ? v : alpha * std::expm1(v); },
      [alpha](double v) { return v > 0 ? 1.0 : alpha * std::exp(v); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>("tanh", x, [](double v) { return std::tanh(v); },
                          [](double v) {
                            const double t = std::tanh(v);
                            return 1.0 - t * t;
                          });
}

inline double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>("sigmoid", x, [](double v) { return stable_sigmoid(v); },
                          [](double v) {
                            const double s = stable_sigmoid(v);
                            return s * (1.0 - s);
                          });
}

// tanh approximation
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return detail::unary<T>(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))); },
      [](double v) {
        const double u = c * (v + 0.044715 * v * v * v);
        const double t = std::tanh(u);
        const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>("square", x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

// Value copy that blocks gradient flow.
template <class T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.clone(false);
}

// Forward value of `quantized`, gradient passed unchanged to `x`.
template <class T>
Tensor<T> straight_through(const Tensor<T>& x, const Tensor<T>& quantized) {
  detail::require_same_shape(x, quantized, "straight_through");
  std::vector<T> v(quantized.data().begin(), quantized.data().end());
  auto out = detail::result<T>("straight_through", x.shape(), std::move(v), {&x});
  detail::set_backward<T>(out, [xn = x.node()](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) xn->accumulate(i, g[i]);
  });
  return out;
}

template <class URBG, class T>
Tensor<T> dropout(const Tensor<T>& x, double p, URBG& rng) {
  detail::require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
  if (p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = keep(rng) ? s : 0.0;
  std::vector<T> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(x[i] * mask[i]);
  auto out = detail::result<T>("dropout", x.shape(), std::move(v), {&x});
  detail::set_backward<T>(out, [xn = x.node(), mask = std::move(mask)](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) xn->accumulate(i, g[i] * mask[i]);
  });
  return out;
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  auto out = detail::result<T>("sum", {1}, {static_cast<T>(acc)}, {&x});
  detail::set_backward<T>(out, [xn = x.node()](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < xn->value.size(); ++i) xn->accumulate(i, g[0]);
  });
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// sum_i (a_i - b_i)^2
template <class T>
Tensor<T> squared_error(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.size() == b.size(), "squared_error: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  auto out = detail::result<T>("squared_error", {1}, {static_cast<T>(acc)}, {&a, &b});
  detail::set_backward<T>(out, [an = a.node(), bn = b.node()](const std::vector<T>& g) {
    for (std::size_t i = 0; i < an->value.size(); ++i) {
      const double d = 2.0 * g[0] * (static_cast<double>(an->value[i]) - static_cast<double>(bn->value[i]));
      if (an->requires_grad) an->accumulate(i, d);
      if (bn->requires_grad) bn->accumulate(i, -d);
    }
  });
  return out;
}

// Mean over consecutive groups of `group` rows: [R x C] -> [R/group x C].
template <class T>
Tensor<T> mean_pool_rows(const Tensor<T>& x, std::size_t group) {
  const std::size_t r = x.rows(), c = x.cols();
  detail::require(group > 0 && r % group == 0, "mean_pool_rows: rows not divisible by group");
  const std::size_t out_rows = r / group;
  std::vector<double> acc(out_rows * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) acc[(i / group) * c + j] += x[i * c + j];
  }
  for (auto& a : acc) a /= static_cast<double>(group);
  auto out = detail::result<T>("mean_pool_rows", {out_rows, c}, detail::narrow<T>(acc), {&x});
  detail::set_backward<T>(out, [xn = x.node(), group, c](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    const double inv = 1.0 / static_cast<double>(group);
    for (std::size_t i = 0; i < xn->value.size(); ++i) xn->accumulate(i, g[(i / c / group) * c + i % c] * inv);
  });
  return out;
}

// ---------------------------------------------------------------- linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  detail::require(b.rows() == k, "matmul: inner dimensions differ (" + shape_string(a.shape()) + " * " +
                                     shape_string(b.shape()) + ")");
  auto c = detail::mm_nn(a.data().data(), b.data().data(), m, k, n);
  auto out = detail::result<T>("matmul", {m, n}, detail::narrow<T>(c), {&a, &b});
  detail::set_backward<T>(out, [an = a.node(), bn = b.node(), m, k, n](const std::vector<T>& g) {
    if (an->requires_grad) {
      auto da = detail::mm_nt(g.data(), bn->value.data(), m, n, k);
      for (std::size_t i = 0; i < da.size(); ++i) an->accumulate(i, da[i]);
    }
    if (bn->requires_grad) {
      auto db = detail::mm_tn(an->value.data(), g.data(), m, k, n);
      for (std::size_t i = 0; i < db.size(); ++i) bn->accumulate(i, db[i]);
    }
  });
  return out;
}

// a[m x k] * b[n x k]^T
template <class T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  detail::require(b.cols() == k, "matmul_bt: inner dimensions differ");
  auto c = detail::mm_nt(a.data().data(), b.data().data(), m, k, n);
  auto out = detail::result<T>("matmul_bt", {m, n}, detail::narrow<T>(c), {&a, &b});
  detail::set_backward<T>(out, [an = a.node(), bn = b.node(), m, k, n](const std::vector<T>& g) {
    if (an->requires_grad) {
      auto da = detail::mm_nn(g.data(), bn->value.data(), m, n, k);
      for (std::size_t i = 0; i < da.size(); ++i) an->accumulate(i, da[i]);
    }
    if (bn->requires_grad) {
      auto db = detail::mm_tn(g.data(), an->value.data(), m, n, k);
      for (std::size_t i = 0; i < db.size(); ++i) bn->accumulate(i, db[i]);
    }
  });
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> v(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = x[i * c + j];
  auto out = detail::result<T>("transpose", {c, r}, std::move(v), {&x});
  detail::set_backward<T>(out, [xn = x.node(), r, c](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) xn->accumulate(i * c + j, g[j * r + i]);
  });
  return out;
}

// x[r x in] * w[in x out] + b[out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_bias(matmul(x, w), b);
}

// ---------------------------------------------------------------- shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel(shape) == x.size(), "reshape: element count changes");
  std::vector<T> v(x.data().begin(), x.data().end());
  auto out = detail::result<T>("reshape", std::move(shape), std::move(v), {&x});
  detail::set_backward<T>(out, [xn = x.node()](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) xn->accumulate(i, g[i]);
  });
  return out;
}

// Concatenate along the last dimension; all parts share the row count.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == r, "concat_cols: row counts differ");
    total += p.cols();
  }
  std::vector<T> v(r * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) v[i * total + off + j] = p[i * c + j];
    off += c;
  }
  auto out = detail::result<T>("concat_cols", {r, total}, std::move(v), {});
  // Inputs are a runtime list, so the requires_grad decision is made here.
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  if (needs && Tape<T>::active()) {
    out.node()->requires_grad = true;
    Tape<T>::active()->record(out.node());
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  detail::set_backward<T>(out, [nodes, r, total](const std::vector<T>& g) {
    std::size_t off = 0;
    for (const auto& n : nodes) {
      const std::size_t c = n->shape.empty() ? 1 : n->shape.back();
      if (n->requires_grad) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) n->accumulate(i * c + j, g[i * total + off + j]);
      }
      off += c;
    }
  });
  return out;
}

// Stack along rows; all parts share the column count.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == c, "concat_rows: column counts differ");
    rows += p.rows();
  }
  std::vector<T> v;
  v.reserve(rows * c);
  for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  auto out = detail::result<T>("concat_rows", {rows, c}, std::move(v), {});
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  if (needs && Tape<T>::active()) {
    out.node()->requires_grad = true;
    Tape<T>::active()->record(out.node());
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  detail::set_backward<T>(out, [nodes](const std::vector<T>& g) {
    std::size_t off = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) {
        for (std::size_t i = 0; i < n->value.size(); ++i) n->accumulate(i, g[off + i]);
      }
      off += n->value.size();
    }
  });
  return out;
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const std::size_t c = x.cols();
  detail::require(begin + count <= x.rows(), "slice_rows: range out of bounds");
  std::vector<T> v(x.data().begin() + begin * c, x.data().begin() + (begin + count) * c);
  auto out = detail::result<T>("slice_rows", {count, c}, std::move(v), {&x});
  detail::set_backward<T>(out, [xn = x.node(), off = begin * c](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) xn->accumulate(off + i, g[i]);
  });
  return out;
}

// out[i] = table[index[i]]; gradients scatter-add back into the table.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& index) {
  const std::size_t c = table.cols(), n = table.rows();
  std::vector<T> v(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    detail::require(index[i] < n, "gather_rows: index out of range");
    std::copy_n(table.data().begin() + index[i] * c, c, v.begin() + i * c);
  }
  auto out = detail::result<T>("gather_rows", {index.size(), c}, std::move(v), {&table});
  detail::set_backward<T>(out, [tn = table.node(), index, c](const std::vector<T>& g) {
    if (!tn->requires_grad) return;
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) tn->accumulate(index[i] * c + j, g[i * c + j]);
  });
  return out;
}

// ---------------------------------------------------------------- normalization

// out[r, i] = scale[i] * x[r, i] / sqrt(mean_j x[r, j]^2 + eps)
template <class T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& scale, double eps = 1e-8) {
  const std::size_t r = x.rows(), c = x.cols();
  detail::require(scale.size() == c, "rms_norm: scale length must equal feature count");
  std::vector<T> v(x.size());
  std::vector<double> inv_rms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += static_cast<double>(x[i * c + j]) * x[i * c + j];
    inv_rms[i] = 1.0 / std::sqrt(ss / static_cast<double>(c) + eps);
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = static_cast<T>(scale[j] * (x[i * c + j] * inv_rms[i]));
  }
  auto out = detail::result<T>("rms_norm", x.shape(), std::move(v), {&x, &scale});
  detail::set_backward<T>(out, [xn = x.node(), sn = scale.node(), inv_rms = std::move(inv_rms), r,
                                c](const std::vector<T>& g) {
    for (std::size_t i = 0; i < r; ++i) {
      const double ir = inv_rms[i];
      double dot = 0.0;  // sum_j s_j g_j x_j
      for (std::size_t j = 0; j < c; ++j)
        dot += static_cast<double>(sn->value[j]) * g[i * c + j] * xn->value[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        const double xj = xn->value[i * c + j];
        if (xn->requires_grad) {
          const double d = sn->value[j] * g[i * c + j] * ir - xj * dot * ir * ir * ir / static_cast<double>(c);
          xn->accumulate(i * c + j, d);
        }
        if (sn->requires_grad) sn->accumulate(j, g[i * c + j] * xj * ir);
      }
    }
  });
  return out;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5) {
  const std::size_t r = x.rows(), c = x.cols();
  detail::require(gamma.size() == c && beta.size() == c, "layer_norm: affine length must equal feature count");
  std::vector<T> v(x.size());
  std::vector<double> xhat(x.size()), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += x[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (x[i * c + j] - mu) * inv_std[i];
      v[i * c + j] = static_cast<T>(xhat[i * c + j] * gamma[j] + beta[j]);
    }
  }
  auto out = detail::result<T>("layer_norm", x.shape(), std::move(v), {&x, &gamma, &beta});
  detail::set_backward<T>(out, [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat),
                                inv_std = std::move(inv_std), r, c](const std::vector<T>& g) {
    for (std::size_t i = 0; i < r; ++i) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double dxh = static_cast<double>(g[i * c + j]) * gn->value[j];
        m1 += dxh;
        m2 += dxh * xhat[i * c + j];
      }
      m1 /= static_cast<double>(c);
      m2 /= static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) {
        const double gij = g[i * c + j];
        if (xn->requires_grad) {
          const double dxh = gij * gn->value[j];
          xn->accumulate(i * c + j, inv_std[i] * (dxh - m1 - xhat[i * c + j] * m2));
        }
        if (gn->requires_grad) gn->accumulate(j, gij * xhat[i * c + j]);
        if (bn->requires_grad) bn->accumulate(j, gij);
      }
    }
  });
  return out;
}

// Row-wise x / ||x||.
template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, double eps = 1e-12) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> v(x.size());
  std::vector<double> norms(r), y(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += static_cast<double>(x[i * c + j]) * x[i * c + j];
    norms[i] = std::sqrt(ss + eps);
    for (std::size_t j = 0; j < c; ++j) {
      y[i * c + j] = x[i * c + j] / norms[i];
      v[i * c + j] = static_cast<T>(y[i * c + j]);
    }
  }
  auto out = detail::result<T>("l2_normalize_rows", x.shape(), std::move(v), {&x});
  detail::set_backward<T>(out, [xn = x.node(), norms = std::move(norms), y = std::move(y), r,
                                c](const std::vector<T>& g) {
    if (!xn->requires_grad) return;
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        xn->accumulate(i * c + j, (g[i * c + j] - y[i * c + j] * dot) / norms[i]);
    }
  });
  return out;
}

// ---------------------------------------------------------------- losses

inline constexpr std::size_t kNoExclusion = static_cast<std::size_t>(-1);

// Weighted mean over rows of -log softmax(logits[r])[target[r]], computed with
// max subtraction. `row_weights` defaults to 1; `excluded[r]` names a column
// removed from row r's softmax (kNoExclusion for none).
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets,
                        const std::vector<double>& row_weights = {},
                        const std::vector<std::size_t>& excluded = {}) {
  const std::size_t r = logits.rows(), k = logits.cols();
  detail::require(targets.size() == r, "cross_entropy: one target per row required");
  detail::require(row_weights.empty() || row_weights.size() == r, "cross_entropy: weight count mismatch");
  detail::require(excluded.empty() || excluded.size() == r, "cross_entropy: exclusion count mismatch");
  double wsum = 0.0;
  for (std::size_t i = 0; i < r; ++i) wsum += row_weights.empty() ? 1.0 : row_weights[i];
  detail::require(wsum > 0.0, "cross_entropy: total row weight is zero");
  std::vector<double> probs(r * k, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    detail::require(targets[i] < k, "cross_entropy: target index out of range");
    const std::size_t ex = excluded.empty() ? kNoExclusion : excluded[i];
    detail::require(ex != targets[i], "cross_entropy: target column is excluded");
    const double w = row_weights.empty() ? 1.0 : row_weights[i];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j)
      if (j != ex) mx = std::max(mx, static_cast<double>(logits[i * k + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == ex) continue;
      probs[i * k + j] = std::exp(logits[i * k + j] - mx);
      z += probs[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
    if (w != 0.0) loss += w * (std::log(z) + mx - logits[i * k + targets[i]]);
  }
  loss /= wsum;
  auto out = detail::result<T>("cross_entropy", {1}, {static_cast<T>(loss)}, {&logits});
  detail::set_backward<T>(out, [ln = logits.node(), probs = std::move(probs), targets, row_weights, wsum, r,
                                k](const std::vector<T>& g) {
    if (!ln->requires_grad) return;
    for (std::size_t i = 0; i < r; ++i) {
      const double w = (row_weights.empty() ? 1.0 : row_weights[i]) * g[0] / wsum;
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < k; ++j) {
        const double d = probs[i * k + j] - (j == targets[i] ? 1.0 : 0.0);
        ln->accumulate(i * k + j, w * d);
      }
    }
  });
  return out;
}

// -log softmax(logits)[target] for a single logit vector.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t target) {
  detail::require(target < logits.size(), "softmax_cross_entropy: target out of range");
  return cross_entropy(reshape(logits, {1, logits.size()}), {target});
}

// ---------------------------------------------------------------- convolution

struct Conv1dGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t output_length(std::size_t length) const {
    if (length + 2 * padding < kernel) throw std::invalid_argument("conv1d: input shorter than kernel");
    return (length + 2 * padding - kernel) / stride + 1;
  }
};

// x: [B x in*len] channel-major per row; w: [out x in*kernel]; b: [out].
// Returns [B x out*out_len].
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const Conv1dGeometry& geo) {
  const std::size_t batch = x.rows();
  detail::require(x.cols() % geo.in_channels == 0, "conv1d: input width not divisible by channels");
  const std::size_t len = x.cols() / geo.in_channels;
  const std::size_t olen = geo.output_length(len);
  detail::require(w.size() == geo.out_channels * geo.in_channels * geo.kernel, "conv1d: weight shape mismatch");
  detail::require(b.size() == geo.out_channels, "conv1d: bias shape mismatch");
  const std::size_t ci = geo.in_channels, co = geo.out_channels, ks = geo.kernel;
  std::vector<T> v(batch * co * olen);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* xr = x.data().data() + n * ci * len;
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t t = 0; t < olen; ++t) {
        double acc = b[o];
        const long start = static_cast<long>(t * geo.stride) - static_cast<long>(geo.padding);
        for (std::size_t c = 0; c < ci; ++c) {
          const T* wr = w.data().data() + (o * ci + c) * ks;
          for (std::size_t q = 0; q < ks; ++q) {
            const long pos = start + static_cast<long>(q);
            if (pos < 0 || pos >= static_cast<long>(len)) continue;
            acc += static_cast<double>(wr[q]) * xr[c * len + static_cast<std::size_t>(pos)];
          }
        }
        v[(n * co + o) * olen + t] = static_cast<T>(acc);
      }
    }
  }
  auto out = detail::result<T>("conv1d", {batch, co * olen}, std::move(v), {&x, &w, &b});
  detail::set_backward<T>(out, [xn = x.node(), wn = w.node(), bn = b.node(), geo, batch, len,
                                olen](const std::vector<T>& g) {
    const std::size_t ci = geo.in_channels, co = geo.out_channels, ks = geo.kernel;
    std::vector<double> dw(wn->requires_grad ? wn->value.size() : 0, 0.0);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t o = 0; o < co; ++o) {
        for (std::size_t t = 0; t < olen; ++t) {
          const double gv = g[(n * co + o) * olen + t];
          if (gv == 0.0) continue;
          if (bn->requires_grad) bn->accumulate(o, gv);
          const long start = static_cast<long>(t * geo.stride) - static_cast<long>(geo.padding);
          for (std::size_t c = 0; c < ci; ++c) {
            for (std::size_t q = 0; q < ks; ++q) {
              const long pos = start + static_cast<long>(q);
              if (pos < 0 || pos >= static_cast<long>(len)) continue;
              const std::size_t xi = n * ci * len + c * len + static_cast<std::size_t>(pos);
              const std::size_t wi = (o * ci + c) * ks + q;
              if (xn->requires_grad) xn->accumulate(xi, gv * wn->value[wi]);
              if (wn->requires_grad) dw[wi] += gv * xn->value[xi];
            }
          }
        }
      }
    }
    for (std::size_t i = 0; i < dw.size(); ++i) wn->accumulate(i, dw[i]);
  });
  return out;
}

namespace detail {

// Per (segment, feature) causal convolution of column-major slices.
// u: rows = segments * seg_len, cols = features; kernel: [taps x features].
inline void causal_conv_columns(const std::vector<std::vector<cplx>>& kernel_spectra, const double* u,
                                double* y, std::size_t segments, std::size_t seg_len, std::size_t features,
                                std::size_t m) {
  std::vector<cplx> buf(m);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t f = 0; f < features; ++f) {
      std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
      for (std::size_t t = 0; t < seg_len; ++t) buf[t] = u[(s * seg_len + t) * features + f];
      fft_inplace(buf, false);
      const auto& ks = kernel_spectra[f];
      for (std::size_t i = 0; i < m; ++i) buf[i] *= ks[i];
      fft_inplace(buf, true);
      for (std::size_t t = 0; t < seg_len; ++t)
        y[(s * seg_len + t) * features + f] = buf[t].real() / static_cast<double>(m);
    }
  }
}

template <class T>
std::vector<std::vector<cplx>> column_spectra(const T* kernel, std::size_t taps, std::size_t features,
                                              std::size_t use, std::size_t m, bool conjugate) {
  std::vector<std::vector<cplx>> out(features, std::vector<cplx>(m));
  for (std::size_t f = 0; f < features; ++f) {
    auto& b = out[f];
    for (std::size_t t = 0; t < std::min(use, taps); ++t) b[t] = static_cast<double>(kernel[t * features + f]);
    fft_inplace(b, false);
    if (conjugate)
      for (auto& z : b) z = std::conj(z);
  }
  return out;
}

}  // namespace detail

// Depthwise causal convolution through FFT, independently per segment of
// `seg_len` rows: y[t, f] = sum_{s<=t} kernel[s, f] * u[t-s, f].
// u: [segments*seg_len x F]; kernel: [taps x F] with taps >= seg_len.
template <class T>
Tensor<T> causal_conv(const Tensor<T>& u, const Tensor<T>& kernel, std::size_t seg_len) {
  const std::size_t features = u.cols();
  detail::require(seg_len > 0 && u.rows() % seg_len == 0, "causal_conv: rows not divisible by segment length");
  detail::require(kernel.cols() == features, "causal_conv: kernel feature count mismatch");
  detail::require(kernel.rows() >= seg_len, "causal_conv: sequence longer than kernel");
  const std::size_t segments = u.rows() / seg_len, taps = kernel.rows();
  const std::size_t m = next_pow2(2 * seg_len);
  const auto kspec = detail::column_spectra(kernel.data().data(), taps, features, seg_len, m, false);
  std::vector<double> ud(u.data().begin(), u.data().end()), y(u.size());
  detail::causal_conv_columns(kspec, ud.data(), y.data(), segments, seg_len, features, m);
  auto out = detail::result<T>("causal_conv", u.shape(), detail::narrow<T>(y), {&u, &kernel});
  detail::set_backward<T>(out, [un = u.node(), kn = kernel.node(), seg_len, segments, features, taps,
                                m](const std::vector<T>& g) {
    // Both gradients are cross-correlations with g: IFFT(G * conj(X)).
    std::vector<cplx> gb(m), xb(m);
    const auto kconj = un->requires_grad
                           ? detail::column_spectra(kn->value.data(), taps, features, seg_len, m, true)
                           : std::vector<std::vector<cplx>>{};
    for (std::size_t s = 0; s < segments; ++s) {
      for (std::size_t f = 0; f < features; ++f) {
        std::fill(gb.begin(), gb.end(), cplx(0.0, 0.0));
        for (std::size_t t = 0; t < seg_len; ++t) gb[t] = static_cast<double>(g[(s * seg_len + t) * features + f]);
        fft_inplace(gb, false);
        if (un->requires_grad) {
          for (std::size_t i = 0; i < m; ++i) xb[i] = gb[i] * kconj[f][i];
          fft_inplace(xb, true);
          for (std::size_t t = 0; t < seg_len; ++t)
            un->accumulate((s * seg_len + t) * features + f, xb[t].real() / static_cast<double>(m));
        }
        if (kn->requires_grad) {
          std::fill(xb.begin(), xb.end(), cplx(0.0, 0.0));
          for (std::size_t t = 0; t < seg_len; ++t)
            xb[t] = static_cast<double>(un->value[(s * seg_len + t) * features + f]);
          fft_inplace(xb, false);
          for (std::size_t i = 0; i < m; ++i) xb[i] = gb[i] * std::conj(xb[i]);
          fft_inplace(xb, true);
          for (std::size_t t = 0; t < seg_len; ++t) kn->accumulate(t * features + f, xb[t].real() / static_cast<double>(m));
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------- attention

// Multi-head scaled dot-product attention restricted to |i-j| <= half_window
// inside each segment of `seg_len` rows. q, k, v: [segments*seg_len x heads*head_dim].
template <class T>
Tensor<T> window_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                           std::size_t seg_len, std::size_t half_window) {
  detail::require_same_shape(q, k, "window_attention");
  detail::require_same_shape(q, v, "window_attention");
  const std::size_t width = q.cols();
  detail::require(heads > 0 && width % heads == 0, "window_attention: width not divisible by heads");
  detail::require(seg_len > 0 && q.rows() % seg_len == 0, "window_attention: rows not divisible by segment");
  const std::size_t hd = width / heads, segments = q.rows() / seg_len;
  const std::size_t hw = std::min(half_window, seg_len);
  const std::size_t span_max = std::min(2 * hw + 1, seg_len);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> probs(q.rows() * heads * span_max, 0.0);
  std::vector<double> y(q.size(), 0.0);
  const T* qp = q.data().data();
  const T* kp = k.data().data();
  const T* vp = v.data().data();
  std::vector<double> sc(span_max);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seg_len; ++i) {
        const std::size_t lo = i >= hw ? i - hw : 0, hi = std::min(seg_len - 1, i + hw);
        const std::size_t row = s * seg_len + i;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = lo; j <= hi; ++j) {
          const std::size_t rj = s * seg_len + j;
          double acc = 0.0;
          for (std::size_t d = 0; d < hd; ++d)
            acc += static_cast<double>(qp[row * width + h * hd + d]) * kp[rj * width + h * hd + d];
          sc[j - lo] = acc * inv_sqrt;
          mx = std::max(mx, sc[j - lo]);
        }
        double z = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) z += (sc[j - lo] = std::exp(sc[j - lo] - mx));
        double* pr = probs.data() + (row * heads + h) * span_max;
        for (std::size_t j = lo; j <= hi; ++j) {
          pr[j - lo] = sc[j - lo] / z;
          const std::size_t rj = s * seg_len + j;
          for (std::size_t d = 0; d < hd; ++d) y[row * width + h * hd + d] += pr[j - lo] * vp[rj * width + h * hd + d];
        }
      }
    }
  }
  auto out = detail::result<T>("window_attention", q.shape(), detail::narrow<T>(y), {&q, &k, &v});
  detail::set_backward<T>(out, [qn = q.node(), kn = k.node(), vn = v.node(), probs = std::move(probs), heads, hd,
                                width, seg_len, segments, hw, span_max, inv_sqrt](const std::vector<T>& g) {
    std::vector<double> dp(span_max);
    for (std::size_t s = 0; s < segments; ++s) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < seg_len; ++i) {
          const std::size_t lo = i >= hw ? i - hw : 0, hi = std::min(seg_len - 1, i + hw);
          const std::size_t row = s * seg_len + i;
          const double* pr = probs.data() + (row * heads + h) * span_max;
          double pdp = 0.0;
          for (std::size_t j = lo; j <= hi; ++j) {
            const std::size_t rj = s * seg_len + j;
            double acc = 0.0;
            for (std::size_t d = 0; d < hd; ++d)
              acc += static_cast<double>(g[row * width + h * hd + d]) * vn->value[rj * width + h * hd + d];
            dp[j - lo] = acc;
            pdp += pr[j - lo] * acc;
            if (vn->requires_grad) {
              for (std::size_t d = 0; d < hd; ++d)
                vn->accumulate(rj * width + h * hd + d, pr[j - lo] * g[row * width + h * hd + d]);
            }
          }
          for (std::size_t j = lo; j <= hi; ++j) {
            const double ds = pr[j - lo] * (dp[j - lo] - pdp) * inv_sqrt;
            if (ds == 0.0) continue;
            const std::size_t rj = s * seg_len + j;
            for (std::size_t d = 0; d < hd; ++d) {
              if (qn->requires_grad) qn->accumulate(row * width + h * hd + d, ds * kn->value[rj * width + h * hd + d]);
              if (kn->requires_grad) kn->accumulate(rj * width + h * hd + d, ds * qn->value[row * width + h * hd + d]);
            }
          }
        }
      }
    }
  });
  return out;
}

}  // namespace codebrain::num
