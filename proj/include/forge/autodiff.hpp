#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "forge/core.hpp"

namespace forge {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size()) throw Error("tensor shape/data mismatch");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  static Tensor zeros(std::vector<std::size_t> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(numel_of(t.shape), 0.0);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

/// Node handle on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Dynamic reverse-mode tape. Nodes are appended in execution order; the
/// backward pass walks them once in reverse. Every op validates that its
/// output is finite so a diverging computation fails at the faulty op.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, std::size_t)> back;  // (tape, own id)
  };

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  Tensor& grad_mut(Var v) { return nodes_.at(v.id).grad; }

  Var leaf(Tensor t) { return push(std::move(t), nullptr, "leaf"); }

  Var add(Var a, Var b) { return binary(a, b, "add",
      [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair{g, g}; }); }

  Var sub(Var a, Var b) { return binary(a, b, "sub",
      [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair{g, -g}; }); }

  Var mul(Var a, Var b) { return binary(a, b, "mul",
      [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair{g * y, g * x}; }); }

  Var div(Var a, Var b) { return binary(a, b, "div",
      [](double x, double y) { return x / y; },
      [](double x, double y, double g) { return std::pair{g / y, -g * x / (y * y)}; }); }

  Var scale(Var a, double c) {
    Tensor out = nodes_[a.id].value;
    for (double& v : out.data) v *= c;
    return push(std::move(out), [a, c](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      Tensor& ga = t.nodes_[a.id].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
    }, "scale");
  }

  Var add_const(Var a, double c) {
    Tensor out = nodes_[a.id].value;
    for (double& v : out.data) v += c;
    return push(std::move(out), [a](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      Tensor& ga = t.nodes_[a.id].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    }, "add_const");
  }

  Var tanh_(Var a) { return unary(a, "tanh",
      [](double x) { return std::tanh(x); },
      [](double, double y, double g) { return g * (1.0 - y * y); }); }

  Var relu_(Var a) { return unary(a, "relu",
      [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0.0 ? g : 0.0; }); }

  Var sigmoid_(Var a) { return unary(a, "sigmoid",
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y, double g) { return g * y * (1.0 - y); }); }

  Var sqrt_(Var a) { return unary(a, "sqrt",
      [](double x) { return std::sqrt(x); },
      [](double, double y, double g) { return 0.5 * g / y; }); }

  Var sum_all(Var a) {
    const Tensor& x = nodes_[a.id].value;
    double s = 0.0;
    for (double v : x.data) s += v;
    return push(Tensor::scalar(s), [a](Tape& t, std::size_t self) {
      const double g = t.nodes_[self].grad.data[0];
      for (double& v : t.nodes_[a.id].grad.data) v += g;
    }, "sum");
  }

  Var mean_all(Var a) {
    const std::size_t n = nodes_[a.id].value.numel();
    if (n == 0) throw Error("mean of empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
  }

  Var reshape(Var a, std::vector<std::size_t> shape) {
    const Tensor& x = nodes_[a.id].value;
    if (Tensor::numel_of(shape) != x.numel()) throw Error("reshape changes element count");
    Tensor out(std::move(shape), x.data);
    return push(std::move(out), [a](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      Tensor& ga = t.nodes_[a.id].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    }, "reshape");
  }

  /// [rows, chans, steps] -> [rows, chans] at time index j.
  Var slice_time(Var a, std::size_t j) {
    const Tensor& x = nodes_[a.id].value;
    if (x.shape.size() != 3) throw Error("slice_time needs a rank-3 tensor");
    const std::size_t n = x.shape[0], c = x.shape[1], m = x.shape[2];
    if (j >= m) throw Error("slice_time index out of range");
    Tensor out = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n * c; ++i) out.data[i] = x.data[i * m + j];
    return push(std::move(out), [a, j, m](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      Tensor& ga = t.nodes_[a.id].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i * m + j] += g.data[i];
    }, "slice_time");
  }

  /// A[n,k] x B[k,p] -> [n,p].
  Var matmul(Var a, Var b) {
    const Tensor& A = nodes_[a.id].value;
    const Tensor& B = nodes_[b.id].value;
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
      throw Error("matmul shape mismatch");
    const std::size_t n = A.shape[0], k = A.shape[1], p = B.shape[1];
    Tensor out = Tensor::zeros({n, p});
    detail_matmul(A.data.data(), B.data.data(), out.data.data(), n, k, p);
    return push(std::move(out), [a, b, n, k, p](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& A2 = t.nodes_[a.id].value;
      const Tensor& B2 = t.nodes_[b.id].value;
      Tensor& ga = t.nodes_[a.id].grad;
      Tensor& gb = t.nodes_[b.id].grad;
      // dA += g . B^T ; dB += A^T . g
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) {
          const double gv = g.data[i * p + j];
          if (gv == 0.0) continue;
          for (std::size_t l = 0; l < k; ++l) {
            ga.data[i * k + l] += gv * B2.data[l * p + j];
            gb.data[l * p + j] += gv * A2.data[i * k + l];
          }
        }
    }, "matmul");
  }

  /// X[n,k] x W[k,p] + b[p] broadcast over rows.
  Var linear(Var x, Var w, Var b) {
    const Tensor& X = nodes_[x.id].value;
    const Tensor& W = nodes_[w.id].value;
    const Tensor& B = nodes_[b.id].value;
    if (X.shape.size() != 2 || W.shape.size() != 2 || X.shape[1] != W.shape[0])
      throw Error("linear shape mismatch");
    const std::size_t n = X.shape[0], k = X.shape[1], p = W.shape[1];
    if (B.numel() != p) throw Error("linear bias shape mismatch");
    Tensor out = Tensor::zeros({n, p});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p; ++j) out.data[i * p + j] = B.data[j];
    detail_matmul(X.data.data(), W.data.data(), out.data.data(), n, k, p);
    return push(std::move(out), [x, w, b, n, k, p](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& X2 = t.nodes_[x.id].value;
      const Tensor& W2 = t.nodes_[w.id].value;
      Tensor& gx = t.nodes_[x.id].grad;
      Tensor& gw = t.nodes_[w.id].grad;
      Tensor& gb = t.nodes_[b.id].grad;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) {
          const double gv = g.data[i * p + j];
          if (gv == 0.0) continue;
          gb.data[j] += gv;
          for (std::size_t l = 0; l < k; ++l) {
            gx.data[i * k + l] += gv * W2.data[l * p + j];
            gw.data[l * p + j] += gv * X2.data[i * k + l];
          }
        }
    }, "linear");
  }

  /// 1-D convolution along the row (symbol) axis with zero padding.
  /// X[n,f] * K[width,f,g] + b[g] -> [n,g]; row i reads rows i-pad .. i-pad+width-1.
  Var conv_rows(Var x, Var kern, Var bias) {
    const Tensor& X = nodes_[x.id].value;
    const Tensor& K = nodes_[kern.id].value;
    const Tensor& B = nodes_[bias.id].value;
    if (X.shape.size() != 2 || K.shape.size() != 3) throw Error("conv shape mismatch");
    const std::size_t n = X.shape[0], f = X.shape[1];
    const std::size_t width = K.shape[0], g_out = K.shape[2];
    if (K.shape[1] != f) throw Error("conv kernel channel mismatch");
    if (width > n) throw Error("conv kernel wider than batch");
    const std::size_t pad = (width - 1) / 2;
    Tensor out = Tensor::zeros({n, g_out});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t g = 0; g < g_out; ++g) {
        double acc = B.data[g];
        for (std::size_t d = 0; d < width; ++d) {
          const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + d) - static_cast<std::ptrdiff_t>(pad);
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(n)) continue;
          for (std::size_t c = 0; c < f; ++c)
            acc += X.data[static_cast<std::size_t>(r) * f + c] * K.data[(d * f + c) * g_out + g];
        }
        out.data[i * g_out + g] = acc;
      }
    return push(std::move(out), [x, kern, bias, n, f, width, g_out, pad](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& X2 = t.nodes_[x.id].value;
      const Tensor& K2 = t.nodes_[kern.id].value;
      Tensor& gx = t.nodes_[x.id].grad;
      Tensor& gk = t.nodes_[kern.id].grad;
      Tensor& gb = t.nodes_[bias.id].grad;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < g_out; ++o) {
          const double gv = g.data[i * g_out + o];
          if (gv == 0.0) continue;
          gb.data[o] += gv;
          for (std::size_t d = 0; d < width; ++d) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + d) - static_cast<std::ptrdiff_t>(pad);
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(n)) continue;
            for (std::size_t c = 0; c < f; ++c) {
              gx.data[static_cast<std::size_t>(r) * f + c] += gv * K2.data[(d * f + c) * g_out + o];
              gk.data[(d * f + c) * g_out + o] += gv * X2.data[static_cast<std::size_t>(r) * f + c];
            }
          }
        }
    }, "conv");
  }

  void backward(Var out, const Tensor& seed) {
    if (out.id >= nodes_.size()) throw Error("backward on unknown node");
    if (!nodes_[out.id].value.same_shape(seed)) throw Error("backward seed shape mismatch");
    for (auto& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
    nodes_[out.id].grad = seed;
    for (std::size_t i = nodes_.size(); i-- > 0;)
      if (nodes_[i].back) nodes_[i].back(*this, i);
  }

  void backward(Var out) {
    if (nodes_.at(out.id).value.numel() != 1)
      throw Error("implicit backward needs a scalar output");
    backward(out, Tensor::scalar(1.0));
  }

 private:
  std::vector<Node> nodes_;

  static void detail_matmul(const double* a, const double* b, double* c, std::size_t n,
                            std::size_t k, std::size_t p) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < k; ++l) {
        const double av = a[i * k + l];
        if (av == 0.0) continue;
        const double* brow = b + l * p;
        double* crow = c + i * p;
        for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
      }
  }

  Var push(Tensor value, std::function<void(Tape&, std::size_t)> back, const char* op) {
    for (double v : value.data)
      if (!std::isfinite(v)) throw Error(std::string("non-finite value produced by op ") + op);
    Node n;
    n.grad = Tensor::zeros(value.shape);
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  template <class F, class DF>
  Var unary(Var a, const char* op, F f, DF df) {
    Tensor out = nodes_[a.id].value;
    for (double& v : out.data) v = f(v);
    return push(std::move(out), [a, df](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& x = t.nodes_[a.id].value;
      const Tensor& y = t.nodes_[self].value;
      Tensor& ga = t.nodes_[a.id].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += df(x.data[i], y.data[i], g.data[i]);
    }, op);
  }

  // Elementwise binary op; either side may be a single-element tensor, which
  // broadcasts and accumulates its gradient.
  template <class F, class DF>
  Var binary(Var a, Var b, const char* op, F f, DF df) {
    const Tensor& A = nodes_[a.id].value;
    const Tensor& B = nodes_[b.id].value;
    const bool sa = A.numel() == 1, sb = B.numel() == 1;
    if (!A.same_shape(B) && !sa && !sb)
      throw Error(std::string("shape mismatch in op ") + op);
    const Tensor& big = sa ? B : A;
    Tensor out = Tensor::zeros(big.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = f(A.data[sa ? 0 : i], B.data[sb ? 0 : i]);
    return push(std::move(out), [a, b, sa, sb, df](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& A2 = t.nodes_[a.id].value;
      const Tensor& B2 = t.nodes_[b.id].value;
      Tensor& ga = t.nodes_[a.id].grad;
      Tensor& gb = t.nodes_[b.id].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        auto [da, db] = df(A2.data[sa ? 0 : i], B2.data[sb ? 0 : i], g.data[i]);
        ga.data[sa ? 0 : i] += da;
        gb.data[sb ? 0 : i] += db;
      }
    }, op);
  }
};

}  // namespace forge
