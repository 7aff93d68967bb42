#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rnac/error.hpp"
#include "rnac/rng.hpp"
#include "rnac/tensor.hpp"

namespace rnac {

using ParameterStore = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

namespace detail {

// Dot product with eight independent accumulators; the fixed reassociation
// keeps results deterministic while letting the FMA pipeline fill.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
    s4 += a[i + 4] * b[i + 4];
    s5 += a[i + 5] * b[i + 5];
    s6 += a[i + 6] * b[i + 6];
    s7 += a[i + 7] * b[i + 7];
  }
  double tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

}  // namespace detail

// Reverse-mode tape. Ops append nodes; creation order is a topological order,
// so backward() walks nodes in reverse and accumulates gradients additively.
class Tape {
 public:
  using NodeId = int;

  NodeId leaf(Tensor value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, nullptr);
  }

  // Named parameter leaf; repeated calls with the same name share one node so
  // gradients from every use accumulate together.
  NodeId param(const std::string& name, const Tensor& value) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return it->second;
    NodeId id = push(value, true, nullptr);
    nodes_[id].pname = name;
    param_nodes_[name] = id;
    return id;
  }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }

  // y = x W^T + b with x:[n,in], W:[out,in], b:[out].
  NodeId affine(NodeId x, NodeId W, NodeId b) {
    const Tensor& xv = nodes_[x].value;
    const Tensor& wv = nodes_[W].value;
    const Tensor& bv = nodes_[b].value;
    if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 ||
        xv.dim(1) != wv.dim(1) || bv.dim(0) != wv.dim(0))
      throw ShapeError("affine: shapes do not conform: x" + shape_str(xv) +
                       " W" + shape_str(wv) + " b" + shape_str(bv));
    const std::size_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
    Tensor y({n, out});
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = xv.data() + r * in;
      double* yr = y.data() + r * out;
      for (std::size_t o = 0; o < out; ++o)
        yr[o] = bv[o] + detail::dot(xr, wv.data() + o * in, in);
    }
    return push_op(std::move(y), {x, W, b}, "affine",
                   [x, W, b, n, in, out](Tape& t, const Tensor& gy) {
                     const Tensor& xv = t.nodes_[x].value;
                     const Tensor& wv = t.nodes_[W].value;
                     if (t.wants(W)) {
                       Tensor& gw = t.grad_ref(W);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t o = 0; o < out; ++o) {
                           const double g = gy[r * out + o];
                           if (g == 0.0) continue;
                           double* gwo = gw.data() + o * in;
                           const double* xr = xv.data() + r * in;
                           for (std::size_t i = 0; i < in; ++i)
                             gwo[i] += g * xr[i];
                         }
                     }
                     if (t.wants(b)) {
                       Tensor& gb = t.grad_ref(b);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t o = 0; o < out; ++o)
                           gb[o] += gy[r * out + o];
                     }
                     if (t.wants(x)) {
                       Tensor& gx = t.grad_ref(x);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t o = 0; o < out; ++o) {
                           const double g = gy[r * out + o];
                           if (g == 0.0) continue;
                           const double* wo = wv.data() + o * in;
                           double* gxr = gx.data() + r * in;
                           for (std::size_t i = 0; i < in; ++i)
                             gxr[i] += g * wo[i];
                         }
                     }
                   });
  }

  NodeId relu(NodeId x) {
    Tensor y = nodes_[x].value;
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    NodeId self = push_op(std::move(y), {x}, "relu", nullptr);
    nodes_[self].backward = [x, self](Tape& t, const Tensor& gy) {
      if (!t.wants(x)) return;
      Tensor& gx = t.grad_ref(x);
      const Tensor& xv = t.nodes_[x].value;
      for (std::size_t i = 0; i < gy.size(); ++i)
        if (xv[i] > 0.0) gx[i] += gy[i];
    };
    return self;
  }

  // Inverted dropout: zero with probability `rate`, survivors scaled by
  // 1/(1-rate). Train mode only; call sites use identity in eval mode.
  NodeId dropout(NodeId x, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate not in [0,1)");
    const Tensor& xv = nodes_[x].value;
    Tensor y = xv;
    auto mask = std::make_shared<std::vector<double>>(xv.size());
    const double scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double m = rng.bernoulli(rate) ? 0.0 : scale;
      (*mask)[i] = m;
      y[i] = xv[i] * m;
    }
    return push_op(std::move(y), {x}, "dropout",
                   [x, mask](Tape& t, const Tensor& gy) {
                     if (!t.wants(x)) return;
                     Tensor& gx = t.grad_ref(x);
                     for (std::size_t i = 0; i < gy.size(); ++i)
                       gx[i] += gy[i] * (*mask)[i];
                   });
  }

  // Row-wise softmax over the last axis of a rank-2 tensor.
  NodeId softmax_rows(NodeId x) {
    Tensor y = softmax_values(nodes_[x].value);
    NodeId self = push_op(std::move(y), {x}, "softmax", nullptr);
    nodes_[self].backward = [x, self](Tape& t, const Tensor& gy) {
      if (!t.wants(x)) return;
      const Tensor& p = t.nodes_[self].value;
      Tensor& gx = t.grad_ref(x);
      const std::size_t n = p.dim(0), k = p.dim(1);
      for (std::size_t r = 0; r < n; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          dot += gy[r * k + j] * p[r * k + j];
        for (std::size_t j = 0; j < k; ++j)
          gx[r * k + j] += p[r * k + j] * (gy[r * k + j] - dot);
      }
    };
    return self;
  }

  NodeId log_softmax_rows(NodeId x) {
    const Tensor& xv = nodes_[x].value;
    if (xv.rank() != 2) throw ShapeError("log_softmax: rank-2 input required");
    const std::size_t n = xv.dim(0), k = xv.dim(1);
    Tensor y({n, k});
    for (std::size_t r = 0; r < n; ++r) {
      double mx = -HUGE_VAL;
      for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, xv[r * k + j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < k; ++j) sum += std::exp(xv[r * k + j] - mx);
      const double lse = mx + std::log(sum);
      for (std::size_t j = 0; j < k; ++j) y[r * k + j] = xv[r * k + j] - lse;
    }
    NodeId self = push_op(std::move(y), {x}, "log_softmax", nullptr);
    nodes_[self].backward = [x, self, n, k](Tape& t, const Tensor& gy) {
      if (!t.wants(x)) return;
      const Tensor& lp = t.nodes_[self].value;
      Tensor& gx = t.grad_ref(x);
      for (std::size_t r = 0; r < n; ++r) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < k; ++j) gsum += gy[r * k + j];
        for (std::size_t j = 0; j < k; ++j)
          gx[r * k + j] += gy[r * k + j] - std::exp(lp[r * k + j]) * gsum;
      }
    };
    return self;
  }

  // Column-wise sum of a rank-2 tensor; zero rows yield the zero vector.
  NodeId sum_rows(NodeId x) {
    const Tensor& xv = nodes_[x].value;
    if (xv.rank() != 2) throw ShapeError("sum_rows: rank-2 input required");
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    Tensor y({1, d});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) y[j] += xv[r * d + j];
    return push_op(std::move(y), {x}, "sum_rows",
                   [x, n, d](Tape& t, const Tensor& gy) {
                     if (!t.wants(x)) return;
                     Tensor& gx = t.grad_ref(x);
                     for (std::size_t r = 0; r < n; ++r)
                       for (std::size_t j = 0; j < d; ++j)
                         gx[r * d + j] += gy[j];
                   });
  }

  // Multiplies row i of x by gates[i].
  NodeId scale_rows(NodeId x, NodeId gates) {
    const Tensor& xv = nodes_[x].value;
    const Tensor& gv = nodes_[gates].value;
    if (xv.rank() != 2 || gv.size() != xv.dim(0))
      throw ShapeError("scale_rows: gate count must equal row count");
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    Tensor y({n, d});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) y[r * d + j] = xv[r * d + j] * gv[r];
    return push_op(std::move(y), {x, gates}, "scale_rows",
                   [x, gates, n, d](Tape& t, const Tensor& gy) {
                     const Tensor& xv = t.nodes_[x].value;
                     const Tensor& gv = t.nodes_[gates].value;
                     if (t.wants(gates)) {
                       Tensor& gg = t.grad_ref(gates);
                       for (std::size_t r = 0; r < n; ++r) {
                         double acc = 0.0;
                         for (std::size_t j = 0; j < d; ++j)
                           acc += gy[r * d + j] * xv[r * d + j];
                         gg[r] += acc;
                       }
                     }
                     if (t.wants(x)) {
                       Tensor& gx = t.grad_ref(x);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t j = 0; j < d; ++j)
                           gx[r * d + j] += gy[r * d + j] * gv[r];
                     }
                   });
  }

  // Scalar element x[idx] of a vector-like tensor.
  NodeId pick(NodeId x, std::size_t idx) {
    const Tensor& xv = nodes_[x].value;
    if (idx >= xv.size()) throw UsageError("pick: index out of range");
    return push_op(Tensor::scalar(xv[idx]), {x}, "pick",
                   [x, idx](Tape& t, const Tensor& gy) {
                     if (!t.wants(x)) return;
                     t.grad_ref(x)[idx] += gy[0];
                   });
  }

  NodeId add(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    if (!av.same_shape(bv)) throw ShapeError("add: shape mismatch");
    Tensor y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    return push_op(std::move(y), {a, b}, "add",
                   [a, b](Tape& t, const Tensor& gy) {
                     if (t.wants(a)) {
                       Tensor& ga = t.grad_ref(a);
                       for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                     }
                     if (t.wants(b)) {
                       Tensor& gb = t.grad_ref(b);
                       for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
                     }
                   });
  }

  NodeId sub(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    if (!av.same_shape(bv)) throw ShapeError("sub: shape mismatch");
    Tensor y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    return push_op(std::move(y), {a, b}, "sub",
                   [a, b](Tape& t, const Tensor& gy) {
                     if (t.wants(a)) {
                       Tensor& ga = t.grad_ref(a);
                       for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                     }
                     if (t.wants(b)) {
                       Tensor& gb = t.grad_ref(b);
                       for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
                     }
                   });
  }

  NodeId mul(NodeId a, NodeId b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    if (!av.same_shape(bv)) throw ShapeError("mul: shape mismatch");
    Tensor y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    return push_op(std::move(y), {a, b}, "mul",
                   [a, b](Tape& t, const Tensor& gy) {
                     const Tensor& av = t.nodes_[a].value;
                     const Tensor& bv = t.nodes_[b].value;
                     if (t.wants(a)) {
                       Tensor& ga = t.grad_ref(a);
                       for (std::size_t i = 0; i < gy.size(); ++i)
                         ga[i] += gy[i] * bv[i];
                     }
                     if (t.wants(b)) {
                       Tensor& gb = t.grad_ref(b);
                       for (std::size_t i = 0; i < gy.size(); ++i)
                         gb[i] += gy[i] * av[i];
                     }
                   });
  }

  NodeId scale(NodeId x, double c) {
    Tensor y = nodes_[x].value;
    for (double& v : y.values()) v *= c;
    return push_op(std::move(y), {x}, "scale",
                   [x, c](Tape& t, const Tensor& gy) {
                     if (!t.wants(x)) return;
                     Tensor& gx = t.grad_ref(x);
                     for (std::size_t i = 0; i < gy.size(); ++i)
                       gx[i] += gy[i] * c;
                   });
  }

  NodeId add_const(NodeId x, double c) {
    Tensor y = nodes_[x].value;
    for (double& v : y.values()) v += c;
    return push_op(std::move(y), {x}, "add_const",
                   [x](Tape& t, const Tensor& gy) {
                     if (!t.wants(x)) return;
                     Tensor& gx = t.grad_ref(x);
                     for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                   });
  }

  NodeId square(NodeId x) {
    Tensor y = nodes_[x].value;
    for (double& v : y.values()) v *= v;
    return push_op(std::move(y), {x}, "square",
                   [x](Tape& t, const Tensor& gy) {
                     if (!t.wants(x)) return;
                     const Tensor& xv = t.nodes_[x].value;
                     Tensor& gx = t.grad_ref(x);
                     for (std::size_t i = 0; i < gy.size(); ++i)
                       gx[i] += 2.0 * gy[i] * xv[i];
                   });
  }

  NodeId sum_all(NodeId x) {
    const Tensor& xv = nodes_[x].value;
    double acc = 0.0;
    for (double v : xv.values()) acc += v;
    return push_op(Tensor::scalar(acc), {x}, "sum_all",
                   [x](Tape& t, const Tensor& gy) {
                     if (!t.wants(x)) return;
                     Tensor& gx = t.grad_ref(x);
                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[0];
                   });
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse creation order.
  void backward(NodeId loss) {
    if (nodes_[loss].value.size() != 1)
      throw UsageError("backward: loss must be scalar");
    grad_ref(loss)[0] += 1.0;
    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  // Gradients for every registered parameter; zero tensors for parameters the
  // loss never touched.
  GradMap named_grads() const {
    GradMap out;
    for (const auto& [name, id] : param_nodes_) {
      const Node& n = nodes_[id];
      out[name] = n.grad.size() ? n.grad : Tensor::zeros(n.value.shape());
    }
    return out;
  }

  std::size_t node_count() const { return nodes_.size(); }

  static Tensor softmax_values(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("softmax: rank-2 input required");
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor y({n, k});
    for (std::size_t r = 0; r < n; ++r) {
      double mx = -HUGE_VAL;
      for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, x[r * k + j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        y[r * k + j] = std::exp(x[r * k + j] - mx);
        sum += y[r * k + j];
      }
      for (std::size_t j = 0; j < k; ++j) y[r * k + j] /= sum;
    }
    return y;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<NodeId> parents;
    std::function<void(Tape&, const Tensor&)> backward;
    bool needs_grad = false;
    std::string pname;
  };

  bool wants(NodeId id) const { return nodes_[id].needs_grad; }

  Tensor& grad_ref(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }

  NodeId push(Tensor value, bool needs_grad,
              std::function<void(Tape&, const Tensor&)> backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  NodeId push_op(Tensor value, std::vector<NodeId> parents, const char* what,
                 std::function<void(Tape&, const Tensor&)> backward) {
    value.check_finite(what);
    bool needs = false;
    for (NodeId p : parents) needs = needs || nodes_[p].needs_grad;
    NodeId id = push(std::move(value), needs, std::move(backward));
    nodes_[id].parents = std::move(parents);
    if (!needs) nodes_[id].backward = nullptr;
    return id;
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_nodes_;
};

}  // namespace rnac
