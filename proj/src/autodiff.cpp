#include "cfa/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "cfa/errors.hpp"

namespace cfa::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;
using StridedConstMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using StridedMutMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

// Eigen's blocked GEMM yields row results that do not depend on the row
// count, but a single-row product goes through GEMV, which sums in a different
// order. Padding one row to two keeps every sample's output independent of the
// batch it is evaluated in.
template <class Lhs, class Rhs, class Out>
void batch_invariant_product(const Lhs& a, const Rhs& b, Out&& out) {
  if (a.rows() != 1) {
    out.noalias() = a * b;
    return;
  }
  RowMatrix two = RowMatrix::Zero(2, a.cols());
  two.row(0) = a.row(0);
  RowMatrix result(2, b.cols());
  result.noalias() = two * b;
  out = result.topRows(1);
}

void require_same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

Tensor uninitialized_like(const Shape& shape) { return Tensor(shape, 0.0); }

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Graph::Graph() {
#ifdef NDEBUG
  check_finite_ = false;
#else
  check_finite_ = true;
#endif
}

Var Graph::parameter(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  node.leaf = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.leaf = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (check_finite_ && !value.all_finite()) throw DomainError("op produced a non-finite value");
  Node node;
  node.value = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ContractError("op input does not precede its consumer");
    node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Graph::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return {};
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0);
  return Tensor::adopt(node.value.shape(), node.grad);
}

Tensor Graph::take_grad(Var v) {
  Node& node = nodes_[v.id()];
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0);
  return Tensor::adopt(node.value.shape(), std::move(node.grad));
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw ContractError("loss belongs to another graph");
  if (loss.value().size() != 1) throw ContractError("backward requires a scalar loss");
  if (!requires_grad(loss.id())) return;
  for (auto& node : nodes_)
    if (!node.leaf) node.grad.clear();
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.leaf || node.grad.empty() || !node.backward) continue;
    std::vector<double> out_grad = std::move(node.grad);
    node.grad.clear();
    node.backward(*this, out_grad);
  }
}

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
    throw DimensionError("matmul: incompatible shapes " + shape_string(as) + " and " + shape_string(bs));
  const auto m = static_cast<Eigen::Index>(as[0]);
  const auto n = static_cast<Eigen::Index>(as[1]);
  const auto p = static_cast<Eigen::Index>(bs[1]);
  Tensor out = uninitialized_like({as[0], bs[1]});
  batch_invariant_product(ConstMap(a.value().data().data(), m, n), ConstMap(b.value().data().data(), n, p),
                          MutMap(out.data().data(), m, p));
  const auto ia = a.id();
  const auto ib = b.id();
  return a.graph().record(std::move(out), {ia, ib}, [=](Graph& g, std::span<const double> go) {
    ConstMap dout(go.data(), m, p);
    if (auto ga = g.grad_buffer(ia); !ga.empty())
      MutMap(ga.data(), m, n).noalias() += dout * ConstMap(g.value(ib).data().data(), n, p).transpose();
    if (auto gb = g.grad_buffer(ib); !gb.empty())
      MutMap(gb.data(), n, p).noalias() += ConstMap(g.value(ia).data().data(), m, n).transpose() * dout;
  });
}

Var conv2d(Var input, Var kernels, std::size_t stride) {
  require_same_graph(input, kernels);
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const auto& is = input.shape();
  const auto& ks = kernels.shape();
  if (is.size() != 3 && is.size() != 4) throw DimensionError("conv2d: input must be rank 3 or 4");
  if (ks.size() != 4 || ks[0] != ks[1]) throw DimensionError("conv2d: kernels must be [k x k x Cin x Cout]");
  const bool batched = is.size() == 4;
  const std::size_t batch = batched ? is[0] : 1;
  const std::size_t h = is[is.size() - 3];
  const std::size_t w = is[is.size() - 2];
  const std::size_t cin = is[is.size() - 1];
  const std::size_t k = ks[0];
  const std::size_t cout = ks[3];
  if (ks[2] != cin) throw DimensionError("conv2d: kernel input channels do not match input");
  if (h < k || w < k) throw DimensionError("conv2d: input smaller than kernel");
  if ((h - k) % stride != 0 || (w - k) % stride != 0)
    throw DimensionError("conv2d: (size - kernel) not divisible by stride");
  const std::size_t ho = (h - k) / stride + 1;
  const std::size_t wo = (w - k) / stride + 1;
  const std::size_t rows = batch * ho * wo;
  const std::size_t cols = k * k * cin;

  // im2col; column index = (di * k + dj) * cin + c, matching the kernel layout.
  auto patches = std::make_shared<std::vector<double>>(rows * cols);
  const auto x = input.value().data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t oi = 0; oi < ho; ++oi)
      for (std::size_t oj = 0; oj < wo; ++oj) {
        double* row = patches->data() + ((n * ho + oi) * wo + oj) * cols;
        for (std::size_t di = 0; di < k; ++di) {
          const double* src = x.data() + ((n * h + oi * stride + di) * w + oj * stride) * cin;
          std::copy(src, src + k * cin, row + di * k * cin);
        }
      }

  Shape out_shape = batched ? Shape{batch, ho, wo, cout} : Shape{ho, wo, cout};
  Tensor out = uninitialized_like(out_shape);
  const auto r = static_cast<Eigen::Index>(rows);
  const auto c = static_cast<Eigen::Index>(cols);
  const auto co = static_cast<Eigen::Index>(cout);
  batch_invariant_product(ConstMap(patches->data(), r, c), ConstMap(kernels.value().data().data(), c, co),
                          MutMap(out.data().data(), r, co));

  const auto ii = input.id();
  const auto ik = kernels.id();
  return input.graph().record(std::move(out), {ii, ik}, [=](Graph& g, std::span<const double> go) {
    ConstMap dout(go.data(), r, co);
    if (auto gk = g.grad_buffer(ik); !gk.empty())
      MutMap(gk.data(), c, co).noalias() += ConstMap(patches->data(), r, c).transpose() * dout;
    if (auto gi = g.grad_buffer(ii); !gi.empty()) {
      RowMatrix dpatches = dout * ConstMap(g.value(ik).data().data(), c, co).transpose();
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t oi = 0; oi < ho; ++oi)
          for (std::size_t oj = 0; oj < wo; ++oj) {
            const double* row = dpatches.data() + ((n * ho + oi) * wo + oj) * cols;
            for (std::size_t di = 0; di < k; ++di) {
              double* dst = gi.data() + ((n * h + oi * stride + di) * w + oj * stride) * cin;
              for (std::size_t t = 0; t < k * cin; ++t) dst[t] += row[di * k * cin + t];
            }
          }
    }
  });
}

Var add_bias(Var x, Var bias) {
  require_same_graph(x, bias);
  const auto& xs = x.shape();
  if (bias.shape().size() != 1 || xs.back() != bias.shape()[0])
    throw DimensionError("add_bias: bias length must equal the last axis of x");
  const std::size_t ch = xs.back();
  Tensor out = x.value();
  const auto b = bias.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i % ch];
  const auto ix = x.id();
  const auto ib = bias.id();
  return x.graph().record(std::move(out), {ix, ib}, [=](Graph& g, std::span<const double> go) {
    if (auto gx = g.grad_buffer(ix); !gx.empty())
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    if (auto gb = g.grad_buffer(ib); !gb.empty())
      for (std::size_t i = 0; i < go.size(); ++i) gb[i % ch] += go[i];
  });
}

Var exp(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::exp(v);
  const auto ix = x.id();
  const auto self = x.graph().size();
  return x.graph().record(std::move(out), {ix}, [ix, self](Graph& g, std::span<const double> go) {
    auto gx = g.grad_buffer(ix);
    const auto y = g.value(self).data();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i];
  });
}

Var log(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) {
    if (!(v > 0.0)) throw DomainError("log of a non-positive value");
    v = std::log(v);
  }
  const auto ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix](Graph& g, std::span<const double> go) {
    auto gx = g.grad_buffer(ix);
    const auto xv = g.value(ix).data();
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / xv[i];
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const auto ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix](Graph& g, std::span<const double> go) {
    auto gx = g.grad_buffer(ix);
    const auto xv = g.value(ix).data();
    for (std::size_t i = 0; i < go.size(); ++i)
      if (xv[i] > 0.0) gx[i] += go[i];
  });
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const auto ia = a.id();
  const auto ib = b.id();
  return a.graph().record(std::move(out), {ia, ib}, [=](Graph& g, std::span<const double> go) {
    for (auto id : {ia, ib})
      if (auto gx = g.grad_buffer(id); !gx.empty())
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const auto ia = a.id();
  const auto ib = b.id();
  return a.graph().record(std::move(out), {ia, ib}, [=](Graph& g, std::span<const double> go) {
    if (auto ga = g.grad_buffer(ia); !ga.empty()) {
      const auto other = g.value(ib).data();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * other[i];
    }
    if (auto gb = g.grad_buffer(ib); !gb.empty()) {
      const auto other = g.value(ia).data();
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * other[i];
    }
  });
}

Var scale(Var x, double factor) {
  if (!std::isfinite(factor)) throw DomainError("scale factor is not finite");
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  const auto ix = x.id();
  return x.graph().record(std::move(out), {ix}, [=](Graph& g, std::span<const double> go) {
    auto gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
  });
}

Var softmax(Var x) {
  const std::size_t ch = x.shape().back();
  Tensor out = x.value();
  auto o = out.data();
  for (std::size_t base = 0; base < o.size(); base += ch) {
    const double mx = *std::max_element(o.begin() + base, o.begin() + base + ch);
    double total = 0.0;
    for (std::size_t c = 0; c < ch; ++c) {
      o[base + c] = std::exp(o[base + c] - mx);
      total += o[base + c];
    }
    for (std::size_t c = 0; c < ch; ++c) o[base + c] /= total;
  }
  const auto ix = x.id();
  const auto self = x.graph().size();
  return x.graph().record(std::move(out), {ix}, [=](Graph& g, std::span<const double> go) {
    auto gx = g.grad_buffer(ix);
    const auto y = g.value(self).data();
    // J^T v for softmax: y * (v - <v, y>)
    for (std::size_t base = 0; base < go.size(); base += ch) {
      double dot = 0.0;
      for (std::size_t c = 0; c < ch; ++c) dot += go[base + c] * y[base + c];
      for (std::size_t c = 0; c < ch; ++c) gx[base + c] += y[base + c] * (go[base + c] - dot);
    }
  });
}

Var mse_loss(Var pred, Var target) {
  require_same_graph(pred, target);
  require_same_shape(pred, target, "mse_loss");
  const auto p = pred.value().data();
  const auto t = target.value().data();
  const double count = static_cast<double>(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    acc += d * d;
  }
  const auto ip = pred.id();
  const auto it = target.id();
  return pred.graph().record(Tensor({1}, acc / count), {ip, it}, [=](Graph& g, std::span<const double> go) {
    const auto pv = g.value(ip).data();
    const auto tv = g.value(it).data();
    const double f = 2.0 * go[0] / count;
    if (auto gp = g.grad_buffer(ip); !gp.empty())
      for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += f * (pv[i] - tv[i]);
    if (auto gt = g.grad_buffer(it); !gt.empty())
      for (std::size_t i = 0; i < pv.size(); ++i) gt[i] -= f * (pv[i] - tv[i]);
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const auto ix = x.id();
  return x.graph().record(Tensor({1}, acc), {ix}, [ix](Graph& g, std::span<const double> go) {
    auto gx = g.grad_buffer(ix);
    for (double& v : gx) v += go[0];
  });
}

Var sum_last_axis(Var x) {
  const auto& xs = x.shape();
  if (xs.size() < 2) throw DimensionError("sum_last_axis: rank must be at least 2");
  const std::size_t ch = xs.back();
  Shape out_shape(xs.begin(), xs.end() - 1);
  Tensor out(out_shape, 0.0);
  const auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < ch; ++c) acc += xv[i * ch + c];
    o[i] = acc;
  }
  const auto ix = x.id();
  return x.graph().record(std::move(out), {ix}, [=](Graph& g, std::span<const double> go) {
    auto gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < go.size(); ++i)
      for (std::size_t c = 0; c < ch; ++c) gx[i * ch + c] += go[i];
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const auto ix = x.id();
  return x.graph().record(std::move(out), {ix}, [ix](Graph& g, std::span<const double> go) {
    auto gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

Var blockwise_matmul(Var x, Var w) {
  require_same_graph(x, w);
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 3 || xs[1] != ws[0] || xs[2] != ws[1])
    throw DimensionError("blockwise_matmul: incompatible shapes " + shape_string(xs) + " and " +
                         shape_string(ws));
  const std::size_t n = xs[0], locs = xs[1], d = xs[2], e = ws[2];
  const auto ni = static_cast<Eigen::Index>(n);
  const auto di = static_cast<Eigen::Index>(d);
  const auto ei = static_cast<Eigen::Index>(e);
  const Eigen::OuterStride<> xstride(static_cast<Eigen::Index>(locs * d));
  const Eigen::OuterStride<> ostride(static_cast<Eigen::Index>(locs * e));
  Tensor out = uninitialized_like({n, locs, e});
  for (std::size_t l = 0; l < locs; ++l) {
    batch_invariant_product(StridedConstMap(x.value().data().data() + l * d, ni, di, xstride),
                            ConstMap(w.value().data().data() + l * d * e, di, ei),
                            StridedMutMap(out.data().data() + l * e, ni, ei, ostride));
  }
  const auto ix = x.id();
  const auto iw = w.id();
  return x.graph().record(std::move(out), {ix, iw}, [=](Graph& g, std::span<const double> go) {
    auto gx = g.grad_buffer(ix);
    auto gw = g.grad_buffer(iw);
    for (std::size_t l = 0; l < locs; ++l) {
      StridedConstMap dout(go.data() + l * e, ni, ei, ostride);
      if (!gx.empty())
        StridedMutMap(gx.data() + l * d, ni, di, xstride).noalias() +=
            dout * ConstMap(g.value(iw).data().data() + l * d * e, di, ei).transpose();
      if (!gw.empty())
        MutMap(gw.data() + l * d * e, di, ei).noalias() +=
            StridedConstMap(g.value(ix).data().data() + l * d, ni, di, xstride).transpose() * dout;
    }
  });
}

}  // namespace cfa::ad
