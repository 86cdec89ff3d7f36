#include "advrl/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "advrl/errors.hpp"

namespace advrl {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Views a tensor as rows × last-axis.
std::size_t row_length(const Tensor& t) { return t.shape().back(); }

void accumulate(std::vector<Tensor>& grads, std::size_t index, const Shape& shape,
                const auto& fn) {
  if (grads[index].empty()) grads[index] = Tensor(shape);
  fn(grads[index].data());
}

}  // namespace

Tensor Gradients::wrt(Var v) const {
  const auto i = v.index();
  if (!grads_[i].empty()) return grads_[i];
  return Tensor(shapes_[i]);
}

Var Tape::record(Op op, Tensor value, std::size_t a, std::size_t b, bool uses_b) {
  Node node;
  node.op = op;
  node.a = a;
  node.b = b;
  node.requires_grad = nodes_[a].requires_grad || (uses_b && nodes_[b].requires_grad);
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

Var Tape::constant_ref(const Tensor& value) {
  Node node;
  node.borrowed = &value;
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

Var Tape::variable_ref(const Tensor& value) {
  Node node;
  node.borrowed = &value;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

Var Tape::matmul(Var a, Var b) {
  return record(Op::matmul, advrl::matmul(value(a), value(b)), a.index(), b.index(), true);
}

Var Tape::conv2d(Var input, Var filters, std::size_t stride) {
  auto out = advrl::conv2d(value(input), value(filters), stride);
  auto v = record(Op::conv2d, std::move(out), input.index(), filters.index(), true);
  nodes_.back().param = static_cast<double>(stride);
  return v;
}

Var Tape::relu(Var x) { return record(Op::relu, advrl::relu(value(x)), x.index(), 0, false); }

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  const auto bv = value(b).data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return record(Op::add, std::move(out), a.index(), b.index(), true);
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Tensor out = value(a);
  const auto bv = value(b).data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return record(Op::sub, std::move(out), a.index(), b.index(), true);
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const auto bv = value(b).data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return record(Op::mul, std::move(out), a.index(), b.index(), true);
}

Var Tape::scale(Var x, double factor) {
  Tensor out = value(x);
  for (auto& v : out.data()) v *= factor;
  auto r = record(Op::scale, std::move(out), x.index(), 0, false);
  nodes_.back().param = factor;
  return r;
}

Var Tape::add_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  if (bv.rank() != 1 || bv.size() != row_length(xv)) {
    throw DimensionError("add_bias shape mismatch: " + shape_string(xv.shape()) + " and bias " +
                         shape_string(bv.shape()));
  }
  Tensor out = xv;
  const std::size_t m = bv.size();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i % m];
  return record(Op::add_bias, std::move(out), x.index(), bias.index(), true);
}

Var Tape::add_channel_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  if ((xv.rank() != 3 && xv.rank() != 4) || bv.rank() != 1 ||
      bv.size() != xv.dim(xv.rank() - 3)) {
    throw DimensionError("add_channel_bias shape mismatch: " + shape_string(xv.shape()) +
                         " and bias " + shape_string(bv.shape()));
  }
  Tensor out = xv;
  const std::size_t plane = xv.dim(xv.rank() - 1) * xv.dim(xv.rank() - 2);
  const std::size_t channels = bv.size();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[(i / plane) % channels];
  return record(Op::add_channel_bias, std::move(out), x.index(), bias.index(), true);
}

Var Tape::reshape(Var x, Shape shape) {
  return record(Op::reshape, value(x).reshaped(std::move(shape)), x.index(), 0, false);
}

Var Tape::square(Var x) {
  Tensor out = value(x);
  for (auto& v : out.data()) v *= v;
  return record(Op::square, std::move(out), x.index(), 0, false);
}

Var Tape::exp(Var x) {
  Tensor out = value(x);
  for (auto& v : out.data()) v = std::exp(v);
  return record(Op::exp, std::move(out), x.index(), 0, false);
}

Var Tape::log(Var x) {
  Tensor out = value(x);
  for (auto& v : out.data()) {
    if (!(v > 0.0)) throw ContractError("log of non-positive value");
    v = std::log(v);
  }
  return record(Op::log, std::move(out), x.index(), 0, false);
}

Var Tape::softmax(Var x) {
  Tensor out = value(x);
  const std::size_t m = row_length(out);
  auto o = out.data();
  for (std::size_t r = 0; r < o.size(); r += m) {
    const double mx = *std::max_element(o.begin() + r, o.begin() + r + m);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      o[r + j] = std::exp(o[r + j] - mx);
      total += o[r + j];
    }
    for (std::size_t j = 0; j < m; ++j) o[r + j] /= total;
  }
  return record(Op::softmax, std::move(out), x.index(), 0, false);
}

Var Tape::log_softmax(Var x) {
  Tensor out = value(x);
  const std::size_t m = row_length(out);
  auto o = out.data();
  for (std::size_t r = 0; r < o.size(); r += m) {
    const double mx = *std::max_element(o.begin() + r, o.begin() + r + m);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) total += std::exp(o[r + j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < m; ++j) o[r + j] -= lse;
  }
  return record(Op::log_softmax, std::move(out), x.index(), 0, false);
}

Var Tape::pick(Var x, std::vector<std::size_t> indices) {
  const Tensor& xv = value(x);
  if (xv.rank() > 2) throw DimensionError("pick expects a 1-D or 2-D tensor, got " + shape_string(xv.shape()));
  const std::size_t rows = xv.rank() == 2 ? xv.dim(0) : 1;
  const std::size_t m = row_length(xv);
  if (indices.size() != rows) {
    throw DimensionError("pick needs one index per row: " + std::to_string(rows) + " rows, " +
                         std::to_string(indices.size()) + " indices");
  }
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (indices[r] >= m) throw ContractError("pick index out of range");
    out[r] = xv[r * m + indices[r]];
  }
  auto v = record(Op::pick, std::move(out), x.index(), 0, false);
  nodes_.back().indices = std::move(indices);
  return v;
}

Var Tape::sum(Var x) {
  double total = 0.0;
  for (double v : value(x).data()) total += v;
  return record(Op::sum, Tensor::scalar(total), x.index(), 0, false);
}

Var Tape::mean(Var x) {
  double total = 0.0;
  for (double v : value(x).data()) total += v;
  return record(Op::mean, Tensor::scalar(total / static_cast<double>(value(x).size())), x.index(), 0,
                false);
}

Gradients Tape::backward(Var loss) const {
  if (value(loss).size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(value(loss).shape()));
  }
  Gradients out;
  out.grads_.resize(nodes_.size());
  out.shapes_.reserve(nodes_.size());
  for (const auto& n : nodes_) out.shapes_.push_back(n.get().shape());
  if (!nodes_[loss.index()].requires_grad) return out;

  out.grads_[loss.index()] = Tensor(value(loss).shape(), 1.0);
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (node.op == Op::leaf || !node.requires_grad || out.grads_[i].empty()) continue;
    backward_node(node, out.grads_[i], out.grads_);
  }
  return out;
}

void Tape::backward_node(const Node& node, const Tensor& grad, std::vector<Tensor>& grads) const {
  const Node& na = nodes_[node.a];
  const Node& nb = nodes_[node.b];
  const auto g = grad.data();
  const auto& a_shape = na.get().shape();
  const bool ga = na.requires_grad;

  switch (node.op) {
    case Op::leaf:
      break;
    case Op::matmul: {
      const std::size_t m = na.get().dim(0), k = na.get().dim(1), n = nb.get().dim(1);
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        kernels::matmul_grad_a(g, nb.get().data(), d, m, k, n);
      });
      if (nb.requires_grad) accumulate(grads, node.b, nb.get().shape(), [&](auto d) {
        kernels::matmul_grad_b(na.get().data(), g, d, m, k, n);
      });
      break;
    }
    case Op::conv2d: {
      const auto geo = kernels::conv_geometry(a_shape, nb.get().shape(),
                                              static_cast<std::size_t>(node.param));
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        kernels::conv2d_grad_input(geo, g, nb.get().data(), d);
      });
      if (nb.requires_grad) accumulate(grads, node.b, nb.get().shape(), [&](auto d) {
        kernels::conv2d_grad_filters(geo, g, na.get().data(), d);
      });
      break;
    }
    case Op::relu:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        const auto x = na.get().data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += x[i] > 0.0 ? g[i] : 0.0;
      });
      break;
    case Op::add:
    case Op::sub: {
      const double sign = node.op == Op::add ? 1.0 : -1.0;
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      });
      if (nb.requires_grad) accumulate(grads, node.b, nb.get().shape(), [&](auto d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += sign * g[i];
      });
      break;
    }
    case Op::mul:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        const auto bv = nb.get().data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
      });
      if (nb.requires_grad) accumulate(grads, node.b, nb.get().shape(), [&](auto d) {
        const auto av = na.get().data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
      });
      break;
    case Op::scale:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * node.param;
      });
      break;
    case Op::add_bias:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      });
      if (nb.requires_grad) accumulate(grads, node.b, nb.get().shape(), [&](auto d) {
        const std::size_t m = d.size();
        for (std::size_t i = 0; i < g.size(); ++i) d[i % m] += g[i];
      });
      break;
    case Op::add_channel_bias:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      });
      if (nb.requires_grad) accumulate(grads, node.b, nb.get().shape(), [&](auto d) {
        const auto& s = a_shape;
        const std::size_t plane = s[s.size() - 1] * s[s.size() - 2];
        const std::size_t channels = d.size();
        for (std::size_t i = 0; i < g.size(); ++i) d[(i / plane) % channels] += g[i];
      });
      break;
    case Op::reshape:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      });
      break;
    case Op::square:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        const auto x = na.get().data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * x[i] * g[i];
      });
      break;
    case Op::exp:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        const auto y = node.get().data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += y[i] * g[i];
      });
      break;
    case Op::log:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        const auto x = na.get().data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / x[i];
      });
      break;
    case Op::softmax:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        const auto y = node.get().data();
        const std::size_t m = a_shape.back();
        for (std::size_t r = 0; r < d.size(); r += m) {
          double dot = 0.0;
          for (std::size_t j = 0; j < m; ++j) dot += g[r + j] * y[r + j];
          for (std::size_t j = 0; j < m; ++j) d[r + j] += y[r + j] * (g[r + j] - dot);
        }
      });
      break;
    case Op::log_softmax:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        const auto y = node.get().data();
        const std::size_t m = a_shape.back();
        for (std::size_t r = 0; r < d.size(); r += m) {
          double total = 0.0;
          for (std::size_t j = 0; j < m; ++j) total += g[r + j];
          for (std::size_t j = 0; j < m; ++j) d[r + j] += g[r + j] - std::exp(y[r + j]) * total;
        }
      });
      break;
    case Op::pick:
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        const std::size_t m = a_shape.back();
        for (std::size_t r = 0; r < node.indices.size(); ++r) d[r * m + node.indices[r]] += g[r];
      });
      break;
    case Op::sum:
    case Op::mean: {
      const double scale =
          node.op == Op::sum ? g[0] : g[0] / static_cast<double>(na.get().size());
      if (ga) accumulate(grads, node.a, a_shape, [&](auto d) {
        for (auto& v : d) v += scale;
      });
      break;
    }
  }
}

Tensor input_gradient(const Tape& tape, Var loss, Var input) {
  if (tape.value(loss).size() != 1) {
    throw ContractError("input_gradient needs a scalar loss, got shape " +
                        shape_string(tape.value(loss).shape()));
  }
  return tape.backward(loss).wrt(input);
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  if (!(h > 0.0)) throw ContractError("finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace advrl
