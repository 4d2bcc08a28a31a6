#include "eqvs/grad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace eqvs::grad {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor / ParamSet
// ---------------------------------------------------------------------------

template <class Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
  for (Index d : shape_) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension in " + shape_str(shape_));
  }
  data_ = Vector::Constant(shape_size(shape_), fill);
}

template <class Scalar>
Tensor<Scalar>::Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

template <class Scalar>
Tensor<Scalar> Tensor<Scalar>::from_matrix(const RowMatrix& m) {
  Tensor t({m.rows(), m.cols()});
  t.matrix() = m;
  return t;
}

template <class Scalar>
Scalar Tensor<Scalar>::item() const {
  if (data_.size() != 1) throw std::invalid_argument("Tensor::item: tensor is not a scalar");
  return data_[0];
}

template <class Scalar>
void ParamSet<Scalar>::add(std::string name, Tensor<Scalar> value) {
  if (index_.count(name)) throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
  index_.emplace(name, size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

template <class Scalar>
bool ParamSet<Scalar>::contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

template <class Scalar>
Index ParamSet<Scalar>::index_of(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("ParamSet: unknown parameter '" + std::string(name) + "'");
  return it->second;
}

template <class Scalar>
void ParamSet<Scalar>::set(Index i, Tensor<Scalar> value) {
  auto& slot = values_.at(static_cast<std::size_t>(i));
  if (slot.shape() != value.shape()) {
    throw std::invalid_argument("ParamSet: shape change for '" + name(i) + "' from " +
                                shape_str(slot.shape()) + " to " + shape_str(value.shape()));
  }
  slot = std::move(value);
}

template <class Scalar>
Index ParamSet<Scalar>::total_size() const {
  Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <class Scalar>
ParamSet<Scalar> ParamSet<Scalar>::zeros_like() const {
  ParamSet out;
  for (Index i = 0; i < size(); ++i) out.add(name(i), Tensor<Scalar>(value(i).shape()));
  return out;
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kVariable: return "variable";
    case Op::kParameter: return "parameter";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kMatmul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kAvgPool: return "avg_pool";
    case Op::kRelu: return "relu";
    case Op::kAbs: return "abs";
    case Op::kReshape: return "reshape";
    case Op::kConcat: return "concat";
    case Op::kSliceCols: return "slice_cols";
    case Op::kReduceSum: return "reduce_sum";
    case Op::kReduceMean: return "reduce_mean";
    case Op::kRowNorm: return "row_norm";
    case Op::kNormalizeRows: return "normalize_rows";
    case Op::kMse: return "mse";
  }
  return "?";
}

template <class Scalar>
typename Graph<Scalar>::Node& Graph<Scalar>::node(Var v) {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw std::invalid_argument("Graph: invalid node id");
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <class Scalar>
const typename Graph<Scalar>::Node& Graph<Scalar>::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw std::invalid_argument("Graph: invalid node id");
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <class Scalar>
void Graph<Scalar>::fail(int id, const std::string& what) const {
  throw std::invalid_argument("node " + std::to_string(id) + " (" +
                              op_name(nodes_[static_cast<std::size_t>(id)].op) + "): " + what);
}

template <class Scalar>
Var Graph<Scalar>::push(Node n) {
  for (int in : {n.a, n.b, n.c}) {
    if (in >= static_cast<int>(nodes_.size())) throw std::invalid_argument("Graph: input refers to a later node");
    if (in >= 0 && nodes_[static_cast<std::size_t>(in)].needs_grad) n.needs_grad = true;
  }
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  try {
    compute(id);
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return Var{id};
}

template <class Scalar>
Var Graph<Scalar>::constant(TensorT value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class Scalar>
Var Graph<Scalar>::variable(TensorT value) {
  Node n;
  n.op = Op::kVariable;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

template <class Scalar>
Var Graph<Scalar>::parameter(std::string_view name) {
  if (!params_) throw std::invalid_argument("Graph: no parameter set bound");
  const Index idx = params_->index_of(name);
  if (auto it = param_nodes_.find(idx); it != param_nodes_.end()) return Var{it->second};
  Node n;
  n.op = Op::kParameter;
  n.param = idx;
  n.needs_grad = true;
  const Var v = push(std::move(n));
  param_nodes_.emplace(idx, v.id);
  return v;
}

#define EQVS_BINARY(method, kind)        \
  template <class Scalar>                \
  Var Graph<Scalar>::method(Var a, Var b) { \
    Node n;                              \
    n.op = kind;                         \
    n.a = (node(a), a.id);               \
    n.b = (node(b), b.id);               \
    return push(std::move(n));           \
  }

EQVS_BINARY(add, Op::kAdd)
EQVS_BINARY(sub, Op::kSub)
EQVS_BINARY(mul, Op::kMul)
EQVS_BINARY(matmul, Op::kMatmul)
EQVS_BINARY(concat, Op::kConcat)
EQVS_BINARY(mse, Op::kMse)
#undef EQVS_BINARY

#define EQVS_UNARY(method, kind)  \
  template <class Scalar>         \
  Var Graph<Scalar>::method(Var a) { \
    Node n;                       \
    n.op = kind;                  \
    n.a = (node(a), a.id);        \
    return push(std::move(n));    \
  }

EQVS_UNARY(relu, Op::kRelu)
EQVS_UNARY(abs, Op::kAbs)
EQVS_UNARY(reduce_sum, Op::kReduceSum)
EQVS_UNARY(reduce_mean, Op::kReduceMean)
EQVS_UNARY(row_norm, Op::kRowNorm)
EQVS_UNARY(normalize_rows, Op::kNormalizeRows)
#undef EQVS_UNARY

template <class Scalar>
Var Graph<Scalar>::scale(Var a, Scalar s) {
  Node n;
  n.op = Op::kScale;
  n.a = (node(a), a.id);
  n.scalar = s;
  return push(std::move(n));
}

template <class Scalar>
Var Graph<Scalar>::conv2d(Var x, Var w, Var bias, Conv2dSpec spec) {
  Node n;
  n.op = Op::kConv2d;
  n.a = (node(x), x.id);
  n.b = (node(w), w.id);
  n.c = bias.id < 0 ? -1 : (node(bias), bias.id);
  n.conv = spec;
  return push(std::move(n));
}

template <class Scalar>
Var Graph<Scalar>::avg_pool(Var x, Index factor) {
  Node n;
  n.op = Op::kAvgPool;
  n.a = (node(x), x.id);
  n.count = factor;
  return push(std::move(n));
}

template <class Scalar>
Var Graph<Scalar>::reshape(Var a, Shape shape) {
  Node n;
  n.op = Op::kReshape;
  n.a = (node(a), a.id);
  n.shape = std::move(shape);
  return push(std::move(n));
}

template <class Scalar>
Var Graph<Scalar>::slice_cols(Var a, Index begin, Index count) {
  Node n;
  n.op = Op::kSliceCols;
  n.a = (node(a), a.id);
  n.begin = begin;
  n.count = count;
  return push(std::move(n));
}

template <class Scalar>
Var Graph<Scalar>::linear(Var x, std::string_view weight, std::string_view bias) {
  return add(matmul(x, parameter(weight)), parameter(bias));
}

template <class Scalar>
void Graph<Scalar>::set_value(Var leaf, TensorT value) {
  Node& n = node(leaf);
  if (n.op != Op::kConstant && n.op != Op::kVariable) fail(leaf.id, "set_value on a non-input node");
  if (n.value.shape() != value.shape()) {
    fail(leaf.id, "shape mismatch: expected " + shape_str(n.value.shape()) + ", got " + shape_str(value.shape()));
  }
  n.value = std::move(value);
}

template <class Scalar>
void Graph<Scalar>::forward() {
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) compute(i);
}

namespace {

// b broadcasts over the rows of a when it holds exactly one row's worth.
template <class Scalar>
bool row_broadcast(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() != b.shape() && b.size() == a.cols() && a.rows() > 0;
}

template <class Scalar>
Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> as_row(const Tensor<Scalar>& t) {
  return Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(t.data().data(), t.size());
}

}  // namespace

template <class Scalar>
void Graph<Scalar>::compute(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  auto in = [&](int k) -> const TensorT& { return nodes_[static_cast<std::size_t>(k)].value; };
  using RowMatrix = typename TensorT::RowMatrix;
  using MatMap = Eigen::Map<RowMatrix>;
  using CMatMap = Eigen::Map<const RowMatrix>;

  switch (n.op) {
    case Op::kConstant:
    case Op::kVariable:
      return;
    case Op::kParameter:
      n.value = params_->value(n.param);
      return;
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      const TensorT& a = in(n.a);
      const TensorT& b = in(n.b);
      n.value = a;
      if (a.shape() == b.shape()) {
        if (n.op == Op::kAdd) n.value.data() += b.data();
        if (n.op == Op::kSub) n.value.data() -= b.data();
        if (n.op == Op::kMul) n.value.data().array() *= b.data().array();
      } else if (row_broadcast(a, b)) {
        auto m = n.value.matrix();
        const auto row = as_row(b);
        if (n.op == Op::kAdd) m.rowwise() += row;
        if (n.op == Op::kSub) m.rowwise() -= row;
        if (n.op == Op::kMul) m.array().rowwise() *= row.array();
      } else {
        fail(id, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
      }
      return;
    }
    case Op::kScale:
      n.value = in(n.a);
      n.value.data() *= n.scalar;
      return;
    case Op::kMatmul: {
      const TensorT& a = in(n.a);
      const TensorT& b = in(n.b);
      if (a.cols() != b.rows()) {
        fail(id, "shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
      }
      n.value = TensorT({a.rows(), b.cols()});
      n.value.matrix().noalias() = a.matrix() * b.matrix();
      return;
    }
    case Op::kConv2d: {
      const TensorT& x = in(n.a);
      const TensorT& w = in(n.b);
      if (x.shape().size() != 4 || w.shape().size() != 4) fail(id, "conv2d expects rank-4 input and weight");
      const Index N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
      const Index KH = w.shape()[0], KW = w.shape()[1], OC = w.shape()[3];
      if (w.shape()[2] != C) fail(id, "channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
      const Index s = n.conv.stride, p = n.conv.pad;
      if (s < 1 || p < 0 || H + 2 * p < KH || W + 2 * p < KW) fail(id, "invalid stride/padding");
      const Index OH = (H + 2 * p - KH) / s + 1, OW = (W + 2 * p - KW) / s + 1;
      const Index K = KH * KW * C;
      n.cache = TensorT({N * OH * OW, K});
      auto cols = n.cache.matrix();
      const Scalar* xd = x.data().data();
      for (Index b = 0; b < N; ++b) {
        for (Index oy = 0; oy < OH; ++oy) {
          for (Index ox = 0; ox < OW; ++ox) {
            Scalar* row = &cols((b * OH + oy) * OW + ox, 0);
            for (Index ky = 0; ky < KH; ++ky) {
              const Index iy = oy * s - p + ky;
              if (iy < 0 || iy >= H) continue;
              for (Index kx = 0; kx < KW; ++kx) {
                const Index ix = ox * s - p + kx;
                if (ix < 0 || ix >= W) continue;
                std::copy_n(xd + ((b * H + iy) * W + ix) * C, C, row + (ky * KW + kx) * C);
              }
            }
          }
        }
      }
      n.value = TensorT({N, OH, OW, OC});
      MatMap out(n.value.data().data(), N * OH * OW, OC);
      out.noalias() = cols * CMatMap(w.data().data(), K, OC);
      if (n.c >= 0) {
        const TensorT& bias = in(n.c);
        if (bias.size() != OC) fail(id, "bias size mismatch");
        out.rowwise() += as_row(bias);
      }
      return;
    }
    case Op::kAvgPool: {
      const TensorT& x = in(n.a);
      const Index k = n.count;
      if (x.shape().size() != 4 || k < 1 || x.shape()[1] % k || x.shape()[2] % k) {
        fail(id, "avg_pool needs rank-4 input divisible by the factor");
      }
      const Index N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
      const Index OH = H / k, OW = W / k;
      n.value = TensorT({N, OH, OW, C});
      const Scalar norm = Scalar(1) / Scalar(k * k);
      const Scalar* xd = x.data().data();
      Scalar* od = n.value.data().data();
      for (Index b = 0; b < N; ++b)
        for (Index y = 0; y < H; ++y)
          for (Index xx = 0; xx < W; ++xx)
            for (Index c = 0; c < C; ++c)
              od[((b * OH + y / k) * OW + xx / k) * C + c] += norm * xd[((b * H + y) * W + xx) * C + c];
      return;
    }
    case Op::kRelu:
      n.value = in(n.a);
      n.value.data() = n.value.data().cwiseMax(Scalar(0));
      return;
    case Op::kAbs:
      n.value = in(n.a);
      n.value.data() = n.value.data().cwiseAbs();
      return;
    case Op::kReshape:
      if (shape_size(n.shape) != in(n.a).size()) {
        fail(id, "cannot reshape " + shape_str(in(n.a).shape()) + " to " + shape_str(n.shape));
      }
      n.value = TensorT(n.shape, in(n.a).data());
      return;
    case Op::kConcat: {
      const TensorT& a = in(n.a);
      const TensorT& b = in(n.b);
      if (a.rows() != b.rows()) fail(id, "row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
      n.value = TensorT({a.rows(), a.cols() + b.cols()});
      n.value.matrix() << a.matrix(), b.matrix();
      return;
    }
    case Op::kSliceCols: {
      const TensorT& a = in(n.a);
      if (n.begin < 0 || n.count < 0 || n.begin + n.count > a.cols()) fail(id, "slice out of range");
      n.value = TensorT({a.rows(), n.count});
      n.value.matrix() = a.matrix().middleCols(n.begin, n.count);
      return;
    }
    case Op::kReduceSum:
      n.value = TensorT::scalar(in(n.a).data().sum());
      return;
    case Op::kReduceMean:
      if (in(n.a).size() == 0) fail(id, "mean of an empty tensor");
      n.value = TensorT::scalar(in(n.a).data().mean());
      return;
    case Op::kRowNorm: {
      const TensorT& a = in(n.a);
      n.value = TensorT({a.rows(), 1});
      n.value.data() = a.matrix().rowwise().norm();
      return;
    }
    case Op::kNormalizeRows: {
      const TensorT& a = in(n.a);
      n.cache = TensorT({a.rows(), 1});
      n.cache.data() = a.matrix().rowwise().norm();
      if ((n.cache.data().array() <= Scalar(0)).any()) fail(id, "cannot normalize a zero row");
      n.value = a;
      auto m = n.value.matrix();
      for (Index r = 0; r < m.rows(); ++r) m.row(r) /= n.cache.data()[r];
      return;
    }
    case Op::kMse: {
      const TensorT& a = in(n.a);
      const TensorT& b = in(n.b);
      if (a.shape() != b.shape()) fail(id, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
      if (a.rows() == 0) fail(id, "mse of an empty batch");
      n.value = TensorT::scalar((a.data() - b.data()).squaredNorm() / Scalar(a.rows()));
      return;
    }
  }
}

template <class Scalar>
void Graph<Scalar>::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw std::invalid_argument("backward: loss node " + std::to_string(loss.id) + " is not scalar (shape " +
                                shape_str(ln.value.shape()) + ")");
  }
  std::vector<char> reached(nodes_.size(), 0);
  reached[static_cast<std::size_t>(loss.id)] = 1;
  for (int i = loss.id; i >= 0; --i) {
    if (!reached[static_cast<std::size_t>(i)]) continue;
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    for (int k : {n.a, n.b, n.c}) {
      if (k >= 0 && nodes_[static_cast<std::size_t>(k)].needs_grad) reached[static_cast<std::size_t>(k)] = 1;
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) {
      n.grad = TensorT(n.value.shape());
    } else {
      n.grad = TensorT();
    }
  }
  Node& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (!root.needs_grad) return;
  root.grad.data()[0] = Scalar(1);
  for (int i = loss.id; i >= 0; --i) {
    if (reached[static_cast<std::size_t>(i)] && nodes_[static_cast<std::size_t>(i)].needs_grad) propagate(i);
  }
}

template <class Scalar>
void Graph<Scalar>::propagate(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const TensorT& g = n.grad;
  auto input = [&](int k) -> Node& { return nodes_[static_cast<std::size_t>(k)]; };
  auto wants = [&](int k) { return k >= 0 && input(k).needs_grad; };
  using RowMatrix = typename TensorT::RowMatrix;
  using MatMap = Eigen::Map<RowMatrix>;
  using CMatMap = Eigen::Map<const RowMatrix>;

  // Accumulates an upstream gradient into an operand that may have been
  // broadcast over rows.
  auto accumulate = [&](Node& target, const TensorT& ref, const auto& contribution) {
    if (target.value.shape() == ref.shape()) {
      target.grad.data() += contribution;
    } else {
      CMatMap c(contribution.data(), ref.rows(), ref.cols());
      Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(target.grad.data().data(), target.grad.size()) +=
          c.colwise().sum();
    }
  };

  switch (n.op) {
    case Op::kConstant:
    case Op::kVariable:
    case Op::kParameter:
      return;
    case Op::kAdd:
    case Op::kSub: {
      if (wants(n.a)) input(n.a).grad.data() += g.data();
      if (wants(n.b)) {
        const typename TensorT::Vector c = n.op == Op::kAdd ? g.data() : typename TensorT::Vector(-g.data());
        accumulate(input(n.b), g, c);
      }
      return;
    }
    case Op::kMul: {
      const TensorT& a = input(n.a).value;
      const TensorT& b = input(n.b).value;
      if (wants(n.a)) {
        if (a.shape() == b.shape()) {
          input(n.a).grad.data().array() += g.data().array() * b.data().array();
        } else {
          MatMap ga(input(n.a).grad.data().data(), a.rows(), a.cols());
          ga.array() += g.matrix().array().rowwise() * as_row(b).array();
        }
      }
      if (wants(n.b)) {
        const typename TensorT::Vector c = (g.data().array() * a.data().array()).matrix();
        accumulate(input(n.b), a, c);
      }
      return;
    }
    case Op::kScale:
      if (wants(n.a)) input(n.a).grad.data() += n.scalar * g.data();
      return;
    case Op::kMatmul: {
      const TensorT& a = input(n.a).value;
      const TensorT& b = input(n.b).value;
      if (wants(n.a)) {
        MatMap ga(input(n.a).grad.data().data(), a.rows(), a.cols());
        ga.noalias() += g.matrix() * b.matrix().transpose();
      }
      if (wants(n.b)) {
        MatMap gb(input(n.b).grad.data().data(), b.rows(), b.cols());
        gb.noalias() += a.matrix().transpose() * g.matrix();
      }
      return;
    }
    case Op::kConv2d: {
      const TensorT& x = input(n.a).value;
      const TensorT& w = input(n.b).value;
      const Index N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
      const Index KH = w.shape()[0], KW = w.shape()[1], OC = w.shape()[3];
      const Index OH = n.value.shape()[1], OW = n.value.shape()[2];
      const Index K = KH * KW * C;
      const Index s = n.conv.stride, p = n.conv.pad;
      CMatMap gout(g.data().data(), N * OH * OW, OC);
      const auto cols = n.cache.matrix();
      if (wants(n.b)) {
        MatMap gw(input(n.b).grad.data().data(), K, OC);
        gw.noalias() += cols.transpose() * gout;
      }
      if (wants(n.c)) {
        Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(input(n.c).grad.data().data(), OC) +=
            gout.colwise().sum();
      }
      if (wants(n.a)) {
        RowMatrix dcols = gout * CMatMap(w.data().data(), K, OC).transpose();
        Scalar* gx = input(n.a).grad.data().data();
        for (Index b = 0; b < N; ++b) {
          for (Index oy = 0; oy < OH; ++oy) {
            for (Index ox = 0; ox < OW; ++ox) {
              const Scalar* row = &dcols((b * OH + oy) * OW + ox, 0);
              for (Index ky = 0; ky < KH; ++ky) {
                const Index iy = oy * s - p + ky;
                if (iy < 0 || iy >= H) continue;
                for (Index kx = 0; kx < KW; ++kx) {
                  const Index ix = ox * s - p + kx;
                  if (ix < 0 || ix >= W) continue;
                  Scalar* dst = gx + ((b * H + iy) * W + ix) * C;
                  const Scalar* src = row + (ky * KW + kx) * C;
                  for (Index c = 0; c < C; ++c) dst[c] += src[c];
                }
              }
            }
          }
        }
      }
      return;
    }
    case Op::kAvgPool: {
      if (!wants(n.a)) return;
      const TensorT& x = input(n.a).value;
      const Index k = n.count;
      const Index N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
      const Index OH = H / k, OW = W / k;
      const Scalar norm = Scalar(1) / Scalar(k * k);
      Scalar* gx = input(n.a).grad.data().data();
      const Scalar* gd = g.data().data();
      for (Index b = 0; b < N; ++b)
        for (Index y = 0; y < H; ++y)
          for (Index xx = 0; xx < W; ++xx)
            for (Index c = 0; c < C; ++c)
              gx[((b * H + y) * W + xx) * C + c] += norm * gd[((b * OH + y / k) * OW + xx / k) * C + c];
      return;
    }
    case Op::kRelu:
      if (wants(n.a)) {
        input(n.a).grad.data().array() +=
            (input(n.a).value.data().array() > Scalar(0)).select(g.data().array(), Scalar(0));
      }
      return;
    case Op::kAbs:
      if (wants(n.a)) {
        const auto& v = input(n.a).value.data().array();
        input(n.a).grad.data().array() +=
            g.data().array() * ((v > Scalar(0)).template cast<Scalar>() - (v < Scalar(0)).template cast<Scalar>());
      }
      return;
    case Op::kReshape:
      if (wants(n.a)) input(n.a).grad.data() += g.data();
      return;
    case Op::kConcat: {
      const Index ca = input(n.a).value.cols();
      const Index cb = input(n.b).value.cols();
      if (wants(n.a)) input(n.a).grad.matrix() += g.matrix().leftCols(ca);
      if (wants(n.b)) input(n.b).grad.matrix() += g.matrix().rightCols(cb);
      return;
    }
    case Op::kSliceCols:
      if (wants(n.a)) input(n.a).grad.matrix().middleCols(n.begin, n.count) += g.matrix();
      return;
    case Op::kReduceSum:
      if (wants(n.a)) input(n.a).grad.data().array() += g.data()[0];
      return;
    case Op::kReduceMean:
      if (wants(n.a)) input(n.a).grad.data().array() += g.data()[0] / Scalar(input(n.a).value.size());
      return;
    case Op::kRowNorm: {
      if (!wants(n.a)) return;
      const auto a = input(n.a).value.matrix();
      auto ga = input(n.a).grad.matrix();
      for (Index r = 0; r < a.rows(); ++r) {
        const Scalar norm = n.value.data()[r];
        if (norm > Scalar(0)) ga.row(r) += (g.data()[r] / norm) * a.row(r);
      }
      return;
    }
    case Op::kNormalizeRows: {
      if (!wants(n.a)) return;
      const auto y = n.value.matrix();
      const auto gm = g.matrix();
      auto ga = input(n.a).grad.matrix();
      for (Index r = 0; r < y.rows(); ++r) {
        const Scalar dot = gm.row(r).dot(y.row(r));
        ga.row(r) += (gm.row(r) - dot * y.row(r)) / n.cache.data()[r];
      }
      return;
    }
    case Op::kMse: {
      const TensorT& a = input(n.a).value;
      const TensorT& b = input(n.b).value;
      const Scalar k = Scalar(2) * g.data()[0] / Scalar(a.rows());
      if (wants(n.a)) input(n.a).grad.data() += k * (a.data() - b.data());
      if (wants(n.b)) input(n.b).grad.data() -= k * (a.data() - b.data());
      return;
    }
  }
}

template <class Scalar>
ParamSet<Scalar> Graph<Scalar>::param_grads() const {
  if (!params_) throw std::invalid_argument("Graph: no parameter set bound");
  ParamSet<Scalar> out = params_->zeros_like();
  for (const auto& [idx, id] : param_nodes_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == n.value.size()) out.data(idx) = n.grad.data();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

template <class Scalar>
void optimizer_step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads, OptimizerState<Scalar>& state,
                    const OptimizerConfig& config) {
  if (grads.size() != params.size()) throw std::invalid_argument("optimizer_step: parameter count mismatch");
  for (Index i = 0; i < params.size(); ++i) {
    if (params.name(i) != grads.name(i) || params.value(i).shape() != grads.value(i).shape()) {
      throw std::invalid_argument("optimizer_step: gradient shape mismatch for '" + params.name(i) + "'");
    }
  }
  if (state.m.size() == 0) state.m = params.zeros_like();
  if (state.v.size() == 0 && config.kind == OptimizerKind::kAdam) state.v = params.zeros_like();
  ++state.step;
  const Scalar lr = Scalar(config.lr);
  if (config.kind == OptimizerKind::kSgd) {
    const Scalar mu = Scalar(config.momentum);
    for (Index i = 0; i < params.size(); ++i) {
      auto& m = state.m.data(i);
      m = mu * m + grads.value(i).data();
      params.data(i) -= lr * m;
    }
    return;
  }
  const Scalar b1 = Scalar(config.beta1), b2 = Scalar(config.beta2), eps = Scalar(config.eps);
  const Scalar c1 = Scalar(1) - Scalar(std::pow(config.beta1, static_cast<double>(state.step)));
  const Scalar c2 = Scalar(1) - Scalar(std::pow(config.beta2, static_cast<double>(state.step)));
  for (Index i = 0; i < params.size(); ++i) {
    const auto& g = grads.value(i).data();
    auto& m = state.m.data(i);
    auto& v = state.v.data(i);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    params.data(i).array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

template <class Scalar>
FiniteDiffReport finite_diff_check(const std::function<Scalar(const ParamSet<Scalar>&)>& fn,
                                   const ParamSet<Scalar>& params, const ParamSet<Scalar>& analytic,
                                   const FiniteDiffOptions& options) {
  if (!(options.eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  FiniteDiffReport report;
  ParamSet<Scalar> probe = params;
  std::mt19937_64 rng(options.seed);
  for (Index t = 0; t < params.size(); ++t) {
    const Index n = params.value(t).size();
    std::vector<Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (options.max_per_tensor > 0 && n > options.max_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.max_per_tensor));
    }
    const Index ai = analytic.index_of(params.name(t));
    for (Index c : coords) {
      const Scalar orig = params.value(t).data()[c];
      probe.data(t)[c] = orig + Scalar(options.eps);
      const double fp = static_cast<double>(fn(probe));
      probe.data(t)[c] = orig - Scalar(options.eps);
      const double fm = static_cast<double>(fn(probe));
      probe.data(t)[c] = orig;
      const double numeric = (fp - fm) / (2 * options.eps);
      const double an = static_cast<double>(analytic.value(ai).data()[c]);
      const double err = relative_error(an, numeric);
      ++report.checked;
      if (err > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        if (err >= report.max_rel_error) {
          report.worst_param = params.name(t);
          report.worst_index = c;
          report.analytic = an;
          report.numeric = numeric;
        }
      }
    }
  }
  return report;
}

double finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& fn, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& analytic, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  if (analytic.size() != x.size()) throw std::invalid_argument("finite_diff_check: size mismatch");
  double worst = 0.0;
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double fp = fn(probe);
    probe[i] = x[i] - eps;
    const double fm = fn(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2 * eps)));
  }
  return worst;
}

template class Tensor<float>;
template class Tensor<double>;
template class ParamSet<float>;
template class ParamSet<double>;
template class Graph<float>;
template class Graph<double>;
template void optimizer_step(ParamSet<float>&, const ParamSet<float>&, OptimizerState<float>&,
                             const OptimizerConfig&);
template void optimizer_step(ParamSet<double>&, const ParamSet<double>&, OptimizerState<double>&,
                             const OptimizerConfig&);
template FiniteDiffReport finite_diff_check(const std::function<float(const ParamSet<float>&)>&,
                                            const ParamSet<float>&, const ParamSet<float>&,
                                            const FiniteDiffOptions&);
template FiniteDiffReport finite_diff_check(const std::function<double(const ParamSet<double>&)>&,
                                            const ParamSet<double>&, const ParamSet<double>&,
                                            const FiniteDiffOptions&);

}  // namespace eqvs::grad
