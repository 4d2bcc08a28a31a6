#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace eqvs::grad {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& shape);
Index shape_size(const Shape& shape);

/// Dense row-major tensor. The leading dimension is the batch dimension; the
/// rank-2 view used by matmul and friends is (shape[0], product of the rest).
template <class Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, Vector data);

  static Tensor scalar(Scalar v) { return Tensor({1}, Vector::Constant(1, v)); }
  static Tensor from_matrix(const RowMatrix& m);

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  Index rows() const { return shape_.empty() ? 0 : shape_[0]; }
  Index cols() const { return rows() == 0 ? 0 : size() / rows(); }

  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }
  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  Scalar item() const;
  bool all_finite() const { return data_.allFinite(); }

  template <class Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_;
  Vector data_;
};

/// Named parameter tensors. Names are unique and shapes fixed at creation.
template <class Scalar>
class ParamSet {
 public:
  void add(std::string name, Tensor<Scalar> value);

  Index size() const { return static_cast<Index>(values_.size()); }
  bool contains(std::string_view name) const;
  Index index_of(std::string_view name) const;
  const std::string& name(Index i) const { return names_[static_cast<std::size_t>(i)]; }

  const Tensor<Scalar>& value(Index i) const { return values_[static_cast<std::size_t>(i)]; }
  const Tensor<Scalar>& value(std::string_view name) const { return value(index_of(name)); }
  typename Tensor<Scalar>::Vector& data(Index i) { return values_[static_cast<std::size_t>(i)].data(); }
  typename Tensor<Scalar>::Vector& data(std::string_view name) { return data(index_of(name)); }

  /// Replaces values; the shape must match.
  void set(Index i, Tensor<Scalar> value);

  Index total_size() const;
  ParamSet zeros_like() const;

  template <class Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (Index i = 0; i < size(); ++i) out.add(name(i), value(i).template cast<Other>());
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.names_ != b.names_) return false;
    for (std::size_t i = 0; i < a.values_.size(); ++i) {
      if (a.values_[i].shape() != b.values_[i].shape() || a.values_[i].data() != b.values_[i].data()) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<Scalar>> values_;
  std::map<std::string, Index, std::less<>> index_;
};

enum class Op {
  kConstant,
  kVariable,
  kParameter,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatmul,
  kConv2d,
  kAvgPool,
  kRelu,
  kAbs,
  kReshape,
  kConcat,
  kSliceCols,
  kReduceSum,
  kReduceMean,
  kRowNorm,
  kNormalizeRows,
  kMse,
};

const char* op_name(Op op);

struct Var {
  int id = -1;
};

struct Conv2dSpec {
  Index stride = 1;
  Index pad = 0;
};

/// Reverse-mode tape. Nodes are evaluated eagerly when added and kept in
/// topological order, so the graph can also be re-run with forward() after
/// leaf values change.
///
/// Layout conventions: images are NHWC, conv weights are {kh, kw, cin, cout},
/// biases broadcast over rows.
template <class Scalar>
class Graph {
 public:
  using TensorT = Tensor<Scalar>;

  explicit Graph(const ParamSet<Scalar>* params = nullptr) : params_(params) {}

  Var constant(TensorT value);
  Var variable(TensorT value);
  /// Leaf bound to the named parameter; repeated calls return the same node.
  Var parameter(std::string_view name);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, Scalar s);
  Var matmul(Var a, Var b);
  Var conv2d(Var x, Var w, Var bias, Conv2dSpec spec);
  Var avg_pool(Var x, Index factor);
  Var relu(Var a);
  Var abs(Var a);
  Var reshape(Var a, Shape shape);
  Var concat(Var a, Var b);
  Var slice_cols(Var a, Index begin, Index count);
  Var reduce_sum(Var a);
  Var reduce_mean(Var a);
  Var row_norm(Var a);
  Var normalize_rows(Var a);
  /// Mean over rows of the squared Euclidean row distance.
  Var mse(Var a, Var b);

  /// affine: x W + b, with named parameters.
  Var linear(Var x, std::string_view weight, std::string_view bias);

  const TensorT& value(Var v) const { return node(v).value; }
  /// Gradient of the last backward() loss; zero-sized for nodes that do not
  /// need gradients.
  const TensorT& grad(Var v) const { return node(v).grad; }
  Op op(Var v) const { return node(v).op; }
  std::size_t size() const { return nodes_.size(); }

  void set_value(Var leaf, TensorT value);
  /// Re-evaluates every non-leaf node; parameter leaves re-read the bound set.
  void forward();
  void backward(Var loss);

  /// Gradients for every bound parameter; zero where unreachable.
  ParamSet<Scalar> param_grads() const;

 private:
  struct Node {
    Op op = Op::kConstant;
    int a = -1, b = -1, c = -1;
    TensorT value;
    TensorT grad;
    TensorT cache;
    bool needs_grad = false;
    Index param = -1;
    Scalar scalar = Scalar(0);
    Shape shape;
    Conv2dSpec conv;
    Index begin = 0, count = 0;
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  Var push(Node n);
  void compute(int id);
  void propagate(int id);
  [[noreturn]] void fail(int id, const std::string& what) const;

  const ParamSet<Scalar>* params_ = nullptr;
  std::vector<Node> nodes_;
  std::map<Index, int> param_nodes_;
};

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double momentum = 0.0;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Scalar>
struct OptimizerState {
  ParamSet<Scalar> m;
  ParamSet<Scalar> v;
  std::int64_t step = 0;
};

/// One in-place update. State buffers are created on the first call.
template <class Scalar>
void optimizer_step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads,
                    OptimizerState<Scalar>& state, const OptimizerConfig& config);

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  Index checked = 0;
};

struct FiniteDiffOptions {
  double eps = 1e-6;
  /// Coordinates sampled per tensor; <= 0 checks all of them.
  Index max_per_tensor = 0;
  std::uint64_t seed = 0;
};

/// Central differences per coordinate; relative error uses
/// max(|analytic|, |numeric|) clamped below at 1e-8.
template <class Scalar>
FiniteDiffReport finite_diff_check(const std::function<Scalar(const ParamSet<Scalar>&)>& fn,
                                   const ParamSet<Scalar>& params,
                                   const ParamSet<Scalar>& analytic,
                                   const FiniteDiffOptions& options = {});

/// Same check for a plain function of a vector.
double finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& fn,
                         const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, double eps);

double relative_error(double analytic, double numeric);

}  // namespace eqvs::grad
