#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records operations eagerly (values are computed as nodes are
// appended) in topological order. Batches are laid out as k x c matrices,
// one row per Monte-Carlo sample. Per-sample small matrices are stored
// row-major in a single row (see batched_matmul).

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepsc::ad {

using Matrix = Eigen::MatrixXd;

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  MatMul,
  AddRow,
  MulCol,
  BroadcastRows,
  Activation,
  Mean,
  SumCols,
  Square,
  Sqrt,
  Log,
  Exp,
  Relu,
  Scale,
  AddScalar,
  Transpose,
  Concat,
  Slice,
  Map,
  BatchedMatMul,
  Pow,
};

const char* op_name(OpKind kind);

enum class Activation { Relu, Softplus, Tanh, Sigmoid };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int index = -1;

  bool valid() const { return tape != nullptr && index >= 0; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Elementwise function with its derivative, for ops the tape has no
// dedicated kind for (utility functions, clipped maps).
struct ElementwiseFn {
  std::function<double(double)> f;
  std::function<double(double)> df;
  std::string name;
};

using ParamId = int;

// Gradients keyed by parameter id.
class Gradients {
 public:
  void set(ParamId id, Matrix g) { grads_[id] = std::move(g); }
  bool contains(ParamId id) const { return grads_.count(id) != 0; }
  const Matrix& at(ParamId id) const;
  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<ParamId, Matrix> grads_;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(int node, const std::string& what)
      : std::runtime_error(what), node_(node) {}
  int node() const { return node_; }

 private:
  int node_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var scalar_constant(double v);
  // Leaf registered under a parameter id (must be unique on the tape).
  Var parameter(Matrix value, ParamId id);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var matmul(Var a, Var b);
  // a (k x c) + row (1 x c) broadcast over rows
  Var add_row(Var a, Var row);
  // a (k x c) scaled row-wise by col (k x 1)
  Var mul_col(Var a, Var col);
  // row (1 x c) repeated k times
  Var broadcast_rows(Var row, Eigen::Index k);
  Var activation(Var a, Activation kind);
  Var mean(Var a);
  Var sum_cols(Var a);
  Var square(Var a);
  // Gradient taken as 0 where the value is exactly 0.
  Var sqrt(Var a);
  Var log(Var a);
  Var exp(Var a);
  // Subgradient at 0 is 0.
  Var relu(Var a);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var transpose(Var a);
  Var concat(std::span<const Var> parts);
  Var slice(Var a, Eigen::Index col_begin, Eigen::Index col_count);
  Var map(Var a, std::shared_ptr<const ElementwiseFn> fn);
  // Per-row product of flattened matrices: a row holds an (n x p) matrix,
  // b row holds a (p x q) matrix, result row holds (n x q). Row-major
  // flattening. b may have a single row, broadcast over all rows of a.
  Var batched_matmul(Var a, Var b, int n, int p, int q);
  Var pow(Var a, double exponent);

  const Matrix& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  OpKind kind(int index) const { return nodes_.at(index).kind; }

  // Returns the scalar value of root; throws on a non-scalar root or when any
  // node holds a non-finite entry.
  double evaluate(Var root) const;

  // Recomputes every node from its parents in topological order. Leaf values
  // may be replaced beforehand with set_leaf.
  void forward();
  void set_leaf(Var leaf, const Matrix& value);

  // Adjoints of root with respect to the given nodes.
  std::vector<Matrix> gradient(Var root, std::span<const Var> wrt) const;
  // Adjoints with respect to parameter leaves.
  Gradients backward(Var root, std::span<const ParamId> wrt) const;
  Var parameter_var(ParamId id) const;

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    int a = -1;
    int b = -1;
    std::vector<int> parts;
    Matrix value;
    double scalar = 0.0;
    Eigen::Index i0 = 0, i1 = 0, i2 = 0;
    Activation act = Activation::Relu;
    std::shared_ptr<const ElementwiseFn> fn;
    ParamId param = -1;
  };

  Var push(Node node);
  void compute(Node& node) const;
  void check_same_tape(Var v) const;
  std::vector<Matrix> run_backward(Var root) const;

  std::vector<Node> nodes_;
  std::map<ParamId, int> params_;
};

// Convenience operators; both operands must live on the same tape.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator*(double s, Var a);
Var operator+(Var a, double s);

// Builds a scalar loss on a fresh tape from a point (a list of leaves).
using TapeBuilder = std::function<Var(Tape&, std::span<const Var>)>;

// Max over components of |autodiff - central difference| /
// (|central difference| + 1e-12).
double grad_check(const TapeBuilder& f, const std::vector<Matrix>& point,
                  double step);

double apply_activation(Activation kind, double x);
double activation_derivative(Activation kind, double x);

}  // namespace deepsc::ad
