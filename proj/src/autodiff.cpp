#include "deepsc/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace deepsc::ad {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::MatMul: return "matmul";
    case OpKind::AddRow: return "add_row";
    case OpKind::MulCol: return "mul_col";
    case OpKind::BroadcastRows: return "broadcast_rows";
    case OpKind::Activation: return "activation";
    case OpKind::Mean: return "mean";
    case OpKind::SumCols: return "sum_cols";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Log: return "log";
    case OpKind::Exp: return "exp";
    case OpKind::Relu: return "relu";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Transpose: return "transpose";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Map: return "map";
    case OpKind::BatchedMatMul: return "batched_matmul";
    case OpKind::Pow: return "pow";
  }
  return "?";
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Softplus: return "softplus";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "softplus") return Activation::Softplus;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation: " + name);
}

double apply_activation(Activation kind, double x) {
  switch (kind) {
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Softplus:
      return x > 30.0 ? x : std::log1p(std::exp(x));
    case Activation::Tanh: return std::tanh(x);
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
  }
  return x;
}

double activation_derivative(Activation kind, double x) {
  switch (kind) {
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Softplus: return 1.0 / (1.0 + std::exp(-x));
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

const Matrix& Var::value() const {
  if (!valid()) throw std::logic_error("invalid Var");
  return tape->value(*this);
}

const Matrix& Gradients::at(ParamId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end())
    throw std::out_of_range("no gradient for parameter " + std::to_string(id));
  return it->second;
}

Var Tape::push(Node node) {
  compute(node);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_same_tape(Var v) const {
  if (v.tape != this || v.index < 0 ||
      v.index >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("Var does not belong to this tape");
}

const Matrix& Tape::value(Var v) const {
  check_same_tape(v);
  return nodes_[v.index].value;
}

Var Tape::constant(Matrix value) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::scalar_constant(double v) {
  return constant(Matrix::Constant(1, 1, v));
}

Var Tape::parameter(Matrix value, ParamId id) {
  if (params_.count(id)) throw std::invalid_argument("duplicate parameter id");
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  n.param = id;
  Var v = push(std::move(n));
  params_[id] = v.index;
  return v;
}

Var Tape::parameter_var(ParamId id) const {
  auto it = params_.find(id);
  if (it == params_.end())
    throw std::invalid_argument("parameter " + std::to_string(id) +
                                " is not on the tape");
  return Var{const_cast<Tape*>(this), it->second};
}

namespace {
void same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
}
}  // namespace

Var Tape::add(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  same_shape(value(a), value(b), "add");
  Node n;
  n.kind = OpKind::Add;
  n.a = a.index;
  n.b = b.index;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  same_shape(value(a), value(b), "sub");
  Node n;
  n.kind = OpKind::Sub;
  n.a = a.index;
  n.b = b.index;
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  same_shape(value(a), value(b), "mul");
  Node n;
  n.kind = OpKind::Mul;
  n.a = a.index;
  n.b = b.index;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  require(value(a).cols() == value(b).rows(),
          "matmul: shape mismatch " + shape_str(value(a)) + " * " +
              shape_str(value(b)));
  Node n;
  n.kind = OpKind::MatMul;
  n.a = a.index;
  n.b = b.index;
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
  check_same_tape(a);
  check_same_tape(row);
  require(value(row).rows() == 1 && value(row).cols() == value(a).cols(),
          "add_row: shape mismatch");
  Node n;
  n.kind = OpKind::AddRow;
  n.a = a.index;
  n.b = row.index;
  return push(std::move(n));
}

Var Tape::mul_col(Var a, Var col) {
  check_same_tape(a);
  check_same_tape(col);
  require(value(col).cols() == 1 && value(col).rows() == value(a).rows(),
          "mul_col: shape mismatch " + shape_str(value(a)) + " by " +
              shape_str(value(col)));
  Node n;
  n.kind = OpKind::MulCol;
  n.a = a.index;
  n.b = col.index;
  return push(std::move(n));
}

Var Tape::broadcast_rows(Var row, Eigen::Index k) {
  check_same_tape(row);
  require(value(row).rows() == 1, "broadcast_rows: input must be a row");
  Node n;
  n.kind = OpKind::BroadcastRows;
  n.a = row.index;
  n.i0 = k;
  return push(std::move(n));
}

Var Tape::activation(Var a, Activation kind) {
  check_same_tape(a);
  Node n;
  n.kind = OpKind::Activation;
  n.a = a.index;
  n.act = kind;
  return push(std::move(n));
}

#define DEEPSC_UNARY(name, KIND)   \
  Var Tape::name(Var a) {          \
    check_same_tape(a);            \
    Node n;                        \
    n.kind = OpKind::KIND;         \
    n.a = a.index;                 \
    return push(std::move(n));     \
  }

DEEPSC_UNARY(mean, Mean)
DEEPSC_UNARY(sum_cols, SumCols)
DEEPSC_UNARY(square, Square)
DEEPSC_UNARY(sqrt, Sqrt)
DEEPSC_UNARY(log, Log)
DEEPSC_UNARY(exp, Exp)
DEEPSC_UNARY(relu, Relu)
DEEPSC_UNARY(transpose, Transpose)
#undef DEEPSC_UNARY

Var Tape::scale(Var a, double s) {
  check_same_tape(a);
  Node n;
  n.kind = OpKind::Scale;
  n.a = a.index;
  n.scalar = s;
  return push(std::move(n));
}

Var Tape::add_scalar(Var a, double s) {
  check_same_tape(a);
  Node n;
  n.kind = OpKind::AddScalar;
  n.a = a.index;
  n.scalar = s;
  return push(std::move(n));
}

Var Tape::pow(Var a, double exponent) {
  check_same_tape(a);
  Node n;
  n.kind = OpKind::Pow;
  n.a = a.index;
  n.scalar = exponent;
  return push(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
  require(!parts.empty(), "concat: no inputs");
  Node n;
  n.kind = OpKind::Concat;
  const auto rows = value(parts.front()).rows();
  for (const Var& p : parts) {
    check_same_tape(p);
    require(value(p).rows() == rows, "concat: row mismatch");
    n.parts.push_back(p.index);
  }
  return push(std::move(n));
}

Var Tape::slice(Var a, Eigen::Index col_begin, Eigen::Index col_count) {
  check_same_tape(a);
  require(col_begin >= 0 && col_count >= 0 &&
              col_begin + col_count <= value(a).cols(),
          "slice: out of range");
  Node n;
  n.kind = OpKind::Slice;
  n.a = a.index;
  n.i0 = col_begin;
  n.i1 = col_count;
  return push(std::move(n));
}

Var Tape::map(Var a, std::shared_ptr<const ElementwiseFn> fn) {
  check_same_tape(a);
  require(fn && fn->f && fn->df, "map: incomplete function");
  Node n;
  n.kind = OpKind::Map;
  n.a = a.index;
  n.fn = std::move(fn);
  return push(std::move(n));
}

Var Tape::batched_matmul(Var a, Var b, int n_, int p, int q) {
  check_same_tape(a);
  check_same_tape(b);
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  require(av.cols() == n_ * p, "batched_matmul: left operand width");
  require(bv.cols() == p * q, "batched_matmul: right operand width");
  require(bv.rows() == av.rows() || bv.rows() == 1,
          "batched_matmul: row mismatch");
  Node n;
  n.kind = OpKind::BatchedMatMul;
  n.a = a.index;
  n.b = b.index;
  n.i0 = n_;
  n.i1 = p;
  n.i2 = q;
  return push(std::move(n));
}

void Tape::compute(Node& n) const {
  auto val = [&](int i) -> const Matrix& { return nodes_[i].value; };
  switch (n.kind) {
    case OpKind::Leaf: break;
    case OpKind::Add: n.value = val(n.a) + val(n.b); break;
    case OpKind::Sub: n.value = val(n.a) - val(n.b); break;
    case OpKind::Mul: n.value = val(n.a).cwiseProduct(val(n.b)); break;
    case OpKind::MatMul: n.value.noalias() = val(n.a) * val(n.b); break;
    case OpKind::AddRow:
      n.value = val(n.a).rowwise() + val(n.b).row(0);
      break;
    case OpKind::MulCol:
      n.value = val(n.a).array().colwise() * val(n.b).col(0).array();
      break;
    case OpKind::BroadcastRows:
      n.value = val(n.a).replicate(n.i0, 1);
      break;
    case OpKind::Activation: {
      const Matrix& x = val(n.a);
      if (n.act == Activation::Relu) {
        n.value = x.cwiseMax(0.0);
      } else {
        const Activation act = n.act;
        n.value = x.unaryExpr([act](double v) { return apply_activation(act, v); });
      }
      break;
    }
    case OpKind::Mean: {
      const Matrix& x = val(n.a);
      n.value = Matrix::Constant(1, 1, x.sum() / static_cast<double>(x.size()));
      break;
    }
    case OpKind::SumCols: n.value = val(n.a).rowwise().sum(); break;
    case OpKind::Square: n.value = val(n.a).array().square().matrix(); break;
    case OpKind::Sqrt: n.value = val(n.a).array().sqrt().matrix(); break;
    case OpKind::Log: n.value = val(n.a).array().log().matrix(); break;
    case OpKind::Exp: n.value = val(n.a).array().exp().matrix(); break;
    case OpKind::Relu: n.value = val(n.a).cwiseMax(0.0); break;
    case OpKind::Scale: n.value = n.scalar * val(n.a); break;
    case OpKind::AddScalar:
      n.value = (val(n.a).array() + n.scalar).matrix();
      break;
    case OpKind::Transpose: n.value = val(n.a).transpose(); break;
    case OpKind::Concat: {
      Eigen::Index cols = 0;
      for (int p : n.parts) cols += val(p).cols();
      n.value.resize(val(n.parts.front()).rows(), cols);
      Eigen::Index c = 0;
      for (int p : n.parts) {
        n.value.middleCols(c, val(p).cols()) = val(p);
        c += val(p).cols();
      }
      break;
    }
    case OpKind::Slice: n.value = val(n.a).middleCols(n.i0, n.i1); break;
    case OpKind::Map: {
      const auto& f = n.fn->f;
      n.value = val(n.a).unaryExpr([&f](double v) { return f(v); });
      break;
    }
    case OpKind::BatchedMatMul: {
      const Matrix& a = val(n.a);
      const Matrix& b = val(n.b);
      const Eigen::Index k = a.rows();
      const Eigen::Index nn = n.i0, p = n.i1, q = n.i2;
      const bool shared = b.rows() == 1 && k != 1;
      n.value.setZero(k, nn * q);
      for (Eigen::Index s = 0; s < k; ++s) {
        const Eigen::Index sb = shared ? 0 : s;
        for (Eigen::Index i = 0; i < nn; ++i)
          for (Eigen::Index l = 0; l < p; ++l) {
            const double ail = a(s, i * p + l);
            if (ail == 0.0) continue;
            for (Eigen::Index j = 0; j < q; ++j)
              n.value(s, i * q + j) += ail * b(sb, l * q + j);
          }
      }
      break;
    }
    case OpKind::Pow: {
      const double e = n.scalar;
      n.value = val(n.a).unaryExpr([e](double v) { return std::pow(v, e); });
      break;
    }
  }
}

double Tape::evaluate(Var root) const {
  check_same_tape(root);
  const Matrix& r = nodes_[root.index].value;
  if (r.rows() != 1 || r.cols() != 1)
    throw std::invalid_argument("evaluate: root is not scalar (" +
                                shape_str(r) + ")");
  for (int i = 0; i <= root.index; ++i) {
    if (!nodes_[i].value.allFinite()) {
      throw NonFiniteError(i, "non-finite value at node " + std::to_string(i) +
                                  " (" + op_name(nodes_[i].kind) + ")");
    }
  }
  return r(0, 0);
}

void Tape::set_leaf(Var leaf, const Matrix& value) {
  check_same_tape(leaf);
  Node& n = nodes_[leaf.index];
  if (n.kind != OpKind::Leaf) throw std::invalid_argument("not a leaf");
  if (n.value.rows() != value.rows() || n.value.cols() != value.cols())
    throw std::invalid_argument("set_leaf: shape mismatch");
  n.value = value;
}

void Tape::forward() {
  for (Node& n : nodes_) compute(n);
}

std::vector<Matrix> Tape::run_backward(Var root) const {
  check_same_tape(root);
  const Matrix& r = nodes_[root.index].value;
  if (r.rows() != 1 || r.cols() != 1)
    throw std::invalid_argument("backward: root is not scalar");
  std::vector<Matrix> adj(root.index + 1);
  std::vector<char> has(root.index + 1, 0);
  auto accum = [&](int i, const auto& g) {
    if (!has[i]) {
      adj[i] = g;
      has[i] = 1;
    } else {
      adj[i] += g;
    }
  };
  adj[root.index] = Matrix::Ones(1, 1);
  has[root.index] = 1;
  for (int i = root.index; i >= 0; --i) {
    if (!has[i]) continue;
    const Node& n = nodes_[i];
    const Matrix& g = adj[i];
    auto val = [&](int j) -> const Matrix& { return nodes_[j].value; };
    switch (n.kind) {
      case OpKind::Leaf: break;
      case OpKind::Add:
        accum(n.a, g);
        accum(n.b, g);
        break;
      case OpKind::Sub:
        accum(n.a, g);
        accum(n.b, -g);
        break;
      case OpKind::Mul:
        accum(n.a, g.cwiseProduct(val(n.b)));
        accum(n.b, g.cwiseProduct(val(n.a)));
        break;
      case OpKind::MatMul:
        accum(n.a, g * val(n.b).transpose());
        accum(n.b, val(n.a).transpose() * g);
        break;
      case OpKind::AddRow:
        accum(n.a, g);
        accum(n.b, g.colwise().sum());
        break;
      case OpKind::MulCol: {
        const Matrix& a = val(n.a);
        const Matrix& c = val(n.b);
        accum(n.a, (g.array().colwise() * c.col(0).array()).matrix());
        accum(n.b, g.cwiseProduct(a).rowwise().sum());
        break;
      }
      case OpKind::BroadcastRows: accum(n.a, g.colwise().sum()); break;
      case OpKind::Activation: {
        const Matrix& x = val(n.a);
        const Activation act = n.act;
        Matrix d = x.unaryExpr(
            [act](double v) { return activation_derivative(act, v); });
        accum(n.a, g.cwiseProduct(d));
        break;
      }
      case OpKind::Mean: {
        const Matrix& x = val(n.a);
        accum(n.a, Matrix::Constant(x.rows(), x.cols(),
                                    g(0, 0) / static_cast<double>(x.size())));
        break;
      }
      case OpKind::SumCols: {
        const Matrix& x = val(n.a);
        accum(n.a, g.col(0).replicate(1, x.cols()));
        break;
      }
      case OpKind::Square: accum(n.a, 2.0 * g.cwiseProduct(val(n.a))); break;
      case OpKind::Sqrt: {
        Matrix d = n.value.unaryExpr(
            [](double s) { return s > 0.0 ? 0.5 / s : 0.0; });
        accum(n.a, g.cwiseProduct(d));
        break;
      }
      case OpKind::Log: accum(n.a, g.cwiseQuotient(val(n.a))); break;
      case OpKind::Exp: accum(n.a, g.cwiseProduct(n.value)); break;
      case OpKind::Relu: {
        Matrix d = val(n.a).unaryExpr(
            [](double v) { return v > 0.0 ? 1.0 : 0.0; });
        accum(n.a, g.cwiseProduct(d));
        break;
      }
      case OpKind::Scale: accum(n.a, n.scalar * g); break;
      case OpKind::AddScalar: accum(n.a, g); break;
      case OpKind::Transpose: accum(n.a, g.transpose()); break;
      case OpKind::Concat: {
        Eigen::Index c = 0;
        for (int p : n.parts) {
          const auto w = val(p).cols();
          accum(p, g.middleCols(c, w));
          c += w;
        }
        break;
      }
      case OpKind::Slice: {
        const Matrix& x = val(n.a);
        Matrix full = Matrix::Zero(x.rows(), x.cols());
        full.middleCols(n.i0, n.i1) = g;
        accum(n.a, full);
        break;
      }
      case OpKind::Map: {
        const auto& df = n.fn->df;
        Matrix d = val(n.a).unaryExpr([&df](double v) { return df(v); });
        accum(n.a, g.cwiseProduct(d));
        break;
      }
      case OpKind::BatchedMatMul: {
        const Matrix& a = val(n.a);
        const Matrix& b = val(n.b);
        const Eigen::Index k = a.rows();
        const Eigen::Index nn = n.i0, p = n.i1, q = n.i2;
        const bool shared = b.rows() == 1 && k != 1;
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        Matrix gb = Matrix::Zero(b.rows(), b.cols());
        for (Eigen::Index s = 0; s < k; ++s) {
          const Eigen::Index sb = shared ? 0 : s;
          for (Eigen::Index i = 0; i < nn; ++i)
            for (Eigen::Index j = 0; j < q; ++j) {
              const double gij = g(s, i * q + j);
              if (gij == 0.0) continue;
              for (Eigen::Index l = 0; l < p; ++l) {
                ga(s, i * p + l) += gij * b(sb, l * q + j);
                gb(sb, l * q + j) += gij * a(s, i * p + l);
              }
            }
        }
        accum(n.a, ga);
        accum(n.b, gb);
        break;
      }
      case OpKind::Pow: {
        const double e = n.scalar;
        Matrix d = val(n.a).unaryExpr(
            [e](double v) { return e * std::pow(v, e - 1.0); });
        accum(n.a, g.cwiseProduct(d));
        break;
      }
    }
  }
  for (int i = 0; i <= root.index; ++i)
    if (!has[i]) adj[i] = Matrix::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
  return adj;
}

std::vector<Matrix> Tape::gradient(Var root, std::span<const Var> wrt) const {
  auto adj = run_backward(root);
  std::vector<Matrix> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    check_same_tape(v);
    if (v.index > root.index)
      out.push_back(Matrix::Zero(value(v).rows(), value(v).cols()));
    else
      out.push_back(adj[v.index]);
  }
  return out;
}

Gradients Tape::backward(Var root, std::span<const ParamId> wrt) const {
  if (wrt.empty()) throw std::invalid_argument("backward: empty parameter set");
  std::vector<Var> vars;
  for (ParamId id : wrt) vars.push_back(parameter_var(id));
  auto g = gradient(root, vars);
  Gradients out;
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    if (!g[i].allFinite())
      throw NonFiniteError(vars[i].index, "non-finite gradient for parameter " +
                                              std::to_string(wrt[i]));
    out.set(wrt[i], std::move(g[i]));
  }
  return out;
}

Var operator+(Var a, Var b) { return a.tape->add(a, b); }
Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
Var operator*(double s, Var a) { return a.tape->scale(a, s); }
Var operator+(Var a, double s) { return a.tape->add_scalar(a, s); }

double grad_check(const TapeBuilder& f, const std::vector<Matrix>& point,
                  double step) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& m : point) leaves.push_back(tape.constant(m));
  Var root = f(tape, leaves);
  auto grads = tape.gradient(root, leaves);

  auto eval_at = [&](const std::vector<Matrix>& pt) {
    Tape t;
    std::vector<Var> ls;
    for (const auto& m : pt) ls.push_back(t.constant(m));
    return t.evaluate(f(t, ls));
  };

  double worst = 0.0;
  std::vector<Matrix> pt = point;
  for (std::size_t p = 0; p < pt.size(); ++p) {
    for (Eigen::Index i = 0; i < pt[p].size(); ++i) {
      const double orig = pt[p](i);
      pt[p](i) = orig + step;
      const double fp = eval_at(pt);
      pt[p](i) = orig - step;
      const double fm = eval_at(pt);
      pt[p](i) = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double err = std::abs(grads[p](i) - fd) / (std::abs(fd) + 1e-12);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace deepsc::ad
