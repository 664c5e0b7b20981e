#include "deepsc/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace deepsc::nn {

long parameter_count(int p, int q, int layers, int hidden) {
  const long l = hidden;
  return (layers - 1) * l * l + l * (layers + p + q) + q;
}

NetworkShape NetworkShape::make(int p, int q, int hidden, int layers,
                                ad::Activation act) {
  if (p < 1 || q < 1 || layers < 1)
    throw std::invalid_argument("network dimensions must be positive");
  NetworkShape s;
  s.input_dim = p;
  s.output_dim = q;
  s.layers = layers;
  s.hidden = hidden > 0 ? hidden : p + 10;
  s.activation = act;
  return s;
}

FeedForwardNetwork::FeedForwardNetwork(const NetworkShape& shape,
                                       std::uint64_t seed, double init_std)
    : shape_(shape) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // init_std <= 0 selects fan-in scaling sqrt(2 / fan_in)
  auto draw = [&](Eigen::Index r, Eigen::Index c) {
    const double sd = init_std > 0.0 ? init_std : std::sqrt(2.0 / static_cast<double>(r));
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = sd * normal(gen);
    return m;
  };
  int in = shape.input_dim;
  for (int layer = 0; layer < shape.layers; ++layer) {
    params_.push_back(draw(in, shape.hidden));
    params_.push_back(Matrix::Zero(1, shape.hidden));
    in = shape.hidden;
  }
  params_.push_back(draw(in, shape.output_dim));
  params_.push_back(Matrix::Zero(1, shape.output_dim));
  mean_ = Eigen::RowVectorXd::Zero(shape.input_dim);
  var_ = Eigen::RowVectorXd::Ones(shape.input_dim);
}

long FeedForwardNetwork::parameter_count() const {
  long n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void FeedForwardNetwork::check_input(const Matrix& batch) const {
  if (batch.cols() != shape_.input_dim)
    throw std::invalid_argument("network input width " +
                                std::to_string(batch.cols()) + " != " +
                                std::to_string(shape_.input_dim));
}

void FeedForwardNetwork::update_normalisation(const Matrix& batch) {
  check_input(batch);
  const Eigen::RowVectorXd mu = batch.colwise().mean();
  const Eigen::RowVectorXd var =
      (batch.rowwise() - mu).array().square().colwise().mean().matrix();
  if (!norm_ready_) {
    mean_ = mu;
    var_ = var;
    norm_ready_ = true;
  } else {
    mean_ = kMomentum * mean_ + (1.0 - kMomentum) * mu;
    var_ = kMomentum * var_ + (1.0 - kMomentum) * var;
  }
}

Matrix FeedForwardNetwork::normalise(const Matrix& batch) const {
  check_input(batch);
  // Coordinates that are constant across batches (a deterministic initial
  // state) are centred but not scaled, so slow drifts of that constant are
  // not blown up by 1/sqrt(eps).
  Eigen::RowVectorXd inv(var_.size());
  for (Eigen::Index j = 0; j < var_.size(); ++j)
    inv(j) = var_(j) > kConstantVar ? 1.0 / std::sqrt(var_(j) + kNormEps) : 1.0;
  Matrix out = batch.rowwise() - mean_;
  out.array().rowwise() *= inv.array();
  return out;
}

Matrix FeedForwardNetwork::evaluate(const Matrix& batch) const {
  Matrix h = normalise(batch);
  const int L = shape_.layers;
  for (int layer = 0; layer < L; ++layer) {
    Matrix pre = h * params_[2 * layer];
    pre.rowwise() += params_[2 * layer + 1].row(0);
    const auto act = shape_.activation;
    if (act == ad::Activation::Relu)
      h = pre.cwiseMax(0.0);
    else
      h = pre.unaryExpr([act](double v) { return ad::apply_activation(act, v); });
  }
  Matrix out = h * params_[2 * L];
  out.rowwise() += params_[2 * L + 1].row(0);
  return out;
}

ad::Var FeedForwardNetwork::forward(ad::Tape& tape, const Matrix& batch,
                                    bool train_mode, ad::ParamId base) {
  if (train_mode) update_normalisation(batch);
  return std::as_const(*this).forward(tape, batch, base);
}

ad::Var FeedForwardNetwork::forward(ad::Tape& tape, const Matrix& batch,
                                    ad::ParamId base) const {
  ad::Var h = tape.constant(normalise(batch));
  const int L = shape_.layers;
  for (int layer = 0; layer <= L; ++layer) {
    ad::Var w = tape.parameter(params_[2 * layer], base + 2 * layer);
    ad::Var b = tape.parameter(params_[2 * layer + 1], base + 2 * layer + 1);
    h = tape.add_row(tape.matmul(h, w), b);
    if (layer < L) h = tape.activation(h, shape_.activation);
  }
  return h;
}


nlohmann::json matrix_json(const Matrix& m) {
  std::vector<double> data(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data[i * m.cols() + j] = m(i, j);
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != r * c)
    throw std::runtime_error("matrix record has wrong length");
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = data[i * c + k];
  return m;
}

constexpr char kMagic[8] = {'D', 'S', 'C', 'N', 'E', 'T', '0', '1'};

void write_i64(std::ostream& os, std::int64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::int64_t read_i64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<std::int64_t>(v);
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_i64(os, static_cast<std::int64_t>(bits));
}

double read_f64(std::istream& is) {
  const auto bits = static_cast<std::uint64_t>(read_i64(is));
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}


nlohmann::json FeedForwardNetwork::to_json() const {
  nlohmann::json j;
  j["input_dim"] = shape_.input_dim;
  j["output_dim"] = shape_.output_dim;
  j["layers"] = shape_.layers;
  j["hidden"] = shape_.hidden;
  j["activation"] = ad::activation_name(shape_.activation);
  j["params"] = nlohmann::json::array();
  for (const auto& p : params_) j["params"].push_back(matrix_json(p));
  j["norm_ready"] = norm_ready_;
  j["mean"] = std::vector<double>(mean_.data(), mean_.data() + mean_.size());
  j["var"] = std::vector<double>(var_.data(), var_.data() + var_.size());
  return j;
}

FeedForwardNetwork FeedForwardNetwork::from_json(const nlohmann::json& j) {
  NetworkShape s;
  s.input_dim = j.at("input_dim");
  s.output_dim = j.at("output_dim");
  s.layers = j.at("layers");
  s.hidden = j.at("hidden");
  s.activation = ad::activation_from_name(j.at("activation"));
  FeedForwardNetwork net(s, 0);
  const auto& ps = j.at("params");
  if (ps.size() != net.params_.size())
    throw std::runtime_error("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Matrix m = matrix_from_json(ps[i]);
    if (m.rows() != net.params_[i].rows() || m.cols() != net.params_[i].cols())
      throw std::runtime_error("checkpoint parameter shape mismatch");
    net.params_[i] = std::move(m);
  }
  net.norm_ready_ = j.at("norm_ready");
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto var = j.at("var").get<std::vector<double>>();
  net.mean_ = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), mean.size());
  net.var_ = Eigen::Map<const Eigen::RowVectorXd>(var.data(), var.size());
  return net;
}

void FeedForwardNetwork::save_binary(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.write(kMagic, 8);
  write_i64(os, shape_.input_dim);
  write_i64(os, shape_.output_dim);
  write_i64(os, shape_.layers);
  write_i64(os, shape_.hidden);
  write_i64(os, static_cast<int>(shape_.activation));
  write_i64(os, norm_ready_ ? 1 : 0);
  for (Eigen::Index i = 0; i < mean_.size(); ++i) write_f64(os, mean_(i));
  for (Eigen::Index i = 0; i < var_.size(); ++i) write_f64(os, var_(i));
  for (const auto& p : params_)
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) write_f64(os, p(r, c));
  if (!os) throw std::runtime_error("write failed: " + path);
}

FeedForwardNetwork FeedForwardNetwork::load_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a network checkpoint: " + path);
  NetworkShape s;
  s.input_dim = static_cast<int>(read_i64(is));
  s.output_dim = static_cast<int>(read_i64(is));
  s.layers = static_cast<int>(read_i64(is));
  s.hidden = static_cast<int>(read_i64(is));
  s.activation = static_cast<ad::Activation>(read_i64(is));
  FeedForwardNetwork net(s, 0);
  net.norm_ready_ = read_i64(is) != 0;
  for (Eigen::Index i = 0; i < net.mean_.size(); ++i) net.mean_(i) = read_f64(is);
  for (Eigen::Index i = 0; i < net.var_.size(); ++i) net.var_(i) = read_f64(is);
  for (auto& p : net.params_)
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = read_f64(is);
  return net;
}

const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Momentum: return "momentum";
    case OptimizerKind::Adagrad: return "adagrad";
  }
  return "?";
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd" || name == "gradient-descent") return OptimizerKind::Sgd;
  if (name == "momentum") return OptimizerKind::Momentum;
  if (name == "adagrad") return OptimizerKind::Adagrad;
  throw std::invalid_argument("unknown optimizer: " + name);
}

nlohmann::json optimizer_json(const OptimizerState& s) {
  nlohmann::json j;
  j["kind"] = optimizer_name(s.kind);
  j["beta1"] = s.beta1;
  j["beta2"] = s.beta2;
  j["eps"] = s.eps;
  j["momentum"] = s.momentum;
  j["t"] = s.t;
  j["m"] = nlohmann::json::array();
  j["v"] = nlohmann::json::array();
  for (const auto& m : s.m) j["m"].push_back(matrix_json(m));
  for (const auto& v : s.v) j["v"].push_back(matrix_json(v));
  return j;
}

OptimizerState optimizer_from_json(const nlohmann::json& j) {
  OptimizerState s;
  s.kind = optimizer_from_name(j.at("kind"));
  s.beta1 = j.at("beta1");
  s.beta2 = j.at("beta2");
  s.eps = j.at("eps");
  s.momentum = j.at("momentum");
  s.t = j.at("t");
  for (const auto& m : j.at("m")) s.m.push_back(matrix_from_json(m));
  for (const auto& v : j.at("v")) s.v.push_back(matrix_from_json(v));
  return s;
}

void optimizer_step(std::vector<Matrix*> params,
                    const std::vector<Matrix>& grads, OptimizerState& st,
                    double rate) {
  if (params.size() != grads.size())
    throw std::invalid_argument("gradient count does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols())
      throw std::invalid_argument("gradient shape mismatch");
    if (!grads[i].allFinite())
      throw NonFiniteGradient("non-finite gradient for parameter block " +
                              std::to_string(i));
  }
  if (st.m.empty()) {
    for (auto* p : params) {
      st.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      st.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (st.m.size() != params.size())
    throw std::invalid_argument("optimizer state does not match parameters");
  ++st.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = grads[i];
    switch (st.kind) {
      case OptimizerKind::Adam: {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
        const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
        p.array() -= rate * (st.m[i].array() / c1) /
                     ((st.v[i].array() / c2).sqrt() + st.eps);
        break;
      }
      case OptimizerKind::Sgd: p -= rate * g; break;
      case OptimizerKind::Momentum:
        st.m[i] = st.momentum * st.m[i] + rate * g;
        p -= st.m[i];
        break;
      case OptimizerKind::Adagrad:
        st.v[i] += g.cwiseProduct(g);
        p.array() -= rate * g.array() / (st.v[i].array().sqrt() + st.eps);
        break;
    }
  }
}

void adam_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads,
               OptimizerState& state, double rate) {
  state.kind = OptimizerKind::Adam;
  optimizer_step(std::move(params), grads, state, rate);
}

std::vector<long> LearningSchedule::decay_points() const {
  std::vector<long> pts;
  for (int j = 1; j <= decays; ++j) pts.push_back(total * j / (decays + 1));
  return pts;
}

std::pair<double, double> LearningSchedule::rate_at(long iteration) const {
  if (iteration < 0 || iteration >= total)
    throw std::out_of_range("iteration outside schedule");
  double f = 1.0;
  for (long pt : decay_points())
    if (iteration >= pt) f /= decay_factor;
  return {bsde_rate_initial * f, control_rate_initial * f};
}

nlohmann::json to_json(const LearningSchedule& s) {
  return {{"bsde_rate_initial", s.bsde_rate_initial},
          {"control_rate_initial", s.control_rate_initial},
          {"decay_factor", s.decay_factor},
          {"decays", s.decays},
          {"total", s.total}};
}

}  // namespace deepsc::nn
