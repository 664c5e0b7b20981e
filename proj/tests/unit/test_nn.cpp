#include "deepsc/nn.hpp"

#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace deepsc;
using namespace deepsc::nn;

TEST_CASE("parameter count formula") {
  // (L-1) l^2 + l (L + p + q) + q
  CHECK(parameter_count(1, 1, 4, 11) == 3 * 121 + 11 * 6 + 1);
  for (int p : {1, 3}) {
    for (int q : {1, 2, 5}) {
      for (int L : {1, 2, 4}) {
        const NetworkShape s = NetworkShape::make(p, q, -1, L);
        CHECK(s.hidden == p + 10);
        const FeedForwardNetwork net(s, 3);
        CHECK(net.parameter_count() == parameter_count(p, q, L, p + 10));
      }
    }
  }
}

TEST_CASE("plain and taped forward passes agree") {
  FeedForwardNetwork net(NetworkShape::make(3, 2, 7, 3, ad::Activation::Tanh), 5, 0.3);
  Matrix x = Matrix::Random(6, 3);
  net.update_normalisation(x);
  const Matrix plain = net.evaluate(x);
  ad::Tape t;
  const ad::Var out = static_cast<const FeedForwardNetwork&>(net).forward(t, x, 0);
  CHECK((t.value(out) - plain).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(plain.rows() == 6);
  CHECK(plain.cols() == 2);
  CHECK_THROWS(net.evaluate(Matrix::Zero(2, 4)));
}

TEST_CASE("normalisation statistics") {
  FeedForwardNetwork net(NetworkShape::make(2, 1), 1);
  CHECK_FALSE(net.normalisation_ready());
  Matrix b(4, 2);
  b << 1, 5, 2, 5, 3, 5, 4, 5;
  net.update_normalisation(b);
  CHECK(net.normalisation_ready());
  CHECK(net.running_mean()(0) == doctest::Approx(2.5));
  // a constant column is centred but not rescaled
  const Matrix n = net.normalise(b);
  CHECK(n.col(1).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(n.col(0).mean() == doctest::Approx(0.0));
  // later batches blend with momentum 0.99
  net.update_normalisation(Matrix::Constant(4, 2, 12.5));
  CHECK(net.running_mean()(0) == doctest::Approx(0.99 * 2.5 + 0.01 * 12.5));
}

TEST_CASE("optimizers reduce a quadratic") {
  for (OptimizerKind k :
       {OptimizerKind::Adam, OptimizerKind::Sgd, OptimizerKind::Momentum, OptimizerKind::Adagrad}) {
    Matrix p = Matrix::Constant(2, 1, 3.0);
    OptimizerState st;
    st.kind = k;
    // adagrad's effective rate decays like 1/sqrt(steps)
    const double rate = k == OptimizerKind::Adagrad ? 0.5 : 0.05;
    for (int i = 0; i < 500; ++i) optimizer_step({&p}, {Matrix(2.0 * p)}, st, rate);
    INFO(std::string(optimizer_name(k)));
    CHECK(p.norm() < 0.5);
  }
}

TEST_CASE("adam first step moves by the rate") {
  Matrix p = Matrix::Constant(1, 1, 1.0);
  OptimizerState st;
  adam_step({&p}, {Matrix::Constant(1, 1, 123.0)}, st, 0.01);
  CHECK(p(0, 0) == doctest::Approx(0.99).epsilon(1e-9));
}

TEST_CASE("non-finite gradients leave parameters untouched") {
  Matrix p = Matrix::Constant(1, 2, 1.0);
  OptimizerState st;
  Matrix g(1, 2);
  g << 1.0, std::nan("");
  CHECK_THROWS_AS(optimizer_step({&p}, {g}, st, 0.1), NonFiniteGradient);
  CHECK(p(0, 0) == 1.0);
  CHECK_THROWS(optimizer_step({&p}, {}, st, 0.1));
}

TEST_CASE("learning schedule decays") {
  LearningSchedule s;
  s.total = 1000;
  CHECK(s.decay_points() == std::vector<long>{250, 500, 750});
  CHECK(s.rate_at(0).first == doctest::Approx(1e-2));
  CHECK(s.rate_at(249).second == doctest::Approx(1e-3));
  CHECK(s.rate_at(250).first == doctest::Approx(1e-3));
  CHECK(s.rate_at(999).second == doctest::Approx(1e-6));
  CHECK_THROWS(s.rate_at(1000));
  CHECK(optimizer_from_name("gradient-descent") == OptimizerKind::Sgd);
  CHECK_THROWS(optimizer_from_name("lbfgs"));
}

TEST_CASE("network serialisation round trips") {
  FeedForwardNetwork net(NetworkShape::make(2, 3, 5, 2, ad::Activation::Sigmoid), 9, 0.2);
  net.update_normalisation(Matrix::Random(8, 2));
  const Matrix x = Matrix::Random(4, 2);
  const FeedForwardNetwork back = FeedForwardNetwork::from_json(net.to_json());
  CHECK(back.evaluate(x) == net.evaluate(x));
  const auto path = std::filesystem::temp_directory_path() / "deepsc_net_roundtrip.bin";
  net.save_binary(path.string());
  CHECK(FeedForwardNetwork::load_binary(path.string()).evaluate(x) == net.evaluate(x));
  std::filesystem::remove(path);

  OptimizerState st;
  Matrix p = Matrix::Ones(2, 2);
  adam_step({&p}, {Matrix::Ones(2, 2)}, st, 0.1);
  const OptimizerState st2 = optimizer_from_json(optimizer_json(st));
  CHECK(st2.t == st.t);
  CHECK(st2.m[0] == st.m[0]);
  CHECK(matrix_from_json(matrix_json(p)) == p);
}

TEST_CASE("initialisation is seed-determined") {
  const NetworkShape s = NetworkShape::make(2, 2);
  const FeedForwardNetwork a(s, 4), b(s, 4), c(s, 5);
  CHECK(a.params()[0] == b.params()[0]);
  CHECK(a.params()[0] != c.params()[0]);
}
