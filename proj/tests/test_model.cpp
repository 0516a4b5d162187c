#include "batchcausal/model.hpp"
#include "batchcausal/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace batchcausal;

namespace {

DatasetBatch random_batch(int n, int d, int classes, std::uint64_t seed) {
  Rng rng(seed);
  DatasetBatch b;
  b.inputs = Matrix(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) b.inputs(i, j) = rng.normal();
    b.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  }
  return b;
}

ParameterVector random_params(const ModelSpec& spec, std::uint64_t seed, double scale = 0.7) {
  Rng rng(seed);
  Vector v(static_cast<Eigen::Index>(parameter_count(spec)));
  for (auto& x : v) x = scale * rng.normal();
  return ParameterVector(v);
}

// Central finite-difference gradient of a scalar function.
Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector p = x, m = x;
    p[i] += h;
    m[i] -= h;
    g[i] = (f(p) - f(m)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("zero logistic parameters give ln 2 loss for two classes") {
  ModelSpec spec{ModelKind::logistic, 3, 0, 2};
  auto batch = random_batch(7, 3, 2, 1);
  ParameterVector zero(Vector::Zero(static_cast<Eigen::Index>(parameter_count(spec))));
  CHECK(forward_loss(spec, zero, batch) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("confident correct predictions give near-zero loss") {
  ModelSpec spec{ModelKind::logistic, 1, 0, 2};
  DatasetBatch batch;
  batch.inputs = Matrix(2, 1);
  batch.inputs << 1.0, -1.0;
  batch.labels = {1, 0};
  // logits = (-w x, w x) with large w
  Vector p(4);
  p << -800.0, 800.0, 0.0, 0.0;  // w_out rows for class 0 and class 1, then biases
  CHECK(forward_loss(spec, ParameterVector(p), batch) == doctest::Approx(0.0).epsilon(1e-300));
  CHECK(predict_accuracy(spec, ParameterVector(p), batch) == 1.0);
}

TEST_CASE("logistic loss matches a hand-written softmax") {
  ModelSpec spec{ModelKind::logistic, 2, 0, 3};
  auto batch = random_batch(3, 2, 3, 5);
  auto params = random_params(spec, 9);
  const Vector& v = params.values();
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    double z[3];
    for (int k = 0; k < 3; ++k) z[k] = v[2 * k] * batch.inputs(i, 0) + v[2 * k + 1] * batch.inputs(i, 1) + v[6 + k];
    const double denom = std::exp(z[0]) + std::exp(z[1]) + std::exp(z[2]);
    expected -= std::log(std::exp(z[batch.labels[static_cast<std::size_t>(i)]]) / denom);
  }
  CHECK(forward_loss(spec, params, batch) == doctest::Approx(expected / 3).epsilon(1e-13));
}

TEST_CASE("per-sample gradients are exact and average to the batch gradient") {
  for (ModelKind kind : {ModelKind::logistic, ModelKind::mlp1}) {
    CAPTURE(to_string(kind));
    ModelSpec spec{kind, 4, 5, 3};
    auto batch = random_batch(5, 4, 3, 11);
    auto params = random_params(spec, 12);
    const Matrix g = per_sample_gradients(spec, params, batch);
    REQUIRE(g.rows() == 5);
    REQUIRE(g.cols() == params.dim());

    const Vector mean = g.colwise().mean();
    CHECK((mean - loss_and_gradient(spec, params, batch).gradient).cwiseAbs().maxCoeff() <= 1e-10);

    for (int i = 0; i < 5; ++i) {
      DatasetBatch one;
      one.inputs = batch.inputs.row(i);
      one.labels = {batch.labels[static_cast<std::size_t>(i)]};
      auto f = [&](const Vector& x) { return forward_loss(spec, ParameterVector(x), one); };
      const Vector fd = fd_gradient(f, params.values(), 1e-5);
      CHECK((fd - g.row(i).transpose()).cwiseAbs().maxCoeff() <= 1e-5);
    }
  }
}

TEST_CASE("single sample and duplicated rows") {
  ModelSpec spec{ModelKind::mlp1, 3, 4, 2};
  auto batch = random_batch(1, 3, 2, 21);
  auto params = random_params(spec, 22);
  const Matrix g1 = per_sample_gradients(spec, params, batch);
  CHECK((g1.row(0).transpose() - loss_and_gradient(spec, params, batch).gradient).norm() == 0.0);

  DatasetBatch twice;
  twice.inputs = Matrix(2, 3);
  twice.inputs << batch.inputs, batch.inputs;
  twice.labels = {batch.labels[0], batch.labels[0]};
  const Matrix g2 = per_sample_gradients(spec, params, twice);
  CHECK(g2.row(0) == g2.row(1));
}

TEST_CASE("finite-difference hvp on a quadratic is exact") {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 3;
  a(1, 1) = 1;
  GradientFn grad = [&](const Vector& x) -> Vector { return a * x; };
  Vector at(2);
  at << 0.3, -2.0;
  Vector v(2);
  v << 1, 0;
  const Vector hv = finite_difference_hvp(grad, at, v, 1e-4);
  CHECK(hv[0] == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(std::abs(hv[1]) <= 1e-8);
  CHECK(finite_difference_hvp(grad, at, Vector::Zero(2), 1e-4).norm() == 0.0);
  CHECK_THROWS_AS(finite_difference_hvp(grad, at, v, 0.0), std::invalid_argument);
}

TEST_CASE("hvp matches a dense finite-difference Hessian and is symmetric") {
  ModelSpec spec{ModelKind::mlp1, 2, 1, 2};  // 2*1 + 1 + 2*1 + 2 = 7 parameters
  auto batch = random_batch(8, 2, 2, 31);
  auto params = random_params(spec, 32);
  const Eigen::Index p = params.dim();
  auto grad = [&](const Vector& x) { return loss_and_gradient(spec, ParameterVector(x), batch).gradient; };
  Matrix h(p, p);
  const double step = 1e-5;
  for (Eigen::Index j = 0; j < p; ++j) {
    Vector plus = params.values(), minus = params.values();
    plus[j] += step;
    minus[j] -= step;
    h.col(j) = (grad(plus) - grad(minus)) / (2 * step);
  }
  Rng rng(33);
  Vector v(p), u(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    v[i] = rng.normal();
    u[i] = rng.normal();
  }
  const Vector hv = hvp(spec, params, batch, v);
  CHECK((hv - h * v).norm() / (h * v).norm() <= 1e-3);
  const Vector hu = hvp(spec, params, batch, u);
  CHECK(std::abs(u.dot(hv) - v.dot(hu)) <= 1e-6 * std::max(1.0, std::abs(u.dot(hv))));
}

TEST_CASE("accuracy counts and breaks ties toward the lowest class") {
  ModelSpec spec{ModelKind::logistic, 2, 0, 3};
  DatasetBatch batch = random_batch(4, 2, 3, 41);
  batch.labels = {0, 0, 0, 0};
  ParameterVector zero(Vector::Zero(static_cast<Eigen::Index>(parameter_count(spec))));
  CHECK(predict_accuracy(spec, zero, batch) == 1.0);

  ModelSpec bin{ModelKind::logistic, 1, 0, 2};
  DatasetBatch three;
  three.inputs = Matrix(3, 1);
  three.inputs << 1, 2, -1;
  three.labels = {1, 1, 1};
  Vector p(4);
  p << 0, 1, 0, 0;  // class-1 logit = x
  CHECK(predict_accuracy(bin, ParameterVector(p), three) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("graph diffusion with zero alpha reduces to mlp1") {
  ModelSpec graph{ModelKind::graph_diffusion, 3, 4, 2, 0.0, 0.0, 2};
  ModelSpec mlp{ModelKind::mlp1, 3, 4, 2};
  auto batch = random_batch(6, 3, 2, 51);
  SparseMatrix a(6, 6);
  a.insert(0, 1) = 1;
  a.insert(1, 0) = 1;
  a.insert(2, 3) = 1;
  a.insert(3, 2) = 1;
  batch.adjacency = a;
  auto params = random_params(mlp, 52);
  CHECK(forward_loss(graph, params, batch) == forward_loss(mlp, params, batch));
  CHECK(per_sample_gradients(graph, params, batch) == per_sample_gradients(mlp, params, batch));
}

TEST_CASE("normalized adjacency is symmetric with the self-loop convention") {
  SparseMatrix a(3, 3);
  a.insert(0, 1) = 1;
  a.insert(1, 0) = 1;
  const Matrix n = Matrix(normalized_adjacency(a));
  CHECK(n(0, 0) == doctest::Approx(0.5));
  CHECK(n(0, 1) == doctest::Approx(0.5));
  CHECK(n(2, 2) == doctest::Approx(1.0));
  CHECK((n - n.transpose()).norm() == 0.0);
}

TEST_CASE("kernel operations are pure") {
  ModelSpec spec{ModelKind::mlp1, 3, 4, 3};
  auto batch = random_batch(9, 3, 3, 61);
  auto params = random_params(spec, 62);
  CHECK(forward_loss(spec, params, batch) == forward_loss(spec, params, batch));
  CHECK(per_sample_gradients(spec, params, batch) == per_sample_gradients(spec, params, batch));
}

TEST_CASE("invalid inputs are rejected") {
  ModelSpec spec{ModelKind::logistic, 2, 0, 2};
  auto batch = random_batch(3, 2, 2, 71);
  ParameterVector wrong(Vector::Zero(3));
  CHECK_THROWS_AS(forward_loss(spec, wrong, batch), std::invalid_argument);
  CHECK_THROWS_AS(ParameterVector{Vector()}, std::invalid_argument);
  Vector bad = Vector::Zero(6);
  bad[0] = std::nan("");
  CHECK_THROWS_AS(ParameterVector{bad}, std::invalid_argument);
  batch.inputs(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(forward_loss(spec, ParameterVector(Vector::Zero(6)), batch), std::invalid_argument);
  CHECK_THROWS_AS(validate(ModelSpec{ModelKind::logistic, 2, 0, 1}), std::invalid_argument);
}
