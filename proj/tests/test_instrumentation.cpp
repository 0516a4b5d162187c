#include "batchcausal/instrumentation.hpp"
#include "batchcausal/rng.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

using namespace batchcausal;

namespace {

Matrix random_symmetric(int n, Rng& rng) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = rng.normal();
  return 0.5 * (m + m.transpose());
}

// Cyclic Jacobi rotations; returns all eigenvalues.
Vector jacobi_eigenvalues(Matrix a) {
  const Eigen::Index n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  return a.diagonal();
}

double dominant(const Vector& eig) {
  Eigen::Index i;
  eig.cwiseAbs().maxCoeff(&i);
  return eig[i];
}

HvpOracle oracle_of(const Matrix& a) {
  return [a](const Vector& v) -> Vector { return a * v; };
}

}  // namespace

TEST_CASE("gradient noise of two scalar gradients") {
  Matrix g(2, 1);
  g << 1, 3;
  CHECK(gradient_noise(g, 2) == doctest::Approx(1.0));
  CHECK(gradient_noise(Matrix::Constant(5, 3, 0.7), 4) == 0.0);
  CHECK_THROWS_AS(gradient_noise(Matrix::Zero(1, 3), 1), std::invalid_argument);
  CHECK_THROWS_AS(gradient_noise(Matrix::Zero(3, 3), 0), std::invalid_argument);
}

TEST_CASE("gradient noise matches a direct covariance trace and scales as 1/B") {
  Rng rng(5);
  Matrix g(50, 4);
  for (auto& x : g.reshaped()) x = rng.normal(0.3, 2.0);
  const Matrix centered = g.rowwise() - g.colwise().mean();
  const double trace = (centered.transpose() * centered / 49.0).trace();
  CHECK(gradient_noise(g, 1) == doctest::Approx(trace / 4).epsilon(1e-12));
  CHECK(gradient_noise(g, 4) / gradient_noise(g, 8) == doctest::Approx(2.0).epsilon(1e-14));
  for (int b : {1, 2, 4, 8, 16, 32}) {
    CHECK(std::abs(gradient_noise(g, b) * b - gradient_noise(g, 1)) <= 1e-12 * gradient_noise(g, 1));
  }
}

TEST_CASE("power iteration on small analytic spectra") {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 3;
  d(1, 1) = 1;
  CHECK(sharpness_lambda_max(oracle_of(d), 2).lambda_max == doctest::Approx(3.0).epsilon(1e-6));
  Matrix a(2, 2);
  a << 2, 1, 1, 2;
  CHECK(sharpness_lambda_max(oracle_of(a), 2).lambda_max == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("power iteration agrees with Jacobi and Eigen eigensolvers") {
  Rng rng(77);
  PowerIterationOptions opt;
  opt.max_iters = 20000;
  opt.tol = 1e-13;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = random_symmetric(5, rng);
    const double jac = dominant(jacobi_eigenvalues(a));
    Eigen::SelfAdjointEigenSolver<Matrix> es(a);
    CHECK(jac == doctest::Approx(dominant(es.eigenvalues())).epsilon(1e-10));
    const auto r = sharpness_lambda_max(oracle_of(a), 5, opt);
    CHECK(std::abs(r.lambda_max - jac) <= 1e-5 * std::abs(jac));
  }
}

TEST_CASE("power iteration reports negative dominant eigenvalues with their sign") {
  Matrix a = Matrix::Zero(3, 3);
  a.diagonal() << -4, 1, 2;
  CHECK(sharpness_lambda_max(oracle_of(a), 3).lambda_max == doctest::Approx(-4.0).epsilon(1e-6));
}

TEST_CASE("power iteration is invariant to scaling the operator") {
  Rng rng(8);
  const Matrix a = random_symmetric(6, rng);
  PowerIterationOptions opt;
  opt.max_iters = 5000;
  opt.tol = 1e-12;
  const double base = sharpness_lambda_max(oracle_of(a), 6, opt).lambda_max;
  for (double c : {0.1, 10.0}) {
    const double scaled = sharpness_lambda_max(oracle_of(c * a), 6, opt).lambda_max / c;
    CHECK(scaled == doctest::Approx(base).epsilon(1e-6));
  }
}

TEST_CASE("power iteration errors") {
  CHECK_THROWS_AS(sharpness_lambda_max([](const Vector& v) -> Vector { return Vector::Zero(v.size()); }, 3),
                  std::runtime_error);
  CHECK_THROWS_AS(
      sharpness_lambda_max([](const Vector& v) -> Vector { return Vector::Constant(v.size(), std::nan("")); }, 3),
      std::runtime_error);
}

TEST_CASE("power iteration restarts when the start vector is annihilated") {
  PowerIterationOptions opt;
  Vector first;
  sharpness_lambda_max(
      [&](const Vector& v) -> Vector {
        if (first.size() == 0) first = v;
        return v;
      },
      4, opt);
  Vector u = Vector::Zero(4);
  u[0] = 1;
  u -= u.dot(first) / first.squaredNorm() * first;
  u.normalize();
  const Matrix rank1 = 5.0 * u * u.transpose();
  // Exact zero on the first start vector, the rank-1 operator elsewhere.
  const auto r = sharpness_lambda_max(
      [&](const Vector& v) -> Vector { return v == first ? Vector(Vector::Zero(4)) : Vector(rank1 * v); }, 4, opt);
  CHECK(r.restarted);
  CHECK(r.lambda_max == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("complexity") {
  CHECK(complexity(1.0, 1.0) == doctest::Approx(1.0));
  CHECK(complexity(2.0, std::exp(1.0)) == doctest::Approx(1.5));
  CHECK(complexity(0.5, 0.1) == doctest::Approx(2.0 + std::log(0.1)).epsilon(1e-14));
  CHECK(complexity(0.5, 0.1) == doctest::Approx(-0.3026).epsilon(1e-4));
  CHECK_THROWS_AS(complexity(0.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(complexity(1.0, 0.0), std::domain_error);
  CHECK_THROWS_AS(complexity(-1.0, 1.0), std::domain_error);
  CHECK(complexity(1.0, 2.0) > complexity(2.0, 2.0));
  CHECK(complexity(1.0, 3.0) > complexity(1.0, 2.0));
}

TEST_CASE("generalization gap") {
  const auto g = measure_generalization(0.9, 1.2, 0.8);
  CHECK(g.gap == doctest::Approx(0.3));
  CHECK(g.test_accuracy == 0.8);
  CHECK(measure_generalization(0.5, 0.5, 1.0).gap == 0.0);
}
