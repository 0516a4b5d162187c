#include "batchcausal/instrumentation.hpp"

#include "batchcausal/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace batchcausal {

double gradient_noise(const Matrix& per_sample_grads, int batch_size) {
  if (per_sample_grads.rows() < 2) {
    throw std::invalid_argument("gradient_noise needs at least 2 gradient samples");
  }
  if (batch_size < 1) throw std::invalid_argument("gradient_noise batch size must be >= 1");
  if (per_sample_grads.cols() < 1) throw std::invalid_argument("gradient_noise needs dim >= 1");
  const double n = static_cast<double>(per_sample_grads.rows());
  const Eigen::RowVectorXd mean = per_sample_grads.colwise().mean();
  const Eigen::RowVectorXd var =
      (per_sample_grads.rowwise() - mean).array().square().colwise().sum() / (n - 1.0);
  return var.mean() / static_cast<double>(batch_size);
}

namespace {

Vector random_unit(Eigen::Index dim, std::uint64_t seed) {
  Rng rng(seed);
  Vector v(dim);
  double norm = 0.0;
  while (norm == 0.0) {
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = rng.normal();
    norm = v.norm();
  }
  return v / norm;
}

struct Attempt {
  SharpnessResult result;
  bool annihilated = false;
};

Attempt run_power_iteration(const HvpOracle& oracle, Eigen::Index dim,
                            const PowerIterationOptions& options, std::uint64_t seed) {
  Attempt attempt;
  Vector v = random_unit(dim, seed);
  double rayleigh = 0.0;
  for (int it = 1; it <= options.max_iters; ++it) {
    const Vector hv = oracle(v);
    if (hv.size() != dim) throw std::invalid_argument("hvp oracle returned wrong dimension");
    if (!hv.allFinite()) throw std::runtime_error("hvp oracle returned non-finite values");
    const double next = v.dot(hv);
    const double norm = hv.norm();
    attempt.result.iters_used = it;
    if (norm == 0.0) {
      attempt.annihilated = (it == 1);
      attempt.result.lambda_max = 0.0;
      attempt.result.converged = true;
      return attempt;
    }
    const bool settled =
        it > 1 && std::abs(next - rayleigh) <= options.tol * std::max(std::abs(next), 1e-300);
    rayleigh = next;
    v = hv / norm;
    if (settled) {
      attempt.result.converged = true;
      break;
    }
  }
  attempt.result.lambda_max = rayleigh;
  return attempt;
}

}  // namespace

SharpnessResult sharpness_lambda_max(const HvpOracle& oracle, Eigen::Index dim,
                                     const PowerIterationOptions& options) {
  if (dim < 1) throw std::invalid_argument("power iteration dim must be >= 1");
  if (options.max_iters < 1) throw std::invalid_argument("power iteration max_iters must be >= 1");
  if (!(options.tol > 0.0)) throw std::invalid_argument("power iteration tol must be > 0");

  Attempt first = run_power_iteration(oracle, dim, options, options.seed);
  if (!first.annihilated && first.result.converged) return first.result;

  // Start vector was annihilated or progress stalled: one restart from a fresh seed.
  Attempt second = run_power_iteration(oracle, dim, options, mix_seed(options.seed + 1));
  if (first.annihilated && second.annihilated) {
    throw std::runtime_error("hvp oracle returned the zero vector for every start vector");
  }
  SharpnessResult best = first.annihilated ? second.result
                         : second.annihilated ? first.result
                         : (std::abs(second.result.lambda_max) > std::abs(first.result.lambda_max)
                                ? second.result
                                : first.result);
  best.iters_used = first.result.iters_used + second.result.iters_used;
  best.restarted = true;
  return best;
}

double complexity(double sharpness, double grad_noise) {
  if (!(sharpness > 0.0) || !std::isfinite(sharpness)) {
    throw std::domain_error("complexity requires sharpness S > 0, got " + std::to_string(sharpness));
  }
  if (!(grad_noise > 0.0) || !std::isfinite(grad_noise)) {
    throw std::domain_error("complexity requires gradient noise N > 0, got " + std::to_string(grad_noise));
  }
  return 1.0 / sharpness + std::log(grad_noise);
}

Generalization measure_generalization(double train_loss, double test_loss, double test_accuracy) {
  if (!std::isfinite(train_loss) || !std::isfinite(test_loss) || !std::isfinite(test_accuracy)) {
    throw std::invalid_argument("generalization inputs must be finite");
  }
  if (test_accuracy < 0.0 || test_accuracy > 1.0) {
    throw std::invalid_argument("test accuracy must lie in [0, 1]");
  }
  return Generalization{test_accuracy, test_loss - train_loss};
}

}  // namespace batchcausal
