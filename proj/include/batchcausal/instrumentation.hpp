#pragma once

#include "batchcausal/model.hpp"

#include <cstdint>
#include <functional>

namespace batchcausal {

struct Generalization {
  double test_accuracy = 0.0;
  double gap = 0.0;  // test loss - train loss
};

// Final per-run quantities: gradient noise N, sharpness S, complexity C, generalization G.
struct Measurement {
  double grad_noise = 0.0;
  double sharpness = 0.0;
  double complexity = 0.0;
  Generalization gen;
  int batch_size = 1;
  int epoch = 0;
};

// N = (1/B) * mean over coordinates of the unbiased per-coordinate variance
// of the per-sample gradients (rows).
double gradient_noise(const Matrix& per_sample_grads, int batch_size);

using HvpOracle = std::function<Vector(const Vector&)>;

struct PowerIterationOptions {
  int max_iters = 200;
  double tol = 1e-6;  // relative change of the Rayleigh quotient
  std::uint64_t seed = 0x5eed;

  bool operator==(const PowerIterationOptions&) const = default;
};

struct SharpnessResult {
  double lambda_max = 0.0;  // signed Rayleigh quotient of the dominant eigenvector
  int iters_used = 0;
  bool converged = false;
  bool restarted = false;
};

// Power iteration on a symmetric linear operator. Converges to the eigenvalue
// of largest magnitude; throws std::runtime_error on non-finite oracle output
// or when the operator annihilates every start vector.
SharpnessResult sharpness_lambda_max(const HvpOracle& oracle, Eigen::Index dim,
                                     const PowerIterationOptions& options = {});

// C = 1/S + ln N. Throws std::domain_error unless S > 0 and N > 0.
double complexity(double sharpness, double grad_noise);

Generalization measure_generalization(double train_loss, double test_loss, double test_accuracy);

}  // namespace batchcausal
