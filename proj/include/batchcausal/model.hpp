#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace batchcausal {

class Rng;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

enum class ModelKind { logistic, mlp1, graph_diffusion };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);

// Differentiable classifier description.
//
// logistic:        logits = W x + b
// mlp1:            logits = W2 tanh(W1 x + b1) + b2
// graph_diffusion: features are first smoothed over the graph,
//                  H <- H + alpha (A_norm H - H), repeated diffusion_steps
//                  times, then fed to the mlp1 head. The stochastic
//                  beta-term of the diffusion is applied by the trainer.
struct ModelSpec {
  ModelKind kind = ModelKind::mlp1;
  int input_dim = 0;
  int hidden = 0;
  int classes = 2;
  double diffusion_alpha = 0.0;
  double diffusion_beta = 0.0;
  int diffusion_steps = 2;

  bool operator==(const ModelSpec&) const = default;
};

// Offsets into the flat parameter vector. Weight blocks are row-major
// [out x in]. For logistic models the single layer is stored in the
// output slots (w_out, b_out) and the hidden slots are empty.
struct ParameterLayout {
  std::size_t w_hidden = 0;
  std::size_t b_hidden = 0;
  std::size_t w_out = 0;
  std::size_t b_out = 0;
  std::size_t total = 0;
};

void validate(const ModelSpec& spec);
ParameterLayout parameter_layout(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);

// Flat, finite, non-empty parameter storage.
class ParameterVector {
 public:
  explicit ParameterVector(Vector values);

  const Vector& values() const noexcept { return values_; }
  Eigen::Index dim() const noexcept { return values_.size(); }
  double operator[](Eigen::Index i) const { return values_[i]; }

  bool operator==(const ParameterVector& other) const;

 private:
  Vector values_;
};

struct DatasetBatch {
  Matrix inputs;                          // [n x d]
  std::vector<int> labels;                // [n]
  std::optional<SparseMatrix> adjacency;  // [n x n], graph models only

  Eigen::Index size() const noexcept { return inputs.rows(); }
};

// Throws std::invalid_argument on any shape, label or finiteness problem.
void validate(const ModelSpec& spec, const ParameterVector& params, const DatasetBatch& batch);

// D^{-1/2} (A + I) D^{-1/2}
SparseMatrix normalized_adjacency(const SparseMatrix& adjacency);

// Features as seen by the dense head. For graph_diffusion with an adjacency
// this applies the deterministic diffusion; otherwise returns the inputs.
Matrix model_features(const ModelSpec& spec, const DatasetBatch& batch);

ParameterVector initialize_parameters(const ModelSpec& spec, Rng& rng);

double forward_loss(const ModelSpec& spec, const ParameterVector& params, const DatasetBatch& batch);

struct LossGradient {
  double loss = 0.0;
  Vector gradient;
};

// Mean cross-entropy and its exact gradient.
LossGradient loss_and_gradient(const ModelSpec& spec, const ParameterVector& params,
                               const DatasetBatch& batch);

// Row i is the exact gradient of sample i's cross-entropy.
Matrix per_sample_gradients(const ModelSpec& spec, const ParameterVector& params,
                            const DatasetBatch& batch);

// Per-sample cross-entropy values.
Vector per_sample_losses(const ModelSpec& spec, const ParameterVector& params,
                         const DatasetBatch& batch);

Matrix logits(const ModelSpec& spec, const ParameterVector& params, const DatasetBatch& batch);

double predict_accuracy(const ModelSpec& spec, const ParameterVector& params,
                        const DatasetBatch& batch);

using GradientFn = std::function<Vector(const Vector&)>;

// (g(x + h v) - g(x - h v)) / (2h)
Vector finite_difference_hvp(const GradientFn& gradient, const Vector& at, const Vector& v,
                             double h);

double default_hvp_step(const ParameterVector& params);

// Hessian-vector product of the mean cross-entropy.
Vector hvp(const ModelSpec& spec, const ParameterVector& params, const DatasetBatch& batch,
           const Vector& v, std::optional<double> h = std::nullopt);

// Hidden-layer representation f(x) used by the embedding-smoothness penalty.
// For logistic models the representation is the logits.
Matrix embeddings(const ModelSpec& spec, const ParameterVector& params, const DatasetBatch& batch);

// Gradient w.r.t. parameters of sum_i <upstream_i, f(x_i)>.
Vector embedding_pullback(const ModelSpec& spec, const ParameterVector& params,
                          const DatasetBatch& batch, const Matrix& upstream);

}  // namespace batchcausal
