#pragma once

#include "batchcausal/datasets.hpp"
#include "batchcausal/instrumentation.hpp"
#include "batchcausal/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace batchcausal {

class Rng;

enum class LrSchedule { fixed, halve_every_10, scaled_inverse_b };
enum class OptimizerKind { adam, sgd };
enum class AblationKind { none, no_noise_averaging, sam, l1l2, inject_noise };
enum class RunStatus { completed, early_stopped, degenerate };

std::string_view to_string(LrSchedule s);
std::string_view to_string(OptimizerKind o);
std::string_view to_string(AblationKind a);
std::string_view to_string(RunStatus s);
LrSchedule lr_schedule_from_string(std::string_view name);
OptimizerKind optimizer_from_string(std::string_view name);
AblationKind ablation_kind_from_string(std::string_view name);
RunStatus run_status_from_string(std::string_view name);

struct Ablation {
  AblationKind kind = AblationKind::none;
  double rho = 0.05;  // sam
  double l1 = 0.0;    // l1l2
  double l2 = 0.0;    // l1l2

  // Stable identifier used in run ids and record keys, e.g. "sam(rho=0.05)".
  std::string label() const;
  bool operator==(const Ablation&) const = default;
};

struct BatchSchedule {
  bool progressive = false;
  int start = 0;  // 0: start from TrainConfig::batch_size
  double factor = 2.0;
  int every_epochs = 10;

  bool operator==(const BatchSchedule&) const = default;
};

struct TrainConfig {
  ModelSpec model;
  int batch_size = 16;
  int epochs = 50;
  double lr = 1e-3;
  LrSchedule lr_schedule = LrSchedule::fixed;
  OptimizerKind optimizer = OptimizerKind::adam;
  double lambda_causal = 0.0;
  Ablation ablation;
  BatchSchedule batch_schedule;
  std::optional<int> early_stop_patience = 10;  // nullopt disables early stopping
  std::uint64_t seed = 0;
  int probe_size = 256;
  bool log_epoch_noise = false;
  PowerIterationOptions power;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);

// Learning rate in effect during `epoch` (0-based) at batch size `batch_size`.
double scheduled_lr(const TrainConfig& config, int epoch, int batch_size);

// Batch size in effect during `epoch`, capped at n_train.
int scheduled_batch_size(const TrainConfig& config, int epoch, int n_train);

struct EpochSeries {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> test_loss;
  std::vector<double> test_acc;
  std::vector<double> lr;
  std::vector<int> batch_size;
  std::vector<double> grad_noise;  // only when log_epoch_noise
  std::vector<double> epoch_wall_seconds;

  std::size_t size() const noexcept { return train_loss.size(); }
};

struct RunRecord {
  std::string run_id;
  std::string dataset_id;
  ModelKind model_kind = ModelKind::mlp1;
  int batch_size = 0;
  std::uint64_t seed = 0;
  Ablation ablation;
  EpochSeries series;
  std::optional<Measurement> final_measurement;
  RunStatus status = RunStatus::completed;
  std::string note;  // reason for degenerate status
  int effective_noise_batch = 0;  // batch divisor used for the final N
};

std::string make_run_id(int batch_size, std::uint64_t seed, const Ablation& ablation);

// ---- optimizer pieces ------------------------------------------------------

struct AdamState {
  Vector m;
  Vector v;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamResult {
  ParameterVector params;
  AdamState state;
};

// Bias-corrected Adam step number t (t >= 1). Empty moment vectors count as zero.
AdamResult adam_step(const ParameterVector& params, const Vector& grad, const AdamState& state,
                     double lr, int t, const AdamHyper& hyper = {});

struct RegularizerValue {
  double value = 0.0;
  bool empty_edges = false;
};

// (1/|E|) sum over edges of ||f(x_i) - f(x_j)||^2; 0 with a flag for empty E.
RegularizerValue causal_regularizer(const Matrix& embeddings,
                                    const std::vector<std::pair<int, int>>& edges);

// d/d(embeddings) of causal_regularizer.
Matrix causal_regularizer_gradient(const Matrix& embeddings,
                                   const std::vector<std::pair<int, int>>& edges);

// H + alpha (A_norm H - H) + beta * (xi .* H), xi ~ Normal(0, noise_scale) i.i.d.
Matrix diffusion_update(const Matrix& h, const SparseMatrix& a_norm, double alpha, double beta,
                        double noise_scale, Rng& rng);

// params - lr * (grad + z), z ~ Normal(0, sqrt(noise_estimate)) per coordinate.
ParameterVector noise_injected_step(const ParameterVector& params, const Vector& grad, double lr,
                                    double noise_estimate, Rng& rng);

using UpdateFn = std::function<ParameterVector(const ParameterVector&, const Vector&)>;

// Evaluates the gradient at params + rho * g/||g|| and hands it to base_update.
ParameterVector sam_step(const GradientFn& gradient, const ParameterVector& params, double rho,
                         const UpdateFn& base_update);

ParameterVector sam_step(const ModelSpec& spec, const ParameterVector& params,
                         const DatasetBatch& batch, double rho, const UpdateFn& base_update);

// ---- training ----------------------------------------------------------------

// Mini-batch training run producing one observational record. Deterministic
// given (dataset, config); wall-clock series are the only nondeterminism.
RunRecord train_run(const DatasetBundle& dataset, const TrainConfig& config,
                    const std::string& dataset_id = "dataset");

struct TrainOutcome {
  RunRecord record;
  std::optional<ParameterVector> params;  // absent when the run diverged
};

// train_run that also hands back the final parameters.
TrainOutcome train(const DatasetBundle& dataset, const TrainConfig& config,
                   const std::string& dataset_id = "dataset");

}  // namespace batchcausal
