#include "batchcausal/trainer.hpp"

#include "batchcausal/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <limits>
#include <unordered_map>
#include <unordered_set>

namespace batchcausal {

std::string_view to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::fixed: return "fixed";
    case LrSchedule::halve_every_10: return "halve_every_10";
    case LrSchedule::scaled_inverse_b: return "scaled_inverse_b";
  }
  return "unknown";
}

std::string_view to_string(OptimizerKind o) { return o == OptimizerKind::adam ? "adam" : "sgd"; }

std::string_view to_string(AblationKind a) {
  switch (a) {
    case AblationKind::none: return "none";
    case AblationKind::no_noise_averaging: return "no_noise_averaging";
    case AblationKind::sam: return "sam";
    case AblationKind::l1l2: return "l1l2";
    case AblationKind::inject_noise: return "inject_noise";
  }
  return "unknown";
}

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::completed: return "completed";
    case RunStatus::early_stopped: return "early_stopped";
    case RunStatus::degenerate: return "degenerate";
  }
  return "unknown";
}

LrSchedule lr_schedule_from_string(std::string_view name) {
  for (auto s : {LrSchedule::fixed, LrSchedule::halve_every_10, LrSchedule::scaled_inverse_b}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown lr schedule '" + std::string(name) + "'");
}

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

AblationKind ablation_kind_from_string(std::string_view name) {
  for (auto a : {AblationKind::none, AblationKind::no_noise_averaging, AblationKind::sam,
                 AblationKind::l1l2, AblationKind::inject_noise}) {
    if (to_string(a) == name) return a;
  }
  throw std::invalid_argument("unknown ablation '" + std::string(name) + "'");
}

RunStatus run_status_from_string(std::string_view name) {
  for (auto s : {RunStatus::completed, RunStatus::early_stopped, RunStatus::degenerate}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown run status '" + std::string(name) + "'");
}

std::string Ablation::label() const {
  std::ostringstream out;
  out << to_string(kind);
  if (kind == AblationKind::sam) out << "(rho=" << rho << ")";
  if (kind == AblationKind::l1l2) out << "(l1=" << l1 << ",l2=" << l2 << ")";
  return out.str();
}

std::string make_run_id(int batch_size, std::uint64_t seed, const Ablation& ablation) {
  return "B" + std::to_string(batch_size) + "-s" + std::to_string(seed) + "-" + ablation.label();
}

void validate(const TrainConfig& c) {
  validate(c.model);
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.epochs >= 0, "epochs must be >= 0");
  require(c.lr > 0.0 && std::isfinite(c.lr), "lr must be > 0");
  require(c.lambda_causal >= 0.0 && std::isfinite(c.lambda_causal), "lambda_causal must be >= 0");
  require(c.ablation.rho >= 0.0, "sam rho must be >= 0");
  require(c.ablation.l1 >= 0.0 && c.ablation.l2 >= 0.0, "l1/l2 weights must be >= 0");
  require(!c.early_stop_patience || *c.early_stop_patience >= 1, "early_stop_patience must be >= 1");
  require(c.probe_size >= 2, "probe_size must be >= 2");
  if (c.batch_schedule.progressive) {
    require(c.batch_schedule.start >= 0, "progressive start must be >= 0");
    require(c.batch_schedule.factor >= 1.0, "progressive factor must be >= 1");
    require(c.batch_schedule.every_epochs >= 1, "progressive every_epochs must be >= 1");
  }
}

double scheduled_lr(const TrainConfig& config, int epoch, int batch_size) {
  switch (config.lr_schedule) {
    case LrSchedule::fixed: return config.lr;
    case LrSchedule::halve_every_10: return config.lr * std::ldexp(1.0, -(epoch / 10));
    case LrSchedule::scaled_inverse_b: return config.lr * 16.0 / static_cast<double>(batch_size);
  }
  return config.lr;
}

int scheduled_batch_size(const TrainConfig& config, int epoch, int n_train) {
  int b = config.batch_size;
  if (config.batch_schedule.progressive) {
    const int start = config.batch_schedule.start > 0 ? config.batch_schedule.start : config.batch_size;
    const double scaled =
        start * std::pow(config.batch_schedule.factor, epoch / config.batch_schedule.every_epochs);
    b = scaled >= static_cast<double>(n_train) ? n_train : static_cast<int>(scaled);
  }
  return std::max(1, std::min(b, n_train));
}

AdamResult adam_step(const ParameterVector& params, const Vector& grad, const AdamState& state,
                     double lr, int t, const AdamHyper& hyper) {
  if (t < 1) throw std::invalid_argument("adam step t must be >= 1");
  if (grad.size() != params.dim()) throw std::invalid_argument("adam gradient dimension mismatch");
  if (!grad.allFinite()) throw std::invalid_argument("adam gradient is non-finite");
  const Eigen::Index n = params.dim();
  const Vector m0 = state.m.size() == n ? state.m : Vector::Zero(n);
  const Vector v0 = state.v.size() == n ? state.v : Vector::Zero(n);
  AdamState next;
  next.m = hyper.beta1 * m0 + (1.0 - hyper.beta1) * grad;
  next.v = hyper.beta2 * v0 + (1.0 - hyper.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  Vector theta = params.values();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m_hat = next.m[i] / c1;
    const double v_hat = next.v[i] / c2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
  return AdamResult{ParameterVector(std::move(theta)), std::move(next)};
}

RegularizerValue causal_regularizer(const Matrix& embeddings,
                                    const std::vector<std::pair<int, int>>& edges) {
  if (edges.empty()) return RegularizerValue{0.0, true};
  double total = 0.0;
  for (const auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= embeddings.rows() || j >= embeddings.rows()) {
      throw std::invalid_argument("edge endpoint out of range");
    }
    total += (embeddings.row(i) - embeddings.row(j)).squaredNorm();
  }
  return RegularizerValue{total / static_cast<double>(edges.size()), false};
}

Matrix causal_regularizer_gradient(const Matrix& embeddings,
                                   const std::vector<std::pair<int, int>>& edges) {
  Matrix grad = Matrix::Zero(embeddings.rows(), embeddings.cols());
  if (edges.empty()) return grad;
  const double scale = 2.0 / static_cast<double>(edges.size());
  for (const auto& [i, j] : edges) {
    const Eigen::RowVectorXd diff = scale * (embeddings.row(i) - embeddings.row(j));
    grad.row(i) += diff;
    grad.row(j) -= diff;
  }
  return grad;
}

Matrix diffusion_update(const Matrix& h, const SparseMatrix& a_norm, double alpha, double beta,
                        double noise_scale, Rng& rng) {
  if (a_norm.rows() != h.rows() || a_norm.cols() != h.rows()) {
    throw std::invalid_argument("diffusion: adjacency shape does not match embeddings");
  }
  if (!std::isfinite(alpha) || !std::isfinite(beta)) {
    throw std::invalid_argument("diffusion: alpha and beta must be finite");
  }
  Matrix out = h;
  if (alpha != 0.0) {
    const Matrix smoothed = a_norm * h;
    out += alpha * (smoothed - h);
  }
  if (beta != 0.0 && noise_scale > 0.0) {
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      for (Eigen::Index j = 0; j < h.cols(); ++j) out(i, j) += beta * rng.normal(0.0, noise_scale) * h(i, j);
    }
  }
  return out;
}

ParameterVector noise_injected_step(const ParameterVector& params, const Vector& grad, double lr,
                                    double noise_estimate, Rng& rng) {
  if (noise_estimate < 0.0) throw std::invalid_argument("noise estimate must be >= 0");
  if (grad.size() != params.dim()) throw std::invalid_argument("gradient dimension mismatch");
  const double stddev = std::sqrt(noise_estimate);
  Vector theta = params.values();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double z = stddev > 0.0 ? rng.normal(0.0, stddev) : 0.0;
    theta[i] -= lr * (grad[i] + z);
  }
  return ParameterVector(std::move(theta));
}

ParameterVector sam_step(const GradientFn& gradient, const ParameterVector& params, double rho,
                         const UpdateFn& base_update) {
  if (rho < 0.0) throw std::invalid_argument("sam rho must be >= 0");
  const Vector g = gradient(params.values());
  if (!g.allFinite()) throw std::invalid_argument("sam gradient is non-finite");
  const double norm = g.norm();
  if (rho == 0.0 || norm == 0.0) return base_update(params, g);
  const Vector perturbed = params.values() + (rho / norm) * g;
  return base_update(params, gradient(perturbed));
}

ParameterVector sam_step(const ModelSpec& spec, const ParameterVector& params,
                         const DatasetBatch& batch, double rho, const UpdateFn& base_update) {
  const GradientFn grad = [&](const Vector& theta) {
    return loss_and_gradient(spec, ParameterVector(theta), batch).gradient;
  };
  return sam_step(grad, params, rho, base_update);
}

namespace {

using Clock = std::chrono::steady_clock;

class Diverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything train_run needs about one dataset, prepared once.
struct TrainingContext {
  const DatasetBundle& data;
  const TrainConfig& config;
  bool graph = false;
  SparseMatrix a_norm;
  Matrix eval_features;  // deterministic diffusion (or raw features)
  std::vector<std::vector<int>> neighbors;
};

Matrix diffuse(const TrainingContext& ctx, double noise_scale, Rng& rng) {
  const ModelSpec& m = ctx.config.model;
  Matrix h = ctx.data.features;
  for (int step = 0; step < m.diffusion_steps; ++step) {
    h = diffusion_update(h, ctx.a_norm, m.diffusion_alpha, m.diffusion_beta, noise_scale, rng);
  }
  return h;
}

// Edges (as local indices into `nodes`) touching at least one batch node.
void batch_edges(const TrainingContext& ctx, const std::vector<int>& batch,
                 std::vector<int>& nodes, std::vector<std::pair<int, int>>& edges) {
  nodes = batch;
  edges.clear();
  std::unordered_map<int, int> local;
  for (std::size_t i = 0; i < batch.size(); ++i) local.emplace(batch[i], static_cast<int>(i));
  std::unordered_set<long long> seen;
  const long long n = ctx.data.size();
  for (int u : batch) {
    for (int v : ctx.neighbors[static_cast<std::size_t>(u)]) {
      const long long key = static_cast<long long>(std::min(u, v)) * n + std::max(u, v);
      if (!seen.insert(key).second) continue;
      auto [it, inserted] = local.emplace(v, static_cast<int>(nodes.size()));
      if (inserted) nodes.push_back(v);
      edges.emplace_back(local.at(u), it->second);
    }
  }
}

struct Objective {
  const TrainingContext& ctx;
  const Matrix& features;

  // Gradient of the total training loss on one mini-batch.
  Vector gradient(const ParameterVector& params, const std::vector<int>& batch_idx,
                  double* loss_out = nullptr) const {
    const TrainConfig& c = ctx.config;
    const DatasetBatch batch = gather_batch(features, ctx.data.labels, batch_idx);
    LossGradient lg = loss_and_gradient(c.model, params, batch);
    double loss = lg.loss;
    if (c.lambda_causal > 0.0 && ctx.graph) {
      std::vector<int> nodes;
      std::vector<std::pair<int, int>> edges;
      batch_edges(ctx, batch_idx, nodes, edges);
      if (!edges.empty()) {
        const DatasetBatch node_batch = gather_batch(features, ctx.data.labels, nodes);
        const Matrix emb = embeddings(c.model, params, node_batch);
        loss += c.lambda_causal * causal_regularizer(emb, edges).value;
        const Matrix upstream = causal_regularizer_gradient(emb, edges);
        lg.gradient += c.lambda_causal * embedding_pullback(c.model, params, node_batch, upstream);
      }
    }
    if (c.ablation.kind == AblationKind::l1l2) {
      const Vector& theta = params.values();
      loss += c.ablation.l1 * theta.cwiseAbs().sum() + c.ablation.l2 * theta.squaredNorm();
      lg.gradient += c.ablation.l1 * theta.cwiseSign() + 2.0 * c.ablation.l2 * theta;
    }
    if (!std::isfinite(loss) || !lg.gradient.allFinite()) throw Diverged("loss diverged");
    if (loss_out) *loss_out = loss;
    return lg.gradient;
  }
};

struct SplitLoss {
  double loss = 0.0;
  double accuracy = 0.0;
};

SplitLoss evaluate(const TrainingContext& ctx, const ParameterVector& params,
                   const std::vector<int>& idx) {
  if (idx.empty()) return {};
  const DatasetBatch batch = gather_batch(ctx.eval_features, ctx.data.labels, idx);
  SplitLoss out;
  out.loss = forward_loss(ctx.config.model, params, batch);
  out.accuracy = predict_accuracy(ctx.config.model, params, batch);
  if (!std::isfinite(out.loss)) throw Diverged("evaluation loss is non-finite");
  return out;
}

std::vector<int> probe_indices(const DatasetBundle& data, int probe_size) {
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(probe_size), data.splits.train.size());
  return std::vector<int>(data.splits.train.begin(), data.splits.train.begin() + static_cast<std::ptrdiff_t>(n));
}

double probe_noise(const TrainingContext& ctx, const ParameterVector& params,
                   const std::vector<int>& probe, int divisor) {
  const DatasetBatch batch = gather_batch(ctx.eval_features, ctx.data.labels, probe);
  return gradient_noise(per_sample_gradients(ctx.config.model, params, batch), divisor);
}

}  // namespace

TrainOutcome train(const DatasetBundle& data, const TrainConfig& config,
                   const std::string& dataset_id) {
  validate(config);
  if (data.splits.train.size() < 2) throw std::invalid_argument("training split needs >= 2 samples");
  if (config.model.input_dim != data.feature_dim()) {
    throw std::invalid_argument("model input_dim does not match dataset features");
  }
  if (config.model.classes < data.num_classes) {
    throw std::invalid_argument("model has fewer classes than the dataset");
  }

  TrainOutcome outcome;
  RunRecord& rec = outcome.record;
  rec.run_id = make_run_id(config.batch_size, config.seed, config.ablation);
  rec.dataset_id = dataset_id;
  rec.model_kind = config.model.kind;
  rec.batch_size = config.batch_size;
  rec.seed = config.seed;
  rec.ablation = config.ablation;

  TrainingContext ctx{data, config, false, {}, {}, {}};
  ctx.graph = config.model.kind == ModelKind::graph_diffusion && data.adjacency.has_value();
  if (ctx.graph) {
    ctx.a_norm = normalized_adjacency(*data.adjacency);
    ctx.neighbors.assign(static_cast<std::size_t>(data.size()), {});
    const SparseMatrix& a = *data.adjacency;
    for (int c = 0; c < a.outerSize(); ++c) {
      for (SparseMatrix::InnerIterator it(a, c); it; ++it) {
        if (it.row() != it.col() && it.value() != 0.0) {
          ctx.neighbors[static_cast<std::size_t>(it.row())].push_back(static_cast<int>(it.col()));
        }
      }
    }
    Rng unused(0);
    ctx.eval_features = diffuse(ctx, 0.0, unused);
  } else {
    ctx.eval_features = data.features;
  }

  Rng init_rng(derive_seed(config.seed, "init"));
  Rng run_rng(derive_seed(config.seed, rec.run_id));
  ParameterVector params = initialize_parameters(config.model, init_rng);
  AdamState adam;
  int step = 0;

  const int n_train = static_cast<int>(data.splits.train.size());
  const std::vector<int> probe = probe_indices(data, config.probe_size);
  std::vector<int> order = data.splits.train;
  double noise_estimate = 0.0;
  const bool needs_noise_estimate =
      config.ablation.kind == AblationKind::inject_noise ||
      (ctx.graph && config.model.diffusion_beta != 0.0) || config.log_epoch_noise;

  std::optional<ParameterVector> best_params;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_without_improvement = 0;
  int last_batch = scheduled_batch_size(config, 0, n_train);

  auto update = [&](const ParameterVector& p, const Vector& g, double lr) {
    if (config.optimizer == OptimizerKind::sgd) {
      if (config.ablation.kind == AblationKind::inject_noise) {
        return noise_injected_step(p, g, lr, noise_estimate, run_rng);
      }
      return ParameterVector(p.values() - lr * g);
    }
    Vector grad = g;
    if (config.ablation.kind == AblationKind::inject_noise && noise_estimate > 0.0) {
      const double sd = std::sqrt(noise_estimate);
      for (Eigen::Index i = 0; i < grad.size(); ++i) grad[i] += run_rng.normal(0.0, sd);
    }
    AdamResult r = adam_step(p, grad, adam, lr, ++step);
    adam = std::move(r.state);
    return std::move(r.params);
  };

  try {
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      const auto started = Clock::now();
      const int b = scheduled_batch_size(config, epoch, n_train);
      last_batch = b;
      const double lr = scheduled_lr(config, epoch, b);

      Matrix epoch_features;
      if (ctx.graph && config.model.diffusion_beta != 0.0) {
        epoch_features = diffuse(ctx, std::sqrt(noise_estimate), run_rng);
      }
      const Matrix& features = epoch_features.size() > 0 ? epoch_features : ctx.eval_features;
      const Objective objective{ctx, features};

      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(run_rng.below(i))]);
      }
      std::vector<std::vector<int>> chunks;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(b)) {
        const auto stop = std::min(order.size(), start + static_cast<std::size_t>(b));
        chunks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(stop));
      }

      for (const auto& chunk : chunks) {
        if (config.ablation.kind == AblationKind::no_noise_averaging) {
          Vector mean = Vector::Zero(params.dim());
          for (const auto& other : chunks) mean += objective.gradient(params, other);
          mean /= static_cast<double>(chunks.size());
          params = update(params, mean, lr);
        } else if (config.ablation.kind == AblationKind::sam) {
          const GradientFn grad = [&](const Vector& theta) {
            return objective.gradient(ParameterVector(theta), chunk);
          };
          params = sam_step(grad, params, config.ablation.rho,
                            [&](const ParameterVector& p, const Vector& g) { return update(p, g, lr); });
        } else {
          params = update(params, objective.gradient(params, chunk), lr);
        }
      }

      const SplitLoss train = evaluate(ctx, params, data.splits.train);
      const SplitLoss val = evaluate(ctx, params, data.splits.val);
      const SplitLoss test = evaluate(ctx, params, data.splits.test);
      if (needs_noise_estimate) noise_estimate = probe_noise(ctx, params, probe, b);

      EpochSeries& s = rec.series;
      s.train_loss.push_back(train.loss);
      s.val_loss.push_back(val.loss);
      s.test_loss.push_back(test.loss);
      s.test_acc.push_back(test.accuracy);
      s.lr.push_back(lr);
      s.batch_size.push_back(b);
      if (config.log_epoch_noise) s.grad_noise.push_back(noise_estimate);
      s.epoch_wall_seconds.push_back(std::chrono::duration<double>(Clock::now() - started).count());

      if (config.early_stop_patience && !data.splits.val.empty()) {
        if (val.loss < best_val) {
          best_val = val.loss;
          best_params = params;
          epochs_without_improvement = 0;
        } else if (++epochs_without_improvement >= *config.early_stop_patience) {
          params = *best_params;
          rec.status = RunStatus::early_stopped;
          break;
        }
      }
    }
  } catch (const std::invalid_argument& e) {
    // Non-finite parameters or gradients surface as invalid_argument from the kernel.
    rec.status = RunStatus::degenerate;
    rec.note = e.what();
    return outcome;
  } catch (const Diverged& e) {
    rec.status = RunStatus::degenerate;
    rec.note = e.what();
    return outcome;
  }

  rec.effective_noise_batch =
      config.ablation.kind == AblationKind::no_noise_averaging ? n_train : last_batch;
  try {
    const DatasetBatch probe_batch = gather_batch(ctx.eval_features, data.labels, probe);
    const double n_final =
        gradient_noise(per_sample_gradients(config.model, params, probe_batch), rec.effective_noise_batch);
    PowerIterationOptions power = config.power;
    power.seed = derive_seed(config.seed, "power");
    const HvpOracle oracle = [&](const Vector& v) { return hvp(config.model, params, probe_batch, v); };
    const SharpnessResult sharp = sharpness_lambda_max(oracle, params.dim(), power);
    const SplitLoss train = evaluate(ctx, params, data.splits.train);
    const SplitLoss test = evaluate(ctx, params, data.splits.test);

    Measurement m;
    m.grad_noise = n_final;
    m.sharpness = sharp.lambda_max;
    m.batch_size = config.batch_size;
    m.epoch = static_cast<int>(rec.series.size());
    m.gen = measure_generalization(train.loss, test.loss, test.accuracy);
    m.complexity = complexity(m.sharpness, m.grad_noise);
    rec.final_measurement = m;
  } catch (const std::domain_error& e) {
    rec.status = RunStatus::degenerate;
    rec.note = e.what();
  } catch (const std::runtime_error& e) {
    rec.status = RunStatus::degenerate;
    rec.note = e.what();
  }
  outcome.params = params;
  return outcome;
}

RunRecord train_run(const DatasetBundle& data, const TrainConfig& config,
                    const std::string& dataset_id) {
  return train(data, config, dataset_id).record;
}

}  // namespace batchcausal
