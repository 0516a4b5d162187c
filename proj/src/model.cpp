#include "batchcausal/model.hpp"

#include "batchcausal/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace batchcausal {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

bool has_hidden_layer(const ModelSpec& spec) { return spec.kind != ModelKind::logistic; }

int head_input_dim(const ModelSpec& spec) {
  return has_hidden_layer(spec) ? spec.hidden : spec.input_dim;
}

struct Layers {
  ConstRowMap w_hidden;
  Eigen::Map<const Vector> b_hidden;
  ConstRowMap w_out;
  Eigen::Map<const Vector> b_out;
};

Layers view(const ModelSpec& spec, const Vector& theta) {
  const ParameterLayout layout = parameter_layout(spec);
  const double* p = theta.data();
  const int hid = has_hidden_layer(spec) ? spec.hidden : 0;
  return Layers{
      ConstRowMap(p + layout.w_hidden, hid, hid > 0 ? spec.input_dim : 0),
      Eigen::Map<const Vector>(p + layout.b_hidden, hid),
      ConstRowMap(p + layout.w_out, spec.classes, head_input_dim(spec)),
      Eigen::Map<const Vector>(p + layout.b_out, spec.classes),
  };
}

struct Forward {
  Matrix features;  // input to the first layer
  Matrix hidden;    // tanh activations (empty for logistic)
  Matrix logits;
};

Forward run_forward(const ModelSpec& spec, const Vector& theta, const DatasetBatch& batch) {
  Forward f;
  f.features = model_features(spec, batch);
  const Layers layers = view(spec, theta);
  if (has_hidden_layer(spec)) {
    f.hidden = (f.features * layers.w_hidden.transpose()).rowwise() + layers.b_hidden.transpose();
    f.hidden = f.hidden.array().tanh().matrix();
    f.logits = (f.hidden * layers.w_out.transpose()).rowwise() + layers.b_out.transpose();
  } else {
    f.logits = (f.features * layers.w_out.transpose()).rowwise() + layers.b_out.transpose();
  }
  return f;
}

// Softmax probabilities and per-row cross-entropy, max-subtracted.
void softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels, Matrix& probs,
                           Vector& losses) {
  const Eigen::Index n = logits.rows();
  probs.resize(n, logits.cols());
  losses.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      const double e = std::exp(logits(i, k) - m);
      probs(i, k) = e;
      s += e;
    }
    probs.row(i) /= s;
    losses[i] = std::log(s) + m - logits(i, labels[static_cast<std::size_t>(i)]);
  }
}

// dL_i / dlogits_i for every row (not averaged).
Matrix logit_residuals(const Matrix& probs, const std::vector<int>& labels) {
  Matrix r = probs;
  for (Eigen::Index i = 0; i < r.rows(); ++i) r(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  return r;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::logistic: return "logistic";
    case ModelKind::mlp1: return "mlp1";
    case ModelKind::graph_diffusion: return "graph_diffusion";
  }
  return "unknown";
}

ModelKind model_kind_from_string(std::string_view name) {
  if (name == "logistic") return ModelKind::logistic;
  if (name == "mlp1") return ModelKind::mlp1;
  if (name == "graph_diffusion") return ModelKind::graph_diffusion;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

void validate(const ModelSpec& spec) {
  require(spec.input_dim >= 1, "model input_dim must be >= 1");
  require(spec.classes >= 2, "model classes must be >= 2");
  if (has_hidden_layer(spec)) require(spec.hidden >= 1, "model hidden width must be >= 1");
  if (spec.kind == ModelKind::graph_diffusion) {
    require(std::isfinite(spec.diffusion_alpha) && std::isfinite(spec.diffusion_beta),
            "diffusion alpha/beta must be finite");
    require(spec.diffusion_steps >= 0, "diffusion_steps must be >= 0");
  }
}

ParameterLayout parameter_layout(const ModelSpec& spec) {
  validate(spec);
  const auto d = static_cast<std::size_t>(spec.input_dim);
  const auto k = static_cast<std::size_t>(spec.classes);
  ParameterLayout layout;
  if (has_hidden_layer(spec)) {
    const auto h = static_cast<std::size_t>(spec.hidden);
    layout.w_hidden = 0;
    layout.b_hidden = h * d;
    layout.w_out = layout.b_hidden + h;
    layout.b_out = layout.w_out + k * h;
    layout.total = layout.b_out + k;
  } else {
    layout.w_out = 0;
    layout.b_out = k * d;
    layout.total = layout.b_out + k;
  }
  return layout;
}

std::size_t parameter_count(const ModelSpec& spec) { return parameter_layout(spec).total; }

ParameterVector::ParameterVector(Vector values) : values_(std::move(values)) {
  require(values_.size() > 0, "parameter vector must be non-empty");
  require(values_.allFinite(), "parameter vector contains non-finite values");
}

bool ParameterVector::operator==(const ParameterVector& other) const {
  return values_.size() == other.values_.size() && values_ == other.values_;
}

void validate(const ModelSpec& spec, const ParameterVector& params, const DatasetBatch& batch) {
  const std::size_t expected = parameter_count(spec);
  require(static_cast<std::size_t>(params.dim()) == expected,
          "parameter dimension " + std::to_string(params.dim()) + " does not match model (" +
              std::to_string(expected) + ")");
  require(batch.inputs.rows() >= 1, "batch must be non-empty");
  require(batch.inputs.cols() == spec.input_dim,
          "batch feature dimension " + std::to_string(batch.inputs.cols()) +
              " does not match model input_dim " + std::to_string(spec.input_dim));
  require(static_cast<Eigen::Index>(batch.labels.size()) == batch.inputs.rows(),
          "label count does not match input rows");
  require(batch.inputs.allFinite(), "batch inputs contain non-finite values");
  for (int y : batch.labels) require(y >= 0 && y < spec.classes, "label out of range");
  if (batch.adjacency) {
    const SparseMatrix& a = *batch.adjacency;
    require(a.rows() == batch.inputs.rows() && a.cols() == batch.inputs.rows(),
            "adjacency shape does not match batch");
    for (int c = 0; c < a.outerSize(); ++c) {
      for (SparseMatrix::InnerIterator it(a, c); it; ++it) {
        require(std::isfinite(it.value()) && it.value() >= 0.0,
                "adjacency entries must be finite and nonnegative");
        require(a.coeff(it.col(), it.row()) == it.value(), "adjacency must be symmetric");
      }
    }
  }
}

SparseMatrix normalized_adjacency(const SparseMatrix& adjacency) {
  require(adjacency.rows() == adjacency.cols(), "adjacency must be square");
  const Eigen::Index n = adjacency.rows();
  SparseMatrix eye(n, n);
  eye.setIdentity();
  SparseMatrix with_loops = adjacency + eye;
  Vector degree = Vector::Zero(n);
  for (int c = 0; c < with_loops.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(with_loops, c); it; ++it) degree[it.row()] += it.value();
  }
  const Vector inv_sqrt = degree.array().rsqrt();
  SparseMatrix out = inv_sqrt.asDiagonal() * with_loops * inv_sqrt.asDiagonal();
  out.makeCompressed();
  return out;
}

Matrix model_features(const ModelSpec& spec, const DatasetBatch& batch) {
  if (spec.kind != ModelKind::graph_diffusion || !batch.adjacency || spec.diffusion_alpha == 0.0) {
    return batch.inputs;
  }
  const SparseMatrix a_norm = normalized_adjacency(*batch.adjacency);
  Matrix h = batch.inputs;
  for (int step = 0; step < spec.diffusion_steps; ++step) {
    Matrix smoothed = a_norm * h;
    h += spec.diffusion_alpha * (smoothed - h);
  }
  return h;
}

ParameterVector initialize_parameters(const ModelSpec& spec, Rng& rng) {
  const ParameterLayout layout = parameter_layout(spec);
  Vector theta = Vector::Zero(static_cast<Eigen::Index>(layout.total));
  auto fill = [&](std::size_t offset, std::size_t count, int fan_in) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) {
      theta[static_cast<Eigen::Index>(offset + i)] = rng.normal(0.0, scale);
    }
  };
  if (has_hidden_layer(spec)) {
    fill(layout.w_hidden, layout.b_hidden - layout.w_hidden, spec.input_dim);
  }
  fill(layout.w_out, layout.b_out - layout.w_out, head_input_dim(spec));
  return ParameterVector(std::move(theta));
}

Matrix logits(const ModelSpec& spec, const ParameterVector& params, const DatasetBatch& batch) {
  validate(spec, params, batch);
  return run_forward(spec, params.values(), batch).logits;
}

Vector per_sample_losses(const ModelSpec& spec, const ParameterVector& params,
                         const DatasetBatch& batch) {
  validate(spec, params, batch);
  const Forward f = run_forward(spec, params.values(), batch);
  Matrix probs;
  Vector losses;
  softmax_cross_entropy(f.logits, batch.labels, probs, losses);
  return losses;
}

double forward_loss(const ModelSpec& spec, const ParameterVector& params, const DatasetBatch& batch) {
  return per_sample_losses(spec, params, batch).mean();
}

LossGradient loss_and_gradient(const ModelSpec& spec, const ParameterVector& params,
                               const DatasetBatch& batch) {
  validate(spec, params, batch);
  const Forward f = run_forward(spec, params.values(), batch);
  Matrix probs;
  Vector losses;
  softmax_cross_entropy(f.logits, batch.labels, probs, losses);
  const double n = static_cast<double>(batch.size());
  const Matrix d_logits = logit_residuals(probs, batch.labels) / n;

  const ParameterLayout layout = parameter_layout(spec);
  LossGradient out;
  out.loss = losses.mean();
  out.gradient = Vector::Zero(static_cast<Eigen::Index>(layout.total));
  double* g = out.gradient.data();
  const Layers layers = view(spec, params.values());
  if (has_hidden_layer(spec)) {
    RowMap(g + layout.w_out, spec.classes, spec.hidden) = d_logits.transpose() * f.hidden;
    Eigen::Map<Vector>(g + layout.b_out, spec.classes) = d_logits.colwise().sum().transpose();
    const Matrix d_hidden = (d_logits * layers.w_out).array() * (1.0 - f.hidden.array().square());
    RowMap(g + layout.w_hidden, spec.hidden, spec.input_dim) = d_hidden.transpose() * f.features;
    Eigen::Map<Vector>(g + layout.b_hidden, spec.hidden) = d_hidden.colwise().sum().transpose();
  } else {
    RowMap(g + layout.w_out, spec.classes, spec.input_dim) = d_logits.transpose() * f.features;
    Eigen::Map<Vector>(g + layout.b_out, spec.classes) = d_logits.colwise().sum().transpose();
  }
  return out;
}

Matrix per_sample_gradients(const ModelSpec& spec, const ParameterVector& params,
                            const DatasetBatch& batch) {
  validate(spec, params, batch);
  const Forward f = run_forward(spec, params.values(), batch);
  Matrix probs;
  Vector losses;
  softmax_cross_entropy(f.logits, batch.labels, probs, losses);
  const Matrix d_logits = logit_residuals(probs, batch.labels);

  const ParameterLayout layout = parameter_layout(spec);
  const Eigen::Index n = batch.size();
  const int k = spec.classes;
  const int d = spec.input_dim;
  Matrix out = Matrix::Zero(n, static_cast<Eigen::Index>(layout.total));
  const Layers layers = view(spec, params.values());

  Matrix d_hidden;
  if (has_hidden_layer(spec)) {
    d_hidden = (d_logits * layers.w_out).array() * (1.0 - f.hidden.array().square());
  }
  const Matrix& head_in = has_hidden_layer(spec) ? f.hidden : f.features;
  const Eigen::Index head_dim = head_in.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = out.row(i);
    for (int c = 0; c < k; ++c) {
      const double r = d_logits(i, c);
      for (Eigen::Index j = 0; j < head_dim; ++j) {
        row[static_cast<Eigen::Index>(layout.w_out) + c * head_dim + j] = r * head_in(i, j);
      }
      row[static_cast<Eigen::Index>(layout.b_out) + c] = r;
    }
    if (has_hidden_layer(spec)) {
      for (int u = 0; u < spec.hidden; ++u) {
        const double r = d_hidden(i, u);
        for (int j = 0; j < d; ++j) {
          row[static_cast<Eigen::Index>(layout.w_hidden) + u * d + j] = r * f.features(i, j);
        }
        row[static_cast<Eigen::Index>(layout.b_hidden) + u] = r;
      }
    }
  }
  return out;
}

double predict_accuracy(const ModelSpec& spec, const ParameterVector& params,
                        const DatasetBatch& batch) {
  const Matrix z = logits(spec, params, batch);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < z.cols(); ++c) {
      if (z(i, c) > z(i, best)) best = c;  // strict: ties stay at the lowest index
    }
    if (best == batch.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(z.rows());
}

Vector finite_difference_hvp(const GradientFn& gradient, const Vector& at, const Vector& v,
                             double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("hvp step h must be > 0");
  if (v.size() != at.size()) throw std::invalid_argument("hvp direction dimension mismatch");
  if (!v.allFinite()) throw std::invalid_argument("hvp direction must be finite");
  const Vector plus = gradient(at + h * v);
  const Vector minus = gradient(at - h * v);
  return (plus - minus) / (2.0 * h);
}

double default_hvp_step(const ParameterVector& params) {
  return 1e-4 * (1.0 + params.values().cwiseAbs().maxCoeff());
}

Vector hvp(const ModelSpec& spec, const ParameterVector& params, const DatasetBatch& batch,
           const Vector& v, std::optional<double> h) {
  validate(spec, params, batch);
  const double step = h.value_or(default_hvp_step(params));
  // Diffusion is parameter-free; do it once so both gradient calls reuse it.
  DatasetBatch prepared{model_features(spec, batch), batch.labels, std::nullopt};
  const GradientFn grad = [&](const Vector& theta) {
    return loss_and_gradient(spec, ParameterVector(theta), prepared).gradient;
  };
  return finite_difference_hvp(grad, params.values(), v, step);
}

Matrix embeddings(const ModelSpec& spec, const ParameterVector& params, const DatasetBatch& batch) {
  validate(spec, params, batch);
  const Forward f = run_forward(spec, params.values(), batch);
  return has_hidden_layer(spec) ? f.hidden : f.logits;
}

Vector embedding_pullback(const ModelSpec& spec, const ParameterVector& params,
                          const DatasetBatch& batch, const Matrix& upstream) {
  validate(spec, params, batch);
  const Forward f = run_forward(spec, params.values(), batch);
  const ParameterLayout layout = parameter_layout(spec);
  Vector grad = Vector::Zero(static_cast<Eigen::Index>(layout.total));
  double* g = grad.data();
  if (has_hidden_layer(spec)) {
    require(upstream.rows() == batch.size() && upstream.cols() == spec.hidden,
            "embedding upstream shape mismatch");
    const Matrix d_hidden = upstream.array() * (1.0 - f.hidden.array().square());
    RowMap(g + layout.w_hidden, spec.hidden, spec.input_dim) = d_hidden.transpose() * f.features;
    Eigen::Map<Vector>(g + layout.b_hidden, spec.hidden) = d_hidden.colwise().sum().transpose();
  } else {
    require(upstream.rows() == batch.size() && upstream.cols() == spec.classes,
            "embedding upstream shape mismatch");
    RowMap(g + layout.w_out, spec.classes, spec.input_dim) = upstream.transpose() * f.features;
    Eigen::Map<Vector>(g + layout.b_out, spec.classes) = upstream.colwise().sum().transpose();
  }
  return grad;
}

}  // namespace batchcausal
