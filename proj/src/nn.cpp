#include "curvlink/nn.hpp"

#include <cmath>

#include "curvlink/errors.hpp"
#include "curvlink/rng.hpp"

namespace curvlink {

void ModelSpec::validate() const {
  if (layer_dims.size() < 2)
    throw ConfigError("model spec needs at least two layer dims (input and classes)");
  for (int d : layer_dims)
    if (d < 1) throw ConfigError("model spec layer dims must be >= 1");
  if (loss == LossKind::kClampedCrossEntropy && !(clamp_bound > 0.0))
    throw ConfigError("clamped loss bound L must be > 0");
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l)
    n += static_cast<std::size_t>(layer_dims[l + 1]) * (layer_dims[l] + 1);
  return n;
}

void Model::validate() const {
  spec.validate();
  if (static_cast<int>(layers.size()) != spec.num_layers())
    throw ConfigError("layer count does not match spec");
  for (int l = 0; l < spec.num_layers(); ++l) {
    const auto& L = layers[l];
    if (L.weight.rows() != spec.layer_dims[l + 1] || L.weight.cols() != spec.layer_dims[l] ||
        L.bias.size() != spec.layer_dims[l + 1])
      throw ConfigError("layer " + std::to_string(l) + " shape does not chain with spec");
    if (!L.weight.allFinite() || !L.bias.allFinite())
      throw NumericError("non-finite weight in layer " + std::to_string(l));
  }
}

const char* to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::kCrossEntropy: return "cross_entropy";
    case LossKind::kClampedCrossEntropy: return "clamped_cross_entropy";
    case LossKind::kSquaredError: return "squared_error";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + s + "'");
}

LossKind loss_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::kCrossEntropy;
  if (s == "clamped_cross_entropy") return LossKind::kClampedCrossEntropy;
  if (s == "squared_error") return LossKind::kSquaredError;
  throw ConfigError("unknown loss '" + s + "'");
}

Model mlp_init(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = spec;
  m.provenance.seed = seed;
  CounterRng rng(seed, Purpose::kInit);
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.layer_dims[l];
    const int fan_out = spec.layer_dims[l + 1];
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    Layer layer{Matrix(fan_out, fan_in), Vector::Zero(fan_out)};
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = s * (2.0 * rng.uniform() - 1.0);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

namespace {

// Loss of one logit column and its gradient with respect to the logits.
double column_loss(const ModelSpec& spec, const Eigen::Ref<const Vector>& o, int y,
                   Eigen::Ref<Vector> dlogits) {
  const int k = static_cast<int>(o.size());
  if (y < 0 || y >= k) throw ConfigError("label " + std::to_string(y) + " out of range");
  if (!o.allFinite()) throw NumericError("non-finite activations in forward pass");
  const double mx = o.maxCoeff();
  const double lse = mx + std::log((o.array() - mx).exp().sum());
  const Vector p = (o.array() - lse).exp().matrix();

  switch (spec.loss) {
    case LossKind::kCrossEntropy:
    case LossKind::kClampedCrossEntropy: {
      double loss = lse - o(y);
      dlogits = p;
      dlogits(y) -= 1.0;
      if (spec.loss == LossKind::kClampedCrossEntropy && loss >= spec.clamp_bound) {
        loss = spec.clamp_bound;
        dlogits.setZero();
      }
      return loss;
    }
    case LossKind::kSquaredError: {
      Vector diff = p;
      diff(y) -= 1.0;
      const Vector gp = 2.0 * diff;
      const double dot = p.dot(gp);
      dlogits = (p.array() * (gp.array() - dot)).matrix();
      return diff.squaredNorm();
    }
  }
  return 0.0;
}

void apply_activation(Activation a, Matrix& z) {
  if (a == Activation::kTanh)
    z = z.array().tanh().matrix();
  else
    z = z.cwiseMax(0.0);
}

// Derivative expressed through the post-activation value.
void mul_activation_grad(Activation a, const Matrix& post, Matrix& delta) {
  if (a == Activation::kTanh)
    delta.array() *= (1.0 - post.array().square());
  else
    delta.array() *= (post.array() > 0.0).cast<double>();
}

Matrix forward_logits(const Model& model, const Matrix& X) {
  Matrix a = X;
  const int L = model.spec.num_layers();
  for (int l = 0; l < L; ++l) {
    Matrix z = model.layers[l].weight * a;
    z.colwise() += model.layers[l].bias;
    if (l + 1 < L) apply_activation(model.spec.activation, z);
    a = std::move(z);
  }
  return a;
}

void check_input(const Model& model, const Vector& x) {
  if (x.size() != model.spec.input_dim())
    throw ConfigError("input dimension " + std::to_string(x.size()) + " != model input dim " +
                      std::to_string(model.spec.input_dim()));
}

}  // namespace

Vector logits(const Model& model, const Vector& x) {
  check_input(model, x);
  return forward_logits(model, x);
}

int predict(const Model& model, const Vector& x) {
  const Vector o = logits(model, x);
  int best = 0;
  for (int k = 1; k < o.size(); ++k)
    if (o(k) > o(best)) best = k;
  return best;
}

std::vector<int> predict_batch(const Model& model, const Matrix& X) {
  if (X.rows() != model.spec.input_dim()) throw ConfigError("input dimension mismatch");
  const Matrix o = forward_logits(model, X);
  std::vector<int> out(static_cast<std::size_t>(o.cols()));
  for (Eigen::Index i = 0; i < o.cols(); ++i) {
    int best = 0;
    for (int k = 1; k < o.rows(); ++k)
      if (o(k, i) > o(best, i)) best = k;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

Vector losses_batch(const Model& model, const Matrix& X, std::span<const int> labels) {
  if (X.rows() != model.spec.input_dim()) throw ConfigError("input dimension mismatch");
  if (static_cast<std::size_t>(X.cols()) != labels.size()) throw ConfigError("label count mismatch");
  const Matrix o = forward_logits(model, X);
  Vector out(o.cols());
  Vector g(o.rows());
  for (Eigen::Index i = 0; i < o.cols(); ++i) out(i) = column_loss(model.spec, o.col(i), labels[i], g);
  return out;
}

double loss_at(const Model& model, const Vector& x, int y) {
  const Vector o = logits(model, x);
  Vector g(o.size());
  return column_loss(model.spec, o, y, g);
}

double loss_eval(const Model& model, const Example& z) { return loss_at(model, z.x, z.y); }

BatchPass::BatchPass(const Model& model, const Matrix& X, std::span<const int> labels)
    : model_(model) {
  if (X.rows() != model.spec.input_dim())
    throw ConfigError("input dimension " + std::to_string(X.rows()) + " != model input dim " +
                      std::to_string(model.spec.input_dim()));
  if (static_cast<std::size_t>(X.cols()) != labels.size())
    throw ConfigError("batch label count mismatch");
  const int L = model.spec.num_layers();
  inputs_.reserve(L);
  inputs_.push_back(X);
  Matrix out;
  for (int l = 0; l < L; ++l) {
    Matrix z = model.layers[l].weight * inputs_.back();
    z.colwise() += model.layers[l].bias;
    if (l + 1 < L) {
      apply_activation(model.spec.activation, z);
      inputs_.push_back(std::move(z));
    } else {
      out = std::move(z);
    }
  }
  const int B = static_cast<int>(X.cols());
  losses_.resize(B);
  Matrix delta(out.rows(), B);
  for (int i = 0; i < B; ++i) {
    Vector g(out.rows());
    losses_(i) = column_loss(model.spec, out.col(i), labels[i], g);
    delta.col(i) = g;
  }
  logits_ = std::move(out);
  deltas_.resize(L);
  for (int l = L - 1; l >= 0; --l) {
    if (l > 0) {
      Matrix next = model.layers[l].weight.transpose() * delta;
      mul_activation_grad(model.spec.activation, inputs_[l], next);
      deltas_[l] = std::move(delta);
      delta = std::move(next);
    } else {
      deltas_[l] = std::move(delta);
    }
  }
}

Vector BatchPass::per_sample_sq_norms() const {
  Vector n = Vector::Zero(batch_size());
  for (std::size_t l = 0; l < deltas_.size(); ++l) {
    const Vector d2 = deltas_[l].colwise().squaredNorm().transpose();
    const Vector a2 = inputs_[l].colwise().squaredNorm().transpose();
    n.array() += d2.array() * (a2.array() + 1.0);
  }
  return n;
}

std::vector<Layer> BatchPass::weighted_sum(const Vector& coeffs) const {
  std::vector<Layer> out;
  out.reserve(deltas_.size());
  for (std::size_t l = 0; l < deltas_.size(); ++l) {
    const Matrix scaled = deltas_[l] * coeffs.asDiagonal();
    out.push_back(Layer{scaled * inputs_[l].transpose(), scaled.rowwise().sum()});
  }
  return out;
}

Vector BatchPass::sample_gradient(int i) const {
  std::vector<Layer> g;
  for (std::size_t l = 0; l < deltas_.size(); ++l)
    g.push_back(Layer{deltas_[l].col(i) * inputs_[l].col(i).transpose(), deltas_[l].col(i)});
  return flatten(g);
}

Matrix BatchPass::input_grads() const {
  return model_.layers.front().weight.transpose() * deltas_.front();
}

Vector grad_input_at(const Model& model, const Vector& x, int y) {
  check_input(model, x);
  const int labels[1] = {y};
  return BatchPass(model, x, labels).input_grads().col(0);
}

Vector grad_input(const Model& model, const Example& z) { return grad_input_at(model, z.x, z.y); }

Vector flatten(std::span<const Layer> layers) {
  std::size_t n = 0;
  for (const auto& L : layers) n += L.weight.size() + L.bias.size();
  Vector out(n);
  std::size_t k = 0;
  for (const auto& L : layers) {
    for (int r = 0; r < L.weight.rows(); ++r)
      for (int c = 0; c < L.weight.cols(); ++c) out(k++) = L.weight(r, c);
    for (int r = 0; r < L.bias.size(); ++r) out(k++) = L.bias(r);
  }
  return out;
}

std::vector<Layer> zeros_like(const Model& model) {
  std::vector<Layer> out;
  for (const auto& L : model.layers)
    out.push_back(Layer{Matrix::Zero(L.weight.rows(), L.weight.cols()), Vector::Zero(L.bias.size())});
  return out;
}

Matrix stack_inputs(std::span<const Example> batch) {
  if (batch.empty()) throw ConfigError("empty batch");
  Matrix X(batch.front().x.size(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].x.size() != X.rows()) throw ConfigError("ragged batch");
    X.col(static_cast<Eigen::Index>(i)) = batch[i].x;
  }
  return X;
}

namespace {
std::vector<int> labels_of(std::span<const Example> batch) {
  std::vector<int> y;
  y.reserve(batch.size());
  for (const auto& z : batch) y.push_back(z.y);
  return y;
}
}  // namespace

std::vector<Vector> grad_weights_per_sample(const Model& model, std::span<const Example> batch) {
  const auto y = labels_of(batch);
  BatchPass pass(model, stack_inputs(batch), y);
  std::vector<Vector> out;
  out.reserve(batch.size());
  for (int i = 0; i < pass.batch_size(); ++i) out.push_back(pass.sample_gradient(i));
  return out;
}

Vector grad_weights_batch(const Model& model, std::span<const Example> batch) {
  const auto y = labels_of(batch);
  BatchPass pass(model, stack_inputs(batch), y);
  const Vector c = Vector::Constant(pass.batch_size(), 1.0 / pass.batch_size());
  return flatten(pass.weighted_sum(c));
}

Matrix raw_input_hessian(const Model& model, const Example& z, double step) {
  const int d = model.spec.input_dim();
  if (d > kMaxOracleDim)
    throw ConfigError("exact input Hessian is an oracle for d <= 64; got d=" + std::to_string(d));
  check_input(model, z.x);
  // All 2d perturbed inputs go through one batched pass.
  Matrix X(d, 2 * d);
  for (int j = 0; j < d; ++j) {
    X.col(2 * j) = z.x;
    X.col(2 * j + 1) = z.x;
    X(j, 2 * j) += step;
    X(j, 2 * j + 1) -= step;
  }
  std::vector<int> y(2 * d, z.y);
  const Matrix G = BatchPass(model, X, y).input_grads();
  Matrix H(d, d);
  for (int j = 0; j < d; ++j) H.col(j) = (G.col(2 * j) - G.col(2 * j + 1)) / (2.0 * step);
  return H;
}

Matrix exact_input_hessian(const Model& model, const Example& z, double step) {
  const Matrix H = raw_input_hessian(model, z, step);
  return 0.5 * (H + H.transpose());
}

}  // namespace curvlink
