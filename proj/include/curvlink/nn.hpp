#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace curvlink {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Activation { kRelu, kTanh };
enum class LossKind { kCrossEntropy, kClampedCrossEntropy, kSquaredError };

struct ModelSpec {
  // Input dimension first, class count last.
  std::vector<int> layer_dims;
  Activation activation = Activation::kTanh;
  LossKind loss = LossKind::kCrossEntropy;
  // Upper bound L of the clamped loss; ignored by the other kinds.
  double clamp_bound = 1.0;

  void validate() const;
  int input_dim() const { return layer_dims.front(); }
  int num_classes() const { return layer_dims.back(); }
  int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  std::size_t parameter_count() const;
  bool operator==(const ModelSpec&) const = default;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::optional<std::int64_t> mask_id;
  std::string train_config_digest;
  bool operator==(const Provenance&) const = default;
};

// One dense layer: out = weight * in + bias, weight is (fan_out x fan_in).
struct Layer {
  Matrix weight;
  Vector bias;
};

// A trained or freshly initialized MLP. Value type; treat as immutable once
// handed out of the trainer.
struct Model {
  ModelSpec spec;
  std::vector<Layer> layers;
  Provenance provenance;

  void validate() const;
};

struct Example {
  Vector x;
  int y = 0;
  std::int64_t sample_id = 0;
  int subpop_id = 0;
};

const char* to_string(Activation a);
const char* to_string(LossKind k);
Activation activation_from_string(const std::string& s);
LossKind loss_from_string(const std::string& s);

// Glorot-uniform weights in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero biases.
Model mlp_init(const ModelSpec& spec, std::uint64_t seed);

Vector logits(const Model& model, const Vector& x);
// Argmax of the logits; ties go to the smallest class index.
int predict(const Model& model, const Vector& x);

// Predictions for every column of X.
std::vector<int> predict_batch(const Model& model, const Matrix& X);
// Per-sample losses for every column of X.
Vector losses_batch(const Model& model, const Matrix& X, std::span<const int> labels);

double loss_at(const Model& model, const Vector& x, int y);
double loss_eval(const Model& model, const Example& z);

// Gradient of the loss with respect to the input features.
Vector grad_input_at(const Model& model, const Vector& x, int y);
Vector grad_input(const Model& model, const Example& z);

// Flattening order for weight-space vectors: layer by layer, weight row-major
// followed by bias.
Vector flatten(std::span<const Layer> layers);
std::vector<Layer> zeros_like(const Model& model);

// Forward and backward pass over a batch held as columns of X. Keeps the
// per-layer deltas so per-sample gradients, their norms and weighted sums can
// be formed without another pass.
class BatchPass {
 public:
  BatchPass(const Model& model, const Matrix& X, std::span<const int> labels);

  const Vector& losses() const { return losses_; }
  const Matrix& logits() const { return logits_; }
  int batch_size() const { return static_cast<int>(losses_.size()); }

  // Squared l2 norm of each sample's full weight gradient.
  Vector per_sample_sq_norms() const;
  // sum_i coeffs[i] * grad_i, in layer form.
  std::vector<Layer> weighted_sum(const Vector& coeffs) const;
  // Gradient of sample i, flattened.
  Vector sample_gradient(int i) const;
  // Input gradients, one column per sample.
  Matrix input_grads() const;

 private:
  const Model& model_;
  std::vector<Matrix> inputs_;  // activation feeding layer l, one column per sample
  std::vector<Matrix> deltas_;  // dloss/dpre-activation at layer l
  Vector losses_;
  Matrix logits_;
};

std::vector<Vector> grad_weights_per_sample(const Model& model, std::span<const Example> batch);
// Mean gradient of the batch from one batched pass.
Vector grad_weights_batch(const Model& model, std::span<const Example> batch);

// Central differences of grad_input, before symmetrization. d <= 64.
Matrix raw_input_hessian(const Model& model, const Example& z, double step = 1e-4);
// (H + H^T) / 2 of raw_input_hessian.
Matrix exact_input_hessian(const Model& model, const Example& z, double step = 1e-4);

constexpr int kMaxOracleDim = 64;

Matrix stack_inputs(std::span<const Example> batch);

}  // namespace curvlink
