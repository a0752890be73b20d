#pragma once

// Small fully connected network used by every residual head.
//
// Layout: input -> [affine -> ReLU] x hidden -> affine -> optional softplus.
// Training objective over a GroupedSet with G groups:
//
//   L = (1/G) * sum_g || sum_{j in g} net(x_j) - y_g ||^2
//
// Per-atom regression is the special case of singleton groups; the
// structure-wise energy loss sums the per-atom outputs of each structure.

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "pdrl/core.hpp"

namespace pdrl::mlp {

struct MlpLayout {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  bool output_softplus = false;

  void validate() const;
  bool operator==(const MlpLayout&) const = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct MlpModel {
  MlpLayout layout;
  std::vector<DenseLayer> layers;
  ScalerStats scaler;  // applied by scoring paths before mlp_forward
};

/// Same shape as MlpModel::layers.
using Gradients = std::vector<DenseLayer>;

/// Supervised samples grouped for the summed-output loss above.
struct GroupedSet {
  Matrix inputs;   // atoms x input_dim, already standardized
  Matrix targets;  // groups x output_dim
  std::vector<std::size_t> offsets;  // groups + 1 row offsets into inputs

  std::size_t groups() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  void validate(std::size_t input_dim, std::size_t output_dim) const;

  /// One group per input row.
  static GroupedSet per_sample(Matrix inputs, Matrix targets);
};

struct TrainSchedule {
  double initial_lr = 1e-3;
  std::size_t patience = 10;
  double lr_decay = 0.5;
  double min_lr = 1e-7;
  std::size_t max_epochs = 1000;
  std::size_t batch_size = 64;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the evaluation before any update
  double train_mse = 0.0;
  double val_mse = 0.0;
  double lr = 0.0;  // learning rate used during this epoch
};

struct TrainResult {
  MlpModel model;  // parameters with the best validation MSE
  std::vector<EpochRecord> history;
  double best_val_mse = 0.0;
  std::size_t best_epoch = 0;
};

// Adam constants, recorded in serialized models.
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;
// Validation MSE must drop by at least this much to count as an improvement.
inline constexpr double kImprovementThreshold = 1e-12;

struct AdamState {
  Gradients first_moment;
  Gradients second_moment;
  std::uint64_t step = 0;

  static AdamState zeros_like(const MlpModel& model);
};

double softplus(double z);
double sigmoid(double z);

MlpModel mlp_init(const MlpLayout& layout, std::uint64_t seed);

Vector mlp_forward(const MlpModel& model, const Eigen::Ref<const Vector>& x);
/// Row-wise forward pass; inputs are atoms x input_dim.
Matrix mlp_forward_batch(const MlpModel& model, const Matrix& inputs);

/// Loss over the listed groups (all groups when `groups` is empty).
double mlp_loss(const MlpModel& model, const GroupedSet& set, std::span<const std::size_t> groups = {});

struct LossAndGradients {
  double loss = 0.0;
  Gradients gradients;
};

/// Exact reverse-mode gradient of the loss over the listed groups (nonempty).
LossAndGradients mlp_gradient(const MlpModel& model, const GroupedSet& set,
                              std::span<const std::size_t> groups);

void optimizer_step(MlpModel& model, AdamState& state, const Gradients& grads, double lr);

TrainResult train_loop(const MlpModel& initial, const GroupedSet& train, const GroupedSet& val,
                       const TrainSchedule& schedule, std::uint64_t seed);

/// Flattened parameter view, layer by layer: weights row-major then bias.
std::vector<double> flatten_parameters(const std::vector<DenseLayer>& layers);
void assign_parameters(std::vector<DenseLayer>& layers, std::span<const double> flat);

nlohmann::ordered_json mlp_to_json(const MlpModel& model);
MlpModel mlp_from_json(const nlohmann::json& j);

}  // namespace pdrl::mlp
