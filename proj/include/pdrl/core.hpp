#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pdrl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// One atomic structure: per-atom descriptors plus reference and predicted labels.
/// Positions are not stored; everything downstream consumes descriptors only.
struct StructureRecord {
  std::string id;
  std::string split;  // empty when the file carries no split tag
  std::vector<int> atomic_numbers;
  Matrix descriptors;  // n_atoms x d_desc
  double energy_true = 0.0;  // eV
  double energy_pred = 0.0;  // eV
  Matrix forces_true;  // n_atoms x 3, eV/A
  Matrix forces_pred;  // n_atoms x 3, eV/A
  std::vector<double> ensemble_energy_preds;  // M members, empty if absent
  std::vector<Matrix> ensemble_force_preds;  // M matrices of n_atoms x 3, empty if absent

  std::size_t n_atoms() const { return static_cast<std::size_t>(descriptors.rows()); }
  std::size_t d_desc() const { return static_cast<std::size_t>(descriptors.cols()); }
  bool has_ensemble() const { return !ensemble_energy_preds.empty(); }
};

struct ResidualRecord {
  std::string structure_id;
  Matrix descriptors;
  double delta_e = 0.0;  // energy_true - energy_pred
  Matrix delta_f;  // forces_true - forces_pred, n_atoms x 3
};

/// Training set for residual learning: descriptors paired with residual labels.
struct ResidualDataset {
  std::vector<ResidualRecord> records;
  std::size_t d_desc = 0;

  std::size_t total_atoms() const;
  /// All atom descriptors stacked in record order.
  Matrix stacked_descriptors() const;
};

/// Per-dimension standardization statistics (population std, floored).
struct ScalerStats {
  static constexpr double kEpsilonStd = 1e-8;

  Vector mean;
  Vector std;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  static ScalerStats identity(std::size_t dim);
};

/// Throws ValidationError if the records violate any dataset invariant:
/// shape consistency, finiteness, shared d_desc, shared ensemble size.
void validate_records(std::span<const StructureRecord> records);

std::vector<StructureRecord> parse_dataset(const std::string& text);
std::vector<StructureRecord> load_dataset(const std::filesystem::path& path);

/// One JSON object per line, newline-terminated.
std::string serialize_dataset(std::span<const StructureRecord> records);
void save_dataset(const std::filesystem::path& path, std::span<const StructureRecord> records);

ResidualDataset compute_residuals(std::span<const StructureRecord> records);

ScalerStats fit_scaler(const ResidualDataset& train);
ScalerStats fit_scaler(const Matrix& rows);

Matrix standardize_apply(const ScalerStats& stats, const Matrix& descriptors);
Matrix unstandardize_apply(const ScalerStats& stats, const Matrix& standardized);

/// Sum of the values in ascending order, so the result does not depend on input order.
double ordered_sum(std::vector<double> values);
double ordered_mean(std::vector<double> values);

}  // namespace pdrl
