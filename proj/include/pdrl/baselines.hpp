#pragma once

// Comparison scorers: k-nearest-neighbour descriptor distance, Gaussian mixture
// negative log-likelihood, and spread across ensemble / stochastic predictions.
// kNN and GMM score atoms; they carry no separate energy and force notion.

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "pdrl/core.hpp"

namespace pdrl::baselines {

inline constexpr std::size_t kDefaultK = 10;
inline constexpr std::size_t kDefaultComponents = 8;
inline constexpr double kCovarianceFloor = 1e-6;
inline constexpr double kEmTolerance = 1e-7;
inline constexpr std::size_t kEmMaxIterations = 500;

struct KnnIndex {
  std::size_t k = kDefaultK;
  Matrix points;  // standardized training atoms
  ScalerStats scaler;
};

KnnIndex knn_fit(const ResidualDataset& train, std::size_t k, bool standardize = true);

/// Mean Euclidean distance, in standardized space, to the k nearest stored atoms.
double knn_score(const KnnIndex& index, const Eigen::Ref<const Vector>& descriptor);

/// Same search for a query that is already standardized.
double knn_score_standardized(const KnnIndex& index, const Eigen::Ref<const Vector>& query);

struct GmmModel {
  Vector weights;     // n_components, sums to 1
  Matrix means;       // n_components x d
  Matrix variances;   // n_components x d, diagonal covariances, floored
  ScalerStats scaler;
  std::vector<double> log_likelihood_trace;  // mean per-point log-likelihood at each E-step

  std::size_t n_components() const { return static_cast<std::size_t>(weights.size()); }
};

/// EM with diagonal covariances on standardized descriptors, k-means++ seeding.
GmmModel gmm_fit(const ResidualDataset& train, std::size_t n_components, std::uint64_t seed,
                 bool standardize = true);
GmmModel gmm_fit_points(const Matrix& standardized, std::size_t n_components, std::uint64_t seed);

/// Negative log-likelihood of a raw descriptor; higher means less familiar.
double gmm_score(const GmmModel& model, const Eigen::Ref<const Vector>& descriptor);
double gmm_score_standardized(const GmmModel& model, const Eigen::Ref<const Vector>& x);

struct Disagreement {
  double energy = 0.0;  // population std of member energies
  Vector forces;        // per atom: norm of per-component population std
};

Disagreement disagreement_scores(const StructureRecord& record);

nlohmann::ordered_json to_json(const KnnIndex& index);
nlohmann::ordered_json to_json(const GmmModel& model);
KnnIndex knn_from_json(const nlohmann::json& j);
GmmModel gmm_from_json(const nlohmann::json& j);

}  // namespace pdrl::baselines
