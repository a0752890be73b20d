#include "pdrl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pdrl/error.hpp"
#include "pdrl/rng.hpp"

namespace pdrl::baselines {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_query(const ScalerStats& scaler, Eigen::Index size) {
  if (static_cast<std::size_t>(size) != scaler.dim())
    throw ValidationError("query width " + std::to_string(size) + " does not match fitted width " +
                          std::to_string(scaler.dim()));
}

Vector standardize_one(const ScalerStats& scaler, const Eigen::Ref<const Vector>& x) {
  check_query(scaler, x.size());
  return ((x - scaler.mean).array() / scaler.std.array()).matrix();
}

double log_sum_exp(const Vector& terms) {
  const double top = terms.maxCoeff();
  if (top == kNegInf) return kNegInf;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < terms.size(); ++i) acc += std::exp(terms(i) - top);
  return top + std::log(acc);
}

/// log w_c + log N(x; mu_c, diag(var_c)) for every component.
Vector component_log_terms(const GmmModel& model, const Eigen::Ref<const Vector>& x) {
  const auto k = static_cast<Eigen::Index>(model.n_components());
  const auto d = model.means.cols();
  constexpr double log_two_pi = 1.8378770664093454835606594728112;  // ln(2 pi)
  Vector terms(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    if (model.weights(c) <= 0.0) {
      terms(c) = kNegInf;
      continue;
    }
    double quad = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double var = model.variances(c, j);
      const double diff = x(j) - model.means(c, j);
      quad += std::log(var) + log_two_pi + diff * diff / var;
    }
    terms(c) = std::log(model.weights(c)) - 0.5 * quad;
  }
  return terms;
}

Matrix kmeans_pp_seeds(const Matrix& x, std::size_t k, Rng& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  Matrix seeds(static_cast<Eigen::Index>(k), x.cols());
  seeds.row(0) = x.row(static_cast<Eigen::Index>(rng.below(n)));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dist = (x.row(static_cast<Eigen::Index>(i)) - seeds.row(static_cast<Eigen::Index>(c - 1))).squaredNorm();
      nearest[i] = std::min(nearest[i], dist);
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cumulative = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        cumulative += nearest[i];
        if (cumulative > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    seeds.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(pick));
  }
  return seeds;
}

nlohmann::ordered_json matrix_json(const Matrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::ordered_json vector_json(const Vector& v) {
  auto arr = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index cols) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Matrix m(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<Eigen::Index>(rows[r].size()) != cols) throw ValidationError("ragged matrix in model file");
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  }
  return m;
}

nlohmann::ordered_json scaler_json(const ScalerStats& s) {
  return {{"mean", vector_json(s.mean)}, {"std", vector_json(s.std)}};
}

ScalerStats scaler_from_json(const nlohmann::json& j) {
  ScalerStats s{vector_from_json(j.at("mean")), vector_from_json(j.at("std"))};
  if (s.mean.size() == 0 || s.mean.size() != s.std.size()) throw ValidationError("scaler dimensions are inconsistent");
  if ((s.std.array() <= 0.0).any()) throw ValidationError("scaler std must be positive");
  return s;
}

/// Population mean and std of values, summed in ascending order. The mean is
/// accumulated as an offset from the smallest value so equal values give 0.
std::pair<double, double> population_moments(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double offset = 0.0;
  for (double v : values) offset += v - values.front();
  const double mean = values.front() + offset / n;
  std::vector<double> sq;
  sq.reserve(values.size());
  for (double v : values) sq.push_back((v - mean) * (v - mean));
  return {mean, std::sqrt(ordered_sum(std::move(sq)) / n)};
}

}  // namespace

KnnIndex knn_fit(const ResidualDataset& train, std::size_t k, bool standardize) {
  if (k == 0) throw ValidationError("k must be positive");
  const auto atoms = train.total_atoms();
  if (atoms < k)
    throw ValidationError("k = " + std::to_string(k) + " exceeds the " + std::to_string(atoms) + " training atoms");
  KnnIndex index;
  index.k = k;
  index.scaler = standardize ? fit_scaler(train) : ScalerStats::identity(train.d_desc);
  index.points = standardize_apply(index.scaler, train.stacked_descriptors());
  return index;
}

double knn_score_standardized(const KnnIndex& index, const Eigen::Ref<const Vector>& query) {
  check_query(index.scaler, query.size());
  const auto n = index.points.rows();
  const auto d = index.points.cols();
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double diff = index.points(i, j) - query(j);
      acc += diff * diff;
    }
    dist[static_cast<std::size_t>(i)] = std::sqrt(acc);
  }
  const auto k = static_cast<std::ptrdiff_t>(index.k);
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
  double sum = 0.0;
  for (std::ptrdiff_t i = 0; i < k; ++i) sum += dist[static_cast<std::size_t>(i)];
  return sum / static_cast<double>(index.k);
}

double knn_score(const KnnIndex& index, const Eigen::Ref<const Vector>& descriptor) {
  return knn_score_standardized(index, standardize_one(index.scaler, descriptor));
}

GmmModel gmm_fit_points(const Matrix& x, std::size_t n_components, std::uint64_t seed) {
  if (n_components == 0) throw ValidationError("n_components must be positive");
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < n_components)
    throw ValidationError("GMM with " + std::to_string(n_components) + " components needs at least as many points, got " +
                          std::to_string(n));
  const auto k = static_cast<Eigen::Index>(n_components);
  const auto d = x.cols();

  Rng rng(seed);
  GmmModel model;
  model.scaler = ScalerStats::identity(static_cast<std::size_t>(d));
  model.means = kmeans_pp_seeds(x, n_components, rng);
  model.weights = Vector::Constant(k, 1.0 / static_cast<double>(n_components));
  const Vector global_mean = x.colwise().mean().transpose();
  Vector global_var = ((x.rowwise() - global_mean.transpose()).array().square().colwise().sum() /
                       static_cast<double>(n)).transpose();
  global_var = global_var.cwiseMax(kCovarianceFloor);
  model.variances = global_var.transpose().replicate(k, 1);

  Matrix resp(x.rows(), k);
  for (std::size_t iter = 0; iter < kEmMaxIterations; ++iter) {
    // E-step
    double total_ll = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vector terms = component_log_terms(model, x.row(i).transpose());
      const double ll = log_sum_exp(terms);
      total_ll += ll;
      for (Eigen::Index c = 0; c < k; ++c) resp(i, c) = std::exp(terms(c) - ll);
    }
    const double mean_ll = total_ll / static_cast<double>(n);
    const bool converged =
        !model.log_likelihood_trace.empty() && mean_ll - model.log_likelihood_trace.back() < kEmTolerance;
    model.log_likelihood_trace.push_back(mean_ll);
    if (converged) break;

    // M-step
    for (Eigen::Index c = 0; c < k; ++c) {
      const double nk = resp.col(c).sum();
      model.weights(c) = nk / static_cast<double>(n);
      if (nk <= std::numeric_limits<double>::min()) continue;
      const Vector mean = (resp.col(c).transpose() * x).transpose() / nk;
      Vector var = Vector::Zero(d);
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        var += resp(i, c) * (x.row(i).transpose() - mean).array().square().matrix();
      model.means.row(c) = mean.transpose();
      model.variances.row(c) = (var / nk).cwiseMax(kCovarianceFloor).transpose();
    }
    model.weights /= model.weights.sum();
  }
  return model;
}

GmmModel gmm_fit(const ResidualDataset& train, std::size_t n_components, std::uint64_t seed, bool standardize) {
  if (train.records.empty()) throw ValidationError("cannot fit a GMM on an empty dataset");
  const ScalerStats scaler = standardize ? fit_scaler(train) : ScalerStats::identity(train.d_desc);
  GmmModel model = gmm_fit_points(standardize_apply(scaler, train.stacked_descriptors()), n_components, seed);
  model.scaler = scaler;
  return model;
}

double gmm_score_standardized(const GmmModel& model, const Eigen::Ref<const Vector>& x) {
  if (x.size() != model.means.cols()) throw ValidationError("query width does not match the mixture");
  Vector terms = component_log_terms(model, x);
  // Sorted so the result does not depend on component labelling.
  std::sort(terms.data(), terms.data() + terms.size());
  return -log_sum_exp(terms);
}

double gmm_score(const GmmModel& model, const Eigen::Ref<const Vector>& descriptor) {
  return gmm_score_standardized(model, standardize_one(model.scaler, descriptor));
}

Disagreement disagreement_scores(const StructureRecord& record) {
  if (!record.has_ensemble() || record.ensemble_energy_preds.size() < 2)
    throw ValidationError("structure '" + record.id + "' has no ensemble predictions");
  Disagreement out;
  out.energy = population_moments(record.ensemble_energy_preds).second;
  const auto n = static_cast<Eigen::Index>(record.n_atoms());
  out.forces.resize(n);
  std::vector<double> member_values(record.ensemble_force_preds.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    double sq = 0.0;
    for (Eigen::Index c = 0; c < 3; ++c) {
      for (std::size_t m = 0; m < member_values.size(); ++m) member_values[m] = record.ensemble_force_preds[m](j, c);
      const double sigma = population_moments(member_values).second;
      sq += sigma * sigma;
    }
    out.forces(j) = std::sqrt(sq);
  }
  return out;
}

nlohmann::ordered_json to_json(const KnnIndex& index) {
  nlohmann::ordered_json j;
  j["type"] = "knn";
  j["k"] = index.k;
  j["scaler"] = scaler_json(index.scaler);
  j["points"] = matrix_json(index.points);
  return j;
}

nlohmann::ordered_json to_json(const GmmModel& model) {
  nlohmann::ordered_json j;
  j["type"] = "gmm";
  j["n_components"] = model.n_components();
  j["covariance"] = "diagonal";
  j["scaler"] = scaler_json(model.scaler);
  j["weights"] = vector_json(model.weights);
  j["means"] = matrix_json(model.means);
  j["variances"] = matrix_json(model.variances);
  j["log_likelihood_trace"] = model.log_likelihood_trace;
  return j;
}

KnnIndex knn_from_json(const nlohmann::json& j) {
  try {
    if (j.value("type", std::string()) != "knn") throw ValidationError("not a kNN model");
    KnnIndex index;
    index.k = j.at("k").get<std::size_t>();
    index.scaler = scaler_from_json(j.at("scaler"));
    index.points = matrix_from_json(j.at("points"), static_cast<Eigen::Index>(index.scaler.dim()));
    if (index.k == 0 || index.k > static_cast<std::size_t>(index.points.rows()))
      throw ValidationError("k is inconsistent with the stored points");
    return index;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed kNN model: ") + e.what());
  }
}

GmmModel gmm_from_json(const nlohmann::json& j) {
  try {
    if (j.value("type", std::string()) != "gmm") throw ValidationError("not a GMM model");
    GmmModel model;
    model.scaler = scaler_from_json(j.at("scaler"));
    const auto d = static_cast<Eigen::Index>(model.scaler.dim());
    model.weights = vector_from_json(j.at("weights"));
    model.means = matrix_from_json(j.at("means"), d);
    model.variances = matrix_from_json(j.at("variances"), d);
    if (j.contains("log_likelihood_trace"))
      model.log_likelihood_trace = j.at("log_likelihood_trace").get<std::vector<double>>();
    if (model.weights.size() == 0 || model.means.rows() != model.weights.size() ||
        model.variances.rows() != model.weights.size())
      throw ValidationError("mixture component counts are inconsistent");
    if (std::abs(model.weights.sum() - 1.0) > 1e-9 || (model.weights.array() < 0.0).any())
      throw ValidationError("mixture weights must form a simplex");
    if ((model.variances.array() < kCovarianceFloor).any())
      throw ValidationError("variances below the covariance floor");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed GMM model: ") + e.what());
  }
}

}  // namespace pdrl::baselines
