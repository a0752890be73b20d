#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pdrl/core.hpp"
#include "pdrl/scores.hpp"

namespace pdrl::eval {

enum class Target { kEnergy, kForce };
enum class Metric { kSpearman, kAuc };

Target parse_target(const std::string& name);
std::string to_string(Target target);
std::string to_string(Metric metric);

inline constexpr double kDefaultLowQuantile = 0.2;

struct EvalReport {
  std::string scorer;
  Target target = Target::kForce;
  Metric metric = Metric::kSpearman;
  std::string split;
  double value = 0.0;
  std::size_t n = 0;
  std::string positive_class;  // auc only: high_error or ood
};

/// Fractional ranks, 1-based; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> values);

double pearson(std::span<const double> xs, std::span<const double> ys);

/// Pearson correlation of average ranks. Throws on length mismatch, n < 2,
/// or a constant sequence.
double spearman(std::span<const double> xs, std::span<const double> ys);

/// Mann-Whitney AUC: (wins + ties / 2) / (n_pos * n_neg), label 1 is positive.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// 0 for the floor(q n) smallest errors (stable on ties), 1 otherwise.
std::vector<int> error_split(std::span<const double> errors, double low_quantile = kDefaultLowQuantile);

/// Lookup of a score table by structure id.
class ScoreIndex {
 public:
  explicit ScoreIndex(const UncertaintyReport& report);

  /// Per-structure score: the structure row when present, otherwise the
  /// aggregate of atom rows. With prefer_atoms the order is reversed.
  double structure_score(const StructureRecord& rec, Aggregate how, bool prefer_atoms = false) const;
  /// One score per atom; throws if any atom row is missing.
  std::vector<double> atom_scores(const StructureRecord& rec) const;
  /// Atom score if present, else the structure row, else nothing.
  std::optional<double> atom_or_structure(const std::string& id, long atom) const;

 private:
  struct Entry {
    std::optional<double> structure;
    std::vector<std::optional<double>> atoms;
  };
  const Entry& find(const std::string& id) const;

  std::unordered_map<std::string, Entry> entries_;
};

std::vector<double> structure_energy_errors(std::span<const StructureRecord> records);
/// Per-structure force error: aggregate of per-atom |dF_j|.
std::vector<double> structure_force_errors(std::span<const StructureRecord> records, Aggregate how);

struct IdEvalOptions {
  std::string scorer = "scorer";
  std::string split = "test";
  Aggregate aggregate = Aggregate::kMean;
  bool per_structure_force = false;  // pair structure aggregates instead of atoms
  double low_quantile = kDefaultLowQuantile;
};

/// Spearman and AUC between errors and uncertainties on in-domain data.
std::pair<EvalReport, EvalReport> run_id_eval(const UncertaintyReport& scores,
                                              std::span<const StructureRecord> records, Target target,
                                              const IdEvalOptions& options = {});

struct OodSide {
  std::string tag;
  std::vector<double> scores;  // per structure
  std::vector<double> errors;  // per structure
};

struct OodOptions {
  std::string scorer = "scorer";
  bool ood_only_spearman = false;
};

inline constexpr const char* kPooledTag = "All";

/// For each OOD tag: AUC with ID = 0 and OOD = 1 over ID plus that tag, and
/// Spearman between uncertainty and error over the same union. A final
/// pooled pair covers ID plus every tag.
std::vector<EvalReport> run_ood_eval(const std::vector<double>& id_scores, const std::vector<double>& id_errors,
                                     const std::vector<OodSide>& ood, const OodOptions& options = {});

std::string reports_to_csv(std::span<const EvalReport> reports);
nlohmann::ordered_json reports_to_json(std::span<const EvalReport> reports);

struct PcaModel {
  ScalerStats scaler;
  Matrix axes;         // d x d, column i is the i-th principal axis
  Vector eigenvalues;  // descending, floored at 0
};

PcaModel pca_fit(const ResidualDataset& train, bool standardize = true);

/// Projects raw descriptors onto the first `n_components` axes.
Matrix pca_project(const PcaModel& model, const Matrix& descriptors, std::size_t n_components);

struct NamedResiduals {
  std::string name;
  const ResidualDataset* data = nullptr;
};

/// CSV with columns set,structure_id,atom_index,pc1..pcK,force_error_norm,uncertainty.
/// `uncertainty` comes from the score tables (empty when none match).
std::string pca_table_csv(const PcaModel& model, std::span<const NamedResiduals> sets, std::size_t n_components,
                          std::span<const UncertaintyReport> scores = {});

}  // namespace pdrl::eval
