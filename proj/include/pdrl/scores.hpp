#pragma once

// Common score table shared by every scorer.
// CSV columns: structure_id,atom_index,score,signed_score
// atom_index is -1 for structure-level rows; signed_score is empty unless the
// scorer produces a signed value (e-diff).

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdrl/baselines.hpp"
#include "pdrl/core.hpp"
#include "pdrl/pdrl.hpp"

namespace pdrl {

struct ScoreRow {
  std::string structure_id;
  long atom_index = -1;
  double score = 0.0;
  std::optional<double> signed_score;

  bool operator==(const ScoreRow&) const = default;
};

struct UncertaintyReport {
  std::vector<ScoreRow> rows;
};

enum class Aggregate { kMean, kMax };

Aggregate parse_aggregate(const std::string& name);
double aggregate(std::vector<double> values, Aggregate how);

std::string report_to_csv(const UncertaintyReport& report);
UncertaintyReport report_from_csv(const std::string& text);
UncertaintyReport load_report(const std::filesystem::path& path);
void save_report(const std::filesystem::path& path, const UncertaintyReport& report);

/// Worker count from PDRL_THREADS (default: hardware concurrency, at least 1).
std::size_t thread_budget();

// Scoring over whole datasets. Rows follow record order, then atom order.
// Work is split across records; each record writes its own slot, so output
// does not depend on the thread count.

/// Energy heads: one structure row each. Force heads: one row per atom.
UncertaintyReport score_dataset(const heads::PdrlModel& model, std::span<const StructureRecord> records);
/// One row per atom.
UncertaintyReport score_dataset(const baselines::KnnIndex& index, std::span<const StructureRecord> records);
UncertaintyReport score_dataset(const baselines::GmmModel& model, std::span<const StructureRecord> records);
/// Structure row (energy spread) followed by atom rows (force spread).
UncertaintyReport ensemble_score_dataset(std::span<const StructureRecord> records);

}  // namespace pdrl
