#pragma once

// Post-hoc residual heads trained on frozen descriptors.
//
//   e-norm  sum_j net(D_j) regressed on |dE|, softplus per atom, 1 hidden layer
//   e-diff  sum_j net(D_j) regressed on dE, linear output, 1 hidden layer
//   f-norm  net(D_j) regressed on |dF_j|, softplus, 1 hidden layer
//   f-diff  net(D_j) regressed on the vector dF_j, linear output, 2 hidden layers
//
// Energy heads train on batches of structures; force heads on batches of atoms
// pooled across structures.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pdrl/core.hpp"
#include "pdrl/mlp.hpp"

namespace pdrl::heads {

enum class HeadKind { kEnergyNorm, kEnergyDiff, kForceNorm, kForceDiff };

std::string_view to_string(HeadKind kind);
/// Accepts e-norm, e-diff, f-norm, f-diff.
HeadKind parse_head_kind(std::string_view name);

bool is_energy(HeadKind kind);
bool uses_softplus(HeadKind kind);
std::size_t output_dim(HeadKind kind);
std::size_t hidden_depth(HeadKind kind);

inline constexpr std::size_t kDefaultHiddenWidth = 64;

mlp::MlpLayout layout_for(HeadKind kind, std::size_t d_desc, std::size_t hidden_width = kDefaultHiddenWidth);

struct PdrlModel {
  HeadKind kind = HeadKind::kForceNorm;
  mlp::MlpModel net;
};

/// Supervised set on raw (unstandardized) descriptors.
/// Energy kinds: one group per structure. Force kinds: one group per atom.
mlp::GroupedSet build_targets(const ResidualDataset& residuals, HeadKind kind);

struct PdrlOptions {
  mlp::TrainSchedule schedule;
  std::size_t hidden_width = kDefaultHiddenWidth;
  bool standardize = true;
};

struct PdrlTrainResult {
  PdrlModel model;
  std::vector<mlp::EpochRecord> history;
};

PdrlTrainResult train_pdrl(const ResidualDataset& train, const ResidualDataset& val, HeadKind kind,
                           const PdrlOptions& options, std::uint64_t seed);

struct EnergyScore {
  double uncertainty = 0.0;  // eV, nonnegative
  std::optional<double> signed_value;  // predicted dE, e-diff only
};

EnergyScore score_energy(const PdrlModel& model, const StructureRecord& record);

/// Per-atom uncertainty, eV/A.
Vector score_forces(const PdrlModel& model, const StructureRecord& record);

/// Self-contained descriptor check shared by the scoring paths.
void check_descriptor_width(const mlp::MlpModel& net, const StructureRecord& record);

nlohmann::ordered_json to_json(const PdrlModel& model);
PdrlModel pdrl_from_json(const nlohmann::json& j);

}  // namespace pdrl::heads
