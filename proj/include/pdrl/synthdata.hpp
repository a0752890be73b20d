#pragma once

// Deterministic synthetic descriptor datasets with a known error structure.
//
// Construction (d = d_desc, indices taken modulo d, e_k = k-th unit vector):
//   in-domain centers      c+ = +2 e_0 (z = 28), c- = -2 e_0 (z = 13), picked with prob. 1/2
//   in-domain descriptor   D = c + N(0, I)
//   OOD descriptor         D = c + ood_shift * e_1 + N(0, I)      (e_0 when d = 1)
//   novelty                r = min(|D - c+|, |D - c-|)
//   target energy / atom   t(D) = -3 + 0.05 |D|^2 + 0.5 sin(D_0) + 0.3 cos(D_1)
//   energy error / atom    e(D) = 0.02 + 0.04 r + 0.02 r^2 + noise_scale * U[-0.5, 0.5)
//   surrogate / atom       s(D) = t(D) - e(D)
//   target force           f(D) = (sin D_0 + 0.1 D_1, cos D_1 - 0.1 D_0, 0.2 D_2)
//   force error magnitude  m(D) = 0.05 + 0.1 r + 0.05 r^2 + noise_scale * U[0, 1)
//   force error direction  v(D) = normalize(1, 0.5 sin D_0, 0.5 cos D_1)
//   predicted force        f(D) - m(D) v(D)
// energy_true = sum_j t(D_j), energy_pred = sum_j s(D_j).
// Ensemble member k (when requested) perturbs the prediction by
// 0.5 * (noise-free error magnitude) * N(0, 1) per energy atom term and per force component.
//
// Each split draws from its own Rng (see rng.hpp) seeded with seed + split index
// (train 0, val 1, test 2, ood 3) passed through splitmix64.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pdrl/core.hpp"

namespace pdrl::synth {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t d_desc = 8;
  std::size_t n_train = 800;
  std::size_t n_val = 200;
  std::size_t n_test = 1000;
  std::size_t n_ood = 200;
  std::size_t atoms_min = 4;
  std::size_t atoms_max = 12;
  double ood_shift = 5.0;
  double noise_scale = 0.1;
  std::size_t ensemble_members = 5;  // 0 disables ensemble fields
};

struct SynthDatasets {
  std::vector<StructureRecord> train;
  std::vector<StructureRecord> val;
  std::vector<StructureRecord> test;
  std::vector<StructureRecord> ood;
};

inline constexpr double kClusterOffset = 2.0;
inline constexpr const char* kOodSplitTag = "ood:shift";

void validate_config(const SynthConfig& config);

SynthDatasets generate_synthetic(const SynthConfig& config);

/// Distance from a descriptor to the nearest in-domain cluster center.
double nearest_center_distance(const Eigen::Ref<const Vector>& descriptor);

/// Unit vector along which the OOD split is displaced.
Vector ood_direction(std::size_t d_desc);

/// Writes train.jsonl, val.jsonl, test.jsonl, ood.jsonl into `dir`.
void write_synthetic(const std::filesystem::path& dir, const SynthDatasets& data);

}  // namespace pdrl::synth
