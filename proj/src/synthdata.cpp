#include "pdrl/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "pdrl/error.hpp"
#include "pdrl/rng.hpp"

namespace pdrl::synth {

namespace {

enum class SplitKind { kTrain = 0, kVal = 1, kTest = 2, kOod = 3 };

double component(const Vector& d, std::size_t k) {
  return d(static_cast<Eigen::Index>(k % static_cast<std::size_t>(d.size())));
}

double target_energy(const Vector& d) {
  return -3.0 + 0.05 * d.squaredNorm() + 0.5 * std::sin(component(d, 0)) +
         0.3 * std::cos(component(d, 1));
}

double energy_error_base(double r) { return 0.02 + 0.04 * r + 0.02 * r * r; }

double force_error_base(double r) { return 0.05 + 0.1 * r + 0.05 * r * r; }

Eigen::RowVector3d target_force(const Vector& d) {
  const double d0 = component(d, 0);
  const double d1 = component(d, 1);
  const double d2 = component(d, 2);
  return {std::sin(d0) + 0.1 * d1, std::cos(d1) - 0.1 * d0, 0.2 * d2};
}

Eigen::RowVector3d error_direction(const Vector& d) {
  Eigen::RowVector3d v(1.0, 0.5 * std::sin(component(d, 0)), 0.5 * std::cos(component(d, 1)));
  return v / v.norm();
}

std::string make_id(const char* prefix, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s-%06zu", prefix, i);
  return buf;
}

std::vector<StructureRecord> generate_split(const SynthConfig& cfg, SplitKind kind, std::size_t count) {
  std::uint64_t sm = cfg.seed + static_cast<std::uint64_t>(kind);
  Rng rng(splitmix64(sm));

  const char* tag = "train";
  switch (kind) {
    case SplitKind::kTrain: tag = "train"; break;
    case SplitKind::kVal: tag = "val"; break;
    case SplitKind::kTest: tag = "test"; break;
    case SplitKind::kOod: tag = kOodSplitTag; break;
  }
  const char* prefix = kind == SplitKind::kOod ? "ood" : tag;

  const auto dim = static_cast<Eigen::Index>(cfg.d_desc);
  const Vector shift = kind == SplitKind::kOod ? Vector(cfg.ood_shift * ood_direction(cfg.d_desc))
                                               : Vector(Vector::Zero(dim));
  const std::size_t members = cfg.ensemble_members;
  const std::size_t atom_span = cfg.atoms_max - cfg.atoms_min + 1;

  std::vector<StructureRecord> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t n = cfg.atoms_min + static_cast<std::size_t>(rng.below(atom_span));
    const auto rows = static_cast<Eigen::Index>(n);

    StructureRecord rec;
    rec.id = make_id(prefix, s);
    rec.split = tag;
    rec.atomic_numbers.resize(n);
    rec.descriptors.resize(rows, dim);
    rec.forces_true.resize(rows, 3);
    rec.forces_pred.resize(rows, 3);
    std::vector<double> energy_scale(n);
    std::vector<double> force_scale(n);

    for (std::size_t j = 0; j < n; ++j) {
      const auto row = static_cast<Eigen::Index>(j);
      const bool positive = rng.uniform() < 0.5;
      rec.atomic_numbers[j] = positive ? 28 : 13;
      Vector d = shift;
      d(0) += positive ? kClusterOffset : -kClusterOffset;
      for (Eigen::Index k = 0; k < dim; ++k) d(k) += rng.normal();
      rec.descriptors.row(row) = d.transpose();

      const double r = nearest_center_distance(d);
      const double t = target_energy(d);
      const double e = energy_error_base(r) + cfg.noise_scale * (rng.uniform() - 0.5);
      rec.energy_true += t;
      rec.energy_pred += t - e;

      const Eigen::RowVector3d f = target_force(d);
      const double magnitude = force_error_base(r) + cfg.noise_scale * rng.uniform();
      rec.forces_true.row(row) = f;
      rec.forces_pred.row(row) = f - magnitude * error_direction(d);

      energy_scale[j] = 0.5 * energy_error_base(r);
      force_scale[j] = 0.5 * force_error_base(r);
    }

    if (members > 0) {
      rec.ensemble_energy_preds.assign(members, rec.energy_pred);
      rec.ensemble_force_preds.assign(members, rec.forces_pred);
      for (std::size_t m = 0; m < members; ++m) {
        for (std::size_t j = 0; j < n; ++j) {
          const auto row = static_cast<Eigen::Index>(j);
          rec.ensemble_energy_preds[m] += energy_scale[j] * rng.normal();
          for (Eigen::Index c = 0; c < 3; ++c)
            rec.ensemble_force_preds[m](row, c) += force_scale[j] * rng.normal();
        }
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

void validate_config(const SynthConfig& config) {
  if (config.d_desc == 0) throw ValidationError("d_desc must be positive");
  if (config.atoms_min == 0 || config.atoms_max < config.atoms_min)
    throw ValidationError("atoms per structure must be a positive range");
  if (!(config.ood_shift >= 0.0) || !std::isfinite(config.ood_shift))
    throw ValidationError("ood_shift must be finite and >= 0");
  if (!(config.noise_scale >= 0.0) || !std::isfinite(config.noise_scale))
    throw ValidationError("noise_scale must be finite and >= 0");
  if (config.ensemble_members == 1) throw ValidationError("ensemble needs 0 or at least 2 members");
  if (config.n_train == 0 || config.n_val == 0 || config.n_test == 0 || config.n_ood == 0)
    throw ValidationError("every split needs at least one structure");
}

SynthDatasets generate_synthetic(const SynthConfig& config) {
  validate_config(config);
  return {generate_split(config, SplitKind::kTrain, config.n_train),
          generate_split(config, SplitKind::kVal, config.n_val),
          generate_split(config, SplitKind::kTest, config.n_test),
          generate_split(config, SplitKind::kOod, config.n_ood)};
}

double nearest_center_distance(const Eigen::Ref<const Vector>& descriptor) {
  Vector plus = descriptor;
  Vector minus = descriptor;
  plus(0) -= kClusterOffset;
  minus(0) += kClusterOffset;
  return std::sqrt(std::min(plus.squaredNorm(), minus.squaredNorm()));
}

Vector ood_direction(std::size_t d_desc) {
  Vector u = Vector::Zero(static_cast<Eigen::Index>(d_desc));
  u(d_desc > 1 ? 1 : 0) = 1.0;
  return u;
}

void write_synthetic(const std::filesystem::path& dir, const SynthDatasets& data) {
  save_dataset(dir / "train.jsonl", data.train);
  save_dataset(dir / "val.jsonl", data.val);
  save_dataset(dir / "test.jsonl", data.test);
  save_dataset(dir / "ood.jsonl", data.ood);
}

}  // namespace pdrl::synth
