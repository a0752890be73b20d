#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "pdrl/error.hpp"
#include "pdrl/eval.hpp"
#include "pdrl/pdrl.hpp"
#include "pdrl/synthdata.hpp"
#include "test_helpers.hpp"

using namespace pdrl;
using namespace pdrl::heads;

namespace {

/// Head whose every atom output is the constant vector `value`.
PdrlModel constant_head(HeadKind kind, std::size_t d_desc, const Vector& value) {
  PdrlModel model{kind, mlp::mlp_init(layout_for(kind, d_desc, 4), 1)};
  model.net.scaler = ScalerStats::identity(d_desc);
  model.net.layers.back().weight.setZero();
  model.net.layers.back().bias = value;
  return model;
}

ResidualDataset residuals_of(const std::vector<StructureRecord>& records) { return compute_residuals(records); }

}  // namespace

TEST(HeadKind, LayoutsFollowKind) {
  EXPECT_EQ(parse_head_kind("f-diff"), HeadKind::kForceDiff);
  EXPECT_THROW(parse_head_kind("g-norm"), ValidationError);
  for (auto kind : {HeadKind::kEnergyNorm, HeadKind::kEnergyDiff, HeadKind::kForceNorm, HeadKind::kForceDiff}) {
    EXPECT_EQ(parse_head_kind(to_string(kind)), kind);
    const auto layout = layout_for(kind, 7);
    EXPECT_EQ(layout.input_dim, 7u);
    EXPECT_EQ(layout.output_softplus, kind == HeadKind::kEnergyNorm || kind == HeadKind::kForceNorm);
    EXPECT_EQ(layout.output_dim, kind == HeadKind::kForceDiff ? 3u : 1u);
    EXPECT_EQ(layout.hidden_dims, std::vector<std::size_t>(kind == HeadKind::kForceDiff ? 2 : 1, 64));
  }
}

TEST(BuildTargets, Examples) {
  auto rec = test::random_record(1, 2, 3, 0);
  rec.energy_true = -3.0;
  rec.energy_pred = -1.0;  // dE = -2
  rec.forces_true.row(0) << 3, 4, 0;
  rec.forces_pred.row(0) << 0, 0, 0;
  const auto res = residuals_of({rec});
  EXPECT_EQ(build_targets(res, HeadKind::kEnergyNorm).targets(0, 0), 2.0);
  EXPECT_EQ(build_targets(res, HeadKind::kEnergyDiff).targets(0, 0), -2.0);
  EXPECT_EQ(build_targets(res, HeadKind::kForceNorm).targets(0, 0), 5.0);
  EXPECT_EQ(Eigen::RowVector3d(build_targets(res, HeadKind::kForceDiff).targets.row(0)), Eigen::RowVector3d(3, 4, 0));
  const auto energy = build_targets(res, HeadKind::kEnergyNorm);
  EXPECT_EQ(energy.offsets, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(build_targets(res, HeadKind::kForceNorm).offsets, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(build_targets(ResidualDataset{}, HeadKind::kForceNorm), ValidationError);
}

TEST(ScoreEnergy, SumOfConstantAtomOutputs) {
  const auto rec = test::random_record(2, 5, 3, 0);
  const auto head = constant_head(HeadKind::kEnergyDiff, 3, Vector::Constant(1, 0.7));
  EXPECT_NEAR(score_energy(head, rec).uncertainty, 3.5, 1e-12);

  const auto norm = constant_head(HeadKind::kEnergyNorm, 3, Vector::Constant(1, 0.2));
  EXPECT_NEAR(score_energy(norm, rec).uncertainty, 5.0 * std::log1p(std::exp(0.2)), 1e-12);
  EXPECT_FALSE(score_energy(norm, rec).signed_value.has_value());
}

TEST(ScoreEnergy, DiffReportsMagnitudeAndSign) {
  const auto rec = test::random_record(3, 5, 3, 0);
  const auto head = constant_head(HeadKind::kEnergyDiff, 3, Vector::Constant(1, -0.06));
  const auto score = score_energy(head, rec);
  EXPECT_NEAR(score.uncertainty, 0.3, 1e-12);
  ASSERT_TRUE(score.signed_value.has_value());
  EXPECT_NEAR(*score.signed_value, -0.3, 1e-12);
}

TEST(ScoreForces, DiffUsesVectorNorm) {
  const auto rec = test::random_record(4, 3, 2, 0);
  EXPECT_EQ(score_forces(constant_head(HeadKind::kForceDiff, 2, Eigen::Vector3d(1, 2, 2)), rec),
            Vector::Constant(3, 3.0));
  EXPECT_EQ(score_forces(constant_head(HeadKind::kForceDiff, 2, Eigen::Vector3d::Zero()), rec), Vector::Zero(3));
}

TEST(Scoring, WrongHeadKindOrWidthIsRejected) {
  const auto rec = test::random_record(5, 3, 4, 0);
  EXPECT_THROW(score_energy(constant_head(HeadKind::kForceNorm, 4, Vector::Ones(1)), rec), ValidationError);
  EXPECT_THROW(score_forces(constant_head(HeadKind::kEnergyNorm, 4, Vector::Ones(1)), rec), ValidationError);
  EXPECT_THROW(score_forces(constant_head(HeadKind::kForceNorm, 5, Vector::Ones(1)), rec), ValidationError);
}

TEST(Scoring, PermutationInvarianceAndEquivariance) {
  Rng rng(10);
  for (auto kind : {HeadKind::kEnergyNorm, HeadKind::kEnergyDiff, HeadKind::kForceNorm, HeadKind::kForceDiff}) {
    PdrlModel model{kind, mlp::mlp_init(layout_for(kind, 6, 16), rng.next())};
    model.net.scaler = ScalerStats{Vector::Constant(6, 0.3), Vector::Constant(6, 1.7)};
    for (int trial = 0; trial < 20; ++trial) {
      const auto rec = test::random_record(rng.next(), 2 + rng.below(10), 6, 0);
      const auto perm = test::random_permutation(rec.n_atoms(), rng.next());
      const auto permuted = test::permute_atoms(rec, perm);
      if (is_energy(kind)) {
        EXPECT_EQ(score_energy(model, rec).uncertainty, score_energy(model, permuted).uncertainty);
      } else {
        const Vector a = score_forces(model, rec);
        const Vector b = score_forces(model, permuted);
        for (std::size_t j = 0; j < perm.size(); ++j)
          EXPECT_EQ(b(static_cast<Eigen::Index>(j)), a(static_cast<Eigen::Index>(perm[j])));
        if (kind == HeadKind::kForceNorm) EXPECT_GT(a.minCoeff(), 0.0);
      }
    }
  }
}

TEST(Scoring, RecordsAreScoredIndependently) {
  PdrlModel model{HeadKind::kForceNorm, mlp::mlp_init(layout_for(HeadKind::kForceNorm, 4, 8), 3)};
  model.net.scaler = ScalerStats::identity(4);
  const auto a = test::random_record(1, 4, 4, 0);
  const auto b = test::random_record(2, 6, 4, 0);
  const Vector alone = score_forces(model, a);
  score_forces(model, b);
  EXPECT_EQ(score_forces(model, a), alone);
  // a one-atom slice of a record scores the same as inside the record
  auto single = a;
  single.descriptors = a.descriptors.topRows(1);
  single.forces_true = a.forces_true.topRows(1);
  single.forces_pred = a.forces_pred.topRows(1);
  single.atomic_numbers.resize(1);
  EXPECT_EQ(score_forces(model, single)(0), alone(0));
}

TEST(TrainPdrl, EnergyLossGradientThroughAtomSum) {
  synth::SynthConfig cfg;
  cfg.n_train = 6;
  cfg.d_desc = 4;
  const auto data = synth::generate_synthetic(cfg);
  const auto res = residuals_of(data.train);
  Rng rng(3);
  for (auto kind : {HeadKind::kEnergyNorm, HeadKind::kEnergyDiff}) {
    auto set = build_targets(res, kind);
    const auto scaler = fit_scaler(res);
    set.inputs = standardize_apply(scaler, set.inputs);
    const auto model = mlp::mlp_init(layout_for(kind, 4, 8), rng.next());
    std::vector<std::size_t> groups(set.groups());
    for (std::size_t g = 0; g < groups.size(); ++g) groups[g] = g;
    const auto analytic = mlp::flatten_parameters(mlp::mlp_gradient(model, set, groups).gradients);
    const auto check = oracle::finite_difference_check(model, set, groups, analytic);
    EXPECT_LE(check.max_rel_error, 1e-4) << to_string(kind);
  }
}

TEST(TrainPdrl, ZeroEnergyResidualTrainsToNearZero) {
  synth::SynthConfig cfg;
  auto data = synth::generate_synthetic(cfg);
  for (auto* split : {&data.train, &data.val})
    for (auto& r : *split) r.energy_pred = r.energy_true;
  const auto result = train_pdrl(residuals_of(data.train), residuals_of(data.val), HeadKind::kEnergyNorm, {}, 1);
  double mean = 0.0;
  for (const auto& r : data.val) mean += score_energy(result.model, r).uncertainty;
  mean /= static_cast<double>(data.val.size());
  EXPECT_LT(mean, 0.01);
}

TEST(TrainPdrl, ForceNormRanksNoiselessErrors) {
  synth::SynthConfig cfg;
  cfg.noise_scale = 0.0;
  const auto data = synth::generate_synthetic(cfg);
  const auto result =
      train_pdrl(residuals_of(data.train), residuals_of(data.val), HeadKind::kForceNorm, {}, 0);
  std::vector<double> scores, errors;
  for (const auto& r : data.test) {
    const Vector u = score_forces(result.model, r);
    for (Eigen::Index j = 0; j < u.size(); ++j) {
      scores.push_back(u(j));
      errors.push_back((r.forces_true.row(j) - r.forces_pred.row(j)).norm());
    }
  }
  EXPECT_GE(eval::spearman(scores, errors), 0.95);
}

TEST(TrainPdrl, DeterministicAndSerializable) {
  synth::SynthConfig cfg;
  cfg.n_train = 30;
  cfg.n_val = 10;
  const auto data = synth::generate_synthetic(cfg);
  PdrlOptions options;
  options.schedule.max_epochs = 20;
  options.hidden_width = 16;
  const auto train = residuals_of(data.train);
  const auto val = residuals_of(data.val);
  for (auto kind : {HeadKind::kEnergyDiff, HeadKind::kForceDiff}) {
    const auto a = train_pdrl(train, val, kind, options, 5);
    const auto b = train_pdrl(train, val, kind, options, 5);
    const auto text = to_json(a.model).dump();
    EXPECT_EQ(text, to_json(b.model).dump());
    const auto back = pdrl_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(back.kind, kind);
    EXPECT_EQ(to_json(back).dump(), text);
    EXPECT_NE(text, to_json(train_pdrl(train, val, kind, options, 6).model).dump());
  }
  auto j = nlohmann::json::parse(to_json(train_pdrl(train, val, HeadKind::kForceNorm, options, 1).model).dump());
  j["kind"] = "f-diff";
  EXPECT_THROW(pdrl_from_json(j), ValidationError);
}
