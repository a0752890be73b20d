#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pdrl/core.hpp"
#include "pdrl/error.hpp"
#include "pdrl/rng.hpp"
#include "test_helpers.hpp"

using namespace pdrl;

namespace {

const char* kTwoAtomLine =
    R"({"id":"s0","energy_true":-5.0,"energy_pred":-4.5,"atoms":[)"
    R"({"z":28,"descriptor":[0.1,0.2,0.3,0.4],"force_true":[1,0,0],"force_pred":[0,0,0]},)"
    R"({"z":13,"descriptor":[1,2,3,4],"force_true":[0,1,0],"force_pred":[0,0.5,0]}]})";

}  // namespace

TEST(LoadDataset, ParsesHandWrittenRecord) {
  const auto records = parse_dataset(std::string(kTwoAtomLine) + "\n");
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].id, "s0");
  EXPECT_EQ(records[0].n_atoms(), 2u);
  EXPECT_EQ(records[0].d_desc(), 4u);
  EXPECT_EQ(records[0].atomic_numbers, (std::vector<int>{28, 13}));
  EXPECT_DOUBLE_EQ(records[0].descriptors(1, 2), 3.0);
  EXPECT_FALSE(records[0].has_ensemble());
}

TEST(LoadDataset, RaggedDescriptorNamesLine) {
  const std::string line =
      R"({"id":"s0","energy_true":0,"energy_pred":0,"atoms":[)"
      R"({"z":1,"descriptor":[1,2,3,4],"force_true":[0,0,0],"force_pred":[0,0,0]},)"
      R"({"z":1,"descriptor":[1,2,3],"force_true":[0,0,0],"force_pred":[0,0,0]}]})";
  try {
    parse_dataset(line + "\n");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, RejectsMalformedAndInconsistentInput) {
  EXPECT_THROW(parse_dataset("{not json}\n"), ValidationError);
  // second record has a different descriptor width
  const std::string other =
      R"({"id":"s1","energy_true":0,"energy_pred":0,"atoms":[)"
      R"({"z":1,"descriptor":[1,2],"force_true":[0,0,0],"force_pred":[0,0,0]}]})";
  try {
    parse_dataset(std::string(kTwoAtomLine) + "\n" + other + "\n");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  // force row of wrong length
  const std::string bad_force =
      R"({"id":"s1","energy_true":0,"energy_pred":0,"atoms":[)"
      R"({"z":1,"descriptor":[1,2],"force_true":[0,0],"force_pred":[0,0,0]}]})";
  EXPECT_THROW(parse_dataset(bad_force), ValidationError);
  // non-positive z
  const std::string bad_z =
      R"({"id":"s1","energy_true":0,"energy_pred":0,"atoms":[)"
      R"({"z":0,"descriptor":[1,2],"force_true":[0,0,0],"force_pred":[0,0,0]}]})";
  EXPECT_THROW(parse_dataset(bad_z), ValidationError);
  // single-member ensemble
  const std::string one_member =
      R"({"id":"s1","energy_true":0,"energy_pred":0,"ensemble_energy_preds":[1],"atoms":[)"
      R"({"z":1,"descriptor":[1,2],"force_true":[0,0,0],"force_pred":[0,0,0],"ensemble_force_preds":[[0,0,0]]}]})";
  EXPECT_THROW(parse_dataset(one_member), ValidationError);
}

TEST(LoadDataset, RejectsNonFiniteValues) {
  auto rec = test::random_record(1, 3, 4, 0);
  rec.descriptors(1, 2) = std::numeric_limits<double>::quiet_NaN();
  std::vector<StructureRecord> records{rec};
  EXPECT_THROW(validate_records(records), ValidationError);
  records[0].descriptors(1, 2) = 0.0;
  records[0].forces_pred(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(validate_records(records), ValidationError);
}

TEST(LoadDataset, MissingFileIsIoError) {
  EXPECT_THROW(load_dataset("/nonexistent/path/data.jsonl"), IoError);
}

// Round-trip oracle: random records serialized and parsed back compare equal
// value by value, and a second serialization is byte-identical.
TEST(LoadDataset, RoundTripPreservesEveryValue) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<StructureRecord> records;
    const std::size_t members = trial % 2 == 0 ? 0 : 3;
    for (int s = 0; s < 4; ++s)
      records.push_back(test::random_record(rng.next(), 1 + rng.below(6), 5, members));
    const auto text = serialize_dataset(records);
    const auto back = parse_dataset(text);
    ASSERT_EQ(back.size(), records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      EXPECT_EQ(back[i].id, records[i].id);
      EXPECT_EQ(back[i].atomic_numbers, records[i].atomic_numbers);
      EXPECT_EQ(back[i].descriptors, records[i].descriptors);
      EXPECT_EQ(back[i].forces_true, records[i].forces_true);
      EXPECT_EQ(back[i].forces_pred, records[i].forces_pred);
      EXPECT_EQ(back[i].energy_true, records[i].energy_true);
      EXPECT_EQ(back[i].energy_pred, records[i].energy_pred);
      EXPECT_EQ(back[i].ensemble_energy_preds, records[i].ensemble_energy_preds);
      ASSERT_EQ(back[i].ensemble_force_preds.size(), members);
      for (std::size_t m = 0; m < members; ++m)
        EXPECT_EQ(back[i].ensemble_force_preds[m], records[i].ensemble_force_preds[m]);
    }
    EXPECT_EQ(serialize_dataset(back), text);
  }
}

TEST(ComputeResiduals, Arithmetic) {
  auto rec = test::random_record(3, 2, 4, 0);
  rec.energy_true = -5.0;
  rec.energy_pred = -5.0;
  rec.forces_true.row(0) << 1, 0, 0;
  rec.forces_pred.row(0) << 0, 0, 0;
  std::vector<StructureRecord> records{rec};
  auto res = compute_residuals(records);
  EXPECT_EQ(res.records[0].delta_e, 0.0);
  EXPECT_EQ(res.records[0].delta_f.row(0), Eigen::RowVector3d(1, 0, 0));
  EXPECT_EQ(res.records[0].delta_f.row(0).norm(), 1.0);
  EXPECT_EQ(res.records[0].descriptors, rec.descriptors);

  records[0].energy_true = -1.0;
  records[0].energy_pred = 1.0;
  EXPECT_EQ(compute_residuals(records).records[0].delta_e, -2.0);
}

TEST(ComputeResiduals, AntisymmetryAndPermutation) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto rec = test::random_record(rng.next(), 2 + rng.below(8), 3, 0);
    auto swapped = rec;
    std::swap(swapped.energy_true, swapped.energy_pred);
    std::swap(swapped.forces_true, swapped.forces_pred);
    const auto a = compute_residuals(std::vector{rec}).records[0];
    const auto b = compute_residuals(std::vector{swapped}).records[0];
    EXPECT_EQ(a.delta_e, -b.delta_e);
    EXPECT_EQ(a.delta_f, Matrix(-b.delta_f));

    const auto perm = test::random_permutation(rec.n_atoms(), rng.next());
    const auto permuted = test::permute_atoms(rec, perm);
    const auto c = compute_residuals(std::vector{permuted}).records[0];
    EXPECT_EQ(c.delta_e, a.delta_e);
    for (std::size_t j = 0; j < perm.size(); ++j)
      EXPECT_EQ(c.delta_f.row(static_cast<Eigen::Index>(j)), a.delta_f.row(static_cast<Eigen::Index>(perm[j])));
  }
}

TEST(Scaler, DegenerateVarianceUsesFloor) {
  Matrix rows(5, 3);
  rows.rowwise() = Eigen::RowVector3d(1.5, -2.0, 7.0);
  const auto stats = fit_scaler(rows);
  EXPECT_EQ(stats.mean, Vector(Eigen::Vector3d(1.5, -2.0, 7.0)));
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_EQ(stats.std(k), ScalerStats::kEpsilonStd);
}

TEST(Scaler, PopulationConvention) {
  Matrix rows(2, 1);
  rows << 0.0, 2.0;
  const auto stats = fit_scaler(rows);
  EXPECT_DOUBLE_EQ(stats.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(stats.std(0), 1.0);
}

TEST(Scaler, StandardizedTrainingDataHasZeroMean) {
  Rng rng(9);
  ResidualDataset data;
  data.d_desc = 6;
  for (int s = 0; s < 30; ++s) {
    auto rec = test::random_record(rng.next(), 1 + rng.below(5), 6, 0);
    rec.descriptors = (rec.descriptors.array() * 3.0 + 10.0).matrix();
    data.records.push_back(compute_residuals(std::vector{rec}).records[0]);
  }
  const auto stats = fit_scaler(data);
  const Matrix z = standardize_apply(stats, data.stacked_descriptors());
  const Vector mean = z.colwise().mean().transpose();
  for (Eigen::Index k = 0; k < mean.size(); ++k) EXPECT_NEAR(mean(k), 0.0, 1e-10);
  EXPECT_THROW(fit_scaler(ResidualDataset{}), ValidationError);
}

TEST(Scaler, ApplyArithmeticAndInverse) {
  ScalerStats stats{Eigen::Vector2d(1, 1), Eigen::Vector2d(2, 2)};
  Matrix x(1, 2);
  x << 3, 5;
  EXPECT_EQ(standardize_apply(stats, x), (Matrix(1, 2) << 1, 2).finished());
  Matrix at_mean(1, 2);
  at_mean << 1, 1;
  EXPECT_EQ(standardize_apply(stats, at_mean), Matrix::Zero(1, 2));
  EXPECT_EQ(standardize_apply(ScalerStats::identity(2), x), x);
  EXPECT_THROW(standardize_apply(stats, Matrix::Zero(1, 3)), ValidationError);

  Rng rng(4);
  ScalerStats random{Vector(4), Vector(4)};
  for (int k = 0; k < 4; ++k) {
    random.mean(k) = rng.uniform(-5, 5);
    random.std(k) = rng.uniform(0.1, 4);
  }
  Matrix y(20, 4);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform(-10, 10);
  const Matrix back = unstandardize_apply(random, standardize_apply(random, y));
  for (Eigen::Index i = 0; i < y.size(); ++i)
    EXPECT_LE(std::abs(back.data()[i] - y.data()[i]), 1e-12 * std::max(1.0, std::abs(y.data()[i])));
}
