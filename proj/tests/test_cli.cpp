#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "pdrl/io.hpp"
#include "pdrl/scores.hpp"

namespace fs = std::filesystem;
using pdrl::cli::dispatch;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pdrl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return dispatch(args, out_, err_);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  /// Small dataset in dir_/data.
  void generate() {
    ASSERT_EQ(run({"gen", "--out", path("data"), "--seed", "3", "--n-train", "30", "--n-val", "10", "--n-test",
                   "12", "--n-ood", "12"}),
              0)
        << err_.str();
  }

  fs::path dir_;
  std::ostringstream out_;
  std::ostringstream err_;
};

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

std::size_t total_atoms(const std::string& jsonl) {
  std::size_t atoms = 0;
  for (const auto& r : pdrl::load_dataset(jsonl)) atoms += r.n_atoms();
  return atoms;
}

}  // namespace

TEST_F(CliTest, GenIsDeterministic) {
  ASSERT_EQ(run({"gen", "--seed", "7", "--out", path("a")}), 0) << err_.str();
  ASSERT_EQ(run({"gen", "--seed", "7", "--out", path("b")}), 0);
  for (const char* name : {"train.jsonl", "val.jsonl", "test.jsonl", "ood.jsonl"}) {
    ASSERT_TRUE(fs::exists(dir_ / "a" / name)) << name;
    EXPECT_EQ(pdrl::io::read_text(dir_ / "a" / name), pdrl::io::read_text(dir_ / "b" / name)) << name;
  }
}

TEST_F(CliTest, TrainScoreEval) {
  generate();
  ASSERT_EQ(run({"train", "--head", "f-norm", "--data", path("data/train.jsonl"), "--val", path("data/val.jsonl"),
                 "--out", path("m.json"), "--max-epochs", "5", "--history", path("h.csv")}),
            0)
      << err_.str();
  const auto history = pdrl::io::read_text(path("h.csv"));
  EXPECT_EQ(count_lines(history), 7u);  // header, epoch 0, five epochs
  const auto train_json = pdrl::io::read_text(path("m.json"));
  EXPECT_NE(train_json.find("\"kind\""), std::string::npos);
  ASSERT_EQ(run({"score", "--model", path("m.json"), "--data", path("data/test.jsonl"), "--out", path("s.csv")}), 0)
      << err_.str();
  const auto scores = pdrl::load_report(path("s.csv"));
  EXPECT_EQ(scores.rows.size(), total_atoms(path("data/test.jsonl")));
  ASSERT_EQ(run({"eval", "--scores", path("s.csv"), "--data", path("data/test.jsonl"), "--target", "force", "--out",
                 path("r.csv")}),
            0)
      << err_.str();
  const auto report = pdrl::io::read_text(path("r.csv"));
  EXPECT_EQ(report.substr(0, report.find('\n')), "scorer,target,metric,split,value,n");
  EXPECT_NE(report.find(",force,spearman,"), std::string::npos);
  EXPECT_NE(report.find(",force,auc,"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("r.json")));
}

TEST_F(CliTest, EnergyHeadScoresStructures) {
  generate();
  ASSERT_EQ(run({"train", "--head", "e-diff", "--data", path("data/train.jsonl"), "--val", path("data/val.jsonl"),
                 "--out", path("e.json"), "--max-epochs", "3"}),
            0)
      << err_.str();
  ASSERT_EQ(run({"score", "--model", path("e.json"), "--data", path("data/test.jsonl"), "--out", path("s.csv")}), 0);
  const auto scores = pdrl::load_report(path("s.csv"));
  ASSERT_EQ(scores.rows.size(), 12u);
  for (const auto& row : scores.rows) {
    EXPECT_EQ(row.atom_index, -1);
    ASSERT_TRUE(row.signed_score.has_value());
    EXPECT_EQ(row.score, std::abs(*row.signed_score));
  }
  EXPECT_EQ(run({"eval", "--scores", path("s.csv"), "--data", path("data/test.jsonl"), "--target", "energy",
                 "--out", path("r.csv")}),
            0)
      << err_.str();
}

TEST_F(CliTest, BaselinesEnsembleOodAndPca) {
  generate();
  ASSERT_EQ(run({"baseline", "--method", "knn", "--k", "5", "--data", path("data/train.jsonl"), "--out",
                 path("knn.json")}),
            0)
      << err_.str();
  ASSERT_EQ(run({"baseline", "--method", "gmm", "--components", "2", "--data", path("data/train.jsonl"), "--out",
                 path("gmm.json")}),
            0)
      << err_.str();
  for (const char* model : {"knn", "gmm"}) {
    for (const char* split : {"test", "ood"}) {
      ASSERT_EQ(run({"score", "--model", path(std::string(model) + ".json"), "--data",
                     path(std::string("data/") + split + ".jsonl"), "--out", path(std::string(model) + "_" + split + ".csv")}),
                0)
          << err_.str();
    }
  }
  ASSERT_EQ(run({"ood", "--data", path("data/test.jsonl"), "--scores", path("gmm_test.csv"), "--data",
                 path("data/ood.jsonl"), "--scores", path("gmm_ood.csv"), "--out", path("ood.csv")}),
            0)
      << err_.str();
  const auto ood = pdrl::io::read_text(path("ood.csv"));
  EXPECT_NE(ood.find(",ood:shift,"), std::string::npos);
  EXPECT_NE(ood.find(",All,"), std::string::npos);

  ASSERT_EQ(run({"ensemble-score", "--data", path("data/test.jsonl"), "--out", path("ens.csv")}), 0) << err_.str();
  EXPECT_EQ(pdrl::load_report(path("ens.csv")).rows.size(), 12u + total_atoms(path("data/test.jsonl")));

  ASSERT_EQ(run({"pca", "--data", path("data/train.jsonl"), "--data", path("data/ood.jsonl"), "--scores",
                 path("knn_ood.csv"), "--components-pca", "3", "--out", path("pca.csv")}),
            0)
      << err_.str();
  const auto pca = pdrl::io::read_text(path("pca.csv"));
  EXPECT_EQ(pca.substr(0, pca.find('\n')), "set,structure_id,atom_index,pc1,pc2,pc3,force_error_norm,uncertainty");
  EXPECT_EQ(count_lines(pca), 1 + total_atoms(path("data/train.jsonl")) + total_atoms(path("data/ood.jsonl")));
}

TEST_F(CliTest, ErrorsMapToExitCodes) {
  EXPECT_EQ(run({"gen", "--out", path("x"), "--bogus", "1"}), 1);
  EXPECT_NE(err_.str().find("--out"), std::string::npos);  // usage text
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"frobnicate"}), 1);
  EXPECT_EQ(run({"score", "--model", path("missing.json"), "--data", path("missing.jsonl"), "--out", path("s.csv")}), 2);
  generate();
  EXPECT_EQ(run({"train", "--head", "x-norm", "--data", path("data/train.jsonl"), "--val", path("data/val.jsonl"),
                 "--out", path("m.json")}),
            1);
  EXPECT_EQ(run({"baseline", "--method", "knn", "--k", "100000", "--data", path("data/train.jsonl"), "--out",
                 path("k.json")}),
            1);
  EXPECT_FALSE(fs::exists(path("k.json")));
  EXPECT_EQ(run({"ensemble-score", "--data", path("data/nothere.jsonl"), "--out", path("e.csv")}), 2);
}

TEST_F(CliTest, ConfigFileIsOverriddenByFlags) {
  pdrl::io::write_text_atomic(path("cfg.json"), R"({"seed": 7, "n-train": 5, "n-val": 2, "n-test": 2, "n-ood": 2})");
  ASSERT_EQ(run({"gen", "--config", path("cfg.json"), "--out", path("a")}), 0) << err_.str();
  ASSERT_EQ(run({"gen", "--seed", "7", "--n-train", "5", "--n-val", "2", "--n-test", "2", "--n-ood", "2", "--out",
                 path("b")}),
            0);
  EXPECT_EQ(pdrl::io::read_text(path("a/train.jsonl")), pdrl::io::read_text(path("b/train.jsonl")));
  ASSERT_EQ(run({"gen", "--config", path("cfg.json"), "--n-train", "3", "--out", path("c")}), 0);
  EXPECT_EQ(pdrl::load_dataset(path("c/train.jsonl")).size(), 3u);
  EXPECT_EQ(pdrl::io::read_text(path("a/val.jsonl")), pdrl::io::read_text(path("c/val.jsonl")));
}
