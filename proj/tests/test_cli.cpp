// End-to-end runs of the voxprop binary.

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "voxprop/io/kitti.hpp"
#include "voxprop/io/models.hpp"

namespace fs = std::filesystem;
using namespace voxprop;
using nlohmann::json;

namespace {

fs::path work_dir() {
  static const fs::path d = [] {
    fs::path p = fs::temp_directory_path() / ("voxprop_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

struct Outcome {
  int code = -1;
  std::string out, err;
};

// Runs the binary with stdout/stderr captured to files in the work dir.
Outcome run(const std::string& args) {
  static int n = 0;
  const fs::path o = work_dir() / ("out" + std::to_string(n) + ".txt");
  const fs::path e = work_dir() / ("err" + std::to_string(n++) + ".txt");
  const std::string cmd = "cd '" + work_dir().string() + "' && '" + VOXPROP_CLI_PATH + "' " + args + " > '" +
                          o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  Outcome r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_file(o);
  r.err = io::read_file(e);
  return r;
}

std::string slurp(const fs::path& p) { return io::read_file(work_dir() / p); }

struct RemoveWorkDir : ::testing::Environment {
  void TearDown() override { fs::remove_all(work_dir()); }
};
const auto* const kCleanup = ::testing::AddGlobalTestEnvironment(new RemoveWorkDir);

// Shared small dataset and trained model, built once.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ASSERT_EQ(run("synth-gen --out ds --scenes 4 --seed 3").code, 0);
    ASSERT_EQ(run("fit-templates --data ds --class Car --out car.json").code, 0);
    ASSERT_EQ(run("fit-stats --data ds --model car.json").code, 0);
    const Outcome t = run("train-weights --data ds --model car.json --log train_log.csv");
    ASSERT_EQ(t.code, 0) << t.out << t.err;
  }
};

}  // namespace

TEST(CliUsage, NoSubcommandIsUsageError) {
  const Outcome r = run("");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("subcommand"), std::string::npos);
}

TEST(CliUsage, UnknownFlagIsUsageError) {
  EXPECT_EQ(run("synth-gen --out x --no-such-flag").code, 2);
}

TEST(CliUsage, MissingInputFileIsUsageError) {
  const Outcome r = run("propose --input missing.bin --model missing.json --out p.csv");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing"), std::string::npos);
}

TEST(CliUsage, NegativeCountIsUsageError) {
  EXPECT_EQ(run("synth-gen --out x --scenes -1").code, 2);
}

TEST(CliUsage, HelpShowsDefaults) {
  const Outcome r = run("propose --help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--k INT:POSITIVE [2000]"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("[0.75]"), std::string::npos);
  EXPECT_NE(r.out.find("[0.6]"), std::string::npos);
  EXPECT_NE(r.out.find("[published]"), std::string::npos);
}

TEST_F(Pipeline, ModelCarriesFittedFields) {
  const ClassModel m = io::read_class_model(work_dir() / "car.json");
  EXPECT_EQ(m.name, "Car");
  EXPECT_EQ(m.class_id, 0);
  EXPECT_FALSE(m.templates.empty());
  EXPECT_EQ(m.training_set_hash.size(), 16u);
  EXPECT_GT(m.sigma_ht, 0.0);
  EXPECT_NE(slurp("train_log.csv").find("round,objective,max_violation"), std::string::npos);
}

TEST_F(Pipeline, ProposeRanksByEnergyWithinBudget) {
  const Outcome r = run("propose --input ds/velodyne/000000.bin --calib ds/calib/000000.txt --model car.json --k 40 "
                    "--out p.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = io::read_proposals_csv(work_dir() / "p.csv");
  ASSERT_FALSE(rows.empty());
  EXPECT_LE(rows.size(), 40u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].rank, static_cast<int>(i));
    EXPECT_EQ(rows[i].cls, "Car");
    if (i > 0) {
      EXPECT_LE(rows[i - 1].energy, rows[i].energy);
    }
  }
}

TEST_F(Pipeline, OutputsAreByteIdenticalAcrossRuns) {
  const std::string args = "propose --input ds/velodyne/000001.bin --calib ds/calib/000001.txt --model car.json "
                           "--k 100 --out ";
  ASSERT_EQ(run(args + "a.csv").code, 0);
  ASSERT_EQ(run(args + "b.csv").code, 0);
  EXPECT_EQ(slurp("a.csv"), slurp("b.csv"));

  ASSERT_EQ(run("train-weights --data ds --model car.json --out car_again.json").code, 0);
  EXPECT_EQ(slurp("car.json"), slurp("car_again.json"));
}

TEST_F(Pipeline, FlagsOverrideConfigFile) {
  std::ofstream(work_dir() / "cfg.json") << R"({"propose": {"k": 5, "nms": "bev"}})";
  const std::string base =
      "--config cfg.json propose --input ds/velodyne/000002.bin --calib ds/calib/000002.txt --model car.json ";
  ASSERT_EQ(run(base + "--out c5.csv").code, 0);
  EXPECT_EQ(io::read_proposals_csv(work_dir() / "c5.csv").size(), 5u);
  ASSERT_EQ(run(base + "--k 9 --out c9.csv").code, 0);
  EXPECT_EQ(io::read_proposals_csv(work_dir() / "c9.csv").size(), 9u);
}

TEST_F(Pipeline, KittiFormatScoresAreNegatedEnergies) {
  const std::string base = "propose --input ds/velodyne/000000.bin --calib ds/calib/000000.txt --model car.json --k 10 ";
  ASSERT_EQ(run(base + "--out k.csv").code, 0);
  ASSERT_EQ(run(base + "--format kitti --out k.txt").code, 0);
  const auto rows = io::read_proposals_csv(work_dir() / "k.csv");
  const auto labels = io::read_labels(work_dir() / "k.txt");
  ASSERT_EQ(rows.size(), labels.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ASSERT_TRUE(labels[i].score.has_value());
    EXPECT_NEAR(*labels[i].score, -rows[i].energy, 1e-6);
  }
}

TEST_F(Pipeline, EvalRecallWritesMonotoneCurve) {
  ASSERT_EQ(run("propose --data ds --model car.json --k 200 --out-dir props").code, 0);
  const Outcome r = run("eval-recall --props props --gt ds/label_2 --class car --iou 0.25 --space 3d "
                    "--difficulty none --budgets 1,10,100,200 --out-dir ev");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp("ev/recall_car_none_3d.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "budget,recall");
  double prev = -1;
  int n = 0;
  while (std::getline(in, line)) {
    const double rec = std::stod(line.substr(line.find(',') + 1));
    EXPECT_GE(rec, prev);
    EXPECT_LE(rec, 1.0);
    prev = rec;
    ++n;
  }
  EXPECT_EQ(n, 4);
  EXPECT_GT(prev, 0.5);

  const json summary = io::read_json(work_dir() / "ev/recall_car_none_3d.json");
  EXPECT_TRUE(summary["ar"].is_number());
  EXPECT_DOUBLE_EQ(summary["recall_at"]["100"].get<double>(), [&] {
    std::istringstream again(csv);
    std::string l;
    double at100 = -1;
    while (std::getline(again, l)) {
      if (l.rfind("100,", 0) == 0) at100 = std::stod(l.substr(4));
    }
    return at100;
  }());
}

TEST_F(Pipeline, EvalRecallWithoutProposalsIsRuntimeError) {
  fs::create_directories(work_dir() / "empty_props");
  EXPECT_EQ(run("eval-recall --props empty_props --gt ds/label_2").code, 1);
}

TEST_F(Pipeline, EstimateGroundMatchesGeneratedPlane) {
  const Outcome r = run("estimate-ground --input ds/velodyne/000003.bin --calib ds/calib/000003.txt --out g.txt");
  ASSERT_EQ(r.code, 0) << r.err;
  const GroundPlane est = io::read_plane(work_dir() / "g.txt");
  const GroundPlane gt = io::read_plane(work_dir() / "ds/planes/000003.txt");
  EXPECT_GT(dot(est.normal, gt.normal), std::cos(0.5 * std::numbers::pi / 180));
  EXPECT_NEAR(est.offset, gt.offset, 0.02);
}

TEST_F(Pipeline, TimingGoesToStderr) {
  const Outcome r = run("--timing propose --input ds/velodyne/000000.bin --calib ds/calib/000000.txt --model car.json "
                    "--k 5 --out t.csv");
  ASSERT_EQ(r.code, 0);
  for (const char* stage : {"ground", "voxelize", "free_space", "score", "nms"}) {
    EXPECT_NE(r.err.find(std::string("timing ") + stage + " "), std::string::npos) << stage;
  }
  EXPECT_EQ(r.out.find("timing"), std::string::npos);
}
