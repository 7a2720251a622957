#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <random>

#include <json.hpp>

#include "ldpo/data.hpp"
#include "ldpo/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ldpo;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run_cli(const std::string& args, const TempDir& dir) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd =
      std::string("\"") + LDPO_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

}  // namespace

TEST(Cli, HelpExitsZero) {
  TempDir dir("cli");
  auto r = run_cli("--help", dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("loop"), std::string::npos);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  TempDir dir("cli");
  EXPECT_EQ(run_cli("bogus", dir).code, 1);
  EXPECT_EQ(run_cli("", dir).code, 1);
  EXPECT_EQ(run_cli("metrics --a only.csv", dir).code, 1);
}

TEST(Cli, MetricsOnIdenticalAssignments) {
  TempDir dir("cli");
  const auto ids = oracle::make_ids(4);
  save_assignment(ids, ClusterAssignment{{0, 0, 1, 1}, 2}, dir / "a.csv");
  save_assignment(ids, ClusterAssignment{{1, 1, 0, 0}, 2}, dir / "b.csv");
  auto r = run_cli("metrics --a " + (dir / "a.csv").string() + " --b " + (dir / "b.csv").string(), dir);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "purity=1.0 nmi=1.0\n");
}

TEST(Cli, MissingInputIsRuntimeError) {
  TempDir dir("cli");
  auto r = run_cli("metrics --a " + (dir / "nope.csv").string() + " --b " + (dir / "nope.csv").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error:", 0), 0u) << r.err;
}

TEST(Cli, LoopTreeAndKeywords) {
  TempDir dir("cli");
  auto c = oracle::blobs(3, 30, 4, 8.0, 1);
  save_feature_matrix(c.features, dir / "f.csv", MatrixFormat::Csv);
  {
    std::ofstream cfg(dir / "cfg.toml");
    cfg << "features = \"f.csv\"\nclustering = \"kmeans\"\nk = 3\nmax_iterations = 3\nseed = 1\n"
           "[learner]\nhidden = 16\nepochs = 10\n";
  }
  auto r = run_cli("loop --config " + (dir / "cfg.toml").string() + " --out " + (dir / "run").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("K=3"), std::string::npos) << r.out;
  const auto reports = nlohmann::json::parse(read_file(dir / "run" / "reports.json"));
  ASSERT_GE(reports.size(), 1u);
  EXPECT_EQ(reports[0]["iteration"], 0);

  r = run_cli("tree --in " + (dir / "run").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto tree = nlohmann::json::parse(read_file(dir / "run" / "tree.json"));
  EXPECT_EQ(tree["members"].size(), 3u);

  {
    nlohmann::json corpus = nlohmann::json::object();
    for (std::size_t i = 0; i < c.features.rows(); ++i) {
      static const char* names[] = {"liver", "lung", "kidney"};
      corpus[c.features.ids[i]] = std::string("finding ") + names[c.truth.labels[i]] + " scan";
    }
    std::ofstream(dir / "corpus.json") << corpus.dump();
  }
  r = run_cli("keywords --in " + (dir / "corpus.json").string() + " --assignments " +
                  (dir / "run" / "final.assignments.csv").string() + " --out " + (dir / "kw.json").string(),
              dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kw = nlohmann::json::parse(read_file(dir / "kw.json"));
  EXPECT_EQ(kw.size(), 3u);
  for (const auto& [cluster, terms] : kw.items()) {
    for (const auto& t : terms) {
      EXPECT_NE(t["term"], "scan");
      EXPECT_NE(t["term"], "finding");
    }
  }
}

TEST(Cli, TreeWithoutModelIsRuntimeError) {
  TempDir dir("cli");
  auto r = run_cli("tree --in " + dir.path().string(), dir);
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, ClusterSubcommand) {
  TempDir dir("cli");
  auto c = oracle::simplex_blobs(3, 20, 3, 8.0, 2);
  save_feature_matrix(c.features, dir / "f.csv", MatrixFormat::Csv);
  auto r = run_cli("cluster --in " + (dir / "f.csv").string() + " --out " + (dir / "a.csv").string() +
                       " --mode kmeans --k 3",
                   dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "K=3\n");
  auto a = load_assignment(dir / "a.csv");
  EXPECT_DOUBLE_EQ(purity(align_to(LabeledAssignment{c.features.ids, c.truth}, a), c.truth), 1.0);
}

TEST(Cli, EncodeSubcommand) {
  TempDir dir("cli");
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  FeatureMatrix grids{oracle::make_ids(8), Matrix(8, 12)};
  for (Eigen::Index i = 0; i < grids.values.size(); ++i) grids.values.data()[i] = nd(rng);
  save_feature_matrix(grids, dir / "g.csv", MatrixFormat::Csv);
  auto r = run_cli("encode --in " + (dir / "g.csv").string() + " --out " + (dir / "fv.csv").string() +
                       " --method fv --descriptor-dim 3 --codebook-size 2 --pca-dim 2",
                   dir);
  ASSERT_EQ(r.code, 0) << r.err;
  auto fv = load_feature_matrix(dir / "fv.csv", MatrixFormat::Csv);
  EXPECT_EQ(fv.cols(), 2u);
  EXPECT_EQ(fv.ids, grids.ids);
  r = run_cli("encode --in " + (dir / "g.csv").string() + " --out " + (dir / "v.csv").string() +
                  " --method vlad --descriptor-dim 5 --codebook-size 2",
              dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(std::filesystem::exists(dir / "v.csv"));
}
