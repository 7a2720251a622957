#include <gtest/gtest.h>

#include "ldpo/pipeline.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ldpo;

namespace {

LoopConfig fast_config() {
  LoopConfig c;
  c.clustering = ClusteringMode::KMeansRim;
  c.k_init = 20;
  c.lambda = 1.0;
  c.max_iterations = 5;
  c.learner.hidden = 64;
  c.learner.epochs = 20;
  c.seed = 3;
  return c;
}

LoopInputs inputs_of(const oracle::Corpus& c, bool with_truth = true) {
  LoopInputs in;
  in.features = c.features;
  if (with_truth) in.ground_truth = LabeledAssignment{c.features.ids, c.truth};
  return in;
}

}  // namespace

TEST(Pipeline, SingleIterationReport) {
  auto c = oracle::blobs(3, 30, 4, 6.0, 1);
  auto cfg = fast_config();
  cfg.max_iterations = 1;
  auto r = run_loop(cfg, inputs_of(c));
  ASSERT_EQ(r.reports.size(), 1u);
  EXPECT_EQ(r.status(), "max_iterations_reached");
  EXPECT_FALSE(r.reports[0].nmi.has_value());
  EXPECT_FALSE(r.reports[0].purity.has_value());
  EXPECT_TRUE(r.reports[0].train_top1.has_value());
  EXPECT_TRUE(r.final_model.has_value());
  const auto j = r.reports[0].to_json();
  EXPECT_TRUE(j["nmi"].is_null());
  EXPECT_EQ(j.begin().key(), "iteration");
  EXPECT_EQ(j["status"], "max_iterations_reached");
}

TEST(Pipeline, FiveBlobsConvergeToFiveClusters) {
  auto c = oracle::blobs(5, 100, 10, 5.0, 7);
  auto r = run_loop(fast_config(), inputs_of(c));
  EXPECT_EQ(r.status(), "converged");
  EXPECT_LE(r.reports.size(), 5u);
  EXPECT_EQ(r.final_assignment.num_clusters, 5u);
  EXPECT_GE(purity(r.final_assignment, c.truth), 0.95);
  EXPECT_GE(*r.reports.back().gt_purity, 0.95);
  EXPECT_FALSE(r.reports.back().train_top1.has_value());
}

TEST(Pipeline, DeterministicForFixedSeed) {
  auto c = oracle::blobs(3, 30, 4, 5.0, 2);
  auto cfg = fast_config();
  cfg.max_iterations = 3;
  auto a = run_loop(cfg, inputs_of(c));
  auto b = run_loop(cfg, inputs_of(c));
  ASSERT_EQ(a.assignments.size(), b.assignments.size());
  for (std::size_t t = 0; t < a.assignments.size(); ++t) EXPECT_EQ(a.assignments[t].labels, b.assignments[t].labels);
  EXPECT_EQ(reports_to_csv(a.reports).size(), reports_to_csv(b.reports).size());
  for (std::size_t t = 0; t < a.reports.size(); ++t) EXPECT_EQ(a.reports[t].test_top1, b.reports[t].test_top1);
}

TEST(Pipeline, IterationSeedsAdvanceFromBase) {
  auto c = oracle::blobs(3, 30, 4, 5.0, 3);
  auto cfg = fast_config();
  cfg.seed = 40;
  cfg.max_iterations = 2;
  cfg.thresholds = {1.0, 1.0};
  auto r = run_loop(cfg, inputs_of(c));
  for (std::size_t t = 0; t < r.reports.size(); ++t) EXPECT_EQ(r.reports[t].seed, 40 + t);
  for (std::size_t t = 0; t < r.splits.size(); ++t) {
    auto expected = split_dataset(c.features.rows(), cfg.ratios, 40 + t);
    ensure_train_coverage(expected, r.assignments[t]);
    EXPECT_EQ(r.splits[t].tags, expected.tags);
  }
}

TEST(Pipeline, InitialLabelsStandInForFirstClustering) {
  auto c = oracle::blobs(3, 30, 4, 5.0, 4);
  auto in = inputs_of(c);
  auto noisy = oracle::corrupt(c.truth, 0.2, 1);
  in.initial_labels = LabeledAssignment{c.features.ids, noisy};
  auto cfg = fast_config();
  cfg.max_iterations = 1;
  auto r = run_loop(cfg, in);
  EXPECT_EQ(r.assignments[0].labels, noisy.labels);
  EXPECT_NEAR(*r.reports[0].gt_purity, purity(noisy, c.truth), 1e-12);
}

TEST(Pipeline, KMeansModeUsesFixedK) {
  auto c = oracle::blobs(4, 20, 3, 6.0, 5);
  auto cfg = fast_config();
  cfg.clustering = ClusteringMode::KMeans;
  cfg.k = 4;
  cfg.max_iterations = 2;
  auto r = run_loop(cfg, inputs_of(c, false));
  for (const auto& a : r.assignments) EXPECT_EQ(a.num_clusters, 4u);
  EXPECT_FALSE(r.reports[0].gt_purity.has_value());
}

TEST(Pipeline, TrainCoverageSwapsItemsIn) {
  SplitAssignment s;
  s.tags = {Split::Train, Split::Train, Split::Train, Split::Test, Split::Validation};
  ClusterAssignment labels{{0, 0, 0, 1, 1}, 2};
  ensure_train_coverage(s, labels);
  EXPECT_EQ(s.count(Split::Train), 3u);
  EXPECT_EQ(s.tags[3], Split::Train);
  EXPECT_EQ(s.tags[0], Split::Test);

  SplitAssignment impossible;
  impossible.tags = {Split::Train, Split::Test};
  EXPECT_THROW(ensure_train_coverage(impossible, ClusterAssignment{{0, 1}, 2}), Error);
}

TEST(Pipeline, TreeRequiresModel) {
  FeatureMatrix f{{"a", "b"}, Matrix::Zero(2, 1)};
  try {
    run_tree(ClusterAssignment{{0, 1}, 2}, nullptr, f, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no converged model"), std::string::npos);
  }
}

TEST(Pipeline, TwoClusterRunGivesTwoLevelTree) {
  auto c = oracle::blobs(2, 40, 4, 8.0, 6);
  auto cfg = fast_config();
  cfg.clustering = ClusteringMode::KMeans;
  cfg.k = 2;
  auto r = run_loop(cfg, inputs_of(c));
  ASSERT_TRUE(r.final_model.has_value());
  auto tree = run_tree(r.model_assignment, &*r.final_model, r.base_features, &*r.model_split);
  tree.validate();
  EXPECT_EQ(tree.widths(), (std::vector<std::size_t>{2, 1}));
}

TEST(Pipeline, OutputsRoundTrip) {
  TempDir dir("loop");
  auto c = oracle::blobs(3, 30, 4, 6.0, 8);
  auto cfg = fast_config();
  cfg.max_iterations = 2;
  auto r = run_loop(cfg, inputs_of(c));
  write_loop_outputs(r, dir.path());
  for (const char* f : {"reports.json", "reports.csv", "iter_0.assignments.csv", "final.assignments.csv",
                        "base_features.fmat"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  auto saved = load_loop_outputs(dir.path());
  EXPECT_EQ(saved.assignment.labels, r.model_assignment.labels);
  EXPECT_EQ(saved.base_features.values, r.base_features.values);
  EXPECT_EQ(saved.model.hidden_weights, r.final_model->hidden_weights);
  ASSERT_TRUE(saved.split.has_value());
  EXPECT_EQ(saved.split->tags, r.model_split->tags);
  const auto csv = read_file(dir / "reports.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "iteration,K,purity,nmi,train_top1,val_top1,test_top1,train_top5,val_top5,test_top5,gt_purity,gt_nmi,"
            "wall_clock_seconds,seed,status");

  TempDir empty("empty");
  EXPECT_THROW(load_loop_outputs(empty.path()), Error);
}

TEST(Pipeline, CollapsedRunStops) {
  FeatureMatrix f{oracle::make_ids(4), Matrix::Zero(4, 2)};
  auto cfg = fast_config();
  cfg.clustering = ClusteringMode::KMeans;
  cfg.k = 1;
  LoopInputs in;
  in.features = f;
  auto r = run_loop(cfg, in);
  EXPECT_EQ(r.status(), "collapsed");
  EXPECT_FALSE(r.final_model.has_value());
}
