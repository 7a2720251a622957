#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldpo/config.hpp"
#include "ldpo/data.hpp"
#include "ldpo/hierarchy.hpp"
#include "ldpo/learner.hpp"
#include "ldpo/metrics.hpp"

namespace ldpo {

enum class ClusteringMode { KMeans, KMeansRim };
enum class EncodingMode { None, Fisher, Vlad };

struct LoopConfig {
  /// Initial features (csv or fmat). Read as flattened descriptor grids when
  /// an encoding is selected.
  std::filesystem::path features;
  /// Per-iteration feature files used instead of the learner embedding for t > 0.
  std::optional<ExternalFeatureSource> external;
  /// Optional pseudo-task labels (id,cluster) that stand in for iteration 0's clustering.
  std::filesystem::path initial_labels;
  /// Optional reference labels; only used for the gt_* report columns.
  std::filesystem::path ground_truth;

  ClusteringMode clustering = ClusteringMode::KMeansRim;
  std::size_t k = 100;        // kmeans
  std::size_t k_init = 1000;  // kmeans_rim over-segmentation
  double lambda = 1.0;
  std::size_t kmeans_restarts = 1;

  EncodingMode encoding = EncodingMode::None;
  std::size_t codebook_size = 64;
  std::size_t descriptor_dim = 0;
  std::size_t pca_dim = 4096;

  ConvergenceThresholds thresholds;
  std::size_t max_iterations = 10;
  SplitRatios ratios;
  LearnerConfig learner;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Keys accepted by `loop_config_from`, plus the CLI-only ones.
const std::set<std::string>& known_config_keys();

/// Reads a LoopConfig; relative paths resolve against the config file's directory.
LoopConfig loop_config_from(const KeyValueConfig& kv);

struct IterationReport {
  std::size_t iteration = 0;
  std::size_t num_clusters = 0;
  std::optional<double> purity;  // vs previous iteration
  std::optional<double> nmi;
  std::optional<double> train_top1, val_top1, test_top1;
  std::optional<double> train_top5, val_top5, test_top5;
  std::optional<double> gt_purity, gt_nmi;
  double wall_clock_seconds = 0;
  std::uint64_t seed = 0;
  /// "running", "converged", "max_iterations_reached" or "collapsed".
  std::string status = "running";

  nlohmann::ordered_json to_json() const;
};

struct LoopInputs {
  FeatureMatrix features;
  std::optional<LabeledAssignment> initial_labels;
  std::optional<LabeledAssignment> ground_truth;
};

LoopInputs load_loop_inputs(const LoopConfig& config);

struct LoopResult {
  std::vector<IterationReport> reports;
  std::vector<ClusterAssignment> assignments;  // one per iteration
  std::vector<SplitAssignment> splits;         // one per trained iteration
  ClusterAssignment final_assignment;
  FeatureMatrix final_features;  // what the final clustering ran on
  FeatureMatrix base_features;   // learner input, after any encoding
  std::optional<LearnerModel> final_model;
  /// Labels and split the final model was trained with.
  ClusterAssignment model_assignment;
  std::optional<SplitAssignment> model_split;

  const std::string& status() const { return reports.back().status; }
};

LoopResult run_loop(const LoopConfig& config, const LoopInputs& inputs);
LoopResult run_loop(const LoopConfig& config);

/// Moves items between splits so that every class has a training example.
void ensure_train_coverage(SplitAssignment& split, const ClusterAssignment& labels);

/// Category tree from the model's test-split probabilities; falls back to all
/// items when some class has no test item. Throws "no converged model" when
/// `model` is null.
CategoryTree run_tree(const ClusterAssignment& assignment, const LearnerModel* model, const FeatureMatrix& features,
                      const SplitAssignment* split, const ApConfig& ap = {});

nlohmann::ordered_json reports_to_json(const std::vector<IterationReport>& reports);
std::string reports_to_csv(const std::vector<IterationReport>& reports);

/// reports.json, reports.csv, iter_<t>.assignments.csv, iter_<t>.split.csv,
/// final.assignments.csv, base_features.fmat and the model files.
void write_loop_outputs(const LoopResult& result, const std::filesystem::path& out_dir);

struct SavedLoop {
  LearnerModel model;
  ClusterAssignment assignment;
  FeatureMatrix base_features;
  std::optional<SplitAssignment> split;
};

/// Reads what `write_loop_outputs` left behind; throws "no converged model"
/// when the directory holds no trained model.
SavedLoop load_loop_outputs(const std::filesystem::path& out_dir);

}  // namespace ldpo
