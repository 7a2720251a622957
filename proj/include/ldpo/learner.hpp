#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ldpo/data.hpp"
#include "ldpo/types.hpp"

namespace ldpo {

struct LearnerConfig {
  std::size_t hidden = 256;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  /// Learning-rate multiplier for the re-initialized output layer when
  /// training from a warm start.
  double output_lr_multiplier = 10.0;
  /// L2 decay on both weight matrices (biases excluded).
  double weight_decay = 5e-4;
  /// Start the output layer at zero instead of He-scaled Gaussian weights.
  bool zero_output_init = false;
};

/// affine -> ReLU -> affine -> softmax.
struct LearnerModel {
  Matrix hidden_weights;  // D x H
  Vector hidden_bias;     // H
  Matrix output_weights;  // H x K
  Vector output_bias;     // K
  LearnerConfig config;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return static_cast<std::size_t>(hidden_weights.rows()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(hidden_weights.cols()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(output_weights.cols()); }
};

struct TrainResult {
  LearnerModel model;
  /// Mean cross-entropy on the training set before training and after each epoch.
  std::vector<double> loss_history;
};

/// Seeded minibatch SGD with momentum on cross-entropy. With `warm_start`,
/// the hidden layer is copied and the output layer is re-initialized at the
/// new class count with the output learning-rate multiplier.
TrainResult train(const Matrix& x, const ClusterAssignment& labels, const LearnerModel* warm_start,
                  const LearnerConfig& config, std::uint64_t seed);

/// Post-ReLU hidden activations (N x H).
Matrix embed(const LearnerModel& model, const Matrix& x);

/// Softmax class probabilities (N x K).
Matrix predict_proba(const LearnerModel& model, const Matrix& x);

struct LearnerGradients {
  double loss = 0;
  Matrix hidden_weights;
  Vector hidden_bias;
  Matrix output_weights;
  Vector output_bias;
};

/// Mean cross-entropy over the rows and its parameter gradients.
LearnerGradients learner_gradients(const LearnerModel& model, const Matrix& x, const std::vector<std::size_t>& labels);

double cross_entropy(const LearnerModel& model, const Matrix& x, const std::vector<std::size_t>& labels);

void save_learner(const LearnerModel& model, const std::filesystem::path& prefix);
LearnerModel load_learner(const std::filesystem::path& prefix);

/// Per-iteration feature files; "{t}" in the pattern is replaced with the
/// iteration index.
struct ExternalFeatureSource {
  std::string pattern;
  std::size_t expected_dim = 0;  // 0 accepts any width

  std::filesystem::path resolve(std::size_t iteration) const;
};

struct LearnerEmbeddingSource {};

using FeatureSource = std::variant<LearnerEmbeddingSource, ExternalFeatureSource>;

/// Features for the next clustering round, row-aligned to `corpus.ids`:
/// either the learner's embedding of `corpus` or the external file for the
/// iteration.
FeatureMatrix next_features(const FeatureSource& source, std::size_t iteration, const FeatureMatrix& corpus,
                            const LearnerModel* model);

/// Reorders `m` to follow `ids`; throws naming the first missing or unknown id.
FeatureMatrix align_rows(const FeatureMatrix& m, const std::vector<std::string>& ids);

}  // namespace ldpo
