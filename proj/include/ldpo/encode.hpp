#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ldpo/data.hpp"
#include "ldpo/types.hpp"

namespace ldpo {

/// Diagonal-covariance Gaussian mixture used as a Fisher-vector vocabulary.
struct GmmCodebook {
  Vector weights;    // K
  Matrix means;      // K x d
  Matrix variances;  // K x d, each >= variance floor

  std::size_t num_components() const { return static_cast<std::size_t>(means.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(means.cols()); }
  void validate() const;
};

struct GmmOptions {
  double variance_floor = 1e-6;
  double tolerance = 1e-6;  // relative change of the log-likelihood
  std::size_t max_iter = 200;
};

struct GmmFit {
  GmmCodebook gmm;
  /// Mean log-likelihood per descriptor, recorded before every M-step and
  /// once more after the last one.
  std::vector<double> log_likelihood;
};

/// EM from a k-means initialization.
GmmFit fit_gmm(const Matrix& descriptors, std::size_t components, std::uint64_t seed,
               const GmmOptions& options = {});

/// Mean per-descriptor log-likelihood under the mixture.
double gmm_log_likelihood(const GmmCodebook& gmm, const Matrix& descriptors);

/// Posterior responsibilities (T x K).
Matrix gmm_posteriors(const GmmCodebook& gmm, const Matrix& descriptors);

struct EncodeOptions {
  /// Signed square root then global L2 for FV; per-codeword then global L2
  /// for VLAD. Off yields the raw gradient / residual blocks.
  bool normalize = true;
};

/// Fisher vector of length 2*K*d: all mean-gradient blocks (component order),
/// followed by all variance-gradient blocks.
Vector encode_fisher(const DescriptorGrid& grid, const GmmCodebook& gmm, const EncodeOptions& options = {});

struct VladCodebook {
  Matrix codewords;  // K x d
  std::size_t size() const { return static_cast<std::size_t>(codewords.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(codewords.cols()); }
};

VladCodebook fit_vlad_codebook(const Matrix& descriptors, std::size_t codewords, std::uint64_t seed);

/// Residual sums to the nearest codeword, K*d long, block per codeword.
Vector encode_vlad(const DescriptorGrid& grid, const VladCodebook& codebook, const EncodeOptions& options = {});

struct PcaModel {
  Vector mean;         // d_in
  Matrix projection;   // d_in x d_out, orthonormal columns
  Vector eigenvalues;  // d_out, descending

  std::size_t input_dim() const { return static_cast<std::size_t>(projection.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(projection.cols()); }
};

/// Leading eigenvectors of the sample covariance (1/(N-1) normalization).
/// Output dimension is min(target_dim, D, rank of the centered data).
PcaModel fit_pca(const Matrix& x, std::size_t target_dim);

Vector apply_pca(const PcaModel& model, const Vector& x);
Matrix apply_pca(const PcaModel& model, const Matrix& x);

void save_pca_model(const PcaModel& m, const std::filesystem::path& prefix);
PcaModel load_pca_model(const std::filesystem::path& prefix);

enum class EncodingMethod { Fisher, Vlad };

struct EncodingConfig {
  EncodingMethod method = EncodingMethod::Fisher;
  std::size_t codebook_size = 64;
  std::size_t pca_dim = 4096;  // 0 disables PCA
  std::uint64_t seed = 0;
};

/// Fits the vocabulary on all pooled descriptors, encodes every grid and
/// reduces with PCA; ids carry through.
FeatureMatrix encode_corpus(const std::vector<DescriptorGrid>& grids, const EncodingConfig& config);

}  // namespace ldpo
