#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ldpo/types.hpp"

namespace ldpo {

/// N items with D-dimensional features and stable, unique ids.
struct FeatureMatrix {
  std::vector<std::string> ids;
  Matrix values;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }

  /// Checks N >= 1, D >= 1, finite entries and unique ids.
  void validate() const;

  /// Subset of rows, in the given order.
  FeatureMatrix select(const std::vector<std::size_t>& rows) const;
};

/// The s x s grid of d-dimensional local descriptors of one item, stored one
/// location per row (s*s rows, d columns).
struct DescriptorGrid {
  std::string id;
  std::size_t side = 0;
  Matrix descriptors;

  std::size_t dim() const { return static_cast<std::size_t>(descriptors.cols()); }
  void validate() const;
};

/// Interprets each row of `flat` as a flattened grid (location-major, d values
/// per location). Throws unless cols is d times a perfect square.
std::vector<DescriptorGrid> grids_from_rows(const FeatureMatrix& flat, std::size_t descriptor_dim);

/// Stacks all local descriptors of the grids into one matrix.
Matrix pool_descriptors(const std::vector<DescriptorGrid>& grids);

enum class Split : std::uint8_t { Train, Validation, Test };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct SplitRatios {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

struct SplitAssignment {
  std::vector<Split> tags;
  std::uint64_t seed = 0;

  std::vector<std::size_t> indices(Split s) const;
  std::size_t count(Split s) const;
};

/// Seeded Fisher-Yates shuffle of 0..n-1; the first floor(n*val) shuffled
/// positions go to validation, the next floor(n*test) to test, the rest to
/// train.
SplitAssignment split_dataset(std::size_t n, const SplitRatios& ratios, std::uint64_t seed);

/// Item id -> normalized token list.
using TextCorpus = std::map<std::string, std::vector<std::string>>;

/// Lowercases, splits on non-alphabetic characters and drops tokens shorter
/// than `min_length`.
std::vector<std::string> tokenize(std::string_view text, std::size_t min_length = 3);

/// Reads a JSON object {"id": "document text", ...} and tokenizes each entry.
TextCorpus load_text_corpus(const std::filesystem::path& path);

/// A cluster assignment together with the ids it labels.
struct LabeledAssignment {
  std::vector<std::string> ids;
  ClusterAssignment assignment;
};

/// Reorders `b` to follow the id order of `a`. Throws if the id sets differ.
ClusterAssignment align_to(const LabeledAssignment& a, const LabeledAssignment& b);

enum class MatrixFormat { Fmat, Csv };

/// fmat for ".fmat" / ".bin", csv otherwise.
MatrixFormat format_from_extension(const std::filesystem::path& path);

FeatureMatrix load_feature_matrix(const std::filesystem::path& path, MatrixFormat format);
void save_feature_matrix(const FeatureMatrix& m, const std::filesystem::path& path, MatrixFormat format);

/// Raw fmat payload without the id sidecar; used for model parameters.
Matrix load_fmat(const std::filesystem::path& path);
void save_fmat(const Matrix& m, const std::filesystem::path& path);

/// Encodes a matrix in the fmat byte layout.
std::string encode_fmat(const Matrix& m);
Matrix decode_fmat(std::string_view bytes, const std::string& source);

LabeledAssignment load_assignment(const std::filesystem::path& path);
void save_assignment(const std::vector<std::string>& ids, const ClusterAssignment& a,
                     const std::filesystem::path& path);

SplitAssignment load_split(const std::filesystem::path& path, const std::vector<std::string>& ids);
void save_split(const std::vector<std::string>& ids, const SplitAssignment& s,
                const std::filesystem::path& path);

/// Writes to a temporary sibling then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that round-trips, always carrying a '.' or exponent.
std::string format_real(double v);

}  // namespace ldpo
