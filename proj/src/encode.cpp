#include "ldpo/encode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "ldpo/cluster.hpp"

namespace ldpo {

namespace {

constexpr double kNormEpsilon = 1e-12;

void l2_normalize(Eigen::Ref<Vector> v) {
  const double norm = v.norm();
  if (norm >= kNormEpsilon) v /= norm;
}

void check_grid_dim(const DescriptorGrid& grid, std::size_t expected, const char* what) {
  grid.validate();
  if (grid.dim() != expected) {
    throw Error(std::string(what) + ": descriptor dimension " + std::to_string(grid.dim()) +
                " does not match codebook dimension " + std::to_string(expected));
  }
}

std::size_t count_distinct_rows(const Matrix& x) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), 0);
  auto row_less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (x(a, c) != x(b, c)) return x(a, c) < x(b, c);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), row_less);
  std::size_t distinct = order.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (row_less(order[i - 1], order[i])) ++distinct;
  }
  return distinct;
}

// Per-descriptor, per-component log of w_k N(x | mu_k, var_k).
Matrix weighted_log_densities(const GmmCodebook& gmm, const Matrix& x) {
  const auto t = x.rows();
  const auto k = gmm.means.rows();
  Matrix out(t, k);
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  for (Eigen::Index c = 0; c < k; ++c) {
    const double log_w = std::log(gmm.weights(c));
    double log_det = 0;
    for (Eigen::Index d = 0; d < x.cols(); ++d) log_det += std::log(gmm.variances(c, d)) + log_2pi;
    for (Eigen::Index i = 0; i < t; ++i) {
      double q = 0;
      for (Eigen::Index d = 0; d < x.cols(); ++d) {
        const double diff = x(i, d) - gmm.means(c, d);
        q += diff * diff / gmm.variances(c, d);
      }
      out(i, c) = log_w - 0.5 * (log_det + q);
    }
  }
  return out;
}

// Fills responsibilities and returns the mean log-likelihood.
double e_step(const GmmCodebook& gmm, const Matrix& x, Matrix& resp) {
  resp = weighted_log_densities(gmm, x);
  double total = 0;
  for (Eigen::Index i = 0; i < resp.rows(); ++i) {
    const double mx = resp.row(i).maxCoeff();
    const double lse = mx + std::log((resp.row(i).array() - mx).exp().sum());
    resp.row(i) = (resp.row(i).array() - lse).exp();
    total += lse;
  }
  return total / static_cast<double>(x.rows());
}

void m_step(GmmCodebook& gmm, const Matrix& x, const Matrix& resp, double variance_floor) {
  const auto t = static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < resp.cols(); ++c) {
    const double nk = resp.col(c).sum();
    if (nk <= 0) {
      gmm.weights(c) = 0;
      continue;
    }
    gmm.weights(c) = nk / t;
    const Eigen::RowVectorXd mean = (resp.col(c).transpose() * x) / nk;
    Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) var += resp(i, c) * (x.row(i) - mean).array().square().matrix();
    var /= nk;
    gmm.means.row(c) = mean;
    gmm.variances.row(c) = var.cwiseMax(variance_floor);
  }
}

}  // namespace

void GmmCodebook::validate() const {
  const auto k = means.rows();
  if (k < 1 || means.cols() < 1) throw Error("gmm: empty codebook");
  if (weights.size() != k || variances.rows() != k || variances.cols() != means.cols()) {
    throw Error("gmm: inconsistent parameter shapes");
  }
  if ((weights.array() < 0).any() || std::abs(weights.sum() - 1.0) > 1e-9) {
    throw Error("gmm: weights must be nonnegative and sum to 1");
  }
  if ((variances.array() <= 0).any()) throw Error("gmm: variances must be positive");
}

double gmm_log_likelihood(const GmmCodebook& gmm, const Matrix& descriptors) {
  Matrix resp;
  return e_step(gmm, descriptors, resp);
}

Matrix gmm_posteriors(const GmmCodebook& gmm, const Matrix& descriptors) {
  Matrix resp;
  e_step(gmm, descriptors, resp);
  return resp;
}

GmmFit fit_gmm(const Matrix& descriptors, std::size_t components, std::uint64_t seed, const GmmOptions& options) {
  if (components < 1) throw Error("gmm: need at least one component");
  if (!descriptors.allFinite()) throw Error("gmm: non-finite descriptors");
  const std::size_t distinct = count_distinct_rows(descriptors);
  if (distinct <= 1) throw Error("gmm: degenerate data (all descriptors identical)");
  if (distinct < components) {
    throw Error("gmm: " + std::to_string(distinct) + " distinct descriptors for " + std::to_string(components) +
                " components");
  }

  const auto km = kmeans(descriptors, components, seed);
  const auto k = static_cast<Eigen::Index>(components);
  const auto d = descriptors.cols();
  GmmFit fit;
  GmmCodebook& gmm = fit.gmm;
  gmm.weights = Vector::Zero(k);
  gmm.means = km.model.centers;
  gmm.variances = Matrix::Zero(k, d);
  for (Eigen::Index i = 0; i < descriptors.rows(); ++i) {
    const auto c = static_cast<Eigen::Index>(km.assignment.labels[static_cast<std::size_t>(i)]);
    gmm.weights(c) += 1;
    gmm.variances.row(c) += (descriptors.row(i) - gmm.means.row(c)).array().square().matrix();
  }
  for (Eigen::Index c = 0; c < k; ++c) gmm.variances.row(c) /= gmm.weights(c);
  gmm.variances = gmm.variances.cwiseMax(options.variance_floor);
  gmm.weights /= static_cast<double>(descriptors.rows());

  Matrix resp;
  double ll = e_step(gmm, descriptors, resp);
  fit.log_likelihood.push_back(ll);
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    m_step(gmm, descriptors, resp, options.variance_floor);
    const double next = e_step(gmm, descriptors, resp);
    fit.log_likelihood.push_back(next);
    const bool done = std::abs(next - ll) < options.tolerance * std::abs(ll);
    ll = next;
    if (done) break;
  }
  return fit;
}

Vector encode_fisher(const DescriptorGrid& grid, const GmmCodebook& gmm, const EncodeOptions& options) {
  check_grid_dim(grid, gmm.dim(), "fisher");
  const Matrix& x = grid.descriptors;
  const Matrix resp = gmm_posteriors(gmm, x);
  const auto k = static_cast<Eigen::Index>(gmm.num_components());
  const auto d = static_cast<Eigen::Index>(gmm.dim());
  const auto t = static_cast<double>(x.rows());

  Vector fv = Vector::Zero(2 * k * d);
  for (Eigen::Index c = 0; c < k; ++c) {
    const Eigen::RowVectorXd sigma = gmm.variances.row(c).cwiseSqrt();
    auto mean_block = fv.segment(c * d, d);
    auto var_block = fv.segment((k + c) * d, d);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double g = resp(i, c);
      if (g == 0) continue;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double z = (x(i, j) - gmm.means(c, j)) / sigma(j);
        mean_block(j) += g * z;
        var_block(j) += g * (z * z - 1.0);
      }
    }
    const double w = std::max(gmm.weights(c), 1e-300);
    mean_block /= t * std::sqrt(w);
    var_block /= t * std::sqrt(2.0 * w);
  }
  if (options.normalize) {
    fv = fv.array().sign() * fv.array().abs().sqrt();
    l2_normalize(fv);
  }
  return fv;
}

VladCodebook fit_vlad_codebook(const Matrix& descriptors, std::size_t codewords, std::uint64_t seed) {
  VladCodebook cb;
  cb.codewords = kmeans(descriptors, codewords, seed).model.centers;
  return cb;
}

Vector encode_vlad(const DescriptorGrid& grid, const VladCodebook& codebook, const EncodeOptions& options) {
  if (codebook.size() < 1) throw Error("vlad: empty codebook");
  check_grid_dim(grid, codebook.dim(), "vlad");
  const Matrix& x = grid.descriptors;
  const auto k = codebook.codewords.rows();
  const auto d = codebook.codewords.cols();
  Vector v = Vector::Zero(k * d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < k; ++c) {
      const double dist = (x.row(i) - codebook.codewords.row(c)).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    v.segment(best * d, d) += (x.row(i) - codebook.codewords.row(best)).transpose();
  }
  if (options.normalize) {
    for (Eigen::Index c = 0; c < k; ++c) l2_normalize(v.segment(c * d, d));
    l2_normalize(v);
  }
  return v;
}

PcaModel fit_pca(const Matrix& x, std::size_t target_dim) {
  const auto n = x.rows();
  const auto d = x.cols();
  if (n < 2) throw Error("pca: need at least 2 rows");
  if (target_dim < 1) throw Error("pca: target dimension must be positive");
  if (!x.allFinite()) throw Error("pca: non-finite input");

  PcaModel m;
  m.mean = x.colwise().mean().transpose();
  Matrix centered = x;
  centered.rowwise() -= m.mean.transpose();
  const double denom = static_cast<double>(n - 1);

  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;  // d x r, descending order after the flip below
  if (d <= n) {
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw Error("pca: eigendecomposition failed");
    values = es.eigenvalues().reverse();
    vectors = es.eigenvectors().rowwise().reverse();
  } else {
    // Gram route: eigenvectors of X X^T map to covariance eigenvectors.
    const Eigen::MatrixXd gram = (centered * centered.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw Error("pca: eigendecomposition failed");
    values = es.eigenvalues().reverse();
    const Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
    vectors = centered.transpose() * u;
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
      const double norm = vectors.col(j).norm();
      if (norm > 0) vectors.col(j) /= norm;
    }
  }

  const double top = std::max(values.size() > 0 ? values(0) : 0.0, 0.0);
  const double tol = top * 1e-10 * static_cast<double>(std::max(n, d));
  Eigen::Index rank = 0;
  while (rank < values.size() && values(rank) > tol) ++rank;
  if (rank == 0) throw Error("pca: centered data has rank 0");
  const Eigen::Index out_dim = std::min<Eigen::Index>(static_cast<Eigen::Index>(target_dim), rank);

  m.projection = vectors.leftCols(out_dim);
  m.eigenvalues = values.head(out_dim);
  for (Eigen::Index j = 0; j < out_dim; ++j) {
    Eigen::Index arg = 0;
    m.projection.col(j).cwiseAbs().maxCoeff(&arg);
    if (m.projection(arg, j) < 0) m.projection.col(j) *= -1.0;
  }
  return m;
}

Vector apply_pca(const PcaModel& model, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != model.input_dim()) {
    throw Error("pca: input dimension " + std::to_string(x.size()) + " does not match model dimension " +
                std::to_string(model.input_dim()));
  }
  return model.projection.transpose() * (x - model.mean);
}

Matrix apply_pca(const PcaModel& model, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != model.input_dim()) {
    throw Error("pca: input dimension " + std::to_string(x.cols()) + " does not match model dimension " +
                std::to_string(model.input_dim()));
  }
  Matrix centered = x;
  centered.rowwise() -= model.mean.transpose();
  return centered * model.projection;
}

void save_pca_model(const PcaModel& m, const std::filesystem::path& prefix) {
  auto path = [&](const char* suffix) {
    std::filesystem::path p = prefix;
    p += suffix;
    return p;
  };
  save_fmat(Matrix(m.mean.transpose()), path(".mean.fmat"));
  save_fmat(m.projection, path(".projection.fmat"));
  save_fmat(Matrix(m.eigenvalues.transpose()), path(".eigenvalues.fmat"));
}

PcaModel load_pca_model(const std::filesystem::path& prefix) {
  auto path = [&](const char* suffix) {
    std::filesystem::path p = prefix;
    p += suffix;
    return p;
  };
  PcaModel m;
  m.mean = load_fmat(path(".mean.fmat")).row(0).transpose();
  m.projection = load_fmat(path(".projection.fmat"));
  m.eigenvalues = load_fmat(path(".eigenvalues.fmat")).row(0).transpose();
  if (m.projection.rows() != m.mean.size() || m.projection.cols() != m.eigenvalues.size()) {
    throw Error("pca: inconsistent model files at " + prefix.string());
  }
  return m;
}

FeatureMatrix encode_corpus(const std::vector<DescriptorGrid>& grids, const EncodingConfig& config) {
  const Matrix pooled = pool_descriptors(grids);
  FeatureMatrix out;
  std::vector<Vector> rows;
  rows.reserve(grids.size());
  if (config.method == EncodingMethod::Fisher) {
    const auto gmm = fit_gmm(pooled, config.codebook_size, config.seed).gmm;
    for (const auto& g : grids) rows.push_back(encode_fisher(g, gmm));
  } else {
    const auto cb = fit_vlad_codebook(pooled, config.codebook_size, config.seed);
    for (const auto& g : grids) rows.push_back(encode_vlad(g, cb));
  }
  Matrix encoded(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) encoded.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  for (const auto& g : grids) out.ids.push_back(g.id);
  if (config.pca_dim > 0) {
    const auto pca = fit_pca(encoded, config.pca_dim);
    out.values = apply_pca(pca, encoded);
  } else {
    out.values = std::move(encoded);
  }
  return out;
}

}  // namespace ldpo
