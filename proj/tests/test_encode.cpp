#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "ldpo/encode.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ldpo;

namespace {

DescriptorGrid random_grid(std::size_t side, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  DescriptorGrid g;
  g.id = "g";
  g.side = side;
  g.descriptors.resize(static_cast<Eigen::Index>(side * side), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < g.descriptors.size(); ++i) g.descriptors.data()[i] = nd(rng);
  return g;
}

GmmCodebook random_gmm(std::size_t k, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  GmmCodebook gmm;
  gmm.weights.resize(static_cast<Eigen::Index>(k));
  gmm.means.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  gmm.variances.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  for (std::size_t c = 0; c < k; ++c) {
    gmm.weights(static_cast<Eigen::Index>(c)) = u(rng);
    for (std::size_t j = 0; j < d; ++j) {
      gmm.means(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = nd(rng);
      gmm.variances(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = u(rng);
    }
  }
  gmm.weights /= gmm.weights.sum();
  return gmm;
}

double max_abs_diff(const Vector& a, const std::vector<double>& b) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a(i) - b[static_cast<std::size_t>(i)]));
  return worst;
}

}  // namespace

TEST(Encode, FisherLengthAndOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto grid = random_grid(3, 8, rng);
    auto gmm = random_gmm(4, 8, rng);
    for (bool normalize : {false, true}) {
      const Vector fv = encode_fisher(grid, gmm, {normalize});
      ASSERT_EQ(fv.size(), 2 * 4 * 8);
      EXPECT_LE(max_abs_diff(fv, oracle::fisher(grid.descriptors, gmm, normalize)), 1e-10);
    }
  }
}

TEST(Encode, VladLengthAndOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto grid = random_grid(3, 8, rng);
    VladCodebook cb{random_grid(2, 8, rng).descriptors};
    for (bool normalize : {false, true}) {
      const Vector v = encode_vlad(grid, cb, {normalize});
      ASSERT_EQ(v.size(), 4 * 8);
      EXPECT_LE(max_abs_diff(v, oracle::vlad(grid.descriptors, cb.codewords, normalize)), 1e-10);
    }
  }
}

TEST(Encode, OrderInvariance) {
  std::mt19937_64 rng(5);
  auto grid = random_grid(4, 8, rng);
  auto gmm = random_gmm(4, 8, rng);
  VladCodebook cb{random_grid(2, 8, rng).descriptors};
  std::vector<Eigen::Index> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  DescriptorGrid shuffled = grid;
  for (Eigen::Index i = 0; i < 16; ++i) shuffled.descriptors.row(i) = grid.descriptors.row(perm[static_cast<std::size_t>(i)]);
  EXPECT_LE((encode_fisher(grid, gmm) - encode_fisher(shuffled, gmm)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((encode_vlad(grid, cb) - encode_vlad(shuffled, cb)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encode, NormalizedOutputsHaveUnitNorm) {
  std::mt19937_64 rng(6);
  auto grid = random_grid(3, 4, rng);
  EXPECT_NEAR(encode_fisher(grid, random_gmm(2, 4, rng)).norm(), 1.0, 1e-12);
  EXPECT_NEAR(encode_vlad(grid, VladCodebook{random_grid(1, 4, rng).descriptors}).norm(), 1.0, 1e-12);
}

TEST(Encode, DimensionMismatchThrows) {
  std::mt19937_64 rng(7);
  auto grid = random_grid(2, 4, rng);
  EXPECT_THROW(encode_fisher(grid, random_gmm(2, 5, rng)), Error);
  EXPECT_THROW(encode_vlad(grid, VladCodebook{Matrix::Zero(2, 3)}), Error);
}

TEST(Encode, GmmRecoversSeparatedComponents) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd(0.0, 0.3);
  Matrix x(400, 2);
  for (Eigen::Index i = 0; i < 400; ++i) {
    const double cx = i < 200 ? -5.0 : 5.0;
    x(i, 0) = cx + nd(rng);
    x(i, 1) = nd(rng);
  }
  auto fit = fit_gmm(x, 2, 1);
  fit.gmm.validate();
  EXPECT_NEAR(fit.gmm.weights.sum(), 1.0, 1e-12);
  std::vector<double> mx{fit.gmm.means(0, 0), fit.gmm.means(1, 0)};
  std::sort(mx.begin(), mx.end());
  EXPECT_NEAR(mx[0], -5.0, 0.1);
  EXPECT_NEAR(mx[1], 5.0, 0.1);
  for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i) {
    EXPECT_GE(fit.log_likelihood[i], fit.log_likelihood[i - 1] - 1e-9);
  }
  const Matrix post = gmm_posteriors(fit.gmm, x);
  EXPECT_LE((post.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Encode, PcaMatchesEigenDecompositionAndCapsAtRank) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix x(30, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  x.col(4) = x.col(0) + x.col(1);  // rank 4 after centering
  auto model = fit_pca(x, 10);
  EXPECT_EQ(model.output_dim(), 4u);
  const Matrix proj_t_proj = model.projection.transpose() * model.projection;
  EXPECT_LE((proj_t_proj - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Matrix cov = centered.transpose() * centered / 29.0;
  for (Eigen::Index c = 0; c < 4; ++c) {
    const Vector v = model.projection.col(c);
    EXPECT_LE((cov * v - model.eigenvalues(c) * v).cwiseAbs().maxCoeff(), 1e-9);
  }
  for (Eigen::Index c = 1; c < 4; ++c) EXPECT_GE(model.eigenvalues(c - 1), model.eigenvalues(c));
  const Matrix y = apply_pca(model, x);
  EXPECT_EQ(y.cols(), 4);
  EXPECT_LE(y.colwise().mean().cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Encode, PcaWideDataUsesGramRoute) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix x(6, 20);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  auto model = fit_pca(x, 50);
  EXPECT_EQ(model.output_dim(), 5u);
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Matrix cov = centered.transpose() * centered / 5.0;
  for (Eigen::Index c = 0; c < 5; ++c) {
    const Vector v = model.projection.col(c);
    EXPECT_NEAR(v.norm(), 1.0, 1e-10);
    EXPECT_LE((cov * v - model.eigenvalues(c) * v).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Encode, PcaModelRoundTrip) {
  TempDir dir("pca");
  Matrix x = Matrix::Random(12, 4);
  auto model = fit_pca(x, 2);
  save_pca_model(model, dir / "p");
  auto back = load_pca_model(dir / "p");
  EXPECT_EQ(back.projection, model.projection);
  EXPECT_EQ(back.mean, model.mean);
}

TEST(Encode, CorpusEncodingShapes) {
  std::mt19937_64 rng(11);
  std::vector<DescriptorGrid> grids;
  for (int i = 0; i < 6; ++i) {
    grids.push_back(random_grid(3, 4, rng));
    grids.back().id = "g" + std::to_string(i);
  }
  EncodingConfig fv{EncodingMethod::Fisher, 2, 0, 1};
  auto a = encode_corpus(grids, fv);
  EXPECT_EQ(a.cols(), 2u * 2u * 4u);
  EXPECT_EQ(a.ids[5], "g5");
  EncodingConfig vlad{EncodingMethod::Vlad, 3, 4, 1};
  auto b = encode_corpus(grids, vlad);
  EXPECT_EQ(b.cols(), 4u);
  EXPECT_EQ(b.rows(), 6u);
}
