#include "ldpo/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <json.hpp>

#include "ldpo/data.hpp"

namespace ldpo {

namespace {

double squared_distance(const Matrix& x, Eigen::Index i, const Matrix& c, Eigen::Index k) {
  double s = 0;
  for (Eigen::Index d = 0; d < x.cols(); ++d) {
    const double diff = x(i, d) - c(k, d);
    s += diff * diff;
  }
  return s;
}

// Returns the cost of the new assignment.
double assign_nearest(const Matrix& x, const Matrix& centers, std::vector<std::size_t>& labels) {
  double cost = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_k = 0;
    for (Eigen::Index k = 0; k < centers.rows(); ++k) {
      const double d = squared_distance(x, i, centers, k);
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    labels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best_k);
    cost += best;
  }
  return cost;
}

Matrix cluster_means(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t k,
                     std::vector<std::size_t>& sizes) {
  Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), x.cols());
  sizes.assign(k, 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto l = labels[static_cast<std::size_t>(i)];
    sums.row(static_cast<Eigen::Index>(l)) += x.row(i);
    ++sizes[l];
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (sizes[j] > 0) sums.row(static_cast<Eigen::Index>(j)) /= static_cast<double>(sizes[j]);
  }
  return sums;
}

// Recomputes centers as means and reseeds empty clusters; may relabel the
// reseeded points.
Matrix update_centers(const Matrix& x, std::vector<std::size_t>& labels, std::size_t k) {
  std::vector<std::size_t> sizes;
  Matrix centers = cluster_means(x, labels, k, sizes);
  bool reseeded = false;
  for (std::size_t j = 0; j < k; ++j) {
    if (sizes[j] > 0) continue;
    double far = -1;
    std::size_t pick = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const auto l = labels[static_cast<std::size_t>(i)];
      if (sizes[l] < 2) continue;
      const double d = squared_distance(x, i, centers, static_cast<Eigen::Index>(l));
      if (d > far) {
        far = d;
        pick = static_cast<std::size_t>(i);
      }
    }
    --sizes[labels[pick]];
    labels[pick] = j;
    sizes[j] = 1;
    reseeded = true;
  }
  if (reseeded) centers = cluster_means(x, labels, k, sizes);
  return centers;
}

Matrix kmeans_plus_plus(const Matrix& x, std::size_t k, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  Matrix centers(static_cast<Eigen::Index>(k), x.cols());
  std::vector<bool> chosen(n, false);
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  centers.row(0) = x.row(static_cast<Eigen::Index>(pick));
  chosen[pick] = true;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(x, static_cast<Eigen::Index>(i), centers, 0);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0;
    for (auto v : d2) total += v;
    if (total > 0) {
      const double target = unit(rng) * total;
      double acc = 0;
      pick = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    } else {
      // Every remaining point coincides with a center; take any unused index.
      std::vector<std::size_t> unused;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) unused.push_back(i);
      }
      std::uniform_int_distribution<std::size_t> any(0, unused.size() - 1);
      pick = unused[any(rng)];
    }
    chosen[pick] = true;
    centers.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(x, static_cast<Eigen::Index>(i), centers, static_cast<Eigen::Index>(c)));
    }
  }
  return centers;
}

}  // namespace

double kmeans_cost(const Matrix& x, const Matrix& centers, const ClusterAssignment& a) {
  double cost = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    cost += squared_distance(x, i, centers, static_cast<Eigen::Index>(a.labels[static_cast<std::size_t>(i)]));
  }
  return cost;
}

KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k < 1) throw Error("kmeans: k must be at least 1");
  if (k > n) throw Error("kmeans: k=" + std::to_string(k) + " exceeds N=" + std::to_string(n));
  if (!x.allFinite()) throw Error("kmeans: non-finite features");

  std::mt19937_64 rng(seed);
  KMeansResult result;
  Matrix centers = kmeans_plus_plus(x, k, rng);
  std::vector<std::size_t> labels(n, 0);
  result.cost_history.push_back(assign_nearest(x, centers, labels));

  std::vector<std::size_t> next(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    centers = update_centers(x, labels, k);
    next = labels;
    result.cost_history.push_back(assign_nearest(x, centers, next));
    ++result.iterations;
    if (next == labels) break;
    labels.swap(next);
  }
  // Leave the model consistent: centers are the means of the final labels.
  centers = update_centers(x, labels, k);

  result.assignment.labels = std::move(labels);
  result.assignment.num_clusters = k;
  result.model.centers = std::move(centers);
  result.model.cost = kmeans_cost(x, result.model.centers, result.assignment);
  return result;
}

KMeansResult kmeans_best_of(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t restarts,
                            std::size_t max_iter) {
  if (restarts < 1) throw Error("kmeans: restarts must be at least 1");
  KMeansResult best = kmeans(x, k, seed, max_iter);
  for (std::size_t r = 1; r < restarts; ++r) {
    auto candidate = kmeans(x, k, seed + r, max_iter);
    if (candidate.model.cost < best.model.cost) best = std::move(candidate);
  }
  return best;
}

// ---------------------------------------------------------------------------
// RIM

namespace {

struct Posterior {
  Matrix log_p;  // N x K
  Matrix p;      // N x K
};

Posterior posteriors(const RimModel& m, const Matrix& x) {
  Posterior out;
  out.log_p = x * m.weights.transpose();
  out.log_p.rowwise() += m.biases.transpose();
  for (Eigen::Index i = 0; i < out.log_p.rows(); ++i) {
    const double mx = out.log_p.row(i).maxCoeff();
    const double lse = mx + std::log((out.log_p.row(i).array() - mx).exp().sum());
    out.log_p.row(i).array() -= lse;
  }
  out.p = out.log_p.array().exp();
  return out;
}

// log of the mean posterior per cluster, via log-sum-exp over items.
Vector log_mean_posterior(const Matrix& log_p) {
  const auto n = static_cast<double>(log_p.rows());
  Vector out(log_p.cols());
  for (Eigen::Index k = 0; k < log_p.cols(); ++k) {
    const double mx = log_p.col(k).maxCoeff();
    out(k) = mx + std::log((log_p.col(k).array() - mx).exp().sum()) - std::log(n);
  }
  return out;
}

void check_dims(const RimModel& m, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != m.dim()) {
    throw Error("rim: feature dimension " + std::to_string(x.cols()) + " does not match model dimension " +
                std::to_string(m.dim()));
  }
}

}  // namespace

Matrix rim_posteriors(const RimModel& model, const Matrix& x) {
  check_dims(model, x);
  return posteriors(model, x).p;
}

RimObjective rim_objective_terms(const RimModel& model, const Matrix& x) {
  check_dims(model, x);
  const auto post = posteriors(model, x);
  const Vector log_mean = log_mean_posterior(post.log_p);
  const auto n = static_cast<double>(x.rows());

  double h_mean = 0;
  for (Eigen::Index k = 0; k < log_mean.size(); ++k) h_mean -= std::exp(log_mean(k)) * log_mean(k);
  double h_cond = 0;
  for (Eigen::Index i = 0; i < post.p.rows(); ++i) {
    for (Eigen::Index k = 0; k < post.p.cols(); ++k) h_cond -= post.p(i, k) * post.log_p(i, k);
  }
  RimObjective out;
  out.mutual_information = h_mean - h_cond / n;
  out.penalty = model.lambda / n * model.weights.squaredNorm();
  return out;
}

double rim_objective(const RimModel& model, const Matrix& x) { return rim_objective_terms(model, x).value(); }

RimGradient rim_gradient(const RimModel& model, const Matrix& x) {
  check_dims(model, x);
  const auto post = posteriors(model, x);
  const Vector log_mean = log_mean_posterior(post.log_p);
  const auto n = static_cast<double>(x.rows());

  // dMI/dlogit_ik = p_ik (u_ik - sum_j p_ij u_ij), u_ij = log(p_ij / pbar_j) / N
  Matrix u = post.log_p;
  u.rowwise() -= log_mean.transpose();
  u /= n;
  const Vector expected = (post.p.array() * u.array()).rowwise().sum();
  Matrix delta = u;
  delta.colwise() -= expected;
  delta.array() *= post.p.array();

  RimGradient g;
  g.weights = delta.transpose() * x - 2.0 * model.lambda / n * model.weights;
  g.biases = delta.colwise().sum().transpose();
  return g;
}

Matrix rim_standardize(const RimModel& model, const Matrix& x) {
  if (model.feature_mean.size() == 0) return x;
  if (x.cols() != model.feature_mean.size()) throw Error("rim: feature dimension mismatch");
  Matrix out = x;
  out.rowwise() -= model.feature_mean.transpose();
  out.array().rowwise() /= model.feature_scale.transpose().array();
  return out;
}

ClusterAssignment rim_predict(const RimModel& model, const Matrix& x) {
  const Matrix z = rim_standardize(model, x);
  check_dims(model, z);
  Matrix logits = z * model.weights.transpose();
  logits.rowwise() += model.biases.transpose();
  ClusterAssignment out;
  out.num_clusters = model.num_clusters();
  out.labels.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = k;
    }
    out.labels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return out;
}

RimModel rim_initialize(const Matrix& x, const ClusterAssignment& init, double lambda) {
  const auto n = x.rows();
  const auto d = x.cols();
  const auto k = static_cast<Eigen::Index>(init.num_clusters);
  Matrix design(n, d + 1);
  design.leftCols(d) = x;
  design.col(d).setOnes();
  Matrix targets = Matrix::Constant(n, k, -1.0);
  for (Eigen::Index i = 0; i < n; ++i) targets(i, static_cast<Eigen::Index>(init.labels[static_cast<std::size_t>(i)])) = 1.0;

  Eigen::MatrixXd gram = design.transpose() * design;
  gram.diagonal().array() += 1e-8 * std::max(1.0, gram.diagonal().maxCoeff());
  const Eigen::MatrixXd coef = gram.ldlt().solve(Eigen::MatrixXd(design.transpose() * targets));

  RimModel m;
  m.lambda = lambda;
  m.weights = coef.topRows(d).transpose();
  m.biases = coef.row(d).transpose();

  // Refine into a penalized multilogit fit of the initial labels so that the
  // starting posteriors are as confident as the penalty allows.
  const auto nn = static_cast<double>(n);
  auto loglik = [&](const RimModel& mm) {
    const auto post = posteriors(mm, x);
    double ll = 0;
    for (Eigen::Index i = 0; i < n; ++i) ll += post.log_p(i, static_cast<Eigen::Index>(init.labels[static_cast<std::size_t>(i)]));
    return ll / nn - lambda / nn * mm.weights.squaredNorm();
  };
  double f = loglik(m);
  double step = 1.0;
  for (int it = 0; it < 200; ++it) {
    const auto post = posteriors(m, x);
    Matrix delta = -post.p;
    for (Eigen::Index i = 0; i < n; ++i) delta(i, static_cast<Eigen::Index>(init.labels[static_cast<std::size_t>(i)])) += 1.0;
    delta /= nn;
    const Matrix gw = delta.transpose() * x - 2.0 * lambda / nn * m.weights;
    const Vector gb = delta.colwise().sum().transpose();
    const double g2 = gw.squaredNorm() + gb.squaredNorm();
    if (g2 == 0) break;
    RimModel trial = m;
    bool accepted = false;
    double f_trial = f;
    for (int h = 0; h < 60; ++h) {
      trial.weights = m.weights + step * gw;
      trial.biases = m.biases + step * gb;
      f_trial = loglik(trial);
      if (std::isfinite(f_trial) && f_trial >= f + 1e-4 * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double change = std::abs(f_trial - f) / std::max(std::abs(f), 1.0);
    m = std::move(trial);
    f = f_trial;
    step *= 2.0;
    if (change < 1e-7) break;
  }
  return m;
}

RimResult rim_fit(const Matrix& x, const ClusterAssignment& init, const RimOptions& options) {
  if (init.num_clusters < 2) throw Error("rim: initial assignment needs at least 2 clusters");
  if (init.size() != static_cast<std::size_t>(x.rows())) throw Error("rim: initial assignment length mismatch");
  if (!(options.lambda > 0)) throw Error("rim: lambda must be positive");
  if (!x.allFinite()) throw Error("rim: non-finite features");
  init.validate();

  Vector mean = Vector::Zero(x.cols());
  Vector scale = Vector::Ones(x.cols());
  Matrix z = x;
  if (options.standardize) {
    mean = x.colwise().mean().transpose();
    z.rowwise() -= mean.transpose();
    const Vector var = z.array().square().colwise().mean().transpose();
    // The extra sqrt(D) keeps the penalty from weakening when columns are
    // redundant copies of a few underlying directions.
    scale = var.cwiseMax(options.variance_floor).cwiseSqrt() * std::sqrt(static_cast<double>(x.cols()));
    z.array().rowwise() /= scale.transpose().array();
  }

  RimResult result;
  RimModel model = rim_initialize(z, init, options.lambda);
  double f = rim_objective(model, z);
  result.objective_history.push_back(f);

  double step = 1.0;
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    const auto g = rim_gradient(model, z);
    const double g2 = g.weights.squaredNorm() + g.biases.squaredNorm();
    if (g2 == 0) break;
    bool accepted = false;
    RimModel trial = model;
    double f_trial = f;
    for (int halvings = 0; halvings < 60; ++halvings) {
      trial.weights = model.weights + step * g.weights;
      trial.biases = model.biases + step * g.biases;
      f_trial = rim_objective(trial, z);
      if (std::isfinite(f_trial) && f_trial >= f + options.armijo * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double change = std::abs(f_trial - f) / std::max(std::abs(f), 1.0);
    model = std::move(trial);
    f = f_trial;
    result.objective_history.push_back(f);
    ++result.iterations;
    step *= 2.0;
    if (change < options.tolerance) break;
  }

  model.feature_mean = mean;
  model.feature_scale = scale;
  if (!options.standardize) {
    model.feature_mean.resize(0);
    model.feature_scale.resize(0);
  }

  // Drop clusters that own no point under the hard argmax rule.
  const ClusterAssignment hard = rim_predict(model, x);
  const auto sizes = hard.cluster_sizes();
  std::vector<Eigen::Index> keep;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] > 0) keep.push_back(static_cast<Eigen::Index>(k));
  }
  RimModel pruned = model;
  pruned.weights.resize(static_cast<Eigen::Index>(keep.size()), model.weights.cols());
  pruned.biases.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    pruned.weights.row(static_cast<Eigen::Index>(j)) = model.weights.row(keep[j]);
    pruned.biases(static_cast<Eigen::Index>(j)) = model.biases(keep[j]);
  }
  result.model = std::move(pruned);
  // Removing a class cannot move an argmax away from a surviving class, so the
  // compacted labels equal a fresh prediction with the pruned model.
  result.assignment = compact(hard);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  std::filesystem::path p = prefix;
  p += suffix;
  return p;
}

Matrix as_row(const Vector& v) { return Matrix(v.transpose()); }

}  // namespace

void save_kmeans_model(const KMeansModel& m, const std::filesystem::path& prefix) {
  save_fmat(m.centers, with_suffix(prefix, ".centers.fmat"));
  nlohmann::json header = {{"kind", "kmeans"}, {"K", m.centers.rows()}, {"dim", m.centers.cols()}, {"cost", m.cost}};
  write_file_atomic(with_suffix(prefix, ".json"), header.dump(2) + "\n");
}

KMeansModel load_kmeans_model(const std::filesystem::path& prefix) {
  const auto header = nlohmann::json::parse(read_file(with_suffix(prefix, ".json")));
  KMeansModel m;
  m.centers = load_fmat(with_suffix(prefix, ".centers.fmat"));
  m.cost = header.at("cost").get<double>();
  if (m.centers.rows() != header.at("K").get<Eigen::Index>()) throw Error("kmeans model header disagrees with centers");
  return m;
}

void save_rim_model(const RimModel& m, const std::filesystem::path& prefix) {
  save_fmat(m.weights, with_suffix(prefix, ".weights.fmat"));
  save_fmat(as_row(m.biases), with_suffix(prefix, ".biases.fmat"));
  const bool standardized = m.feature_mean.size() > 0;
  if (standardized) {
    save_fmat(as_row(m.feature_mean), with_suffix(prefix, ".mean.fmat"));
    save_fmat(as_row(m.feature_scale), with_suffix(prefix, ".scale.fmat"));
  }
  nlohmann::json header = {{"kind", "rim"},
                           {"K", m.weights.rows()},
                           {"dim", m.weights.cols()},
                           {"lambda", m.lambda},
                           {"standardized", standardized}};
  write_file_atomic(with_suffix(prefix, ".json"), header.dump(2) + "\n");
}

RimModel load_rim_model(const std::filesystem::path& prefix) {
  const auto header = nlohmann::json::parse(read_file(with_suffix(prefix, ".json")));
  RimModel m;
  m.lambda = header.at("lambda").get<double>();
  m.weights = load_fmat(with_suffix(prefix, ".weights.fmat"));
  m.biases = load_fmat(with_suffix(prefix, ".biases.fmat")).row(0).transpose();
  if (header.at("standardized").get<bool>()) {
    m.feature_mean = load_fmat(with_suffix(prefix, ".mean.fmat")).row(0).transpose();
    m.feature_scale = load_fmat(with_suffix(prefix, ".scale.fmat")).row(0).transpose();
  }
  return m;
}

}  // namespace ldpo
