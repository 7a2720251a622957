#include "ldpo/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include <json.hpp>

namespace ldpo {

namespace {

struct Forward {
  Matrix pre;     // N x H
  Matrix hidden;  // N x H, post-ReLU
  Matrix log_p;   // N x K
};

void check_input(const LearnerModel& m, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != m.input_dim()) {
    throw Error("learner: input dimension " + std::to_string(x.cols()) + " does not match model dimension " +
                std::to_string(m.input_dim()));
  }
}

Forward forward(const LearnerModel& m, const Matrix& x) {
  Forward f;
  f.pre = x * m.hidden_weights;
  f.pre.rowwise() += m.hidden_bias.transpose();
  f.hidden = f.pre.cwiseMax(0.0);
  f.log_p = f.hidden * m.output_weights;
  f.log_p.rowwise() += m.output_bias.transpose();
  for (Eigen::Index i = 0; i < f.log_p.rows(); ++i) {
    const double mx = f.log_p.row(i).maxCoeff();
    const double lse = mx + std::log((f.log_p.row(i).array() - mx).exp().sum());
    f.log_p.row(i).array() -= lse;
  }
  return f;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

void init_output(LearnerModel& m, std::size_t classes, std::mt19937_64& rng) {
  const auto h = static_cast<Eigen::Index>(m.hidden_dim());
  const auto k = static_cast<Eigen::Index>(classes);
  m.output_weights = m.config.zero_output_init ? Matrix::Zero(h, k)
                                               : gaussian(h, k, std::sqrt(2.0 / static_cast<double>(h)), rng);
  m.output_bias = Vector::Zero(k);
}

Matrix rows_of(const Matrix& x, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), x.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

LearnerGradients learner_gradients(const LearnerModel& model, const Matrix& x, const std::vector<std::size_t>& labels) {
  check_input(model, x);
  if (labels.size() != static_cast<std::size_t>(x.rows())) throw Error("learner: label count mismatch");
  const auto f = forward(model, x);
  const auto n = static_cast<double>(x.rows());

  LearnerGradients g;
  Matrix delta = f.log_p.array().exp();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto c = static_cast<Eigen::Index>(labels[i]);
    g.loss -= f.log_p(r, c);
    delta(r, c) -= 1.0;
  }
  g.loss /= n;
  delta /= n;
  g.output_weights = f.hidden.transpose() * delta;
  g.output_bias = delta.colwise().sum().transpose();
  Matrix back = delta * model.output_weights.transpose();
  back.array() *= (f.pre.array() > 0).cast<double>();
  g.hidden_weights = x.transpose() * back;
  g.hidden_bias = back.colwise().sum().transpose();
  return g;
}

double cross_entropy(const LearnerModel& model, const Matrix& x, const std::vector<std::size_t>& labels) {
  check_input(model, x);
  const auto f = forward(model, x);
  double loss = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    loss -= f.log_p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i]));
  }
  return loss / static_cast<double>(labels.size());
}

TrainResult train(const Matrix& x, const ClusterAssignment& labels, const LearnerModel* warm_start,
                  const LearnerConfig& config, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (labels.size() != n) throw Error("learner: label count mismatch");
  if (labels.num_clusters < 2) throw Error("learner: need at least 2 classes");
  if (n == 0) throw Error("learner: empty training set");
  if (config.hidden < 1 || config.batch_size < 1) throw Error("learner: hidden size and batch size must be positive");
  if (!x.allFinite()) throw Error("learner: non-finite features");
  const auto sizes = labels.cluster_sizes();
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] == 0) throw Error("learner: class " + std::to_string(k) + " absent from training split");
  }

  std::mt19937_64 rng(seed);
  TrainResult result;
  LearnerModel& m = result.model;
  m.config = config;
  m.seed = seed;
  double output_lr = config.learning_rate;
  if (warm_start != nullptr) {
    if (warm_start->input_dim() != static_cast<std::size_t>(x.cols())) {
      throw Error("learner: warm start expects input dimension " + std::to_string(warm_start->input_dim()) +
                  ", got " + std::to_string(x.cols()));
    }
    m.hidden_weights = warm_start->hidden_weights;
    m.hidden_bias = warm_start->hidden_bias;
    m.config.hidden = warm_start->hidden_dim();
    output_lr *= config.output_lr_multiplier;
  } else {
    const auto d = x.cols();
    const auto h = static_cast<Eigen::Index>(config.hidden);
    m.hidden_weights = gaussian(d, h, std::sqrt(2.0 / static_cast<double>(d)), rng);
    m.hidden_bias = Vector::Zero(h);
  }
  init_output(m, labels.num_clusters, rng);

  result.loss_history.push_back(cross_entropy(m, x, labels.labels));

  Matrix v_hw = Matrix::Zero(m.hidden_weights.rows(), m.hidden_weights.cols());
  Vector v_hb = Vector::Zero(m.hidden_bias.size());
  Matrix v_ow = Matrix::Zero(m.output_weights.rows(), m.output_weights.cols());
  Vector v_ob = Vector::Zero(m.output_bias.size());

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> batch_labels;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const Matrix xb = rows_of(x, order, begin, end);
      batch_labels.clear();
      for (std::size_t i = begin; i < end; ++i) batch_labels.push_back(labels.labels[order[i]]);
      const auto g = learner_gradients(m, xb, batch_labels);

      v_hw = config.momentum * v_hw - config.learning_rate * (g.hidden_weights + config.weight_decay * m.hidden_weights);
      v_hb = config.momentum * v_hb - config.learning_rate * g.hidden_bias;
      v_ow = config.momentum * v_ow - output_lr * (g.output_weights + config.weight_decay * m.output_weights);
      v_ob = config.momentum * v_ob - output_lr * g.output_bias;
      m.hidden_weights += v_hw;
      m.hidden_bias += v_hb;
      m.output_weights += v_ow;
      m.output_bias += v_ob;
    }
    result.loss_history.push_back(cross_entropy(m, x, labels.labels));
  }
  if (!m.hidden_weights.allFinite() || !m.output_weights.allFinite()) {
    throw Error("learner: training diverged (non-finite parameters); lower the learning rate");
  }
  return result;
}

Matrix embed(const LearnerModel& model, const Matrix& x) {
  check_input(model, x);
  Matrix pre = x * model.hidden_weights;
  pre.rowwise() += model.hidden_bias.transpose();
  return pre.cwiseMax(0.0);
}

Matrix predict_proba(const LearnerModel& model, const Matrix& x) {
  check_input(model, x);
  return forward(model, x).log_p.array().exp();
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  std::filesystem::path p = prefix;
  p += suffix;
  return p;
}

}  // namespace

void save_learner(const LearnerModel& model, const std::filesystem::path& prefix) {
  save_fmat(model.hidden_weights, with_suffix(prefix, ".hidden_weights.fmat"));
  save_fmat(Matrix(model.hidden_bias.transpose()), with_suffix(prefix, ".hidden_bias.fmat"));
  save_fmat(model.output_weights, with_suffix(prefix, ".output_weights.fmat"));
  save_fmat(Matrix(model.output_bias.transpose()), with_suffix(prefix, ".output_bias.fmat"));
  const auto& c = model.config;
  nlohmann::json header = {
      {"input_dim", model.input_dim()},
      {"hidden_dim", model.hidden_dim()},
      {"num_classes", model.num_classes()},
      {"seed", model.seed},
      {"config",
       {{"hidden", c.hidden},
        {"learning_rate", c.learning_rate},
        {"momentum", c.momentum},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"output_lr_multiplier", c.output_lr_multiplier},
        {"weight_decay", c.weight_decay},
        {"zero_output_init", c.zero_output_init}}},
  };
  write_file_atomic(with_suffix(prefix, ".json"), header.dump(2) + "\n");
}

LearnerModel load_learner(const std::filesystem::path& prefix) {
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_file(with_suffix(prefix, ".json")));
  } catch (const nlohmann::json::exception& e) {
    throw Error("learner header " + with_suffix(prefix, ".json").string() + ": " + e.what());
  }
  LearnerModel m;
  m.seed = header.at("seed").get<std::uint64_t>();
  const auto& c = header.at("config");
  m.config.hidden = c.at("hidden").get<std::size_t>();
  m.config.learning_rate = c.at("learning_rate").get<double>();
  m.config.momentum = c.at("momentum").get<double>();
  m.config.batch_size = c.at("batch_size").get<std::size_t>();
  m.config.epochs = c.at("epochs").get<std::size_t>();
  m.config.output_lr_multiplier = c.at("output_lr_multiplier").get<double>();
  m.config.weight_decay = c.at("weight_decay").get<double>();
  m.config.zero_output_init = c.at("zero_output_init").get<bool>();
  m.hidden_weights = load_fmat(with_suffix(prefix, ".hidden_weights.fmat"));
  m.hidden_bias = load_fmat(with_suffix(prefix, ".hidden_bias.fmat")).row(0).transpose();
  m.output_weights = load_fmat(with_suffix(prefix, ".output_weights.fmat"));
  m.output_bias = load_fmat(with_suffix(prefix, ".output_bias.fmat")).row(0).transpose();
  if (m.input_dim() != header.at("input_dim").get<std::size_t>() ||
      m.num_classes() != header.at("num_classes").get<std::size_t>() ||
      m.hidden_bias.size() != m.hidden_weights.cols() || m.output_weights.rows() != m.hidden_weights.cols() ||
      m.output_bias.size() != m.output_weights.cols()) {
    throw Error("learner files at " + prefix.string() + " have inconsistent shapes");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Feature sources

std::filesystem::path ExternalFeatureSource::resolve(std::size_t iteration) const {
  std::string out = pattern;
  const std::string key = "{t}";
  for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos)) {
    out.replace(pos, key.size(), std::to_string(iteration));
  }
  return out;
}

FeatureMatrix align_rows(const FeatureMatrix& m, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < m.ids.size(); ++i) position.emplace(m.ids[i], i);
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = position.find(id);
    if (it == position.end()) throw Error("feature file is missing id '" + id + "'");
    rows.push_back(it->second);
  }
  if (m.ids.size() != ids.size()) {
    std::unordered_map<std::string, bool> wanted;
    for (const auto& id : ids) wanted.emplace(id, true);
    for (const auto& id : m.ids) {
      if (!wanted.contains(id)) throw Error("feature file has unknown id '" + id + "'");
    }
  }
  return m.select(rows);
}

FeatureMatrix next_features(const FeatureSource& source, std::size_t iteration, const FeatureMatrix& corpus,
                            const LearnerModel* model) {
  if (const auto* ext = std::get_if<ExternalFeatureSource>(&source)) {
    const auto path = ext->resolve(iteration);
    if (!std::filesystem::exists(path)) {
      throw Error("external features for iteration " + std::to_string(iteration) + " not found: " + path.string());
    }
    auto loaded = load_feature_matrix(path, format_from_extension(path));
    if (ext->expected_dim != 0 && loaded.cols() != ext->expected_dim) {
      throw Error(path.string() + ": expected " + std::to_string(ext->expected_dim) + " columns, got " +
                  std::to_string(loaded.cols()));
    }
    try {
      return align_rows(loaded, corpus.ids);
    } catch (const Error& e) {
      throw Error(path.string() + ": " + e.what());
    }
  }
  if (model == nullptr) throw Error("learner embedding requested before any model was trained");
  FeatureMatrix out;
  out.ids = corpus.ids;
  out.values = embed(*model, corpus.values);
  return out;
}

}  // namespace ldpo
