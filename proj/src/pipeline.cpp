#include "ldpo/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "ldpo/cluster.hpp"
#include "ldpo/encode.hpp"

namespace ldpo {

namespace fs = std::filesystem;

void LoopConfig::validate() const {
  if (max_iterations < 1) throw Error("max_iterations must be at least 1");
  for (double v : {thresholds.purity_min, thresholds.nmi_min}) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error("convergence thresholds must lie in [0,1]");
  }
  if (clustering == ClusteringMode::KMeans && k < 1) throw Error("k must be at least 1");
  if (clustering == ClusteringMode::KMeansRim && k_init < 2) throw Error("k_init must be at least 2");
  if (!(lambda >= 0.0)) throw Error("lambda must be nonnegative");
  if (ratios.train <= 0 || ratios.validation < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw Error("split ratios must be nonnegative, with a positive train share, and sum to 1");
  }
  if (encoding != EncodingMode::None && descriptor_dim == 0) {
    throw Error("descriptor_dim is required when an encoding is selected");
  }
  if (learner.hidden < 1 || learner.batch_size < 1) throw Error("learner hidden and batch_size must be positive");
}

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "features",       "external_features",  "external_dim",       "initial_labels",
      "ground_truth",   "clustering",         "k",                  "k_init",
      "lambda",         "kmeans_restarts",    "encoding",           "codebook_size",
      "descriptor_dim", "pca_dim",            "purity_min",         "nmi_min",
      "max_iterations", "split_train",        "split_val",          "split_test",
      "seed",           "output",             "learner.hidden",     "learner.learning_rate",
      "learner.momentum", "learner.batch_size", "learner.epochs",   "learner.output_lr_multiplier",
      "learner.weight_decay",
      "ap.damping",     "ap.max_iter",        "ap.convergence_iter", "ap.preference",
      "keywords.corpus", "keywords.top_n",    "keywords.stoplist",  "keywords.rule",
      "keywords.common_ratio",
  };
  return keys;
}

LoopConfig loop_config_from(const KeyValueConfig& kv) {
  const auto unknown = kv.unknown_keys(known_config_keys());
  if (!unknown.empty()) throw Error("unknown config key '" + *unknown.begin() + "'");

  LoopConfig c;
  c.features = kv.get_path("features");
  if (auto pattern = kv.get("external_features"); pattern && !pattern->empty()) {
    fs::path p(*pattern);
    if (p.is_relative()) p = kv.base_dir() / p;
    c.external = ExternalFeatureSource{p.string(), kv.get_size("external_dim", 0)};
  }
  c.initial_labels = kv.get_path("initial_labels");
  c.ground_truth = kv.get_path("ground_truth");

  const auto mode = kv.get_string("clustering", "kmeans_rim");
  if (mode == "kmeans") {
    c.clustering = ClusteringMode::KMeans;
  } else if (mode == "kmeans_rim") {
    c.clustering = ClusteringMode::KMeansRim;
  } else {
    throw Error("clustering must be kmeans or kmeans_rim, got '" + mode + "'");
  }
  c.k = kv.get_size("k", c.k);
  c.k_init = kv.get_size("k_init", c.k_init);
  c.lambda = kv.get_double("lambda", c.lambda);
  c.kmeans_restarts = kv.get_size("kmeans_restarts", c.kmeans_restarts);

  const auto enc = kv.get_string("encoding", "none");
  if (enc == "none") {
    c.encoding = EncodingMode::None;
  } else if (enc == "fv") {
    c.encoding = EncodingMode::Fisher;
  } else if (enc == "vlad") {
    c.encoding = EncodingMode::Vlad;
  } else {
    throw Error("encoding must be none, fv or vlad, got '" + enc + "'");
  }
  c.codebook_size = kv.get_size("codebook_size", c.codebook_size);
  c.descriptor_dim = kv.get_size("descriptor_dim", c.descriptor_dim);
  c.pca_dim = kv.get_size("pca_dim", c.pca_dim);

  c.thresholds.purity_min = kv.get_double("purity_min", c.thresholds.purity_min);
  c.thresholds.nmi_min = kv.get_double("nmi_min", c.thresholds.nmi_min);
  c.max_iterations = kv.get_size("max_iterations", c.max_iterations);
  c.ratios.train = kv.get_double("split_train", c.ratios.train);
  c.ratios.validation = kv.get_double("split_val", c.ratios.validation);
  c.ratios.test = kv.get_double("split_test", c.ratios.test);

  auto& l = c.learner;
  l.hidden = kv.get_size("learner.hidden", l.hidden);
  l.learning_rate = kv.get_double("learner.learning_rate", l.learning_rate);
  l.momentum = kv.get_double("learner.momentum", l.momentum);
  l.batch_size = kv.get_size("learner.batch_size", l.batch_size);
  l.epochs = kv.get_size("learner.epochs", l.epochs);
  l.output_lr_multiplier = kv.get_double("learner.output_lr_multiplier", l.output_lr_multiplier);
  l.weight_decay = kv.get_double("learner.weight_decay", l.weight_decay);

  c.seed = kv.get_u64("seed", c.seed);
  c.validate();
  return c;
}

nlohmann::ordered_json IterationReport::to_json() const {
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    if (v) return *v;
    return nullptr;
  };
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  j["K"] = num_clusters;
  j["purity"] = opt(purity);
  j["nmi"] = opt(nmi);
  j["train_top1"] = opt(train_top1);
  j["val_top1"] = opt(val_top1);
  j["test_top1"] = opt(test_top1);
  j["train_top5"] = opt(train_top5);
  j["val_top5"] = opt(val_top5);
  j["test_top5"] = opt(test_top5);
  j["gt_purity"] = opt(gt_purity);
  j["gt_nmi"] = opt(gt_nmi);
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["seed"] = seed;
  j["status"] = status;
  return j;
}

nlohmann::ordered_json reports_to_json(const std::vector<IterationReport>& reports) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  return arr;
}

std::string reports_to_csv(const std::vector<IterationReport>& reports) {
  std::ostringstream out;
  out << "iteration,K,purity,nmi,train_top1,val_top1,test_top1,train_top5,val_top5,test_top5,gt_purity,gt_nmi,"
         "wall_clock_seconds,seed,status\n";
  auto cell = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  for (const auto& r : reports) {
    out << r.iteration << ',' << r.num_clusters << ',' << cell(r.purity) << ',' << cell(r.nmi) << ','
        << cell(r.train_top1) << ',' << cell(r.val_top1) << ',' << cell(r.test_top1) << ',' << cell(r.train_top5)
        << ',' << cell(r.val_top5) << ',' << cell(r.test_top5) << ',' << cell(r.gt_purity) << ','
        << cell(r.gt_nmi) << ',' << format_real(r.wall_clock_seconds) << ',' << r.seed << ',' << r.status << '\n';
  }
  return out.str();
}

namespace {

LabeledAssignment with_ids(const std::vector<std::string>& ids) {
  LabeledAssignment a;
  a.ids = ids;
  a.assignment.labels.assign(ids.size(), 0);
  a.assignment.num_clusters = 1;
  return a;
}

FeatureMatrix maybe_encode(const FeatureMatrix& raw, const LoopConfig& config) {
  if (config.encoding == EncodingMode::None) return raw;
  EncodingConfig enc;
  enc.method = config.encoding == EncodingMode::Fisher ? EncodingMethod::Fisher : EncodingMethod::Vlad;
  enc.codebook_size = config.codebook_size;
  enc.pca_dim = config.pca_dim;
  enc.seed = config.seed;
  return encode_corpus(grids_from_rows(raw, config.descriptor_dim), enc);
}

ClusterAssignment cluster_corpus(const Matrix& f, const LoopConfig& config, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(f.rows());
  if (config.clustering == ClusteringMode::KMeans) {
    const auto k = std::min(config.k, n);
    return compact(kmeans_best_of(f, k, seed, std::max<std::size_t>(config.kmeans_restarts, 1), 300).assignment);
  }
  const auto k = std::min(config.k_init, n);
  const auto init = compact(kmeans_best_of(f, k, seed, std::max<std::size_t>(config.kmeans_restarts, 1), 300).assignment);
  RimOptions opts;
  opts.lambda = config.lambda;
  return compact(rim_fit(f, init, opts).assignment);
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

std::vector<std::size_t> gather_labels(const ClusterAssignment& a, const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(a.labels[r]);
  return out;
}

}  // namespace

void ensure_train_coverage(SplitAssignment& split, const ClusterAssignment& labels) {
  if (split.tags.size() != labels.size()) throw Error("split and labels differ in length");
  const std::size_t k = labels.num_clusters;
  std::vector<std::size_t> train_count(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (split.tags[i] == Split::Train) ++train_count[labels.labels[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (train_count[c] > 0) continue;
    auto incoming = std::find_if(labels.labels.begin(), labels.labels.end(), [&](std::size_t l) { return l == c; });
    if (incoming == labels.labels.end()) continue;
    const auto in_idx = static_cast<std::size_t>(incoming - labels.labels.begin());
    // The donor class keeps the most training items; it gives up its first one.
    const auto donor = static_cast<std::size_t>(std::max_element(train_count.begin(), train_count.end()) - train_count.begin());
    if (train_count[donor] < 2) throw Error("too few training items to cover every class");
    std::size_t out_idx = 0;
    while (!(split.tags[out_idx] == Split::Train && labels.labels[out_idx] == donor)) ++out_idx;
    std::swap(split.tags[in_idx], split.tags[out_idx]);
    --train_count[donor];
    ++train_count[c];
  }
}

LoopInputs load_loop_inputs(const LoopConfig& config) {
  if (config.features.empty()) throw Error("config has no features path");
  LoopInputs in;
  in.features = load_feature_matrix(config.features, format_from_extension(config.features));
  if (!config.initial_labels.empty()) in.initial_labels = load_assignment(config.initial_labels);
  if (!config.ground_truth.empty()) in.ground_truth = load_assignment(config.ground_truth);
  return in;
}

LoopResult run_loop(const LoopConfig& config) { return run_loop(config, load_loop_inputs(config)); }

LoopResult run_loop(const LoopConfig& config, const LoopInputs& inputs) {
  config.validate();
  inputs.features.validate();
  if (inputs.features.rows() < 2) throw Error("the corpus needs at least two items");

  LoopResult result;
  result.base_features = maybe_encode(inputs.features, config);
  const auto& x0 = result.base_features;
  const auto& ids = x0.ids;

  std::optional<ClusterAssignment> initial;
  if (inputs.initial_labels) initial = compact(align_to(with_ids(ids), *inputs.initial_labels));
  std::optional<ClusterAssignment> truth;
  if (inputs.ground_truth) truth = align_to(with_ids(ids), *inputs.ground_truth);

  FeatureSource source = LearnerEmbeddingSource{};
  if (config.external) source = *config.external;

  const LearnerModel* model = nullptr;
  std::optional<ClusterAssignment> prev;

  for (std::size_t t = 0; t < config.max_iterations; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t seed = config.seed + t;
    IterationReport report;
    report.iteration = t;
    report.seed = seed;

    ClusterAssignment curr;
    if (t == 0 && initial) {
      curr = *initial;
      result.final_features = x0;
    } else {
      if (t == 0) {
        result.final_features = x0;
      } else if (std::holds_alternative<ExternalFeatureSource>(source)) {
        result.final_features = maybe_encode(next_features(source, t, x0, model), config);
      } else {
        result.final_features = next_features(source, t, x0, model);
      }
      curr = cluster_corpus(result.final_features.values, config, seed);
    }
    report.num_clusters = curr.num_clusters;
    if (truth) {
      report.gt_purity = purity(curr, *truth);
      report.gt_nmi = nmi(curr, *truth);
    }
    result.assignments.push_back(curr);
    result.final_assignment = curr;

    bool converged = false;
    if (prev) {
      report.purity = purity(curr, *prev);
      report.nmi = nmi(curr, *prev);
      converged = check_convergence(*prev, curr, config.thresholds);
    }
    auto finish = [&](std::string status) {
      report.status = std::move(status);
      report.wall_clock_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.reports.push_back(report);
    };
    if (converged) {
      finish("converged");
      return result;
    }
    if (curr.num_clusters < 2) {
      finish("collapsed");
      return result;
    }

    auto split = split_dataset(ids.size(), config.ratios, seed);
    ensure_train_coverage(split, curr);
    const auto train_rows = split.indices(Split::Train);
    ClusterAssignment train_labels{gather_labels(curr, train_rows), curr.num_clusters};
    auto trained = train(gather_rows(x0.values, train_rows), train_labels,
                         result.final_model ? &*result.final_model : nullptr, config.learner, seed);
    result.final_model = std::move(trained.model);
    model = &*result.final_model;
    result.model_assignment = curr;
    result.model_split = split;
    result.splits.push_back(split);

    const Matrix proba = predict_proba(*model, x0.values);
    auto accuracy = [&](Split s, std::size_t k) -> std::optional<double> {
      const auto rows = split.indices(s);
      if (rows.empty() || k > curr.num_clusters) return std::nullopt;
      return topk_accuracy(gather_rows(proba, rows), gather_labels(curr, rows), k);
    };
    report.train_top1 = accuracy(Split::Train, 1);
    report.val_top1 = accuracy(Split::Validation, 1);
    report.test_top1 = accuracy(Split::Test, 1);
    report.train_top5 = accuracy(Split::Train, 5);
    report.val_top5 = accuracy(Split::Validation, 5);
    report.test_top5 = accuracy(Split::Test, 5);

    prev = std::move(curr);
    finish(t + 1 == config.max_iterations ? "max_iterations_reached" : "running");
  }
  return result;
}

CategoryTree run_tree(const ClusterAssignment& assignment, const LearnerModel* model, const FeatureMatrix& features,
                      const SplitAssignment* split, const ApConfig& ap) {
  if (model == nullptr) throw Error("no converged model");
  if (model->num_classes() != assignment.num_clusters) {
    throw Error("model predicts " + std::to_string(model->num_classes()) + " classes but the assignment has " +
                std::to_string(assignment.num_clusters));
  }
  if (features.rows() != assignment.size()) throw Error("features and assignment differ in length");

  std::vector<std::size_t> rows;
  if (split != nullptr) {
    rows = split->indices(Split::Test);
    std::vector<bool> seen(assignment.num_clusters, false);
    for (auto r : rows) seen[assignment.labels[r]] = true;
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) rows.clear();
  }
  if (rows.empty()) {
    rows.resize(assignment.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  }
  const Matrix scores = predict_proba(*model, gather_rows(features.values, rows));
  ClusterAssignment sub{gather_labels(assignment, rows), assignment.num_clusters};
  return build_tree(scores, sub, ap);
}

void write_loop_outputs(const LoopResult& result, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto& ids = result.base_features.ids;
  write_file_atomic(out_dir / "reports.json", reports_to_json(result.reports).dump(2) + "\n");
  write_file_atomic(out_dir / "reports.csv", reports_to_csv(result.reports));
  for (std::size_t t = 0; t < result.assignments.size(); ++t) {
    save_assignment(ids, result.assignments[t], out_dir / ("iter_" + std::to_string(t) + ".assignments.csv"));
  }
  for (std::size_t t = 0; t < result.splits.size(); ++t) {
    save_split(ids, result.splits[t], out_dir / ("iter_" + std::to_string(t) + ".split.csv"));
  }
  save_assignment(ids, result.final_assignment, out_dir / "final.assignments.csv");
  save_feature_matrix(result.base_features, out_dir / "base_features.fmat", MatrixFormat::Fmat);
  if (result.final_model) {
    save_learner(*result.final_model, out_dir / "model");
    save_assignment(ids, result.model_assignment, out_dir / "model.assignments.csv");
    save_split(ids, *result.model_split, out_dir / "model.split.csv");
  }
}

SavedLoop load_loop_outputs(const fs::path& out_dir) {
  if (!fs::exists(out_dir / "model.json")) throw Error("no converged model in " + out_dir.string());
  SavedLoop s;
  s.model = load_learner(out_dir / "model");
  s.base_features = load_feature_matrix(out_dir / "base_features.fmat", MatrixFormat::Fmat);
  s.assignment = align_to(with_ids(s.base_features.ids), load_assignment(out_dir / "model.assignments.csv"));
  if (fs::exists(out_dir / "model.split.csv")) s.split = load_split(out_dir / "model.split.csv", s.base_features.ids);
  return s;
}

}  // namespace ldpo
