#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ldpo/cluster.hpp"
#include "ldpo/config.hpp"
#include "ldpo/encode.hpp"
#include "ldpo/labeling.hpp"
#include "ldpo/metrics.hpp"
#include "ldpo/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ldpo;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

KeyValueConfig read_config(const Common& c) {
  if (c.config.empty()) return {};
  auto kv = KeyValueConfig::load(c.config);
  const auto unknown = kv.unknown_keys(known_config_keys());
  if (!unknown.empty()) throw Error(c.config + ": unknown config key '" + *unknown.begin() + "'");
  return kv;
}

ApConfig ap_config_from(const KeyValueConfig& kv) {
  ApConfig ap;
  ap.damping = kv.get_double("ap.damping", ap.damping);
  ap.max_iter = kv.get_size("ap.max_iter", ap.max_iter);
  ap.convergence_iter = kv.get_size("ap.convergence_iter", ap.convergence_iter);
  if (kv.contains("ap.preference")) ap.preference = kv.get_double("ap.preference", 0.0);
  return ap;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value settings file");
  app->add_option("--seed", c.seed, "overrides the config seed");
}

int cmd_loop(const Common& common, const std::string& in, const std::string& out) {
  auto kv = read_config(common);
  if (!in.empty()) kv.set("features", fs::absolute(in).string());
  auto config = loop_config_from(kv);
  if (common.seed) config.seed = *common.seed;
  fs::path out_dir = out.empty() ? kv.get_path("output") : fs::path(out);
  if (out_dir.empty()) throw Error("no output directory: pass --out or set 'output'");
  const auto result = run_loop(config);
  write_loop_outputs(result, out_dir);
  const auto& last = result.reports.back();
  std::cout << "iterations=" << result.reports.size() << " K=" << last.num_clusters << " status=" << last.status
            << "\n";
  return 0;
}

int cmd_cluster(const Common& common, const std::string& in, const std::string& out, std::string mode,
                std::optional<std::size_t> k, std::optional<std::size_t> k_init, std::optional<double> lambda,
                const std::string& model_prefix) {
  const auto kv = read_config(common);
  const auto path = in.empty() ? kv.get_path("features") : fs::path(in);
  if (path.empty()) throw Error("no input features: pass --in or set 'features'");
  if (mode.empty()) mode = kv.get_string("clustering", "kmeans_rim");
  const std::uint64_t seed = common.seed.value_or(kv.get_u64("seed", 0));
  const auto restarts = std::max<std::size_t>(kv.get_size("kmeans_restarts", 1), 1);

  const auto features = load_feature_matrix(path, format_from_extension(path));
  features.validate();
  const auto n = features.rows();
  ClusterAssignment assignment;
  if (mode == "kmeans") {
    const auto kk = std::min(k.value_or(kv.get_size("k", 100)), n);
    auto r = kmeans_best_of(features.values, kk, seed, restarts, 300);
    if (!model_prefix.empty()) save_kmeans_model(r.model, model_prefix);
    assignment = r.assignment;
  } else if (mode == "kmeans_rim") {
    const auto kk = std::min(k_init.value_or(kv.get_size("k_init", 1000)), n);
    RimOptions opts;
    opts.lambda = lambda.value_or(kv.get_double("lambda", 1.0));
    auto init = compact(kmeans_best_of(features.values, kk, seed, restarts, 300).assignment);
    auto r = rim_fit(features.values, init, opts);
    if (!model_prefix.empty()) save_rim_model(r.model, model_prefix);
    assignment = compact(r.assignment);
  } else {
    throw CLI::ValidationError("--mode", "must be kmeans or kmeans_rim");
  }
  save_assignment(features.ids, assignment, out);
  std::cout << "K=" << assignment.num_clusters << "\n";
  return 0;
}

int cmd_encode(const Common& common, const std::string& in, const std::string& out, std::string method,
               std::optional<std::size_t> descriptor_dim, std::optional<std::size_t> codebook,
               std::optional<std::size_t> pca_dim) {
  const auto kv = read_config(common);
  const auto path = in.empty() ? kv.get_path("features") : fs::path(in);
  if (path.empty()) throw Error("no input descriptors: pass --in or set 'features'");
  if (method.empty()) method = kv.get_string("encoding", "fv");
  EncodingConfig enc;
  if (method == "fv") {
    enc.method = EncodingMethod::Fisher;
  } else if (method == "vlad") {
    enc.method = EncodingMethod::Vlad;
  } else {
    throw CLI::ValidationError("--method", "must be fv or vlad");
  }
  enc.codebook_size = codebook.value_or(kv.get_size("codebook_size", enc.codebook_size));
  enc.pca_dim = pca_dim.value_or(kv.get_size("pca_dim", enc.pca_dim));
  enc.seed = common.seed.value_or(kv.get_u64("seed", 0));
  const auto d = descriptor_dim.value_or(kv.get_size("descriptor_dim", 0));
  if (d == 0) throw Error("descriptor dimension required: pass --descriptor-dim or set 'descriptor_dim'");

  const auto raw = load_feature_matrix(path, format_from_extension(path));
  const auto encoded = encode_corpus(grids_from_rows(raw, d), enc);
  save_feature_matrix(encoded, out, format_from_extension(out));
  std::cout << "rows=" << encoded.rows() << " dim=" << encoded.cols() << "\n";
  return 0;
}

int cmd_metrics(const std::string& a_path, const std::string& b_path) {
  const auto a = load_assignment(a_path);
  const auto b = load_assignment(b_path);
  const auto b_aligned = align_to(a, b);
  std::cout << "purity=" << format_real(purity(a.assignment, b_aligned))
            << " nmi=" << format_real(nmi(a.assignment, b_aligned)) << "\n";
  return 0;
}

int cmd_tree(const Common& common, const std::string& in, const std::string& out) {
  const auto kv = read_config(common);
  const fs::path loop_dir = in.empty() ? kv.get_path("output") : fs::path(in);
  if (loop_dir.empty()) throw Error("no loop output directory: pass --in or set 'output'");
  const fs::path out_dir = out.empty() ? loop_dir : fs::path(out);
  const auto saved = load_loop_outputs(loop_dir);
  const auto tree = run_tree(saved.assignment, &saved.model, saved.base_features,
                             saved.split ? &*saved.split : nullptr, ap_config_from(kv));
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "tree.json", tree.to_json().dump(2) + "\n");
  std::cout << "levels=" << tree.levels.size() << "\n";
  return 0;
}

int cmd_keywords(const Common& common, const std::string& in, const std::string& assignments,
                 const std::string& out, std::optional<std::size_t> top_n, const std::string& stoplist) {
  const auto kv = read_config(common);
  const fs::path corpus_path = in.empty() ? kv.get_path("keywords.corpus") : fs::path(in);
  if (corpus_path.empty()) throw Error("no text corpus: pass --in or set 'keywords.corpus'");
  KeywordOptions opts;
  opts.top_n = top_n.value_or(kv.get_size("keywords.top_n", opts.top_n));
  const fs::path stop = stoplist.empty() ? kv.get_path("keywords.stoplist") : fs::path(stoplist);
  if (!stop.empty()) opts.stoplist = load_stoplist(stop);
  const auto rule = kv.get_string("keywords.rule", "top");
  if (rule == "ratio") {
    opts.rule = CommonTermRule::ClusterFrequency;
    opts.common_ratio = kv.get_double("keywords.common_ratio", opts.common_ratio);
  } else if (rule != "top") {
    throw Error("keywords.rule must be top or ratio, got '" + rule + "'");
  }
  const auto keywords = extract_keywords(load_text_corpus(corpus_path), load_assignment(assignments), opts);
  write_file_atomic(out, keywords_to_json(keywords).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ldpo: loop clustering and pseudo-label training until the clusters settle"};
  app.require_subcommand(1);

  Common common;
  std::string in, out;

  auto* loop = app.add_subcommand("loop", "run the cluster/train loop and write per-iteration reports");
  add_common(loop, common);
  loop->add_option("--in", in, "initial features (overrides 'features')");
  loop->add_option("--out", out, "output directory (overrides 'output')");

  std::string mode, model_prefix;
  std::optional<std::size_t> k, k_init;
  std::optional<double> lambda;
  auto* cluster = app.add_subcommand("cluster", "cluster a feature file");
  add_common(cluster, common);
  cluster->add_option("--in", in, "feature file (csv or fmat)");
  cluster->add_option("--out", out, "assignment csv")->required();
  cluster->add_option("--mode", mode, "kmeans or kmeans_rim");
  cluster->add_option("--k", k, "k-means cluster count");
  cluster->add_option("--k-init", k_init, "over-segmented k-means count before RIM");
  cluster->add_option("--lambda", lambda, "RIM weight penalty");
  cluster->add_option("--model", model_prefix, "save the fitted model under this prefix");

  std::string method;
  std::optional<std::size_t> descriptor_dim, codebook, pca_dim;
  auto* encode = app.add_subcommand("encode", "Fisher-vector or VLAD encode flattened descriptor grids");
  add_common(encode, common);
  encode->add_option("--in", in, "flattened grids, one row per item");
  encode->add_option("--out", out, "encoded feature file")->required();
  encode->add_option("--method", method, "fv or vlad");
  encode->add_option("--descriptor-dim", descriptor_dim, "local descriptor length");
  encode->add_option("--codebook-size", codebook, "GMM components or VLAD codewords");
  encode->add_option("--pca-dim", pca_dim, "PCA output dimension (0 keeps all)");

  std::string a_path, b_path;
  auto* metrics = app.add_subcommand("metrics", "purity and NMI of two assignment files");
  metrics->add_option("--a", a_path, "candidate assignment csv")->required();
  metrics->add_option("--b", b_path, "reference assignment csv")->required();

  auto* tree = app.add_subcommand("tree", "build the category tree from a loop output directory");
  add_common(tree, common);
  tree->add_option("--in", in, "loop output directory (overrides 'output')");
  tree->add_option("--out", out, "directory for tree.json (defaults to --in)");

  std::string assignments, stoplist;
  std::optional<std::size_t> top_n;
  auto* keywords = app.add_subcommand("keywords", "per-cluster keyword lists from a text corpus");
  add_common(keywords, common);
  keywords->add_option("--in", in, "JSON object of id -> text");
  keywords->add_option("--assignments", assignments, "assignment csv")->required();
  keywords->add_option("--out", out, "keyword json")->required();
  keywords->add_option("--top-n", top_n, "terms per cluster");
  keywords->add_option("--stoplist", stoplist, "whitespace-separated stop words");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*loop) return cmd_loop(common, in, out);
    if (*cluster) return cmd_cluster(common, in, out, mode, k, k_init, lambda, model_prefix);
    if (*encode) return cmd_encode(common, in, out, method, descriptor_dim, codebook, pca_dim);
    if (*metrics) return cmd_metrics(a_path, b_path);
    if (*tree) return cmd_tree(common, in, out);
    if (*keywords) return cmd_keywords(common, in, assignments, out, top_n, stoplist);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
