#include "ldpo/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace ldpo {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// ClusterAssignment

std::vector<std::size_t> ClusterAssignment::cluster_sizes() const {
  std::vector<std::size_t> sizes(num_clusters, 0);
  for (auto l : labels) {
    if (l >= num_clusters) throw Error("cluster label " + std::to_string(l) + " out of range");
    ++sizes[l];
  }
  return sizes;
}

void ClusterAssignment::validate() const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_clusters) {
      throw Error("item " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                  " but K=" + std::to_string(num_clusters));
    }
  }
}

ClusterAssignment ClusterAssignment::from_labels(const std::vector<std::size_t>& raw) {
  std::unordered_map<std::size_t, std::size_t> remap;
  ClusterAssignment out;
  out.labels.reserve(raw.size());
  for (auto l : raw) {
    auto [it, inserted] = remap.try_emplace(l, remap.size());
    out.labels.push_back(it->second);
  }
  out.num_clusters = remap.size();
  return out;
}

ClusterAssignment compact(const ClusterAssignment& a) {
  const auto sizes = a.cluster_sizes();
  std::vector<std::size_t> remap(a.num_clusters, 0);
  std::size_t next = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] > 0) remap[k] = next++;
  }
  ClusterAssignment out;
  out.num_clusters = next;
  out.labels.reserve(a.labels.size());
  for (auto l : a.labels) out.labels.push_back(remap[l]);
  return out;
}

// ---------------------------------------------------------------------------
// FeatureMatrix / DescriptorGrid

void FeatureMatrix::validate() const {
  if (values.rows() < 1) throw Error("feature matrix has no rows");
  if (values.cols() < 1) throw Error("feature matrix has no columns");
  if (ids.size() != rows()) {
    throw Error("feature matrix has " + std::to_string(rows()) + " rows but " +
                std::to_string(ids.size()) + " ids");
  }
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (!std::isfinite(values(r, c))) {
        throw Error("non-finite value at row " + std::to_string(r) + ", column " + std::to_string(c));
      }
    }
  }
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (!seen.insert(ids[r]).second) {
      throw Error("duplicate id '" + ids[r] + "' at row " + std::to_string(r));
    }
  }
}

FeatureMatrix FeatureMatrix::select(const std::vector<std::size_t>& rows) const {
  FeatureMatrix out;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  out.ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(rows[i]));
    out.ids.push_back(ids.at(rows[i]));
  }
  return out;
}

void DescriptorGrid::validate() const {
  if (side < 1) throw Error("descriptor grid '" + id + "' has side 0");
  if (descriptors.cols() < 1) throw Error("descriptor grid '" + id + "' has dimension 0");
  if (static_cast<std::size_t>(descriptors.rows()) != side * side) {
    throw Error("descriptor grid '" + id + "' has " + std::to_string(descriptors.rows()) +
                " locations, expected " + std::to_string(side * side));
  }
  if (!descriptors.allFinite()) throw Error("descriptor grid '" + id + "' has non-finite entries");
}

std::vector<DescriptorGrid> grids_from_rows(const FeatureMatrix& flat, std::size_t descriptor_dim) {
  if (descriptor_dim == 0) throw Error("descriptor dimension must be positive");
  const std::size_t cols = flat.cols();
  if (cols % descriptor_dim != 0) {
    throw Error("row length " + std::to_string(cols) + " is not a multiple of descriptor dimension " +
                std::to_string(descriptor_dim));
  }
  const std::size_t locations = cols / descriptor_dim;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(locations))));
  if (side * side != locations) {
    throw Error("row holds " + std::to_string(locations) + " descriptors, which is not a square grid");
  }
  std::vector<DescriptorGrid> grids;
  grids.reserve(flat.rows());
  for (std::size_t r = 0; r < flat.rows(); ++r) {
    DescriptorGrid g;
    g.id = flat.ids[r];
    g.side = side;
    g.descriptors = Eigen::Map<const Matrix>(flat.values.row(static_cast<Eigen::Index>(r)).data(),
                                             static_cast<Eigen::Index>(locations),
                                             static_cast<Eigen::Index>(descriptor_dim));
    grids.push_back(std::move(g));
  }
  return grids;
}

Matrix pool_descriptors(const std::vector<DescriptorGrid>& grids) {
  if (grids.empty()) throw Error("no descriptor grids");
  const auto d = grids.front().descriptors.cols();
  Eigen::Index total = 0;
  for (const auto& g : grids) {
    if (g.descriptors.cols() != d) throw Error("descriptor grids disagree on dimension");
    total += g.descriptors.rows();
  }
  Matrix pooled(total, d);
  Eigen::Index at = 0;
  for (const auto& g : grids) {
    pooled.middleRows(at, g.descriptors.rows()) = g.descriptors;
    at += g.descriptors.rows();
  }
  return pooled;
}

// ---------------------------------------------------------------------------
// Splits

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val" || name == "validation") return Split::Validation;
  if (name == "test") return Split::Test;
  throw Error("unknown split tag '" + std::string(name) + "'");
}

std::vector<std::size_t> SplitAssignment::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == s) out.push_back(i);
  }
  return out;
}

std::size_t SplitAssignment::count(Split s) const {
  return static_cast<std::size_t>(std::count(tags.begin(), tags.end(), s));
}

SplitAssignment split_dataset(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0) {
    throw Error("split ratios must be nonnegative");
  }
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw Error("split ratios must sum to 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  // A tiny epsilon keeps e.g. 100 * 0.7 from flooring to 69.
  const auto floor_count = [n](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
  };
  const std::size_t n_val = floor_count(ratios.validation);
  const std::size_t n_test = floor_count(ratios.test);

  SplitAssignment out;
  out.seed = seed;
  out.tags.assign(n, Split::Train);
  for (std::size_t i = 0; i < n_val; ++i) out.tags[order[i]] = Split::Validation;
  for (std::size_t i = n_val; i < n_val + n_test; ++i) out.tags[order[i]] = Split::Test;
  return out;
}

// ---------------------------------------------------------------------------
// Text

std::vector<std::string> tokenize(std::string_view text, std::size_t min_length) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (current.size() >= min_length) tokens.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
      current.push_back(static_cast<char>(c | 0x20));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

TextCorpus load_text_corpus(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(path.string() + ": expected a JSON object of id -> text");
  TextCorpus corpus;
  for (const auto& [id, text] : doc.items()) {
    if (!text.is_string()) throw Error(path.string() + ": document for '" + id + "' is not a string");
    corpus[id] = tokenize(text.get<std::string>());
  }
  return corpus;
}

ClusterAssignment align_to(const LabeledAssignment& a, const LabeledAssignment& b) {
  if (a.ids.size() != b.ids.size()) {
    throw Error("item sets differ: " + std::to_string(a.ids.size()) + " vs " +
                std::to_string(b.ids.size()) + " items");
  }
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < b.ids.size(); ++i) position.emplace(b.ids[i], i);
  ClusterAssignment out;
  out.num_clusters = b.assignment.num_clusters;
  out.labels.reserve(a.ids.size());
  for (const auto& id : a.ids) {
    auto it = position.find(id);
    if (it == position.end()) throw Error("item '" + id + "' missing from second assignment");
    out.labels.push_back(b.assignment.labels[it->second]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// File helpers

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (std::isfinite(v) && s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

namespace {

std::string format_csv_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

double parse_real(std::string_view s, const std::string& where) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    // from_chars rejects "nan"/"inf" spellings with a sign prefix on some
    // libraries; strtod accepts them so non-finite values get a precise error.
    std::string tmp(s);
    char* end = nullptr;
    v = std::strtod(tmp.c_str(), &end);
    if (tmp.empty() || end != tmp.c_str() + tmp.size()) throw Error(where + ": cannot parse '" + tmp + "'");
  }
  return v;
}

std::size_t parse_index(std::string_view s, const std::string& where) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(where + ": cannot parse integer '" + std::string(s) + "'");
  }
  return v;
}

void check_id(const std::string& id) {
  if (id.empty() || id.find_first_of(",\n\r") != std::string::npos) {
    throw Error("item id '" + id + "' is empty or contains a comma or newline");
  }
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

fs::path ids_path(const fs::path& path) {
  fs::path p = path;
  p += ".ids";
  return p;
}

}  // namespace

std::string encode_fmat(const Matrix& m) {
  std::string out;
  out.reserve(16 + static_cast<std::size_t>(m.size()) * 8);
  out.append("FMAT");
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto bits = std::bit_cast<std::uint64_t>(m(r, c));
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
    }
  }
  return out;
}

Matrix decode_fmat(std::string_view bytes, const std::string& source) {
  if (bytes.size() < 16 || bytes.substr(0, 4) != "FMAT") throw Error(source + ": missing FMAT header");
  const auto version = get_u32(bytes, 4);
  if (version != 1) throw Error(source + ": unsupported fmat version " + std::to_string(version));
  const auto rows = get_u32(bytes, 8);
  const auto cols = get_u32(bytes, 12);
  const std::size_t expected = 16 + static_cast<std::size_t>(rows) * cols * 8;
  if (bytes.size() != expected) {
    throw Error(source + ": payload size " + std::to_string(bytes.size()) + " does not match header (" +
                std::to_string(rows) + "x" + std::to_string(cols) + ")");
  }
  Matrix m(rows, cols);
  std::size_t at = 16;
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
      at += 8;
      m(r, c) = std::bit_cast<double>(bits);
    }
  }
  return m;
}

Matrix load_fmat(const fs::path& path) { return decode_fmat(read_file(path), path.string()); }

void save_fmat(const Matrix& m, const fs::path& path) { write_file_atomic(path, encode_fmat(m)); }

MatrixFormat format_from_extension(const fs::path& path) {
  const auto ext = path.extension().string();
  return (ext == ".fmat" || ext == ".bin") ? MatrixFormat::Fmat : MatrixFormat::Csv;
}

FeatureMatrix load_feature_matrix(const fs::path& path, MatrixFormat format) {
  FeatureMatrix m;
  const std::string source = path.string();
  if (format == MatrixFormat::Fmat) {
    m.values = load_fmat(path);
    const auto id_text = read_file(ids_path(path));
    for (auto line : lines_of(id_text)) m.ids.emplace_back(line);
  } else {
    const auto text = read_file(path);
    const auto lines = lines_of(text);
    if (lines.empty()) throw Error(source + ": empty file");
    const auto header = split_fields(lines[0]);
    if (header.size() < 2 || header[0] != "id") throw Error(source + ": header must be id,f0,...");
    for (std::size_t c = 1; c < header.size(); ++c) {
      if (header[c] != "f" + std::to_string(c - 1)) {
        throw Error(source + ": header column " + std::to_string(c) + " should be f" + std::to_string(c - 1));
      }
    }
    const std::size_t d = header.size() - 1;
    m.values.resize(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(d));
    for (std::size_t r = 1; r < lines.size(); ++r) {
      const auto fields = split_fields(lines[r]);
      const std::string where = source + " row " + std::to_string(r - 1);
      if (fields.size() != d + 1) {
        throw Error(where + ": expected " + std::to_string(d + 1) + " fields, got " + std::to_string(fields.size()));
      }
      m.ids.emplace_back(fields[0]);
      for (std::size_t c = 0; c < d; ++c) {
        m.values(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) =
            parse_real(fields[c + 1], where + " column " + std::to_string(c));
      }
    }
  }
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(source + ": " + e.what());
  }
  return m;
}

void save_feature_matrix(const FeatureMatrix& m, const fs::path& path, MatrixFormat format) {
  m.validate();
  for (const auto& id : m.ids) check_id(id);
  if (format == MatrixFormat::Fmat) {
    std::string ids;
    for (const auto& id : m.ids) {
      ids += id;
      ids += '\n';
    }
    write_file_atomic(ids_path(path), ids);
    save_fmat(m.values, path);
    return;
  }
  std::string out = "id";
  for (std::size_t c = 0; c < m.cols(); ++c) out += ",f" + std::to_string(c);
  out += '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out += m.ids[r];
    for (std::size_t c = 0; c < m.cols(); ++c) {
      out += ',';
      out += format_csv_real(m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

LabeledAssignment load_assignment(const fs::path& path) {
  const auto text = read_file(path);
  const auto lines = lines_of(text);
  if (lines.empty() || lines[0] != "id,cluster") throw Error(path.string() + ": header must be id,cluster");
  std::vector<std::size_t> raw;
  LabeledAssignment out;
  std::unordered_set<std::string> seen;
  std::size_t max_label = 0;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split_fields(lines[r]);
    const std::string where = path.string() + " row " + std::to_string(r - 1);
    if (fields.size() != 2) throw Error(where + ": expected 2 fields");
    std::string id(fields[0]);
    if (!seen.insert(id).second) throw Error(where + ": duplicate id '" + id + "'");
    out.ids.push_back(std::move(id));
    raw.push_back(parse_index(fields[1], where));
    max_label = std::max(max_label, raw.back());
  }
  if (raw.empty()) throw Error(path.string() + ": no rows");
  out.assignment.labels = std::move(raw);
  out.assignment.num_clusters = max_label + 1;
  return out;
}

void save_assignment(const std::vector<std::string>& ids, const ClusterAssignment& a, const fs::path& path) {
  if (ids.size() != a.size()) throw Error("assignment and id list differ in length");
  a.validate();
  std::string out = "id,cluster\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check_id(ids[i]);
    out += ids[i] + ',' + std::to_string(a.labels[i]) + '\n';
  }
  write_file_atomic(path, out);
}

SplitAssignment load_split(const fs::path& path, const std::vector<std::string>& ids) {
  const auto text = read_file(path);
  const auto lines = lines_of(text);
  if (lines.empty() || lines[0] != "id,split") throw Error(path.string() + ": header must be id,split");
  std::unordered_map<std::string, Split> by_id;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split_fields(lines[r]);
    if (fields.size() != 2) throw Error(path.string() + " row " + std::to_string(r - 1) + ": expected 2 fields");
    by_id[std::string(fields[0])] = parse_split(fields[1]);
  }
  SplitAssignment out;
  out.tags.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(path.string() + ": no split for id '" + id + "'");
    out.tags.push_back(it->second);
  }
  return out;
}

void save_split(const std::vector<std::string>& ids, const SplitAssignment& s, const fs::path& path) {
  if (ids.size() != s.tags.size()) throw Error("split and id list differ in length");
  std::string out = "id,split\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check_id(ids[i]);
    out += ids[i] + ',' + std::string(split_name(s.tags[i])) + '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace ldpo
