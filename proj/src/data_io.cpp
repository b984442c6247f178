#include "inpl/data_io.hpp"

#include "inpl/numfmt.hpp"
#include "inpl/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace inpl {

namespace fs = std::filesystem;
using json = nlohmann::json;

void Dataset::validate() const {
  const Index n = graph.num_nodes();
  if (features.rows() != n)
    throw InputError("feature matrix has " + std::to_string(features.rows()) + " rows but graph has " +
                     std::to_string(n) + " nodes");
  if (labels.size() != n)
    throw InputError("label vector has " + std::to_string(labels.size()) + " entries but graph has " +
                     std::to_string(n) + " nodes");
  labels.validate();
  if (auto bad = find_non_finite(features); bad.found)
    throw InputError("non-finite feature at (" + std::to_string(bad.row) + ", " + std::to_string(bad.col) + ")");
  std::vector<char> owner(static_cast<std::size_t>(n), 0);
  auto check = [&](const std::vector<Index>& mask, char tag, const char* name) {
    for (Index u : mask) {
      if (u < 0 || u >= n)
        throw InputError(std::string(name) + " mask contains node " + std::to_string(u) + " outside [0, " +
                         std::to_string(n) + ")");
      if (owner[u] != 0)
        throw InputError(std::string(name) + " mask node " + std::to_string(u) + " appears in more than one mask");
      owner[u] = tag;
    }
  };
  check(masks.train, 1, "train");
  check(masks.val, 2, "val");
  check(masks.test, 3, "test");
}

namespace {

std::ifstream open_input(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing file " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::vector<Index> sorted_unique(std::vector<Index> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::string where(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line); }

}  // namespace

Masks read_masks(const fs::path& path, Index n) {
  auto in = open_input(path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("cannot parse " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw InputError(path.string() + ": expected a JSON object");
  auto read = [&](const char* key) {
    std::vector<Index> out;
    if (!doc.contains(key)) throw InputError(path.string() + ": missing array \"" + key + "\"");
    const auto& arr = doc.at(key);
    if (!arr.is_array()) throw InputError(path.string() + ": \"" + key + "\" is not an array");
    for (const auto& v : arr) {
      if (!v.is_number_integer()) throw InputError(path.string() + ": non-integer node id in \"" + key + "\"");
      const auto u = v.get<Index>();
      if (u < 0 || u >= n)
        throw InputError(path.string() + ": node " + std::to_string(u) + " in \"" + key + "\" outside [0, " +
                         std::to_string(n) + ")");
      out.push_back(u);
    }
    return sorted_unique(std::move(out));
  };
  return {read("train"), read("val"), read("test")};
}

void write_masks(const Masks& masks, const fs::path& path) {
  json doc = {{"train", masks.train}, {"val", masks.val}, {"test", masks.test}};
  write_atomically(path, doc.dump() + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();

  // features.csv
  std::vector<std::vector<double>> rows;
  {
    const fs::path path = dir / "features.csv";
    auto in = open_input(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        const auto v = parse_double(cell);
        if (!v) throw InputError(where(path, lineno) + ": cannot parse '" + cell + "' as a real");
        row.push_back(*v);
      }
      if (!rows.empty() && row.size() != rows.front().size())
        throw InputError(where(path, lineno) + ": expected " + std::to_string(rows.front().size()) + " columns, got " +
                         std::to_string(row.size()));
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw InputError(path.string() + ": no feature rows");
  }
  const Index n = static_cast<Index>(rows.size());
  ds.features.resize(n, static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < ds.features.cols(); ++j) ds.features(i, j) = rows[i][j];

  // labels.csv
  {
    const fs::path path = dir / "labels.csv";
    auto in = open_input(path);
    std::string line;
    std::size_t lineno = 0;
    int declared = -1;
    std::vector<int> labels;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line.rfind("#classes=", 0) == 0) {
        const auto c = parse_int<int>(std::string_view(line).substr(9));
        if (!c || *c < 2) throw InputError(where(path, lineno) + ": bad class declaration '" + line + "'");
        declared = *c;
        continue;
      }
      const auto v = parse_int<int>(line);
      if (!v || *v < 0) throw InputError(where(path, lineno) + ": bad label '" + line + "'");
      labels.push_back(*v);
    }
    if (static_cast<Index>(labels.size()) != n)
      throw InputError("row-count mismatch: labels.csv has " + std::to_string(labels.size()) +
                       " rows, features.csv has " + std::to_string(n));
    if (declared > 0) {
      for (std::size_t u = 0; u < labels.size(); ++u)
        if (labels[u] >= declared)
          throw InputError("label " + std::to_string(labels[u]) + " of node " + std::to_string(u) +
                           " is not below the declared class count " + std::to_string(declared));
      ds.labels = {std::move(labels), declared};
    } else {
      ds.labels = LabelVector::from_labels(std::move(labels));
    }
  }

  // edges.tsv
  {
    const fs::path path = dir / "edges.tsv";
    auto in = open_input(path);
    std::vector<Edge> edges;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw InputError(where(path, lineno) + ": expected 'u<TAB>v'");
      const auto u = parse_int<std::int64_t>(std::string_view(line).substr(0, tab));
      const auto v = parse_int<std::int64_t>(std::string_view(line).substr(tab + 1));
      if (!u || !v) throw InputError(where(path, lineno) + ": bad node id in '" + line + "'");
      if (*u < 0 || *v < 0 || *u >= n || *v >= n)
        throw InputError(where(path, lineno) + ": endpoint out of range in edge (" + std::to_string(*u) + ", " +
                         std::to_string(*v) + ") for n = " + std::to_string(n));
      edges.emplace_back(static_cast<NodeId>(*u), static_cast<NodeId>(*v));
    }
    ds.graph = build_graph(edges, n);
  }

  ds.masks = read_masks(dir / "splits.json", n);
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  std::string edges;
  for (const auto& [u, v] : dataset.graph.edges()) edges += std::to_string(u) + '\t' + std::to_string(v) + '\n';
  write_atomically(dir / "edges.tsv", edges);

  std::string features;
  for (Index i = 0; i < dataset.features.rows(); ++i) {
    for (Index j = 0; j < dataset.features.cols(); ++j) {
      if (j) features += ',';
      features += format_double(dataset.features(i, j));
    }
    features += '\n';
  }
  write_atomically(dir / "features.csv", features);

  std::string labels = "#classes=" + std::to_string(dataset.labels.classes) + "\n";
  for (int l : dataset.labels.labels) labels += std::to_string(l) + '\n';
  write_atomically(dir / "labels.csv", labels);

  write_masks(dataset.masks, dir / "splits.json");
}

void row_normalize(Matrix& features) {
  for (Index i = 0; i < features.rows(); ++i) {
    const double norm = features.row(i).lpNorm<1>();
    if (norm > 0.0) features.row(i) /= norm;
  }
}

SplitResult standard_split(const LabelVector& labels, const std::array<double, 3>& fractions, std::uint64_t seed) {
  for (double f : fractions)
    if (!(f >= 0.0)) throw InputError("split fractions must be non-negative");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw InputError("split fractions must sum to 1");
  labels.validate();
  SplitResult result;
  Rng rng(seed);
  for (int c = 0; c < labels.classes; ++c) {
    std::vector<Index> members;
    for (Index u = 0; u < labels.size(); ++u)
      if (labels[u] == c) members.push_back(u);
    rng.shuffle(members);
    const auto m = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * m + 1e-9));
    const auto n_val = std::min(members.size() - n_train, static_cast<std::size_t>(std::floor(fractions[1] * m + 1e-9)));
    if (members.size() < 3)
      result.warnings.push_back("class " + std::to_string(c) + " has only " + std::to_string(members.size()) +
                                " nodes; some split parts receive none");
    for (std::size_t i = 0; i < members.size(); ++i) {
      auto& target = i < n_train ? result.masks.train : i < n_train + n_val ? result.masks.val : result.masks.test;
      target.push_back(members[i]);
    }
  }
  result.masks.train = sorted_unique(std::move(result.masks.train));
  result.masks.val = sorted_unique(std::move(result.masks.val));
  result.masks.test = sorted_unique(std::move(result.masks.test));
  return result;
}

Dataset gen_synth(const SynthSpec& spec) {
  if (spec.classes < 2) throw InputError("synthetic graph needs at least 2 classes");
  if (spec.n < spec.classes)
    throw InputError("synthetic graph needs n >= classes (n = " + std::to_string(spec.n) + ", classes = " +
                     std::to_string(spec.classes) + ")");
  if (!(spec.p_intra >= 0.0 && spec.p_intra <= 1.0 && spec.p_inter >= 0.0 && spec.p_inter <= 1.0))
    throw InputError("edge probabilities must lie in [0, 1]");
  if (spec.feature_dim < 1) throw InputError("feature_dim must be >= 1");

  Rng root(spec.seed);
  Rng label_rng = root.split(1), edge_rng = root.split(2), feature_rng = root.split(3);
  const std::uint64_t split_seed = root.split(4).next_u64();

  std::vector<int> labels(static_cast<std::size_t>(spec.n));
  for (Index u = 0; u < spec.n; ++u) labels[u] = static_cast<int>(u % spec.classes);
  label_rng.shuffle(labels);

  std::vector<Edge> edges;
  for (Index u = 0; u < spec.n; ++u)
    for (Index v = u + 1; v < spec.n; ++v) {
      const double p = labels[u] == labels[v] ? spec.p_intra : spec.p_inter;
      if (edge_rng.uniform() < p) edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    }

  Matrix means(spec.classes, spec.feature_dim);
  for (int c = 0; c < spec.classes; ++c) {
    for (Index j = 0; j < spec.feature_dim; ++j) means(c, j) = feature_rng.normal();
    const double norm = means.row(c).norm();
    means.row(c) *= spec.feature_separation / (norm > 0.0 ? norm : 1.0);
  }
  Matrix features(spec.n, spec.feature_dim);
  for (Index u = 0; u < spec.n; ++u)
    for (Index j = 0; j < spec.feature_dim; ++j) features(u, j) = means(labels[u], j) + feature_rng.normal();

  Dataset ds;
  ds.name = "csbm";
  ds.graph = build_graph(edges, spec.n);
  ds.features = std::move(features);
  ds.labels = {std::move(labels), spec.classes};
  ds.masks = standard_split(ds.labels, {0.48, 0.32, 0.20}, split_seed).masks;
  ds.validate();
  return ds;
}

}  // namespace inpl
