#include "dese/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dese/rng.hpp"

namespace dese {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail("cannot open " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

double parse_double(std::string_view tok, const std::filesystem::path& file,
                    std::size_t lineno) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    fail(file.string() + ":" + std::to_string(lineno) + ": bad number '" +
         std::string(tok) + "'");
  }
  return v;
}

long parse_int(std::string_view tok, const std::filesystem::path& file,
               std::size_t lineno) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    fail(file.string() + ":" + std::to_string(lineno) + ": bad integer '" +
         std::string(tok) + "'");
  }
  return v;
}

}  // namespace

int GraphDataset::n_classes() const {
  if (!labels || labels->empty()) return 0;
  return *std::max_element(labels->begin(), labels->end()) + 1;
}

void GraphDataset::validate() const {
  if (features.rows() != n_nodes) fail(name + ": feature row count != N");
  if (feature_dim() < 1) fail(name + ": feature dimension must be >= 1");
  if (!features.allFinite()) fail(name + ": features contain NaN/Inf");
  if (adjacency.rows() != n_nodes || adjacency.cols() != n_nodes) {
    fail(name + ": adjacency is not N x N");
  }
  if (!is_symmetric(adjacency, 0.0)) fail(name + ": adjacency not symmetric");
  if (!has_zero_diagonal(adjacency)) fail(name + ": adjacency has self-loops");
  for (Index i = 0; i < n_nodes; ++i) {
    for (Index j = 0; j < n_nodes; ++j) {
      const double a = adjacency(i, j);
      if (a != 0.0 && a != 1.0) fail(name + ": adjacency entry not in {0,1}");
    }
  }
  if (2 * n_edges != static_cast<Index>(adjacency.sum())) {
    fail(name + ": edge count inconsistent with adjacency");
  }
  if (labels) {
    if (static_cast<Index>(labels->size()) != n_nodes) {
      fail(name + ": label count != N");
    }
    std::vector<bool> seen(static_cast<std::size_t>(n_classes()), false);
    for (int y : *labels) {
      if (y < 0) fail(name + ": negative label");
      seen[static_cast<std::size_t>(y)] = true;
    }
    if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) {
      fail(name + ": labels are not contiguous 0..c-1");
    }
  }
}

GraphDataset load_dataset(const std::filesystem::path& dir) {
  GraphDataset ds;
  ds.name = dir.filename().string();
  if (ds.name.empty()) ds.name = dir.parent_path().filename().string();

  const auto feat_path = dir / "features.csv";
  const auto feat_lines = read_lines(feat_path);
  if (feat_lines.empty()) fail(feat_path.string() + ": empty");
  const Index n = static_cast<Index>(feat_lines.size());

  Index f = 1;
  f += static_cast<Index>(std::count(feat_lines[0].begin(), feat_lines[0].end(), ','));
  ds.features.resize(n, f);
  for (Index i = 0; i < n; ++i) {
    std::string_view row(feat_lines[static_cast<std::size_t>(i)]);
    Index j = 0;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = row.find(',', pos);
      const auto tok = row.substr(pos, comma == std::string_view::npos
                                           ? std::string_view::npos
                                           : comma - pos);
      if (j >= f) {
        fail(feat_path.string() + ":" + std::to_string(i + 1) +
             ": row has more than " + std::to_string(f) + " columns");
      }
      ds.features(i, j++) = parse_double(tok, feat_path, static_cast<std::size_t>(i) + 1);
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (j != f) {
      fail(feat_path.string() + ":" + std::to_string(i + 1) +
           ": expected " + std::to_string(f) + " columns, got " + std::to_string(j));
    }
  }
  ds.n_nodes = n;

  const auto edge_path = dir / "edges.tsv";
  const auto edge_lines = read_lines(edge_path);
  std::set<std::pair<Index, Index>> edges;
  for (std::size_t k = 0; k < edge_lines.size(); ++k) {
    const std::string& line = edge_lines[k];
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      fail(edge_path.string() + ":" + std::to_string(k + 1) + ": expected 'u<TAB>v'");
    }
    const long u = parse_int(std::string_view(line).substr(0, tab), edge_path, k + 1);
    const long v = parse_int(std::string_view(line).substr(tab + 1), edge_path, k + 1);
    if (u < 0 || v < 0 || u >= n || v >= n) {
      fail(edge_path.string() + ":" + std::to_string(k + 1) + ": node id " +
           std::to_string(std::max(u, v)) + " out of range [0, " +
           std::to_string(n) + ")");
    }
    if (u == v) {
      ++ds.dropped_self_loops;
      continue;
    }
    edges.emplace(std::min<Index>(u, v), std::max<Index>(u, v));
  }
  if (ds.dropped_self_loops > 0) {
    std::fprintf(stderr, "[%s] dropped %lld self-loop(s)\n", ds.name.c_str(),
                 static_cast<long long>(ds.dropped_self_loops));
  }
  ds.adjacency = Mat::Zero(n, n);
  for (const auto& [u, v] : edges) {
    ds.adjacency(u, v) = 1.0;
    ds.adjacency(v, u) = 1.0;
  }
  ds.n_edges = static_cast<Index>(edges.size());

  const auto label_path = dir / "labels.csv";
  if (std::filesystem::exists(label_path)) {
    const auto label_lines = read_lines(label_path);
    if (static_cast<Index>(label_lines.size()) != n) {
      fail(label_path.string() + ": " + std::to_string(label_lines.size()) +
           " rows but features.csv has " + std::to_string(n));
    }
    std::vector<int> labels(label_lines.size());
    for (std::size_t k = 0; k < label_lines.size(); ++k) {
      labels[k] = static_cast<int>(parse_int(label_lines[k], label_path, k + 1));
    }
    ds.labels = std::move(labels);
  }

  ds.validate();
  return ds;
}

void save_dataset(const GraphDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::ofstream edges(dir / "edges.tsv");
  for (Index i = 0; i < ds.n_nodes; ++i) {
    for (Index j = i + 1; j < ds.n_nodes; ++j) {
      if (ds.adjacency(i, j) != 0.0) edges << i << '\t' << j << '\n';
    }
  }

  std::ofstream feats(dir / "features.csv");
  char buf[32];
  for (Index i = 0; i < ds.n_nodes; ++i) {
    for (Index j = 0; j < ds.features.cols(); ++j) {
      // shortest representation that round-trips a double
      std::snprintf(buf, sizeof buf, "%.17g", ds.features(i, j));
      double back = 0.0;
      std::sscanf(buf, "%lf", &back);
      if (back == ds.features(i, j)) {
        char shorter[32];
        for (int prec = 1; prec < 17; ++prec) {
          std::snprintf(shorter, sizeof shorter, "%.*g", prec, ds.features(i, j));
          std::sscanf(shorter, "%lf", &back);
          if (back == ds.features(i, j)) {
            std::snprintf(buf, sizeof buf, "%s", shorter);
            break;
          }
        }
      }
      feats << (j ? "," : "") << buf;
    }
    feats << '\n';
  }

  if (ds.labels) {
    std::ofstream labels(dir / "labels.csv");
    for (int y : *ds.labels) labels << y << '\n';
  }
}

DegreeVector degree_vector(const Mat& weighted_adj) {
  if (weighted_adj.rows() != weighted_adj.cols()) {
    fail("degree_vector: matrix not square");
  }
  if ((weighted_adj.array() < 0.0).any()) {
    fail("degree_vector: negative weights");
  }
  if (!is_symmetric(weighted_adj, 1e-9)) {
    fail("degree_vector: asymmetry beyond 1e-9");
  }
  return {weighted_adj.rowwise().sum()};
}

GraphDataset generate_sbm(const std::vector<Index>& block_sizes, double p_in,
                          double p_out, Index feature_dim, double feature_noise,
                          std::uint64_t seed) {
  if (block_sizes.empty()) fail("generate_sbm: block_sizes empty");
  if (!(p_out >= 0.0 && p_in <= 1.0 && p_in > p_out)) {
    fail("generate_sbm: need 0 <= p_out < p_in <= 1 (planted signal absent otherwise)");
  }
  if (feature_dim < 1) fail("generate_sbm: feature_dim must be >= 1");

  const Index n_blocks = static_cast<Index>(block_sizes.size());
  Index n = 0;
  std::vector<int> labels;
  for (Index b = 0; b < n_blocks; ++b) {
    if (block_sizes[static_cast<std::size_t>(b)] < 1) fail("generate_sbm: empty block");
    n += block_sizes[static_cast<std::size_t>(b)];
    labels.insert(labels.end(),
                  static_cast<std::size_t>(block_sizes[static_cast<std::size_t>(b)]),
                  static_cast<int>(b));
  }

  Rng rng(seed);
  GraphDataset ds;
  ds.name = "sbm";
  ds.n_nodes = n;
  ds.adjacency = Mat::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double p = labels[static_cast<std::size_t>(i)] ==
                               labels[static_cast<std::size_t>(j)]
                           ? p_in
                           : p_out;
      if (rng.bernoulli(p)) {
        ds.adjacency(i, j) = 1.0;
        ds.adjacency(j, i) = 1.0;
        ++ds.n_edges;
      }
    }
  }

  // Block indicator tiled across feature_dim, plus noise.
  ds.features = Mat::Zero(n, feature_dim);
  for (Index i = 0; i < n; ++i) {
    const int b = labels[static_cast<std::size_t>(i)];
    for (Index j = b; j < feature_dim; j += n_blocks) ds.features(i, j) = 1.0;
    if (feature_noise > 0.0) {
      for (Index j = 0; j < feature_dim; ++j) {
        ds.features(i, j) += feature_noise * rng.normal();
      }
    }
  }
  ds.labels = std::move(labels);
  ds.validate();
  return ds;
}

}  // namespace dese
