#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dese/matrix.hpp"

namespace dese {

// An undirected attributed graph: symmetric 0/1 adjacency with zero
// diagonal, non-negative features, optional contiguous cluster labels.
struct GraphDataset {
  std::string name;
  Index n_nodes = 0;
  Index n_edges = 0;  // undirected count
  Mat features;       // N x f
  Mat adjacency;      // N x N, {0,1}, symmetric, zero diagonal
  std::optional<std::vector<int>> labels;
  Index dropped_self_loops = 0;  // removed with a warning count at load

  Index feature_dim() const { return features.cols(); }
  int n_classes() const;
  void validate() const;  // throws if any invariant is broken
};

// Loads edges.tsv (one "u<TAB>v" per line, 0-based), features.csv
// (N rows of f comma-separated floats) and optional labels.csv from a
// directory. Duplicate and reversed pairs are deduplicated; self-loops
// are dropped and counted.
GraphDataset load_dataset(const std::filesystem::path& dir);

// Inverse of load_dataset; features round-trip bit-exactly.
void save_dataset(const GraphDataset& ds, const std::filesystem::path& dir);

struct DegreeVector {
  Eigen::VectorXd values;
};

// D[i] = sum_j W[i,j]. Rejects asymmetry beyond 1e-9 and negative weights.
DegreeVector degree_vector(const Mat& weighted_adj);

// Planted-partition generator: within-block edges at p_in, cross-block at
// p_out, features = block indicator tiled to feature_dim plus Gaussian
// noise, labels = block ids. Bit-identical for a fixed seed.
GraphDataset generate_sbm(const std::vector<Index>& block_sizes, double p_in,
                          double p_out, Index feature_dim, double feature_noise,
                          std::uint64_t seed);

}  // namespace dese
