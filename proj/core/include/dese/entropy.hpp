#pragma once

#include <map>
#include <vector>

#include "dese/diffmat.hpp"
#include "dese/matrix.hpp"

namespace dese {

// Rooted tree over nested node subsets: vertex 0 is the root, every graph
// node maps to exactly one leaf, and all leaves sit at depth exactly
// `height`. Vertex ids are arbitrary non-negative ints.
struct EncodingTree {
  int root = 0;
  int height = 0;                           // number of non-root levels
  std::map<int, std::vector<int>> children; // non-leaf vertex -> children
  std::vector<int> leaf_of;                 // graph node -> leaf vertex

  void validate(Index n_nodes) const;

  // Builds the height-2 tree induced by hard cluster labels
  // (root -> clusters -> leaves).
  static EncodingTree from_labels(const std::vector<int>& labels);

  // Height-1 tree: all leaves directly under the root.
  static EncodingTree flat(Index n_nodes);
};

// Structural entropy of a weighted graph under an encoding tree, in bits,
// by direct enumeration of volumes and cut weights per tree vertex. This
// is the non-differentiable reference that the soft objective must match
// on hard assignments.
double classical_se(const Mat& weighted_adj, const EncodingTree& tree);

// Ordered per-level soft assignments [S^h, ..., S^1], root at level 0
// with a single vertex, leaves at level h. Each S^k is N_k x N_{k-1} and
// row-stochastic; S^1 is the all-ones column.
struct AssignmentStack {
  ad::Tape* tape = nullptr;
  std::vector<ad::NodeId> layers;  // S^h first, S^1 last

  int height() const { return static_cast<int>(layers.size()); }
  Index n_leaves() const;
  ad::DiffMatrix layer(int k) const;  // S^k, 1 <= k <= h

  // Wraps trainer-produced layers (leaf-up: S^h, S^{h-1}, ..., S^2) and
  // appends the implicit all-ones S^1 connecting the top level to the
  // root. Checks shapes and row-stochasticity on construction.
  static AssignmentStack from_layers(ad::Tape& tape,
                                     const std::vector<ad::NodeId>& leaf_up,
                                     double row_sum_tol = 1e-9);

  // Same but the values are plain matrices (test convenience).
  static AssignmentStack from_matrices(ad::Tape& tape,
                                       const std::vector<Mat>& leaf_up,
                                       double row_sum_tol = 1e-9);

  // Height-1 stack: every leaf attaches straight to the root.
  static AssignmentStack flat(ad::Tape& tape, Index n_leaves);
};

// C^k = S^h * S^{h-1} * ... * S^{k+1}; C^h is the identity, C^0 the
// all-ones column.
ad::DiffMatrix direct_assignment(const AssignmentStack& stack, int level);

// One layer of the soft-assignment structural entropy, in bits, as a 1x1
// node on the stack's tape. `weighted_adj` enters as a constant.
ad::DiffMatrix soft_se_layer(const Mat& weighted_adj, const AssignmentStack& stack,
                             int level);

// Sum of soft_se_layer over k = 1..h.
ad::DiffMatrix soft_se(const Mat& weighted_adj, const AssignmentStack& stack);

}  // namespace dese
