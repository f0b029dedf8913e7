#pragma once

#include "dese/diffmat.hpp"
#include "dese/matrix.hpp"
#include "dese/rng.hpp"
#include "dese/sll.hpp"

namespace dese {

// Parameters of one clustering assignment layer.
struct AssParams {
  Mat theta1;       // d x d, embedding transform
  Mat theta2;       // d x c, assignment transform
  Mat theta3;       // 2d x 1, attention scorer
  SllParams theta_c;  // cluster-MLP (d -> d) for the next level's attribute graph

  static AssParams init(Index embed_dim, Index n_clusters, Rng& rng);
};

// Graph state at one level of the hierarchy. The adjacency matrices are
// value snapshots (the KNN rebuild makes the graph discrete per level);
// the embedding stays on the tape.
struct LevelState {
  ad::DiffMatrix embeddings;  // N_k x d
  Mat struct_adj;             // N_k x N_k
  Mat attr_adj;               // N_k x N_k
  Mat weighted;               // struct_adj + beta_f * attr_adj
  double beta_f = 0.0;

  Index size() const { return struct_adj.rows(); }
  void validate() const;
};

// H = ReLU(W-hat E Theta1) with W-hat the row-sum-normalized weighted
// adjacency (zero-sum rows pass through).
ad::DiffMatrix embed(const LevelState& state, ad::DiffMatrix theta1);

struct SoftAssignment {
  ad::DiffMatrix s;      // N_k x c, row-stochastic
  ad::DiffMatrix gamma;  // N_k x N_k attention, masked to W's support
};

// S = row-normalized ReLU((Gamma o W) E Theta2); Gamma from LeakyReLU
// attention scores normalized over each node's neighbors. All-zero rows
// of the ReLU output fall back to the uniform distribution.
SoftAssignment soft_assign(const LevelState& state, ad::DiffMatrix theta2,
                           ad::DiffMatrix theta3, double leaky_slope);

// Lifts the graph one level: E_c = S^T H, A_g' = S^T A_g S (diagonal
// zeroed), A_f' = KNN over the cluster-MLP embedding of E_c.
LevelState aggregate(const LevelState& state, ad::DiffMatrix s, ad::DiffMatrix h,
                     const SllParams& cluster_mlp, const KPolicy& policy,
                     double beta_f, std::uint64_t seed);

}  // namespace dese
