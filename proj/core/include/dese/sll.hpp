#pragma once

#include <cstdint>
#include <string>

#include "dese/matrix.hpp"
#include "dese/rng.hpp"

namespace dese {

// Two-layer MLP (f -> d -> d, ReLU between) whose output space defines
// the KNN metric for the attribute graph.
struct SllParams {
  Mat w1;  // f x d
  Mat b1;  // 1 x d
  Mat w2;  // d x d
  Mat b2;  // 1 x d

  static SllParams init(Index in_dim, Index embed_dim, Rng& rng);
  Mat forward(const Mat& features) const;
};

// Per-node neighbor count policy for the KNN construction.
struct KPolicy {
  enum class Kind { kFixed, kDegDiv, kDegSqrt, kDegLog, kDegPow, kRandom };

  Kind kind = Kind::kFixed;
  Index k = 1;           // kFixed, kRandom
  double divisor = 5.0;  // kDegDiv

  // Per-node K from the structural degree, clamped to [1, N-1].
  Index resolve(double degree, Index n_nodes) const;

  static KPolicy parse(const std::string& text, Index k_value);
  std::string to_string() const;
};

// KNN attribute graph in the MLP embedding space, symmetrized to entries
// in {0, 0.5, 1} with zero diagonal. `struct_degree` feeds the degree-based
// K policies; `seed` only matters for the random policy. Selection is a
// discrete step: the result is a plain matrix, not a tape node.
Mat attribute_graph(const Mat& features_or_embeddings, const SllParams& params,
                    const KPolicy& policy, const Eigen::VectorXd& struct_degree,
                    std::uint64_t seed);

// Same, but on caller-provided embeddings (no MLP).
Mat knn_graph(const Mat& embeddings, const KPolicy& policy,
              const Eigen::VectorXd& struct_degree, std::uint64_t seed);

// W = A_g + beta_f * A_f
Mat fuse(const Mat& a_g, const Mat& a_f, double beta_f);

}  // namespace dese
