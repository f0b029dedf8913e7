#pragma once

#include <cstdint>
#include <vector>

#include "dese/diffmat.hpp"
#include "dese/matrix.hpp"

namespace dese {

// Balanced positive/negative edge sample drawn from a weighted adjacency.
struct EdgeSample {
  struct Pair {
    Index i;
    Index j;
    double label;  // 1 for an edge of W, 0 for a sampled non-edge
  };
  std::vector<Pair> pairs;  // positives first, then an equal number of negatives

  Index n_positive() const;
  void validate() const;
};

// All off-diagonal edges of W (capped at max_pos by uniform subsampling)
// plus the same number of uniformly sampled non-edges. Deterministic per
// seed. Throws if W has no edge or no non-edge to sample.
EdgeSample sample_edges(const Mat& weighted_adj, Index max_pos, std::uint64_t seed);

// Mean over the sampled pairs of the per-edge cross entropy
// -[l log p + (1-l) log(1-p)] with p = sigmoid(2 - ||e_i - e_j||), in
// nats, differentiable through the embeddings.
ad::DiffMatrix ce_loss(ad::DiffMatrix embeddings, const EdgeSample& sample);

// lambda_se * se + lambda_ce * ce. Coefficients must be >= 0.
ad::DiffMatrix total_loss(ad::DiffMatrix se, ad::DiffMatrix ce, double lambda_se,
                          double lambda_ce);

}  // namespace dese
