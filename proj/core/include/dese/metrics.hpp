#pragma once

#include <cstdint>
#include <vector>

namespace dese {

// Exact confusion counts between a predicted and a true partition.
struct ContingencyTable {
  std::vector<std::vector<std::int64_t>> counts;  // c_true x c_pred
  std::vector<std::int64_t> truth_marginals;
  std::vector<std::int64_t> pred_marginals;
  std::int64_t total = 0;

  std::size_t n_truth() const { return counts.size(); }
  std::size_t n_pred() const { return counts.empty() ? 0 : counts[0].size(); }
};

ContingencyTable contingency(const std::vector<int>& pred,
                             const std::vector<int>& truth);

// Maximum-agreement one-to-one mapping pred cluster -> truth class over
// the (zero-padded) contingency table. mapping[j] = truth class of pred
// cluster j, or -1 when the padding absorbs it. Ties resolve to the
// lexicographically smallest mapping.
struct Matching {
  std::vector<int> mapping;
  std::int64_t matched = 0;  // total agreement count
};
Matching hungarian_match(const ContingencyTable& table);

enum class NmiNorm { kArithmetic, kMax, kSqrt };

struct MetricReport {
  double nmi = 0.0;
  double ari = 0.0;
  double acc = 0.0;
  double f1 = 0.0;
  bool cluster_count_mismatch = false;  // pred and truth class counts differ
};

// NMI (natural-log entropies), pair-counting ARI, matched accuracy via
// the Hungarian assignment, and macro-F1 over truth classes under the
// same matching.
MetricReport evaluate(const std::vector<int>& pred, const std::vector<int>& truth,
                      NmiNorm norm = NmiNorm::kArithmetic);

}  // namespace dese
