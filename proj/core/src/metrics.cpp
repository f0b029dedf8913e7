#include "dese/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dese {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::int64_t binom2(std::int64_t n) { return n * (n - 1) / 2; }

// Jonker-Volgenant style min-cost assignment on an n x m cost matrix with
// n <= m; returns col_of_row. O(n^2 m), deterministic.
std::vector<int> min_cost_assignment(const std::vector<std::vector<std::int64_t>>& cost) {
  const int n = static_cast<int>(cost.size());
  const int m = static_cast<int>(cost[0].size());
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;

  std::vector<std::int64_t> u(static_cast<std::size_t>(n) + 1, 0);
  std::vector<std::int64_t> v(static_cast<std::size_t>(m) + 1, 0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<std::int64_t> minv(static_cast<std::size_t>(m) + 1, kInf);
    std::vector<bool> used(static_cast<std::size_t>(m) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      std::int64_t delta = kInf;
      int j1 = -1;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const std::int64_t cur = cost[static_cast<std::size_t>(i0) - 1]
                                     [static_cast<std::size_t>(j) - 1] -
                                 u[static_cast<std::size_t>(i0)] -
                                 v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> col_of_row(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] > 0) {
      col_of_row[static_cast<std::size_t>(p[static_cast<std::size_t>(j)]) - 1] = j - 1;
    }
  }
  return col_of_row;
}

// Kuhn augmenting path on a boolean bipartite graph; used to test whether
// the tight-edge subgraph still has a perfect matching on the rows.
bool try_kuhn(int row, const std::vector<std::vector<bool>>& adj,
              std::vector<bool>& visited, std::vector<int>& match_col) {
  const int m = static_cast<int>(adj[0].size());
  for (int j = 0; j < m; ++j) {
    if (!adj[static_cast<std::size_t>(row)][static_cast<std::size_t>(j)] ||
        visited[static_cast<std::size_t>(j)]) {
      continue;
    }
    visited[static_cast<std::size_t>(j)] = true;
    if (match_col[static_cast<std::size_t>(j)] < 0 ||
        try_kuhn(match_col[static_cast<std::size_t>(j)], adj, visited, match_col)) {
      match_col[static_cast<std::size_t>(j)] = row;
      return true;
    }
  }
  return false;
}

bool rows_perfectly_matchable(const std::vector<std::vector<bool>>& adj,
                              const std::vector<int>& fixed_col_of_row) {
  const int n = static_cast<int>(adj.size());
  const int m = static_cast<int>(adj[0].size());
  std::vector<int> match_col(static_cast<std::size_t>(m), -1);
  for (int i = 0; i < n; ++i) {
    if (fixed_col_of_row[static_cast<std::size_t>(i)] >= 0) {
      match_col[static_cast<std::size_t>(fixed_col_of_row[static_cast<std::size_t>(i)])] = i;
    }
  }
  for (int i = 0; i < n; ++i) {
    if (fixed_col_of_row[static_cast<std::size_t>(i)] >= 0) continue;
    std::vector<bool> visited(static_cast<std::size_t>(m), false);
    // fixed columns must stay taken
    for (int j = 0; j < m; ++j) {
      if (match_col[static_cast<std::size_t>(j)] >= 0 &&
          fixed_col_of_row[static_cast<std::size_t>(
              match_col[static_cast<std::size_t>(j)])] == j) {
        visited[static_cast<std::size_t>(j)] = true;
      }
    }
    if (!try_kuhn(i, adj, visited, match_col)) return false;
  }
  return true;
}

}  // namespace

ContingencyTable contingency(const std::vector<int>& pred,
                             const std::vector<int>& truth) {
  if (pred.size() != truth.size()) {
    fail("contingency: pred has " + std::to_string(pred.size()) +
         " labels but truth has " + std::to_string(truth.size()));
  }
  if (truth.empty()) fail("contingency: empty labelings");

  int c_pred = 0;
  int c_true = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k] < 0 || truth[k] < 0) fail("contingency: negative label");
    c_pred = std::max(c_pred, pred[k] + 1);
    c_true = std::max(c_true, truth[k] + 1);
  }

  ContingencyTable t;
  t.counts.assign(static_cast<std::size_t>(c_true),
                  std::vector<std::int64_t>(static_cast<std::size_t>(c_pred), 0));
  t.truth_marginals.assign(static_cast<std::size_t>(c_true), 0);
  t.pred_marginals.assign(static_cast<std::size_t>(c_pred), 0);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    t.counts[static_cast<std::size_t>(truth[k])][static_cast<std::size_t>(pred[k])]++;
    t.truth_marginals[static_cast<std::size_t>(truth[k])]++;
    t.pred_marginals[static_cast<std::size_t>(pred[k])]++;
    t.total++;
  }
  return t;
}

Matching hungarian_match(const ContingencyTable& table) {
  const int c_true = static_cast<int>(table.n_truth());
  const int c_pred = static_cast<int>(table.n_pred());
  if (c_true == 0 || c_pred == 0) fail("hungarian_match: empty table");

  // Predicted clusters with no members cannot contribute agreement; keep
  // only the occupied ones so the assignment stays small.
  std::vector<int> used_pred;
  for (int j = 0; j < c_pred; ++j) {
    if (table.pred_marginals[static_cast<std::size_t>(j)] > 0) used_pred.push_back(j);
  }
  if (used_pred.empty()) fail("hungarian_match: all predicted clusters empty");

  // Square problem: rows = used pred clusters, cols = truth classes,
  // padded with zero-count entries.
  const int n = std::max(static_cast<int>(used_pred.size()), c_true);
  std::int64_t max_count = 0;
  for (const auto& row : table.counts) {
    for (std::int64_t c : row) max_count = std::max(max_count, c);
  }
  auto weight = [&](int r, int c) -> std::int64_t {
    if (r >= static_cast<int>(used_pred.size()) || c >= c_true) return 0;
    return table.counts[static_cast<std::size_t>(c)]
                       [static_cast<std::size_t>(used_pred[static_cast<std::size_t>(r)])];
  };
  std::vector<std::vector<std::int64_t>> cost(
      static_cast<std::size_t>(n), std::vector<std::int64_t>(static_cast<std::size_t>(n)));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) cost[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = max_count - weight(r, c);
  }

  std::vector<int> col_of_row = min_cost_assignment(cost);
  std::int64_t best = 0;
  for (int r = 0; r < n; ++r) best += weight(r, col_of_row[static_cast<std::size_t>(r)]);

  // Lexicographically smallest optimal mapping, feasible to compute
  // exactly for small tables: fix each row in turn to its smallest tight
  // column that still extends to an optimal assignment.
  if (n <= 32) {
    // duals of the final assignment certify optimality; recompute them as
    // the tight subgraph of any optimal solution via reduced costs
    std::vector<std::vector<bool>> tight(static_cast<std::size_t>(n),
                                         std::vector<bool>(static_cast<std::size_t>(n)));
    {
      // potentials from a fresh run of the value-equivalent LP: derive
      // tight edges by testing swap optimality with the known best value.
      // Simple and exact: edge (r,c) is usable iff forcing it keeps the
      // optimum; test by solving the n-1 problem.
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          std::vector<std::vector<std::int64_t>> sub;
          sub.reserve(static_cast<std::size_t>(n) - 1);
          for (int rr = 0; rr < n; ++rr) {
            if (rr == r) continue;
            std::vector<std::int64_t> row;
            row.reserve(static_cast<std::size_t>(n) - 1);
            for (int cc = 0; cc < n; ++cc) {
              if (cc == c) continue;
              row.push_back(cost[static_cast<std::size_t>(rr)][static_cast<std::size_t>(cc)]);
            }
            sub.push_back(std::move(row));
          }
          std::int64_t sub_best = 0;
          if (!sub.empty()) {
            const auto sub_cols = min_cost_assignment(sub);
            for (std::size_t rr = 0; rr < sub.size(); ++rr) {
              sub_best += sub[rr][static_cast<std::size_t>(sub_cols[rr])];
            }
          }
          const std::int64_t forced =
              cost[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] + sub_best;
          const std::int64_t total_cost = static_cast<std::int64_t>(n) * max_count - best;
          tight[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
              forced == total_cost;
        }
      }
    }
    std::vector<int> fixed(static_cast<std::size_t>(n), -1);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        if (!tight[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) continue;
        bool taken = false;
        for (int rr = 0; rr < r; ++rr) {
          if (fixed[static_cast<std::size_t>(rr)] == c) taken = true;
        }
        if (taken) continue;
        fixed[static_cast<std::size_t>(r)] = c;
        if (rows_perfectly_matchable(tight, fixed)) break;
        fixed[static_cast<std::size_t>(r)] = -1;
      }
      if (fixed[static_cast<std::size_t>(r)] < 0) {
        fixed = col_of_row;  // should not happen; keep the base solution
        break;
      }
    }
    col_of_row = fixed;
  }

  Matching result;
  result.mapping.assign(static_cast<std::size_t>(c_pred), -1);
  result.matched = 0;
  for (std::size_t r = 0; r < used_pred.size(); ++r) {
    const int c = col_of_row[r];
    if (c >= 0 && c < c_true) {
      result.mapping[static_cast<std::size_t>(used_pred[r])] = c;
      result.matched += weight(static_cast<int>(r), c);
    }
  }
  return result;
}

MetricReport evaluate(const std::vector<int>& pred, const std::vector<int>& truth,
                      NmiNorm norm) {
  const ContingencyTable t = contingency(pred, truth);
  const double n = static_cast<double>(t.total);

  // --- NMI ---
  double h_true = 0.0;
  double h_pred = 0.0;
  for (std::int64_t a : t.truth_marginals) {
    if (a > 0) h_true -= (a / n) * std::log(a / n);
  }
  for (std::int64_t b : t.pred_marginals) {
    if (b > 0) h_pred -= (b / n) * std::log(b / n);
  }
  double mutual = 0.0;
  for (std::size_t i = 0; i < t.n_truth(); ++i) {
    for (std::size_t j = 0; j < t.n_pred(); ++j) {
      const std::int64_t c = t.counts[i][j];
      if (c == 0) continue;
      mutual += (c / n) * std::log((c * n) /
                                   (static_cast<double>(t.truth_marginals[i]) *
                                    static_cast<double>(t.pred_marginals[j])));
    }
  }
  double denom = 0.0;
  switch (norm) {
    case NmiNorm::kArithmetic: denom = 0.5 * (h_true + h_pred); break;
    case NmiNorm::kMax: denom = std::max(h_true, h_pred); break;
    case NmiNorm::kSqrt: denom = std::sqrt(h_true * h_pred); break;
  }
  // both partitions single-cluster: identical, so perfect agreement
  const double nmi = denom == 0.0 ? 1.0 : std::clamp(mutual / denom, 0.0, 1.0);

  // --- ARI (exact integer arithmetic, one final division) ---
  std::int64_t index = 0;
  for (const auto& row : t.counts) {
    for (std::int64_t c : row) index += binom2(c);
  }
  std::int64_t sum_a = 0;
  std::int64_t sum_b = 0;
  for (std::int64_t a : t.truth_marginals) sum_a += binom2(a);
  for (std::int64_t b : t.pred_marginals) sum_b += binom2(b);
  const std::int64_t pairs = binom2(t.total);
  const std::int64_t ari_num = 2 * (pairs * index - sum_a * sum_b);
  const std::int64_t ari_den = pairs * (sum_a + sum_b) - 2 * sum_a * sum_b;
  const double ari = ari_den == 0
                         ? 1.0
                         : static_cast<double>(ari_num) / static_cast<double>(ari_den);

  // --- ACC and macro-F1 under the optimal matching ---
  const Matching match = hungarian_match(t);
  const double acc = static_cast<double>(match.matched) / n;

  double f1_sum = 0.0;
  for (std::size_t c = 0; c < t.n_truth(); ++c) {
    std::int64_t tp = 0;
    std::int64_t pred_size = 0;
    for (std::size_t j = 0; j < t.n_pred(); ++j) {
      if (match.mapping[j] == static_cast<int>(c)) {
        tp = t.counts[c][j];
        pred_size = t.pred_marginals[j];
      }
    }
    if (tp > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(pred_size);
      const double recall =
          static_cast<double>(tp) / static_cast<double>(t.truth_marginals[c]);
      f1_sum += 2.0 * precision * recall / (precision + recall);
    }
  }
  const double f1 = f1_sum / static_cast<double>(t.n_truth());

  int used_pred = 0;
  for (std::int64_t b : t.pred_marginals) used_pred += b > 0 ? 1 : 0;
  int used_true = 0;
  for (std::int64_t a : t.truth_marginals) used_true += a > 0 ? 1 : 0;

  MetricReport report;
  report.nmi = nmi;
  report.ari = ari;
  report.acc = acc;
  report.f1 = f1;
  report.cluster_count_mismatch = used_pred != used_true;
  return report;
}

}  // namespace dese
