#include "dese/losses.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "dese/rng.hpp"

namespace dese {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

Index EdgeSample::n_positive() const {
  Index n = 0;
  for (const Pair& p : pairs) n += p.label == 1.0 ? 1 : 0;
  return n;
}

void EdgeSample::validate() const {
  std::set<std::pair<Index, Index>> seen;
  Index pos = 0;
  Index neg = 0;
  for (const Pair& p : pairs) {
    if (p.i == p.j) fail("edge sample: self pair");
    if (p.label != 0.0 && p.label != 1.0) fail("edge sample: label not in {0,1}");
    const auto key = std::minmax(p.i, p.j);
    if (!seen.insert({key.first, key.second}).second) {
      fail("edge sample: duplicate unordered pair");
    }
    (p.label == 1.0 ? pos : neg) += 1;
  }
  if (pos != neg) fail("edge sample: positives != negatives");
}

EdgeSample sample_edges(const Mat& weighted_adj, Index max_pos, std::uint64_t seed) {
  const Index n = weighted_adj.rows();
  if (weighted_adj.cols() != n) fail("sample_edges: W not square");
  if (max_pos < 1) fail("sample_edges: max_pos must be >= 1");

  std::vector<std::pair<Index, Index>> positives;
  Index n_zero_pairs = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      if (weighted_adj(i, j) != 0.0) {
        positives.emplace_back(i, j);
      } else {
        ++n_zero_pairs;
      }
    }
  }
  if (positives.empty()) fail("sample_edges: W has no off-diagonal edge");
  if (n_zero_pairs == 0) {
    fail("sample_edges: complete graph, no negative pairs available");
  }

  Rng rng(seed);
  // Balance is capped by whichever side is scarcer.
  const Index n_take =
      std::min({max_pos, static_cast<Index>(positives.size()), n_zero_pairs});
  if (static_cast<Index>(positives.size()) > n_take) {
    // partial Fisher-Yates; first n_take entries are a uniform sample
    for (Index t = 0; t < n_take; ++t) {
      const auto r = t + static_cast<Index>(rng.below(positives.size() - t));
      std::swap(positives[static_cast<std::size_t>(t)],
                positives[static_cast<std::size_t>(r)]);
    }
    positives.resize(static_cast<std::size_t>(n_take));
  }

  EdgeSample sample;
  sample.pairs.reserve(static_cast<std::size_t>(2 * n_take));
  for (const auto& [i, j] : positives) sample.pairs.push_back({i, j, 1.0});

  if (n_zero_pairs <= 4 * n_take) {
    // non-edges are scarce: enumerate them and subsample exactly
    std::vector<std::pair<Index, Index>> zeros;
    zeros.reserve(static_cast<std::size_t>(n_zero_pairs));
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        if (weighted_adj(i, j) == 0.0) zeros.emplace_back(i, j);
      }
    }
    for (Index t = 0; t < n_take; ++t) {
      const auto r = t + static_cast<Index>(rng.below(zeros.size() - t));
      std::swap(zeros[static_cast<std::size_t>(t)],
                zeros[static_cast<std::size_t>(r)]);
      sample.pairs.push_back({zeros[static_cast<std::size_t>(t)].first,
                              zeros[static_cast<std::size_t>(t)].second, 0.0});
    }
  } else {
    std::set<std::pair<Index, Index>> taken;
    while (static_cast<Index>(taken.size()) < n_take) {
      const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
      const Index j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
      if (i == j) continue;
      const auto key = std::minmax(i, j);
      if (weighted_adj(key.first, key.second) != 0.0) continue;
      if (!taken.insert({key.first, key.second}).second) continue;
      sample.pairs.push_back({key.first, key.second, 0.0});
    }
  }
  return sample;
}

ad::DiffMatrix ce_loss(ad::DiffMatrix embeddings, const EdgeSample& sample) {
  if (sample.pairs.empty()) fail("ce_loss: empty sample");
  ad::Tape& tape = *embeddings.tape;
  const Index m = static_cast<Index>(sample.pairs.size());
  const Index n = embeddings.rows();

  std::vector<Index> endpoint_i(static_cast<std::size_t>(m));
  std::vector<Index> endpoint_j(static_cast<std::size_t>(m));
  Mat labels(m, 1);
  for (Index r = 0; r < m; ++r) {
    const auto& p = sample.pairs[static_cast<std::size_t>(r)];
    if (p.i < 0 || p.i >= n || p.j < 0 || p.j >= n) {
      fail("ce_loss: pair index out of range");
    }
    endpoint_i[static_cast<std::size_t>(r)] = p.i;
    endpoint_j[static_cast<std::size_t>(r)] = p.j;
    labels(r, 0) = p.label;
  }

  const ad::DiffMatrix diff = sub(gather_rows(embeddings, std::move(endpoint_i)),
                                  gather_rows(embeddings, std::move(endpoint_j)));
  // smoothed Euclidean norm, defined at coincident embeddings
  const ad::DiffMatrix dist = sqrt(sum_rows(elementwise_mul(diff, diff)));
  const ad::DiffMatrix two{&tape, tape.constant(Mat::Constant(m, 1, 2.0))};
  const ad::DiffMatrix p = sigmoid(sub(two, dist));

  const ad::DiffMatrix l{&tape, tape.constant(labels)};
  const ad::DiffMatrix one_minus_l{
      &tape, tape.constant(Mat::Ones(m, 1) - labels)};
  const ad::DiffMatrix ones{&tape, tape.constant(Mat::Ones(m, 1))};
  const ad::DiffMatrix per_pair =
      add(elementwise_mul(l, log(p)), elementwise_mul(one_minus_l, log(sub(ones, p))));
  // mean over the sample (the |W| normalizer only rescales lambda_ce)
  return scalar_mul(sum_all(per_pair), -1.0 / static_cast<double>(m));
}

ad::DiffMatrix total_loss(ad::DiffMatrix se, ad::DiffMatrix ce, double lambda_se,
                          double lambda_ce) {
  if (lambda_se < 0.0 || lambda_ce < 0.0) {
    fail("total_loss: coefficients must be >= 0");
  }
  if (se.rows() != 1 || se.cols() != 1 || ce.rows() != 1 || ce.cols() != 1) {
    fail("total_loss: both losses must be scalars");
  }
  return add(scalar_mul(se, lambda_se), scalar_mul(ce, lambda_ce));
}

}  // namespace dese
