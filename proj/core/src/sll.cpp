#include "dese/sll.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dese {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

Mat xavier(Index rows, Index cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  }
  return m;
}

}  // namespace

SllParams SllParams::init(Index in_dim, Index embed_dim, Rng& rng) {
  SllParams p;
  p.w1 = xavier(in_dim, embed_dim, rng);
  p.b1 = Mat::Zero(1, embed_dim);
  p.w2 = xavier(embed_dim, embed_dim, rng);
  p.b2 = Mat::Zero(1, embed_dim);
  return p;
}

Mat SllParams::forward(const Mat& features) const {
  if (features.cols() != w1.rows()) {
    fail("sll mlp: feature dim " + std::to_string(features.cols()) +
         " != w1 rows " + std::to_string(w1.rows()));
  }
  Mat h = features * w1;
  h.rowwise() += b1.row(0);
  h = h.cwiseMax(0.0);
  Mat out = h * w2;
  out.rowwise() += b2.row(0);
  return out;
}

Index KPolicy::resolve(double degree, Index n_nodes) const {
  constexpr double kTieEps = 1e-6;
  double k_real = 1.0;
  switch (kind) {
    case Kind::kFixed:
    case Kind::kRandom:
      k_real = static_cast<double>(k);
      break;
    case Kind::kDegDiv:
      k_real = std::ceil(degree / divisor + kTieEps);
      break;
    case Kind::kDegSqrt:
      k_real = std::ceil(std::sqrt(degree) + kTieEps);
      break;
    case Kind::kDegLog:
      k_real = std::ceil(std::log2(degree + 1.0) + kTieEps);
      break;
    case Kind::kDegPow:
      k_real = std::floor(std::pow(degree, 1.0 / (degree + 1.0)));
      break;
  }
  const Index max_k = n_nodes - 1;
  return std::clamp<Index>(static_cast<Index>(k_real), 1, max_k);
}

KPolicy KPolicy::parse(const std::string& text, Index k_value) {
  KPolicy p;
  p.k = k_value;
  if (text == "fixed") {
    p.kind = Kind::kFixed;
  } else if (text == "deg_div5") {
    p.kind = Kind::kDegDiv;
    p.divisor = 5.0;
  } else if (text == "deg_div10") {
    p.kind = Kind::kDegDiv;
    p.divisor = 10.0;
  } else if (text == "deg_sqrt") {
    p.kind = Kind::kDegSqrt;
  } else if (text == "deg_log") {
    p.kind = Kind::kDegLog;
  } else if (text == "deg_pow") {
    p.kind = Kind::kDegPow;
  } else if (text == "random") {
    p.kind = Kind::kRandom;
  } else {
    fail("unknown k policy '" + text +
         "' (expected fixed|deg_div5|deg_div10|deg_sqrt|deg_log|deg_pow|random)");
  }
  return p;
}

std::string KPolicy::to_string() const {
  switch (kind) {
    case Kind::kFixed: return "fixed";
    case Kind::kDegDiv: return divisor == 10.0 ? "deg_div10" : "deg_div5";
    case Kind::kDegSqrt: return "deg_sqrt";
    case Kind::kDegLog: return "deg_log";
    case Kind::kDegPow: return "deg_pow";
    case Kind::kRandom: return "random";
  }
  return "?";
}

Mat knn_graph(const Mat& embeddings, const KPolicy& policy,
              const Eigen::VectorXd& struct_degree, std::uint64_t seed) {
  const Index n = embeddings.rows();
  if (n < 2) fail("knn_graph: need at least 2 nodes");
  if (struct_degree.size() != n) fail("knn_graph: degree vector size != N");

  Mat picks = Mat::Zero(n, n);

  if (policy.kind == KPolicy::Kind::kRandom) {
    Rng rng(seed);
    std::vector<Index> others(static_cast<std::size_t>(n) - 1);
    for (Index i = 0; i < n; ++i) {
      const Index k = policy.resolve(struct_degree(i), n);
      Index w = 0;
      for (Index j = 0; j < n; ++j) {
        if (j != i) others[static_cast<std::size_t>(w++)] = j;
      }
      // partial Fisher-Yates: first k entries are the sample
      for (Index t = 0; t < k; ++t) {
        const auto r = t + static_cast<Index>(rng.below(
                               static_cast<std::uint64_t>(n - 1 - t)));
        std::swap(others[static_cast<std::size_t>(t)],
                  others[static_cast<std::size_t>(r)]);
        picks(i, others[static_cast<std::size_t>(t)]) = 1.0;
      }
    }
  } else {
    // squared Euclidean distances via the Gram matrix
    const Eigen::VectorXd sq = embeddings.rowwise().squaredNorm();
    Mat gram(n, n);
    gram.noalias() = embeddings * embeddings.transpose();

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const Index k = policy.resolve(struct_degree(i), n);
      for (Index j = 0; j < n; ++j) {
        dist[static_cast<std::size_t>(j)] = sq(i) + sq(j) - 2.0 * gram(i, j);
        order[static_cast<std::size_t>(j)] = j;
      }
      dist[static_cast<std::size_t>(i)] =
          std::numeric_limits<double>::infinity();  // never self-select
      // ties broken by lowest node index; the ordering is strict, so the
      // selected set is unique and deterministic
      const auto closer = [&](Index a, Index b) {
        const double da = dist[static_cast<std::size_t>(a)];
        const double db = dist[static_cast<std::size_t>(b)];
        return da < db || (da == db && a < b);
      };
      std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), closer);
      for (Index t = 0; t < k; ++t) {
        picks(i, order[static_cast<std::size_t>(t)]) = 1.0;
      }
    }
  }

  // unidirectional picks become 0.5, mutual picks 1
  Mat a_f = 0.5 * (picks + picks.transpose());
  a_f.diagonal().setZero();
  return a_f;
}

Mat attribute_graph(const Mat& features_or_embeddings, const SllParams& params,
                    const KPolicy& policy, const Eigen::VectorXd& struct_degree,
                    std::uint64_t seed) {
  return knn_graph(params.forward(features_or_embeddings), policy, struct_degree,
                   seed);
}

Mat fuse(const Mat& a_g, const Mat& a_f, double beta_f) {
  if (a_g.rows() != a_f.rows() || a_g.cols() != a_f.cols()) {
    fail("fuse: A_g is " + std::to_string(a_g.rows()) + "x" +
         std::to_string(a_g.cols()) + " but A_f is " + std::to_string(a_f.rows()) +
         "x" + std::to_string(a_f.cols()));
  }
  if (beta_f < 0.0) fail("fuse: beta_f must be >= 0");
  if (!is_symmetric(a_g, 1e-9) || !is_symmetric(a_f, 1e-9)) {
    fail("fuse: inputs must be symmetric");
  }
  if ((a_g.array() < 0.0).any() || (a_f.array() < 0.0).any()) {
    fail("fuse: inputs must be non-negative");
  }
  if (!has_zero_diagonal(a_g) || !has_zero_diagonal(a_f)) {
    fail("fuse: inputs must have zero diagonal");
  }
  return a_g + beta_f * a_f;
}

}  // namespace dese
