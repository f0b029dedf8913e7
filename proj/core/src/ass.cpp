#include "dese/ass.hpp"

#include <cmath>
#include <stdexcept>

#include "dese/graph.hpp"

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

Mat row_normalized(const Mat& w) {
  Mat out = w;
  for (Index i = 0; i < w.rows(); ++i) {
    const double sum = w.row(i).sum();
    if (sum != 0.0) out.row(i) /= sum;
  }
  return out;
}

}  // namespace

AssParams AssParams::init(Index embed_dim, Index n_clusters, Rng& rng) {
  AssParams p;
  p.theta1 = xavier(embed_dim, embed_dim, rng);
  p.theta2 = xavier(embed_dim, n_clusters, rng);
  p.theta3 = xavier(2 * embed_dim, 1, rng);
  p.theta_c = SllParams::init(embed_dim, embed_dim, rng);
  return p;
}

void LevelState::validate() const {
  const Index n = struct_adj.rows();
  if (embeddings.rows() != n) fail("level state: embeddings rows != N_k");
  if (attr_adj.rows() != n || attr_adj.cols() != n || struct_adj.cols() != n ||
      weighted.rows() != n || weighted.cols() != n) {
    fail("level state: adjacency shapes disagree");
  }
  if (!is_symmetric(struct_adj, 1e-9) || !is_symmetric(attr_adj, 1e-9) ||
      !is_symmetric(weighted, 1e-9)) {
    fail("level state: adjacency not symmetric");
  }
  if ((weighted - (struct_adj + beta_f * attr_adj)).cwiseAbs().maxCoeff() > 1e-12) {
    fail("level state: weighted != struct + beta_f * attr");
  }
}

ad::DiffMatrix embed(const LevelState& state, ad::DiffMatrix theta1) {
  ad::Tape& tape = *state.embeddings.tape;
  if (state.embeddings.cols() != theta1.rows()) {
    fail("embed: embedding dim " + std::to_string(state.embeddings.cols()) +
         " != theta1 rows " + std::to_string(theta1.rows()));
  }
  const ad::DiffMatrix w_hat{&tape, tape.constant(row_normalized(state.weighted))};
  return relu(matmul(w_hat, matmul(state.embeddings, theta1)));
}

SoftAssignment soft_assign(const LevelState& state, ad::DiffMatrix theta2,
                           ad::DiffMatrix theta3, double leaky_slope) {
  ad::Tape& tape = *state.embeddings.tape;
  const Index n = state.size();
  const Index d = state.embeddings.cols();
  if (theta2.rows() != d) fail("soft_assign: theta2 rows != d");
  if (theta3.rows() != 2 * d || theta3.cols() != 1) {
    fail("soft_assign: theta3 must be 2d x 1");
  }
  if (theta2.cols() > n) {
    fail("soft_assign: more clusters (" + std::to_string(theta2.cols()) +
         ") than vertices (" + std::to_string(n) + ") at this level");
  }

  // (e_i || e_j) Theta3 = e_i a + e_j b with Theta3 = [a; b]; the full
  // score matrix is the rank-1 sum of those two projections.
  Mat top = Mat::Zero(d, 2 * d);
  top.leftCols(d) = Mat::Identity(d, d);
  Mat bot = Mat::Zero(d, 2 * d);
  bot.rightCols(d) = Mat::Identity(d, d);
  const ad::DiffMatrix e = state.embeddings;
  const ad::DiffMatrix a =
      matmul(e, matmul({&tape, tape.constant(top)}, theta3));  // N x 1
  const ad::DiffMatrix b =
      matmul(e, matmul({&tape, tape.constant(bot)}, theta3));  // N x 1
  const ad::DiffMatrix ones_row{&tape, tape.constant(Mat::Ones(1, n))};
  const ad::DiffMatrix scores =
      add(matmul(a, ones_row), transpose(matmul(b, ones_row)));

  // attention over each node's neighbors only (support of W)
  const Mat support =
      (state.weighted.array() != 0.0).cast<double>().matrix();
  const ad::DiffMatrix mask{&tape, tape.constant(support)};
  const ad::DiffMatrix masked =
      elementwise_mul(leaky_relu(scores, leaky_slope), mask);
  const ad::DiffMatrix gamma =
      row_normalize(masked, ad::ZeroRowRule::kEpsGuard, ad::kEps);

  const ad::DiffMatrix w{&tape, tape.constant(state.weighted)};
  const ad::DiffMatrix gamma_w = elementwise_mul(gamma, w);
  const ad::DiffMatrix raw = relu(matmul(gamma_w, matmul(e, theta2)));
  // plain row normalization keeps ReLU's exact zeros (softmax would not);
  // all-zero rows become uniform so S stays row-stochastic
  const ad::DiffMatrix s = row_normalize(raw, ad::ZeroRowRule::kUniform);
  return {s, gamma};
}

LevelState aggregate(const LevelState& state, ad::DiffMatrix s, ad::DiffMatrix h,
                     const SllParams& cluster_mlp, const KPolicy& policy,
                     double beta_f, std::uint64_t seed) {
  ad::Tape& tape = *state.embeddings.tape;
  const Index c = s.cols();
  if (s.rows() != state.size()) fail("aggregate: S rows != N_k");
  if (h.rows() != state.size()) fail("aggregate: H rows != N_k");

  const ad::DiffMatrix s_t = transpose(s);
  const ad::DiffMatrix e_c = matmul(s_t, h);  // c x d cluster embeddings

  // Graph lift is a value computation: the next level's adjacency feeds
  // discrete steps (KNN, attention support), so it leaves the tape here.
  const Mat s_val = s.value();
  Mat a_g = s_val.transpose() * state.struct_adj * s_val;
  a_g.diagonal().setZero();  // cluster self-mass is volume, not an edge
  a_g = 0.5 * (a_g + Mat(a_g.transpose()));  // exact symmetry under rounding

  Mat a_f = Mat::Zero(c, c);
  if (c >= 2) {
    a_f = attribute_graph(e_c.value(), cluster_mlp, policy,
                          a_g.rowwise().sum(), seed);
  }

  LevelState next;
  next.embeddings = e_c;
  next.struct_adj = std::move(a_g);
  next.attr_adj = std::move(a_f);
  next.weighted = next.struct_adj + beta_f * next.attr_adj;
  next.beta_f = beta_f;
  next.validate();
  return next;
}

}  // namespace dese
