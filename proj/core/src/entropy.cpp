#include "dese/entropy.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace dese {

namespace {

constexpr double kLn2 = 0.6931471805599453;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

void EncodingTree::validate(Index n_nodes) const {
  if (static_cast<Index>(leaf_of.size()) != n_nodes) {
    fail("encoding tree: leaf_of size != N");
  }
  // Depth of every leaf must be exactly `height`, each graph node mapping
  // to a distinct reachable leaf.
  std::map<int, int> depth;
  depth[root] = 0;
  std::vector<int> frontier{root};
  std::set<int> interior;
  while (!frontier.empty()) {
    std::vector<int> next;
    for (int v : frontier) {
      const auto it = children.find(v);
      if (it == children.end()) continue;
      interior.insert(v);
      for (int c : it->second) {
        if (depth.count(c)) fail("encoding tree: vertex reached twice");
        depth[c] = depth[v] + 1;
        next.push_back(c);
      }
    }
    frontier = std::move(next);
  }
  // Leaves are node subsets: several graph nodes may share one leaf (a
  // one-cluster tree with no singleton level is the degenerate case).
  for (int leaf : leaf_of) {
    if (!depth.count(leaf)) fail("encoding tree: leaf not reachable from root");
    if (interior.count(leaf)) fail("encoding tree: leaf has children");
    if (depth[leaf] != height) fail("encoding tree: leaf not at depth height");
  }
}

EncodingTree EncodingTree::from_labels(const std::vector<int>& labels) {
  EncodingTree t;
  t.height = 2;
  int n_clusters = 0;
  for (int y : labels) n_clusters = std::max(n_clusters, y + 1);
  // vertex ids: 0 root, 1..c clusters, c+1.. leaves
  for (int c = 0; c < n_clusters; ++c) t.children[0].push_back(1 + c);
  t.leaf_of.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int leaf = 1 + n_clusters + static_cast<int>(i);
    t.children[1 + labels[i]].push_back(leaf);
    t.leaf_of[i] = leaf;
  }
  return t;
}

EncodingTree EncodingTree::flat(Index n_nodes) {
  EncodingTree t;
  t.height = 1;
  t.leaf_of.resize(static_cast<std::size_t>(n_nodes));
  for (Index i = 0; i < n_nodes; ++i) {
    t.children[0].push_back(1 + static_cast<int>(i));
    t.leaf_of[static_cast<std::size_t>(i)] = 1 + static_cast<int>(i);
  }
  return t;
}

double classical_se(const Mat& weighted_adj, const EncodingTree& tree) {
  const Index n = weighted_adj.rows();
  if (!is_symmetric(weighted_adj, 1e-9)) fail("classical_se: W not symmetric");
  if ((weighted_adj.array() < 0.0).any()) fail("classical_se: negative weights");
  tree.validate(n);

  const Eigen::VectorXd deg = weighted_adj.rowwise().sum();
  const double vol_g = deg.sum();
  if (vol_g <= 0.0) fail("classical_se: vol(G) must be > 0");

  // Node subsets per vertex, bottom-up.
  std::map<int, std::vector<Index>> subset;
  for (Index i = 0; i < n; ++i) {
    subset[tree.leaf_of[static_cast<std::size_t>(i)]].push_back(i);
  }
  // Collect vertices by decreasing depth so children are filled first.
  std::vector<std::pair<int, int>> by_depth;  // (depth, vertex)
  {
    std::vector<std::pair<int, int>> frontier{{0, tree.root}};
    while (!frontier.empty()) {
      std::vector<std::pair<int, int>> next;
      for (auto [d, v] : frontier) {
        by_depth.emplace_back(d, v);
        const auto it = tree.children.find(v);
        if (it == tree.children.end()) continue;
        for (int c : it->second) next.emplace_back(d + 1, c);
      }
      frontier = std::move(next);
    }
    std::sort(by_depth.begin(), by_depth.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
  }
  for (auto [d, v] : by_depth) {
    const auto it = tree.children.find(v);
    if (it == tree.children.end()) continue;
    auto& s = subset[v];
    for (int c : it->second) {
      const auto& cs = subset[c];
      s.insert(s.end(), cs.begin(), cs.end());
    }
  }

  auto volume = [&](const std::vector<Index>& s) {
    double v = 0.0;
    for (Index i : s) v += deg(i);
    return v;
  };
  auto internal = [&](const std::vector<Index>& s) {
    double v = 0.0;
    for (Index i : s) {
      for (Index j : s) v += weighted_adj(i, j);
    }
    return v;
  };

  // parent lookup
  std::map<int, int> parent;
  for (const auto& [v, cs] : tree.children) {
    for (int c : cs) parent[c] = v;
  }

  double h = 0.0;
  for (const auto& [v, s] : subset) {
    if (v == tree.root) continue;
    const double g = volume(s) - internal(s);  // cut weight
    const double vol = volume(s);
    const double vol_parent = parent[v] == tree.root
                                  ? vol_g
                                  : volume(subset[parent[v]]);
    // eps-log keeps zero-volume vertices finite; their g is 0 anyway
    h -= g / vol_g *
         (std::log(vol + ad::kEps) - std::log(vol_parent + ad::kEps)) / kLn2;
  }
  return h;
}

Index AssignmentStack::n_leaves() const {
  if (layers.empty()) fail("assignment stack: empty");
  return tape->value(layers.front()).rows();
}

ad::DiffMatrix AssignmentStack::layer(int k) const {
  if (k < 1 || k > height()) {
    fail("assignment stack: level " + std::to_string(k) + " out of range 1.." +
         std::to_string(height()));
  }
  return {tape, layers[static_cast<std::size_t>(height() - k)]};
}

AssignmentStack AssignmentStack::from_layers(ad::Tape& tape,
                                             const std::vector<ad::NodeId>& leaf_up,
                                             double row_sum_tol) {
  if (leaf_up.empty()) fail("assignment stack: no layers");
  AssignmentStack st;
  st.tape = &tape;
  st.layers = leaf_up;
  // implicit top layer: everything attaches to the root
  const Index top = tape.value(leaf_up.back()).cols();
  st.layers.push_back(tape.constant(Mat::Ones(top, 1)));

  Index prev_cols = -1;
  for (std::size_t i = 0; i < st.layers.size(); ++i) {
    const Mat& s = tape.value(st.layers[i]);
    if (prev_cols >= 0 && s.rows() != prev_cols) {
      fail("assignment stack: cols(S^k) != rows(S^{k-1}) at layer " +
           std::to_string(i));
    }
    prev_cols = s.cols();
    if ((s.array() < 0.0).any()) fail("assignment stack: negative entry");
    for (Index r = 0; r < s.rows(); ++r) {
      if (std::abs(s.row(r).sum() - 1.0) > row_sum_tol) {
        fail("assignment stack: row " + std::to_string(r) + " of layer " +
             std::to_string(i) + " does not sum to 1");
      }
    }
  }
  if (prev_cols != 1) fail("assignment stack: top level must have one vertex");
  return st;
}

AssignmentStack AssignmentStack::from_matrices(ad::Tape& tape,
                                               const std::vector<Mat>& leaf_up,
                                               double row_sum_tol) {
  std::vector<ad::NodeId> ids;
  ids.reserve(leaf_up.size());
  for (const Mat& m : leaf_up) ids.push_back(tape.parameter(m));
  return from_layers(tape, ids, row_sum_tol);
}

AssignmentStack AssignmentStack::flat(ad::Tape& tape, Index n_leaves) {
  AssignmentStack st;
  st.tape = &tape;
  st.layers = {tape.constant(Mat::Ones(n_leaves, 1))};
  return st;
}

ad::DiffMatrix direct_assignment(const AssignmentStack& stack, int level) {
  const int h = stack.height();
  if (level < 0 || level > h) {
    fail("direct_assignment: level " + std::to_string(level) + " out of range 0.." +
         std::to_string(h));
  }
  ad::Tape& tape = *stack.tape;
  if (level == h) {
    const Index n = stack.n_leaves();
    return {&tape, tape.constant(Mat::Identity(n, n))};
  }
  ad::DiffMatrix c = stack.layer(h);
  for (int k = h - 1; k > level; --k) {
    c = matmul(c, stack.layer(k));
  }
  return c;
}

ad::DiffMatrix soft_se_layer(const Mat& weighted_adj, const AssignmentStack& stack,
                             int level) {
  const int h = stack.height();
  if (level < 1 || level > h) {
    fail("soft_se_layer: level out of range 1..h");
  }
  ad::Tape& tape = *stack.tape;
  if (weighted_adj.rows() != stack.n_leaves() ||
      weighted_adj.cols() != stack.n_leaves()) {
    fail("soft_se_layer: W shape does not match stack leaves");
  }

  const Mat deg_row = Mat::Ones(1, weighted_adj.rows()) * weighted_adj;
  const double vol_g = deg_row.sum();
  if (vol_g <= 0.0) fail("soft_se_layer: vol(G) must be > 0");

  const ad::DiffMatrix d{&tape, tape.constant(deg_row)};

  ad::DiffMatrix vol_k{nullptr, -1};
  ad::DiffMatrix cut{nullptr, -1};
  if (level == h) {
    // At the leaf level C^h is the identity: vol^h = D and the internal
    // volume is the diagonal of W. Constants, no N^3 product.
    vol_k = {&tape, tape.constant(deg_row)};
    cut = {&tape,
           tape.constant(deg_row - weighted_adj.diagonal().transpose())};
  } else {
    const ad::DiffMatrix w{&tape, tape.constant(weighted_adj)};
    const ad::DiffMatrix c_k = direct_assignment(stack, level);
    // vol^k[i] = D (C^k)_i, as a 1 x N_k row
    vol_k = matmul(d, c_k);
    // internal volume: diag(C^T W C) without forming the full product
    const ad::DiffMatrix wc = matmul(w, c_k);
    const ad::DiffMatrix internal = sum_cols(elementwise_mul(c_k, wc));
    cut = sub(vol_k, internal);
  }

  // probabilistic parent volume: vol^{k-1} (S^k)^T
  const ad::DiffMatrix vol_prev = matmul(d, direct_assignment(stack, level - 1));
  const ad::DiffMatrix parent = matmul(vol_prev, transpose(stack.layer(level)));

  const ad::DiffMatrix log_ratio = sub(log(vol_k), log(parent));
  const ad::DiffMatrix summed = sum_all(elementwise_mul(cut, log_ratio));
  // bits: scale by 1/ln2; sign and 1/vol(G) folded into one factor
  return scalar_mul(summed, -1.0 / (vol_g * kLn2));
}

ad::DiffMatrix soft_se(const Mat& weighted_adj, const AssignmentStack& stack) {
  if (stack.layers.empty()) fail("soft_se: empty stack");
  ad::DiffMatrix total = soft_se_layer(weighted_adj, stack, 1);
  for (int k = 2; k <= stack.height(); ++k) {
    total = add(total, soft_se_layer(weighted_adj, stack, k));
  }
  return total;
}

}  // namespace dese
