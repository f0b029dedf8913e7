#include "dese/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "dese/entropy.hpp"
#include "dese/metrics.hpp"

namespace dese {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

// Adam / SGD-with-momentum over a flat list of parameter matrices.
class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const ad::ParamSet& params)
      : config_(config) {
    m_.reserve(params.entries.size());
    v_.reserve(params.entries.size());
    for (const auto& [name, mat] : params.entries) {
      m_.push_back(Mat::Zero(mat->rows(), mat->cols()));
      v_.push_back(Mat::Zero(mat->rows(), mat->cols()));
    }
  }

  void step(ad::ParamSet& params, const std::vector<Mat>& grads) {
    const auto& opt = config_.optimizer;
    const double lr = config_.learning_rate;
    ++t_;
    for (std::size_t p = 0; p < params.entries.size(); ++p) {
      Mat& w = *params.entries[p].second;
      const Mat& g = grads[p];
      if (opt.kind == OptimizerConfig::Kind::kAdam) {
        m_[p] = opt.beta1 * m_[p] + (1.0 - opt.beta1) * g;
        v_[p] = opt.beta2 * v_[p] + (1.0 - opt.beta2) * g.cwiseProduct(g);
        const double bc1 = 1.0 - std::pow(opt.beta1, t_);
        const double bc2 = 1.0 - std::pow(opt.beta2, t_);
        w.array() -= lr * (m_[p].array() / bc1) /
                     ((v_[p].array() / bc2).sqrt() + opt.eps);
      } else {
        m_[p] = opt.momentum * m_[p] + g;
        w -= lr * m_[p];
      }
    }
  }

 private:
  TrainConfig config_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  int t_ = 0;
};

// The attribute graph is rebuilt every epoch from theta_f, but theta_f
// only moves if the optimizer actually changes it; reuse the last build
// when the inputs are bit-identical.
class AttrGraphCache {
 public:
  const Mat& get(const Mat& embeddings_input, const SllParams& mlp,
                 const KPolicy& policy, const Eigen::VectorXd& degree,
                 std::uint64_t seed) {
    if (!valid_ || seed != seed_ || !same(mlp.w1, w1_) || !same(mlp.b1, b1_) ||
        !same(mlp.w2, w2_) || !same(mlp.b2, b2_)) {
      cached_ = attribute_graph(embeddings_input, mlp, policy, degree, seed);
      w1_ = mlp.w1;
      b1_ = mlp.b1;
      w2_ = mlp.w2;
      b2_ = mlp.b2;
      seed_ = seed;
      valid_ = true;
    }
    return cached_;
  }

 private:
  static bool same(const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(),
                       sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
  }

  bool valid_ = false;
  std::uint64_t seed_ = 0;
  Mat w1_, b1_, w2_, b2_, cached_;
};

}  // namespace

void TrainConfig::validate(Index n_nodes) const {
  if (epochs < 1) fail("config: epochs must be >= 1");
  if (learning_rate <= 0.0) fail("config: learning_rate must be > 0");
  if (embed_dim < 1) fail("config: embed_dim must be >= 1");
  if (depth < 1) fail("config: depth must be >= 1");
  if (static_cast<int>(clusters.size()) != depth) {
    fail("config: clusters list must have one entry per level (depth " +
         std::to_string(depth) + ", got " + std::to_string(clusters.size()) + ")");
  }
  Index prev = n_nodes;
  for (Index c : clusters) {
    if (c < 1) fail("config: cluster count must be >= 1");
    if (c > prev) {
      fail("config: cluster count " + std::to_string(c) +
           " exceeds the vertices available at its level (" + std::to_string(prev) +
           ")");
    }
    prev = c;
  }
  if (beta_f < 0.0) fail("config: beta_f must be >= 0");
  if (lambda_se < 0.0 || lambda_ce < 0.0) {
    fail("config: loss coefficients must be >= 0");
  }
  if (max_pos_edges < 1) fail("config: max_pos_edges must be >= 1");
  if (early_stop && early_stop->patience < 1) {
    fail("config: early_stop.patience must be >= 1");
  }
}

ModelParams ModelParams::init(Index feature_dim, const TrainConfig& config, Rng& rng) {
  ModelParams p;
  p.theta_f = SllParams::init(feature_dim, config.embed_dim, rng);
  {
    const double bound =
        std::sqrt(6.0 / static_cast<double>(feature_dim + config.embed_dim));
    p.theta0.resize(feature_dim, config.embed_dim);
    for (Index i = 0; i < feature_dim; ++i) {
      for (Index j = 0; j < config.embed_dim; ++j) {
        p.theta0(i, j) = rng.uniform(-bound, bound);
      }
    }
  }
  for (int level = 0; level < config.depth; ++level) {
    p.levels.push_back(AssParams::init(
        config.embed_dim, config.clusters[static_cast<std::size_t>(level)], rng));
  }
  return p;
}

ad::ParamSet ModelParams::param_set() {
  ad::ParamSet set;
  set.add("theta_f.w1", &theta_f.w1);
  set.add("theta_f.b1", &theta_f.b1);
  set.add("theta_f.w2", &theta_f.w2);
  set.add("theta_f.b2", &theta_f.b2);
  set.add("theta0", &theta0);
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const std::string prefix = "level" + std::to_string(k) + ".";
    set.add(prefix + "theta1", &levels[k].theta1);
    set.add(prefix + "theta2", &levels[k].theta2);
    set.add(prefix + "theta3", &levels[k].theta3);
    set.add(prefix + "theta_c.w1", &levels[k].theta_c.w1);
    set.add(prefix + "theta_c.b1", &levels[k].theta_c.b1);
    set.add(prefix + "theta_c.w2", &levels[k].theta_c.w2);
    set.add(prefix + "theta_c.b2", &levels[k].theta_c.b2);
  }
  return set;
}

Mat preprocess_features(const Mat& features, TrainConfig::FeatureNorm norm) {
  if (norm == TrainConfig::FeatureNorm::kNone) return features;
  Mat out = features;
  for (Index i = 0; i < out.rows(); ++i) {
    const double len = out.row(i).norm();
    if (len > 0.0) out.row(i) /= len;
  }
  return out;
}

namespace {

ForwardResult forward_impl(ad::Tape& tape, const Mat& features,
                           const Mat& struct_adj, const Mat& a_f,
                           ModelParams& params, const TrainConfig& config,
                           std::uint64_t edge_seed) {
  const Index n = struct_adj.rows();

  ForwardResult out;

  // Parameter leaves, in ParamSet order.
  ad::ParamSet set = params.param_set();
  out.param_nodes.reserve(set.entries.size());
  for (const auto& [name, mat] : set.entries) {
    out.param_nodes.push_back(tape.parameter(*mat));
  }
  auto pnode = [&](std::size_t i) { return ad::DiffMatrix{&tape, out.param_nodes[i]}; };
  // layout: 0..3 theta_f, 4 theta0, then 7 per level
  const std::size_t kPerLevel = 7;

  const Mat w = fuse(struct_adj, a_f, config.beta_f);

  // Initial embedding: one GNN pass over the fused graph.
  Mat w_hat = w;
  for (Index i = 0; i < n; ++i) {
    const double sum = w_hat.row(i).sum();
    if (sum != 0.0) w_hat.row(i) /= sum;
  }
  const ad::DiffMatrix x{&tape, tape.constant(features)};
  const ad::DiffMatrix w_hat_node{&tape, tape.constant(w_hat)};
  ad::DiffMatrix e = relu(matmul(w_hat_node, matmul(x, pnode(4))));

  LevelState state;
  state.embeddings = e;
  state.struct_adj = struct_adj;
  state.attr_adj = a_f;
  state.weighted = w;
  state.beta_f = config.beta_f;

  std::vector<ad::NodeId> s_layers;
  for (int level = 0; level < config.depth; ++level) {
    const std::size_t base = 5 + kPerLevel * static_cast<std::size_t>(level);
    const ad::DiffMatrix h = embed(state, pnode(base + 0));
    const SoftAssignment assign =
        soft_assign(state, pnode(base + 1), pnode(base + 2), config.leaky_slope);
    s_layers.push_back(assign.s.id);
    if (level == 0) {
      out.leaf_assignment = assign.s;
      out.leaf_embedding = h;
    }
    if (level + 1 < config.depth) {
      state = aggregate(state, assign.s, h,
                        params.levels[static_cast<std::size_t>(level)].theta_c,
                        config.k_policy, config.beta_f,
                        Rng::derive(config.seed, 1000 + static_cast<std::uint64_t>(level)));
    }
  }

  const AssignmentStack stack = AssignmentStack::from_layers(tape, s_layers);
  out.se = soft_se(w, stack);

  const EdgeSample sample = sample_edges(w, config.max_pos_edges, edge_seed);
  out.ce = ce_loss(out.leaf_embedding, sample);

  out.total = total_loss(out.se, out.ce, config.lambda_se, config.lambda_ce);
  return out;
}

}  // namespace

ForwardResult forward_pass(ad::Tape& tape, const Mat& features, const Mat& struct_adj,
                           ModelParams& params, const TrainConfig& config,
                           std::uint64_t edge_seed) {
  const Eigen::VectorXd degree = struct_adj.rowwise().sum();
  const Mat a_f =
      attribute_graph(features, params.theta_f, config.k_policy, degree, config.seed);
  return forward_impl(tape, features, struct_adj, a_f, params, config, edge_seed);
}

std::vector<int> hard_assignment(const Mat& soft) {
  std::vector<int> labels(static_cast<std::size_t>(soft.rows()));
  for (Index i = 0; i < soft.rows(); ++i) {
    if (std::abs(soft.row(i).sum() - 1.0) > 1e-6) {
      fail("hard_assignment: row " + std::to_string(i) + " does not sum to 1");
    }
    int best = 0;
    double best_val = soft(i, 0);
    for (Index j = 1; j < soft.cols(); ++j) {
      if (soft(i, j) > best_val) {
        best_val = soft(i, j);
        best = static_cast<int>(j);
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
  }
  return labels;
}

ClusteringResult train(const GraphDataset& dataset, const TrainConfig& config) {
  dataset.validate();
  config.validate(dataset.n_nodes);
  const auto t_start = std::chrono::steady_clock::now();

  const Mat features =
      preprocess_features(dataset.features, config.feature_normalize);

  Rng init_rng(config.seed);
  ModelParams params = ModelParams::init(features.cols(), config, init_rng);
  ad::ParamSet set = params.param_set();
  Optimizer optimizer(config, set);

  // Per-epoch A_f rebuild short-circuits when theta_f has not moved.
  AttrGraphCache attr_cache;
  const Eigen::VectorXd degree = dataset.adjacency.rowwise().sum();

  ClusteringResult result;
  double best_total = std::numeric_limits<double>::infinity();
  double es_best = std::numeric_limits<double>::infinity();
  int epochs_since_improve = 0;

  const Mat* a_f = nullptr;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    ad::Tape tape;
    if (epoch == 1 || !config.freeze_attr_graph) {
      a_f = &attr_cache.get(features, params.theta_f, config.k_policy, degree,
                            config.seed);
    }
    ForwardResult fw =
        forward_impl(tape, features, dataset.adjacency, *a_f, params, config,
                     Rng::derive(config.seed, static_cast<std::uint64_t>(epoch)));

    EpochLoss losses;
    losses.total = fw.total.value()(0, 0);
    losses.se = fw.se.value()(0, 0);
    losses.ce = fw.ce.value()(0, 0);
    if (!std::isfinite(losses.total)) {
      throw DivergenceError(epoch, result.loss_trace.empty()
                                       ? EpochLoss{}
                                       : result.loss_trace.back());
    }
    result.loss_trace.push_back(losses);

    if (losses.total < best_total) {
      best_total = losses.total;
      result.best_epoch = epoch;
      result.soft_assignment = fw.leaf_assignment.value();
      result.embeddings = fw.leaf_embedding.value();
    }

    if (config.early_stop) {
      if (losses.total < es_best - config.early_stop->min_delta) {
        es_best = losses.total;
        epochs_since_improve = 0;
      } else if (++epochs_since_improve >= config.early_stop->patience) {
        break;
      }
    }

    if (epoch < config.epochs) {
      tape.backward(fw.total.id);
      std::vector<Mat> grads;
      grads.reserve(fw.param_nodes.size());
      for (ad::NodeId id : fw.param_nodes) grads.push_back(tape.grad(id));
      optimizer.step(set, grads);
    }
  }

  result.hard_labels = hard_assignment(result.soft_assignment);
  std::vector<bool> seen(static_cast<std::size_t>(result.soft_assignment.cols()), false);
  for (int y : result.hard_labels) seen[static_cast<std::size_t>(y)] = true;
  result.n_clusters_used =
      static_cast<int>(std::count(seen.begin(), seen.end(), true));
  result.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return result;
}

DiscoveryResult discover_cluster_count(const GraphDataset& dataset,
                                       TrainConfig config, Index c_start) {
  if (c_start < 1) fail("discover_cluster_count: c_start must be >= 1");
  constexpr int kMaxRounds = 20;

  DiscoveryResult out;
  Index c = std::min(c_start, dataset.n_nodes);
  for (int round = 1; round <= kMaxRounds; ++round) {
    config.depth = 1;
    config.clusters = {c};
    const ClusteringResult res = train(dataset, config);

    DiscoveryRound r;
    r.round = round;
    r.c_in = c;
    r.clusters_out = res.n_clusters_used;
    if (dataset.labels) {
      r.nmi = evaluate(res.hard_labels, *dataset.labels).nmi;
    }
    out.rounds.push_back(r);

    if (res.n_clusters_used == static_cast<int>(c)) {
      out.converged = true;
      out.c_final = c;
      return out;
    }
    c = res.n_clusters_used;
  }
  out.converged = false;
  out.c_final = c;
  return out;
}

void save_checkpoint(ModelParams& params, const std::filesystem::path& file) {
  ad::ParamSet set = params.param_set();
  nlohmann::json header;
  header["format"] = "dese-params-v1";
  header["byte_order"] = "little";
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& [name, mat] : set.entries) {
    shapes.push_back({{"name", name}, {"rows", mat->rows()}, {"cols", mat->cols()}});
  }
  header["params"] = shapes;
  const std::string head = header.dump();

  std::ofstream outf(file, std::ios::binary);
  if (!outf) fail("save_checkpoint: cannot open " + file.string());
  const std::uint64_t head_len = head.size();
  outf.write(reinterpret_cast<const char*>(&head_len), sizeof head_len);
  outf.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& [name, mat] : set.entries) {
    outf.write(reinterpret_cast<const char*>(mat->data()),
               static_cast<std::streamsize>(sizeof(double) *
                                            static_cast<std::size_t>(mat->size())));
  }
}

void load_checkpoint(ModelParams& params, const std::filesystem::path& file) {
  std::ifstream inf(file, std::ios::binary);
  if (!inf) fail("load_checkpoint: cannot open " + file.string());
  std::uint64_t head_len = 0;
  inf.read(reinterpret_cast<char*>(&head_len), sizeof head_len);
  std::string head(head_len, '\0');
  inf.read(head.data(), static_cast<std::streamsize>(head_len));
  const nlohmann::json header = nlohmann::json::parse(head);
  if (header.value("format", "") != "dese-params-v1") {
    fail("load_checkpoint: unrecognized format in " + file.string());
  }

  ad::ParamSet set = params.param_set();
  const auto& shapes = header.at("params");
  if (shapes.size() != set.entries.size()) {
    fail("load_checkpoint: parameter count mismatch");
  }
  for (std::size_t p = 0; p < set.entries.size(); ++p) {
    const auto& [name, mat] = set.entries[p];
    const auto& s = shapes[p];
    if (s.at("name").get<std::string>() != name ||
        s.at("rows").get<Index>() != mat->rows() ||
        s.at("cols").get<Index>() != mat->cols()) {
      fail("load_checkpoint: shape mismatch for " + name);
    }
    inf.read(reinterpret_cast<char*>(mat->data()),
             static_cast<std::streamsize>(sizeof(double) *
                                          static_cast<std::size_t>(mat->size())));
  }
  if (!inf) fail("load_checkpoint: truncated file " + file.string());
}

}  // namespace dese
