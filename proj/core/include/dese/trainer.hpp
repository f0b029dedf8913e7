#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dese/ass.hpp"
#include "dese/diffmat.hpp"
#include "dese/graph.hpp"
#include "dese/losses.hpp"
#include "dese/sll.hpp"

namespace dese {

struct OptimizerConfig {
  enum class Kind { kAdam, kSgd };
  Kind kind = Kind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only
};

struct EarlyStopConfig {
  int patience = 50;
  double min_delta = 1e-6;  // on total loss
};

struct TrainConfig {
  int epochs = 600;
  double learning_rate = 1e-3;
  OptimizerConfig optimizer;
  Index embed_dim = 256;              // d
  std::vector<Index> clusters = {7};  // c per ASS level, c[0] at the leaves
  int depth = 1;                      // number of stacked ASS layers
  double leaky_slope = 0.2;           // ass.leaky_slope
  std::uint64_t seed = 1;

  KPolicy k_policy;           // sll.k_policy / sll.k
  double beta_f = 0.2;        // sll.beta_f
  bool freeze_attr_graph = false;  // keep epoch-1 A_f instead of rebuilding

  double lambda_se = 0.01;    // loss.lambda_se
  double lambda_ce = 5.0;     // loss.lambda_ce
  Index max_pos_edges = 1 << 20;  // loss.max_pos_edges

  enum class FeatureNorm { kNone, kRowL2 };
  FeatureNorm feature_normalize = FeatureNorm::kRowL2;

  std::optional<EarlyStopConfig> early_stop;

  void validate(Index n_nodes) const;  // throws on an inconsistent config
};

struct EpochLoss {
  double total = 0.0;
  double se = 0.0;
  double ce = 0.0;
};

struct ClusteringResult {
  std::vector<int> hard_labels;
  Mat soft_assignment;               // N x c[0], best epoch
  Mat embeddings;                    // N x d leaf embeddings, best epoch
  std::vector<EpochLoss> loss_trace;  // one entry per executed epoch
  int best_epoch = 0;                 // 1-based
  int n_clusters_used = 0;
  double wall_clock_sec = 0.0;
};

// Raised when the loss leaves the finite range; carries the failing epoch
// and the last finite losses.
struct DivergenceError : std::runtime_error {
  DivergenceError(int epoch_, EpochLoss last_)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch_)),
        epoch(epoch_),
        last(last_) {}
  int epoch;
  EpochLoss last;
};

// All trainable state. theta_f only influences the discrete KNN step, so
// it holds its initialization; it is still part of the parameter set.
struct ModelParams {
  SllParams theta_f;               // feature MLP behind the attribute graph
  Mat theta0;                      // f x d initial-embedding GNN transform
  std::vector<AssParams> levels;   // one per ASS layer

  static ModelParams init(Index feature_dim, const TrainConfig& config, Rng& rng);
  ad::ParamSet param_set();
};

// One full forward pass (Algorithm-style epoch body) on a fresh tape.
struct ForwardResult {
  ad::DiffMatrix total;
  ad::DiffMatrix se;
  ad::DiffMatrix ce;
  ad::DiffMatrix leaf_assignment;  // S at the first level, N x c[0]
  ad::DiffMatrix leaf_embedding;   // H at the first level
  std::vector<ad::NodeId> param_nodes;  // same order as ModelParams::param_set()
};
ForwardResult forward_pass(ad::Tape& tape, const Mat& features, const Mat& struct_adj,
                           ModelParams& params, const TrainConfig& config,
                           std::uint64_t edge_seed);

// Row-l2 or identity feature preprocessing per config.
Mat preprocess_features(const Mat& features, TrainConfig::FeatureNorm norm);

ClusteringResult train(const GraphDataset& dataset, const TrainConfig& config);

// labels[i] = argmax of row i, ties to the lowest column index. Rows must
// sum to 1 within 1e-6.
std::vector<int> hard_assignment(const Mat& soft);

struct DiscoveryRound {
  int round = 0;       // 1-based
  Index c_in = 0;
  int clusters_out = 0;
  double nmi = -1.0;   // -1 when the dataset has no labels
};

struct DiscoveryResult {
  Index c_final = 0;
  bool converged = false;
  std::vector<DiscoveryRound> rounds;
};

// Iterates train -> n_clusters_used until a fixed point (cap 20 rounds).
DiscoveryResult discover_cluster_count(const GraphDataset& dataset,
                                       TrainConfig config, Index c_start);

// Single-file checkpoint: little-endian float64 payload after a JSON
// header describing names and shapes.
void save_checkpoint(ModelParams& params, const std::filesystem::path& file);
void load_checkpoint(ModelParams& params, const std::filesystem::path& file);

}  // namespace dese
