#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dese/matrix.hpp"

namespace dese::ad {

using NodeId = std::int32_t;

// Additive guard inside log/sqrt so that terms over empty clusters and
// isolated nodes stay finite instead of throwing.
inline constexpr double kEps = 1e-12;

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatMul,
  kAdd,
  kSub,
  kElemMul,
  kScalarMul,
  kTranspose,
  kRowNormalize,
  kRelu,
  kLeakyRelu,
  kSigmoid,
  kLog,
  kSqrt,
  kConcatCols,
  kSumAll,
  kSumRows,
  kSumCols,
  kRowSoftmax,
  kMeanRows,
  kGatherRows,
};

const char* op_name(OpKind kind);

// What row_normalize does to a row whose sum is exactly zero.
enum class ZeroRowRule : std::uint8_t {
  kEpsGuard,   // divide by sum + eps unconditionally
  kKeepRow,    // leave the row as-is (used for isolated rows of W-hat)
  kUniform,    // replace with the uniform distribution (assignment fallback)
};

// Reverse-mode tape over dense 64-bit matrices. Nodes are append-only;
// backward walks them in exact reverse creation order. One tape per
// forward pass; parameters live outside and are re-leafed each pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NodeId constant(Mat value);   // requires_grad = false
  NodeId parameter(Mat value);  // requires_grad = true

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId elementwise_mul(NodeId a, NodeId b);
  NodeId scalar_mul(NodeId a, double factor);
  NodeId transpose(NodeId a);
  NodeId row_normalize(NodeId a, ZeroRowRule rule, double eps = kEps);
  NodeId relu(NodeId a);
  NodeId leaky_relu(NodeId a, double slope);
  NodeId sigmoid(NodeId a);
  NodeId log(NodeId a, double eps = kEps);   // ln(x + eps)
  NodeId sqrt(NodeId a, double eps = kEps);  // sqrt(x + eps)
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId sum_all(NodeId a);
  NodeId sum_rows(NodeId a);  // rows x 1
  NodeId sum_cols(NodeId a);  // 1 x cols
  NodeId row_softmax(NodeId a);
  NodeId mean_rows(NodeId a);  // rows x 1
  // out.row(r) = a.row(rows[r]); backward scatter-adds
  NodeId gather_rows(NodeId a, std::vector<Index> rows);

  // Accumulates d(loss)/d(node) into every grad; loss must be 1x1.
  // Repeated calls without zero_grads accumulate.
  void backward(NodeId loss);
  void zero_grads();

  const Mat& value(NodeId id) const { return nodes_[check(id)].value; }
  // Zero matrix of the node's shape if backward never reached it.
  Mat grad(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_[check(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    NodeId a = -1;
    NodeId b = -1;
    double scalar = 0.0;  // slope, factor, or eps depending on kind
    ZeroRowRule rule = ZeroRowRule::kEpsGuard;
    bool requires_grad = false;
    std::vector<Index> rows;  // gather_rows only
    Mat value;
    Mat grad;  // empty until first accumulation
  };

  NodeId push(Node node, const char* what);
  NodeId check(NodeId id) const;
  Mat& accum(NodeId id);
  void backward_one(const Node& node);

  std::vector<Node> nodes_;
};

// Convenience handle pairing a tape with a node, so model code reads as
// ordinary expressions.
struct DiffMatrix {
  Tape* tape = nullptr;
  NodeId id = -1;

  const Mat& value() const { return tape->value(id); }
  Mat grad() const { return tape->grad(id); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

DiffMatrix matmul(DiffMatrix a, DiffMatrix b);
DiffMatrix add(DiffMatrix a, DiffMatrix b);
DiffMatrix sub(DiffMatrix a, DiffMatrix b);
DiffMatrix elementwise_mul(DiffMatrix a, DiffMatrix b);
DiffMatrix scalar_mul(DiffMatrix a, double factor);
DiffMatrix transpose(DiffMatrix a);
DiffMatrix row_normalize(DiffMatrix a, ZeroRowRule rule, double eps = kEps);
DiffMatrix relu(DiffMatrix a);
DiffMatrix leaky_relu(DiffMatrix a, double slope);
DiffMatrix sigmoid(DiffMatrix a);
DiffMatrix log(DiffMatrix a, double eps = kEps);
DiffMatrix sqrt(DiffMatrix a, double eps = kEps);
DiffMatrix concat_cols(DiffMatrix a, DiffMatrix b);
DiffMatrix sum_all(DiffMatrix a);
DiffMatrix sum_rows(DiffMatrix a);
DiffMatrix sum_cols(DiffMatrix a);
DiffMatrix row_softmax(DiffMatrix a);
DiffMatrix mean_rows(DiffMatrix a);
DiffMatrix gather_rows(DiffMatrix a, std::vector<Index> rows);

// Named view over the trainable matrices of a model, for optimizers and
// gradient checking.
struct ParamSet {
  std::vector<std::pair<std::string, Mat*>> entries;

  void add(std::string name, Mat* m) { entries.emplace_back(std::move(name), m); }
  std::size_t total_size() const;
};

// f(nullptr) evaluates the scalar objective at the current parameter
// values; f(&grads) additionally fills one analytic gradient per ParamSet
// entry. Returns the max over all parameter entries of
// |analytic - central difference| / max(1, |analytic|).
// Throws if two identical forward passes disagree (non-deterministic f).
double finite_diff_check(
    const std::function<double(std::vector<Mat>*)>& f,
    const ParamSet& params, double step);

}  // namespace dese::ad
