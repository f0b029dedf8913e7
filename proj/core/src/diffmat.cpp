#include "dese/diffmat.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dese::ad {

namespace {

[[noreturn]] void fail_shapes(const char* kind, const Mat& a, const Mat& b) {
  std::ostringstream os;
  os << kind << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs "
     << b.rows() << "x" << b.cols();
  throw std::invalid_argument(os.str());
}

[[noreturn]] void fail_shape(const char* kind, const Mat& a, const char* why) {
  std::ostringstream os;
  os << kind << ": " << why << " (got " << a.rows() << "x" << a.cols() << ")";
  throw std::invalid_argument(os.str());
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kElemMul: return "elementwise_mul";
    case OpKind::kScalarMul: return "scalar_mul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kRowNormalize: return "row_normalize";
    case OpKind::kRelu: return "relu";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSumAll: return "sum_all";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kSumCols: return "sum_cols";
    case OpKind::kRowSoftmax: return "row_softmax";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kGatherRows: return "gather_rows";
  }
  return "?";
}

NodeId Tape::check(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw std::out_of_range("tape: bad node id " + std::to_string(id));
  }
  return id;
}

NodeId Tape::push(Node node, const char* what) {
  if (node.value.size() == 0) fail_shape(what, node.value, "empty result");
  if (!node.value.allFinite()) {
    throw std::domain_error(std::string(what) + ": non-finite values");
  }
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::constant(Mat value) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = false;
  return push(std::move(n), "constant");
}

NodeId Tape::parameter(Mat value) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n), "parameter");
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Mat& va = value(a);
  const Mat& vb = value(b);
  if (va.cols() != vb.rows()) fail_shapes("matmul", va, vb);
  Node n;
  n.kind = OpKind::kMatMul;
  n.a = a;
  n.b = b;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value.noalias() = va * vb;
  return push(std::move(n), "matmul");
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Mat& va = value(a);
  const Mat& vb = value(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) fail_shapes("add", va, vb);
  Node n;
  n.kind = OpKind::kAdd;
  n.a = a;
  n.b = b;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = va + vb;
  return push(std::move(n), "add");
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Mat& va = value(a);
  const Mat& vb = value(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) fail_shapes("sub", va, vb);
  Node n;
  n.kind = OpKind::kSub;
  n.a = a;
  n.b = b;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = va - vb;
  return push(std::move(n), "sub");
}

NodeId Tape::elementwise_mul(NodeId a, NodeId b) {
  const Mat& va = value(a);
  const Mat& vb = value(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
    fail_shapes("elementwise_mul", va, vb);
  }
  Node n;
  n.kind = OpKind::kElemMul;
  n.a = a;
  n.b = b;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value = va.cwiseProduct(vb);
  return push(std::move(n), "elementwise_mul");
}

NodeId Tape::scalar_mul(NodeId a, double factor) {
  if (!std::isfinite(factor)) throw std::domain_error("scalar_mul: non-finite factor");
  Node n;
  n.kind = OpKind::kScalarMul;
  n.a = a;
  n.scalar = factor;
  n.requires_grad = requires_grad(a);
  n.value = value(a) * factor;
  return push(std::move(n), "scalar_mul");
}

NodeId Tape::transpose(NodeId a) {
  Node n;
  n.kind = OpKind::kTranspose;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = value(a).transpose();
  return push(std::move(n), "transpose");
}

NodeId Tape::row_normalize(NodeId a, ZeroRowRule rule, double eps) {
  const Mat& va = value(a);
  Node n;
  n.kind = OpKind::kRowNormalize;
  n.a = a;
  n.rule = rule;
  n.scalar = eps;
  n.requires_grad = requires_grad(a);
  n.value = va;
  const double uniform = 1.0 / static_cast<double>(va.cols());
  for (Index i = 0; i < va.rows(); ++i) {
    const double sum = va.row(i).sum();
    if (rule == ZeroRowRule::kEpsGuard) {
      n.value.row(i) /= (sum + eps);
    } else if (sum == 0.0) {
      if (rule == ZeroRowRule::kUniform) n.value.row(i).setConstant(uniform);
      // kKeepRow: leave as-is
    } else {
      n.value.row(i) /= sum;
    }
  }
  return push(std::move(n), "row_normalize");
}

NodeId Tape::relu(NodeId a) {
  Node n;
  n.kind = OpKind::kRelu;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = value(a).cwiseMax(0.0);
  return push(std::move(n), "relu");
}

NodeId Tape::leaky_relu(NodeId a, double slope) {
  const Mat& va = value(a);
  Node n;
  n.kind = OpKind::kLeakyRelu;
  n.a = a;
  n.scalar = slope;
  n.requires_grad = requires_grad(a);
  n.value = va.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return push(std::move(n), "leaky_relu");
}

NodeId Tape::sigmoid(NodeId a) {
  Node n;
  n.kind = OpKind::kSigmoid;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = value(a).unaryExpr([](double x) { return stable_sigmoid(x); });
  return push(std::move(n), "sigmoid");
}

NodeId Tape::log(NodeId a, double eps) {
  const Mat& va = value(a);
  if ((va.array() < 0.0).any()) {
    throw std::domain_error("log: negative input");
  }
  Node n;
  n.kind = OpKind::kLog;
  n.a = a;
  n.scalar = eps;
  n.requires_grad = requires_grad(a);
  n.value = (va.array() + eps).log().matrix();
  return push(std::move(n), "log");
}

NodeId Tape::sqrt(NodeId a, double eps) {
  const Mat& va = value(a);
  if ((va.array() < 0.0).any()) {
    throw std::domain_error("sqrt: negative input");
  }
  Node n;
  n.kind = OpKind::kSqrt;
  n.a = a;
  n.scalar = eps;
  n.requires_grad = requires_grad(a);
  n.value = (va.array() + eps).sqrt().matrix();
  return push(std::move(n), "sqrt");
}

NodeId Tape::concat_cols(NodeId a, NodeId b) {
  const Mat& va = value(a);
  const Mat& vb = value(b);
  if (va.rows() != vb.rows()) fail_shapes("concat_cols", va, vb);
  Node n;
  n.kind = OpKind::kConcatCols;
  n.a = a;
  n.b = b;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  n.value.resize(va.rows(), va.cols() + vb.cols());
  n.value.leftCols(va.cols()) = va;
  n.value.rightCols(vb.cols()) = vb;
  return push(std::move(n), "concat_cols");
}

NodeId Tape::sum_all(NodeId a) {
  Node n;
  n.kind = OpKind::kSumAll;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value.resize(1, 1);
  n.value(0, 0) = value(a).sum();
  return push(std::move(n), "sum_all");
}

NodeId Tape::sum_rows(NodeId a) {
  Node n;
  n.kind = OpKind::kSumRows;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = value(a).rowwise().sum();
  return push(std::move(n), "sum_rows");
}

NodeId Tape::sum_cols(NodeId a) {
  Node n;
  n.kind = OpKind::kSumCols;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = value(a).colwise().sum();
  return push(std::move(n), "sum_cols");
}

NodeId Tape::row_softmax(NodeId a) {
  const Mat& va = value(a);
  Node n;
  n.kind = OpKind::kRowSoftmax;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value.resize(va.rows(), va.cols());
  for (Index i = 0; i < va.rows(); ++i) {
    const double m = va.row(i).maxCoeff();
    Eigen::ArrayXd e = (va.row(i).array() - m).exp();
    n.value.row(i) = (e / e.sum()).matrix();
  }
  return push(std::move(n), "row_softmax");
}

NodeId Tape::mean_rows(NodeId a) {
  Node n;
  n.kind = OpKind::kMeanRows;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value = value(a).rowwise().mean();
  return push(std::move(n), "mean_rows");
}

NodeId Tape::gather_rows(NodeId a, std::vector<Index> rows) {
  const Mat& va = value(a);
  if (rows.empty()) fail_shape("gather_rows", va, "empty index list");
  Node n;
  n.kind = OpKind::kGatherRows;
  n.a = a;
  n.requires_grad = requires_grad(a);
  n.value.resize(static_cast<Index>(rows.size()), va.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= va.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(rows[r]) +
                              " out of range [0, " + std::to_string(va.rows()) + ")");
    }
    n.value.row(static_cast<Index>(r)) = va.row(rows[r]);
  }
  n.rows = std::move(rows);
  return push(std::move(n), "gather_rows");
}

Mat Tape::grad(NodeId id) const {
  const Node& n = nodes_[check(id)];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Mat& Tape::accum(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::zero_grads() {
  for (Node& n : nodes_) n.grad.resize(0, 0);
}

void Tape::backward(NodeId loss) {
  const Node& top = nodes_[check(loss)];
  if (top.value.rows() != 1 || top.value.cols() != 1) {
    fail_shape("backward", top.value, "loss must be 1x1");
  }
  if (nodes_.empty()) throw std::logic_error("backward: empty tape");
  accum(loss)(0, 0) += 1.0;
  for (NodeId id = loss; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.kind == OpKind::kLeaf || n.grad.size() == 0) continue;
    backward_one(n);
  }
  // Interior gradients are per-pass scratch; only leaves accumulate
  // across repeated calls. Dropping them here also frees the bulk of the
  // tape's gradient memory as soon as it has been consumed.
  for (Node& n : nodes_) {
    if (n.kind != OpKind::kLeaf) n.grad.resize(0, 0);
  }
}

void Tape::backward_one(const Node& n) {
  const Mat& g = n.grad;
  const bool need_a = n.a >= 0 && nodes_[n.a].requires_grad;
  const bool need_b = n.b >= 0 && nodes_[n.b].requires_grad;

  switch (n.kind) {
    case OpKind::kMatMul: {
      if (need_a) accum(n.a).noalias() += g * nodes_[n.b].value.transpose();
      if (need_b) accum(n.b).noalias() += nodes_[n.a].value.transpose() * g;
      break;
    }
    case OpKind::kAdd: {
      if (need_a) accum(n.a) += g;
      if (need_b) accum(n.b) += g;
      break;
    }
    case OpKind::kSub: {
      if (need_a) accum(n.a) += g;
      if (need_b) accum(n.b) -= g;
      break;
    }
    case OpKind::kElemMul: {
      if (need_a) accum(n.a) += g.cwiseProduct(nodes_[n.b].value);
      if (need_b) accum(n.b) += g.cwiseProduct(nodes_[n.a].value);
      break;
    }
    case OpKind::kScalarMul: {
      if (need_a) accum(n.a) += g * n.scalar;
      break;
    }
    case OpKind::kTranspose: {
      if (need_a) accum(n.a) += g.transpose();
      break;
    }
    case OpKind::kRowNormalize: {
      if (!need_a) break;
      const Mat& x = nodes_[n.a].value;
      Mat& gx = accum(n.a);
      for (Index i = 0; i < x.rows(); ++i) {
        const double sum = x.row(i).sum();
        if (n.rule == ZeroRowRule::kEpsGuard) {
          const double denom = sum + n.scalar;
          const double dot = g.row(i).dot(n.value.row(i));
          gx.row(i) += (g.row(i).array() - dot).matrix() / denom;
        } else if (sum == 0.0) {
          if (n.rule == ZeroRowRule::kKeepRow) gx.row(i) += g.row(i);
          // kUniform: constant output, zero gradient
        } else {
          const double dot = g.row(i).dot(n.value.row(i));
          gx.row(i) += (g.row(i).array() - dot).matrix() / sum;
        }
      }
      break;
    }
    case OpKind::kRelu: {
      if (need_a) {
        const Mat& x = nodes_[n.a].value;
        accum(n.a).array() += g.array() * (x.array() > 0.0).cast<double>();
      }
      break;
    }
    case OpKind::kLeakyRelu: {
      if (need_a) {
        const Mat& x = nodes_[n.a].value;
        const double slope = n.scalar;
        // derivative at exactly 0 is the slope, fixed convention
        accum(n.a).array() +=
            g.array() *
            x.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; }).array();
      }
      break;
    }
    case OpKind::kSigmoid: {
      if (need_a) {
        accum(n.a).array() += g.array() * n.value.array() * (1.0 - n.value.array());
      }
      break;
    }
    case OpKind::kLog: {
      if (need_a) {
        const Mat& x = nodes_[n.a].value;
        accum(n.a).array() += g.array() / (x.array() + n.scalar);
      }
      break;
    }
    case OpKind::kSqrt: {
      if (need_a) {
        accum(n.a).array() += g.array() * 0.5 / n.value.array();
      }
      break;
    }
    case OpKind::kConcatCols: {
      const Index ca = nodes_[n.a].value.cols();
      if (need_a) accum(n.a) += g.leftCols(ca);
      if (need_b) accum(n.b) += g.rightCols(g.cols() - ca);
      break;
    }
    case OpKind::kSumAll: {
      if (need_a) accum(n.a).array() += g(0, 0);
      break;
    }
    case OpKind::kSumRows: {
      if (need_a) accum(n.a).colwise() += g.col(0);
      break;
    }
    case OpKind::kSumCols: {
      if (need_a) accum(n.a).rowwise() += g.row(0);
      break;
    }
    case OpKind::kRowSoftmax: {
      if (need_a) {
        Mat& gx = accum(n.a);
        for (Index i = 0; i < g.rows(); ++i) {
          const double dot = g.row(i).dot(n.value.row(i));
          gx.row(i) += n.value.row(i).cwiseProduct(
              (g.row(i).array() - dot).matrix());
        }
      }
      break;
    }
    case OpKind::kMeanRows: {
      if (need_a) {
        const double inv = 1.0 / static_cast<double>(nodes_[n.a].value.cols());
        accum(n.a).colwise() += g.col(0) * inv;
      }
      break;
    }
    case OpKind::kGatherRows: {
      if (need_a) {
        Mat& gx = accum(n.a);
        for (std::size_t r = 0; r < n.rows.size(); ++r) {
          gx.row(n.rows[r]) += g.row(static_cast<Index>(r));
        }
      }
      break;
    }
    case OpKind::kLeaf:
      break;
  }
}

#define DESE_BINARY(fn)                                   \
  DiffMatrix fn(DiffMatrix a, DiffMatrix b) {             \
    if (a.tape != b.tape)                                 \
      throw std::logic_error(#fn ": operands on different tapes"); \
    return {a.tape, a.tape->fn(a.id, b.id)};              \
  }
#define DESE_UNARY(fn) \
  DiffMatrix fn(DiffMatrix a) { return {a.tape, a.tape->fn(a.id)}; }

DESE_BINARY(matmul)
DESE_BINARY(add)
DESE_BINARY(sub)
DESE_BINARY(elementwise_mul)
DESE_BINARY(concat_cols)
DESE_UNARY(transpose)
DESE_UNARY(relu)
DESE_UNARY(sigmoid)
DESE_UNARY(sum_all)
DESE_UNARY(sum_rows)
DESE_UNARY(sum_cols)
DESE_UNARY(row_softmax)
DESE_UNARY(mean_rows)

DiffMatrix scalar_mul(DiffMatrix a, double factor) {
  return {a.tape, a.tape->scalar_mul(a.id, factor)};
}
DiffMatrix row_normalize(DiffMatrix a, ZeroRowRule rule, double eps) {
  return {a.tape, a.tape->row_normalize(a.id, rule, eps)};
}
DiffMatrix leaky_relu(DiffMatrix a, double slope) {
  return {a.tape, a.tape->leaky_relu(a.id, slope)};
}
DiffMatrix log(DiffMatrix a, double eps) { return {a.tape, a.tape->log(a.id, eps)}; }
DiffMatrix sqrt(DiffMatrix a, double eps) { return {a.tape, a.tape->sqrt(a.id, eps)}; }
DiffMatrix gather_rows(DiffMatrix a, std::vector<Index> rows) {
  return {a.tape, a.tape->gather_rows(a.id, std::move(rows))};
}

#undef DESE_BINARY
#undef DESE_UNARY

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, m] : entries) n += static_cast<std::size_t>(m->size());
  return n;
}

double finite_diff_check(
    const std::function<double(std::vector<Mat>*)>& f,
    const ParamSet& params, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be > 0");

  const double probe1 = f(nullptr);
  const double probe2 = f(nullptr);
  if (probe1 != probe2) {
    throw std::runtime_error(
        "finite_diff_check: two identical forward passes disagree");
  }

  std::vector<Mat> grads;
  f(&grads);
  if (grads.size() != params.entries.size()) {
    throw std::logic_error("finite_diff_check: grads/params count mismatch");
  }

  double max_rel = 0.0;
  for (std::size_t p = 0; p < params.entries.size(); ++p) {
    Mat& m = *params.entries[p].second;
    const Mat& g = grads[p];
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        const double keep = m(i, j);
        m(i, j) = keep + step;
        const double up = f(nullptr);
        m(i, j) = keep - step;
        const double down = f(nullptr);
        m(i, j) = keep;
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = g(i, j);
        const double rel =
            std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
        if (rel > max_rel) max_rel = rel;
      }
    }
  }
  return max_rel;
}

}  // namespace dese::ad
