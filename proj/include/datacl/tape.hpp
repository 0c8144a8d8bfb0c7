#pragma once

#include <functional>
#include <vector>

#include "datacl/matrix.hpp"

namespace datacl {

// Reverse-mode tape over Matrix values. Forward values are computed eagerly
// as ops are recorded; backward() replays the records once, in reverse order.
// Only the operations this model needs are provided.
class Tape {
 public:
  using NodeId = int;

  NodeId leaf(const Matrix& value, bool requires_grad);
  NodeId constant(Matrix value);

  NodeId matmul(NodeId a, NodeId b);     // a * b
  NodeId matmul_nt(NodeId a, NodeId b);  // a * b^T
  NodeId add(NodeId a, NodeId b);
  NodeId add_rowvec(NodeId x, NodeId v);  // (B x d) + broadcast (1 x d)
  NodeId sub(NodeId a, NodeId b);
  NodeId sub_identity(NodeId a);  // a - I, square input
  NodeId hadamard(NodeId a, NodeId b);
  NodeId rowwise_mul(NodeId x, NodeId v);  // (B x d) scaled per-column by (1 x d)
  NodeId scale(NodeId a, double s);
  NodeId relu(NodeId a);
  NodeId mean_rows(NodeId a, std::size_t r0, std::size_t r1);  // -> 1 x d
  NodeId row_mean_fill(NodeId v);  // 1 x d -> 1 x d filled with mean entry
  NodeId frobenius_sq(NodeId a);   // -> 1 x 1

  // Rows [r0, r1) regrouped so that each `rows_per_group` consecutive rows
  // become one flattened row. Pure relabeling of row-major storage.
  NodeId reshape_rows(NodeId a, std::size_t r0, std::size_t r1, std::size_t rows_per_group);

  // Columns [c0, c1) of a transposed into rows of the result.
  NodeId cols_as_rows(NodeId a, std::size_t c0, std::size_t c1);

  // Per-component cosine similarity between an attended query and keys.
  // q is a plain value (stop-gradient); attn and keys are d_q x M nodes.
  // Component m with zero-norm attended query or key contributes 0 with
  // zero gradients. Result is 1 x M.
  NodeId attended_cosine(const Matrix& q, NodeId attn, NodeId keys, bool use_attention);

  // lambda = sum_m alpha[m] * W_m where w_stack is (M * l_w) x d. -> l_w x d
  NodeId weighted_sum_slices(NodeId alpha, NodeId w_stack, std::size_t l_w);

  // Mean softmax cross-entropy over batch rows. Labels must lie in [0, C).
  NodeId cross_entropy_mean(NodeId logits, const std::vector<int>& labels);

  // Seeds d(loss)/d(loss) = 1 and replays all records in reverse. The loss
  // node must be 1x1.
  void backward(NodeId loss);

  const Matrix& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::size_t num_ops() const { return ops_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
  };

  NodeId push(Matrix value);
  Matrix& grad_ref(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }

  std::vector<Node> nodes_;
  // Backward records take the tape as an argument so a Tape stays valid
  // after moves.
  std::vector<std::function<void(Tape&)>> ops_;
};

}  // namespace datacl
