#pragma once

#include <functional>
#include <vector>

#include "nbslu/rng.hpp"
#include "nbslu/tensor.hpp"

namespace nbslu {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Val {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& t() const;
  const std::vector<int>& shape() const { return t().shape; }
  int rows() const { return t().rows(); }
  int cols() const { return t().cols(); }
};

// Reverse-mode autodiff tape. Operations append nodes in topological order;
// backward() replays them once in reverse and accumulates adjoints into the
// grad buffers of leaf tensors that have requires_grad set.
class Tape {
 public:
  struct Node {
    Tensor* external = nullptr;  // leaf over a caller-owned tensor
    Tensor owned;                // op output or constant
    std::vector<double> adj;     // adjoint, lazily allocated in backward
    bool has_adj = false;
    std::function<void(Tape&, Node&)> backward_fn;  // null for leaves/constants

    const Tensor& value() const { return external ? *external : owned; }
  };

  Val leaf(Tensor* t);          // gradients flow into t->grad if t->requires_grad
  Val constant(Tensor value);   // no gradient tracking

  // Runs the reverse pass from a scalar loss node. Throws if loss is not
  // scalar. Leaf tensors with requires_grad receive (accumulate) gradients;
  // leaves never touched by the loss keep exact zeros.
  void backward(Val loss);

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  size_t size() const { return nodes_.size(); }

  // Internal: append an op node. Used by the free-function ops; the backward
  // closure owns its parent ids and cached intermediates.
  Val emit(Tensor out, std::function<void(Tape&, Node&)> backward_fn);
  std::vector<double>& adj_of(int id);
  void touch(int id) { nodes_[static_cast<size_t>(id)].has_adj = true; }

 private:
  std::vector<Node> nodes_;
};

// ---- operations -----------------------------------------------------------

// Elementwise add. Supports identical shapes, or broadcasting a rank-1 vector
// of length C over the rows of a [R,C] matrix (bias add).
Val add(Val a, Val b);
Val sub(Val a, Val b);
// Elementwise product; same broadcasting rules as add.
Val mul(Val a, Val b);
Val scale(Val a, double s);

// matmul with optional transposes: op(a) [m,k] x op(b) [k,n] -> [m,n].
Val matmul(Val a, Val b, bool trans_a = false, bool trans_b = false);

// Concatenate along axis 0 (rows) or 1 (cols).
Val concat(const std::vector<Val>& parts, int axis);

Val transpose(Val a);

Val slice_rows(Val a, int r0, int r1);
Val slice_cols(Val a, int c0, int c1);
// Gather rows by index; duplicate indices accumulate gradient.
Val gather_rows(Val a, const std::vector<int>& idx);
// Row lookup into an embedding table; identical to gather_rows.
Val embedding_lookup(Val table, const std::vector<int>& ids);

// Softmax along `axis` of a rank-1 or rank-2 tensor. Rows sum to 1.
Val softmax(Val a, int axis);

// Row-wise normalization to mean 0 / variance 1 (before any affine), eps 1e-5.
Val layer_norm(Val a);

Val gelu(Val a);

Val sum_all(Val a);              // -> scalar
Val mean_rows(Val a);            // [R,C] -> [1,C]

// -ln(p[target]) with an epsilon floor of 1e-12 inside the log. `dist` must
// be a probability row (rank-1 or [1,n]) summing to 1 within 1e-6.
Val cross_entropy(Val dist, int target);

// Inverted dropout; identity when rate == 0. Mask drawn from `rng`.
Val dropout(Val a, double rate, Rng& rng);

// softmax(q op(k)^T / sqrt(d) + mask) v, composed from the primitives above.
// `mask`, when non-null, is an additive [Tq,Tk] bias (use large negatives to
// exclude positions).
Val scaled_dot_product_attention(Val q, Val k, Val v, const Tensor* mask = nullptr);

// Additive mask constant shared by attention helpers.
constexpr double kMaskNegInf = -1e9;

}  // namespace nbslu
