#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "behaveformer/types.hpp"

namespace bf {

enum class Mode { Train, Eval };
enum class Axis { Rows, Cols };

class Graph;

/// Handle to a node on a Graph tape. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  Index rows() const;
  Index cols() const;
  const Matrix& value() const;
};

/// Dynamically recorded computation tape with reverse-mode gradients.
///
/// Every primitive appends one node holding its result; node creation order is
/// a topological order, so backward() walks ids in reverse and visits each node
/// exactly once. Eval mode disables dropout and makes batch_norm use running
/// statistics. A graph is single-threaded for one forward/backward pair.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(Mode mode = Mode::Train, std::uint64_t seed = 0);

  Mode mode() const { return mode_; }
  std::mt19937_64& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }

  /// Leaf without gradient tracking. Rejects non-finite values.
  Var input(Matrix value);
  /// Leaf with gradient tracking.
  Var param(Matrix value);
  /// 1x1 leaf without gradient tracking.
  Var scalar(Scalar v);

  /// Core extension point used by all primitives: appends a node with the
  /// given parents, value and backward rule. Checks the value for NaN/Inf.
  Var apply(const char* op, const std::vector<Var>& parents, Matrix value, BackwardFn backward);

  const Matrix& value(Var v) const;
  /// Gradient of the last backward() target w.r.t. v. Zero if v never
  /// received a contribution. Only meaningful for nodes that require grad.
  const Matrix& grad(Var v) const;

  /// Reverse pass from a scalar (1x1) loss. May be called once per graph.
  void backward(Var loss);

  // Node access for backward rules.
  const Matrix& value_at(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad_at(int id) const;
  bool requires_grad_at(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  void accumulate_grad(int id, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    bool grad_live = false;
    std::vector<int> parents;
    BackwardFn backward;
    const char* op = "leaf";
  };

  int check(Var v, const char* what) const;

  std::vector<Node> nodes_;
  Mode mode_;
  std::mt19937_64 rng_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable primitives. All are free functions returning a new Var on the
// operands' graph; shape mismatches throw std::invalid_argument naming the
// primitive and the offending shapes.
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise (Hadamard) product.
Var mul(Var a, Var b);
Var scale(Var a, Scalar s);
Var transpose(Var a);
Var relu(Var a);
Var exp(Var a);

/// Softmax normalizing each row (rows sum to 1).
Var softmax_rows(Var a);
/// Softmax normalizing each column (columns sum to 1).
Var softmax_cols(Var a);

/// Per-row layer normalization with learnable gain/bias (both 1 x cols).
Var layer_norm(Var x, Var gain, Var bias, Scalar eps = 1e-5);

/// Whole-map batch normalization for a single-channel feature map with scalar
/// (1x1) learnable gain/bias. Train mode normalizes with batch statistics and
/// updates the running ones in place; eval mode reads the running statistics.
Var batch_norm(Var x, Var gain, Var bias, Matrix& running_mean, Matrix& running_var,
               Scalar momentum = 0.1, Scalar eps = 1e-5);

/// 2-D convolution with zero same-padding, stride 1, odd square kernel.
Var conv2d_same(Var x, Var kernel);

/// Inverted dropout: train mode zeroes entries with probability `rate` and
/// rescales by 1/(1-rate); eval mode is the identity.
Var dropout(Var x, Scalar rate);

/// Mean across rows -> 1 x cols.
Var mean_rows(Var a);
/// Mean across columns -> rows x 1.
Var mean_cols(Var a);
Var mean_all(Var a);
Var sum_all(Var a);

/// Concatenate along the given axis (Axis::Cols stacks side by side).
Var concat(const std::vector<Var>& parts, Axis axis);

/// Row-major reshape.
Var reshape(Var a, Index rows, Index cols);
/// Row-major flatten to a column vector.
Var flatten(Var a);

/// y = W x + b with x (in x c), W (out x in), b (out x 1) broadcast over columns.
Var affine(Var x, Var w, Var b);

/// Frobenius / Euclidean distance ||a - b|| as a 1x1 node. Subgradient 0 at 0.
Var euclidean_distance(Var a, Var b);

}  // namespace bf
