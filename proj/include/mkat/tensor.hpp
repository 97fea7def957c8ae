#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mkat/error.hpp"
#include "mkat/mat.hpp"

namespace mkat::ad {

struct Shape {
  int rows{0};
  int cols{0};

  int count() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

enum class Op : uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  scale,
  matmul,
  transpose,
  relu,
  step,       // heaviside mask, derivative defined as zero
  tanh,
  exp,
  log,
  sqrt,
  row_sum,    // n x m -> n x 1
  col_sum,    // n x m -> 1 x m
  sum_all,    // n x m -> 1 x 1
  bcast_cols, // n x 1 -> n x m
  bcast_rows, // 1 x m -> n x m
  bcast_all,  // 1 x 1 -> n x m
  softmax_rows,
  logsumexp_rows,  // n x m -> n x 1
  logsumexp_all,   // n x m -> 1 x 1
  gather,     // entry list -> p x 1
  scatter,    // p x 1 -> n x m, duplicates accumulate
};

const char* op_name(Op op);

// Entry list for gather/scatter, shared between the forward node and the
// nodes its backward pass emits.
using IndexList = std::vector<std::pair<int, int>>;
using IndexListPtr = std::shared_ptr<const IndexList>;

namespace detail {

struct Node {
  Op op{Op::leaf};
  int a{-1};
  int b{-1};
  Shape shape;
  std::vector<double> values;
  double scalar{0.0};       // scale factor
  IndexListPtr indices;     // gather/scatter
};

struct OpAccess;

}  // namespace detail

class Graph;

// Lightweight handle into a Graph node. Copy freely; the graph owns storage.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return graph_ != nullptr; }
  Shape shape() const;
  int rows() const { return shape().rows; }
  int cols() const { return shape().cols; }
  const std::vector<double>& values() const;
  double value_at(int r, int c) const;
  double scalar() const;  // requires 1x1
  Mat to_mat() const;

  int id() const { return id_; }
  Graph* graph() const { return graph_; }

 private:
  Tensor(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_{nullptr};
  int id_{-1};

  friend struct detail::OpAccess;
  friend class Graph;
};

// Append-only computation graph. Nodes are evaluated eagerly on construction
// and store their forward values; ids are topological by construction. A
// graph is confined to one thread; independent graphs may run in parallel.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  Tensor leaf(const Mat& values);
  Tensor leaf(int rows, int cols, std::span<const double> values);
  // Constants are leaves that simply never appear in a wrt set.
  Tensor constant(const Mat& values) { return leaf(values); }
  Tensor constant_fill(int rows, int cols, double value);
  Tensor scalar_const(double value) { return constant_fill(1, 1, value); }

  int size() const { return static_cast<int>(nodes_.size()); }
  uint64_t generation() const { return generation_; }

 private:
  std::vector<detail::Node> nodes_;
  uint64_t generation_{0};

  friend struct detail::OpAccess;
  friend class Tensor;
};

// ---- primitive ops --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);   // elementwise
Tensor div(const Tensor& a, const Tensor& b);   // elementwise
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor step_mask(const Tensor& a);  // 1 where a > 0, else 0; gradient 0
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor row_sum(const Tensor& a);
Tensor col_sum(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor bcast_cols(const Tensor& a, int cols);
Tensor bcast_rows(const Tensor& a, int rows);
Tensor bcast_all(const Tensor& a, int rows, int cols);
Tensor softmax_rows(const Tensor& a);
Tensor logsumexp_rows(const Tensor& a);
// logsumexp over a set of values packed into one tensor.
Tensor logsumexp_all(const Tensor& a);
Tensor gather(const Tensor& a, IndexListPtr entries);
Tensor scatter_into(const Tensor& v, IndexListPtr entries, int rows, int cols);

// ---- composites (built from primitives; differentiable for free) ----------

Tensor mean_all(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);  // same shape, scalar result
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-30);
Tensor pairwise_sq_dist(const Tensor& a);      // n x d -> n x n
Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);  // x*w + b (b is 1 x k)

// ---- reverse-mode gradients ------------------------------------------------

struct Gradients {
  std::vector<Tensor> tensors;
  // False where the wrt tensor was unreachable from the loss; the gradient is
  // then a zero constant rather than an error.
  std::vector<char> reached;

  size_t size() const { return tensors.size(); }
  const Tensor& operator[](size_t i) const { return tensors[i]; }
  bool all_reached() const {
    for (char r : reached)
      if (!r) return false;
    return true;
  }
};

// Gradients of a scalar loss with respect to nodes of the same graph. The
// returned tensors are themselves graph nodes, so a second grad() through
// them yields exact higher-order derivatives (one nesting level is all the
// training loops need, but nothing here caps it).
Gradients grad(const Tensor& loss, std::span<const Tensor> wrt);
Tensor grad1(const Tensor& loss, const Tensor& wrt);

}  // namespace mkat::ad
