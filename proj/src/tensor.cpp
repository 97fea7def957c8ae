#include "mkat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mkat::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::scale: return "scale";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::relu: return "relu";
    case Op::step: return "step";
    case Op::tanh: return "tanh";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sqrt: return "sqrt";
    case Op::row_sum: return "row-sum";
    case Op::col_sum: return "col-sum";
    case Op::sum_all: return "sum";
    case Op::bcast_cols: return "bcast-cols";
    case Op::bcast_rows: return "bcast-rows";
    case Op::bcast_all: return "bcast-all";
    case Op::softmax_rows: return "row-softmax";
    case Op::logsumexp_rows: return "logsumexp-rows";
    case Op::logsumexp_all: return "logsumexp";
    case Op::gather: return "gather";
    case Op::scatter: return "scatter";
  }
  return "?";
}

namespace detail {

struct OpAccess {
  static const Node& node(const Graph& g, int id) { return g.nodes_[static_cast<size_t>(id)]; }

  static Tensor wrap(Graph& g, int id) { return Tensor(&g, id); }

  static Tensor make(Graph& g, Node&& n) {
    for (double v : n.values) {
      if (!std::isfinite(v))
        fail(ErrorKind::numeric_overflow,
             std::string("op '") + op_name(n.op) + "' produced a non-finite value");
    }
    g.nodes_.push_back(std::move(n));
    ++g.generation_;
    return Tensor(&g, static_cast<int>(g.nodes_.size()) - 1);
  }

  static Graph& graph_of(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.valid() || !b.valid()) fail(ErrorKind::invalid_argument, std::string(op) + ": unbound tensor");
    if (a.graph() != b.graph())
      fail(ErrorKind::invalid_argument, std::string(op) + ": tensors belong to different graphs");
    return *a.graph();
  }

  static Graph& graph_of(const Tensor& a, const char* op) {
    if (!a.valid()) fail(ErrorKind::invalid_argument, std::string(op) + ": unbound tensor");
    return *a.graph();
  }
};

}  // namespace detail

using detail::Node;
using detail::OpAccess;

Shape Tensor::shape() const {
  if (!valid()) fail(ErrorKind::invalid_argument, "Tensor::shape on unbound tensor");
  return OpAccess::node(*graph_, id_).shape;
}

const std::vector<double>& Tensor::values() const {
  if (!valid()) fail(ErrorKind::invalid_argument, "Tensor::values on unbound tensor");
  return OpAccess::node(*graph_, id_).values;
}

double Tensor::value_at(int r, int c) const {
  const Shape s = shape();
  return values()[static_cast<size_t>(r) * s.cols + c];
}

double Tensor::scalar() const {
  const Shape s = shape();
  if (s.rows != 1 || s.cols != 1)
    fail(ErrorKind::shape_mismatch, "Tensor::scalar on tensor of shape " + s.str());
  return values()[0];
}

Mat Tensor::to_mat() const {
  const Shape s = shape();
  return Mat(s.rows, s.cols, values());
}

Tensor Graph::leaf(const Mat& values) {
  if (values.rows < 1 || values.cols < 1)
    fail(ErrorKind::invalid_argument, "leaf: shape must be at least 1x1");
  Node n;
  n.op = Op::leaf;
  n.shape = Shape{values.rows, values.cols};
  n.values = values.data;
  return OpAccess::make(*this, std::move(n));
}

Tensor Graph::leaf(int rows, int cols, std::span<const double> values) {
  if (static_cast<size_t>(rows) * cols != values.size())
    fail(ErrorKind::shape_mismatch, "leaf: value count does not match shape");
  Node n;
  n.op = Op::leaf;
  n.shape = Shape{rows, cols};
  n.values.assign(values.begin(), values.end());
  return OpAccess::make(*this, std::move(n));
}

Tensor Graph::constant_fill(int rows, int cols, double value) {
  Node n;
  n.op = Op::leaf;
  n.shape = Shape{rows, cols};
  n.values.assign(static_cast<size_t>(rows) * cols, value);
  return OpAccess::make(*this, std::move(n));
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape() == b.shape()))
    fail(ErrorKind::shape_mismatch,
         std::string(op) + ": shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
}

Tensor elementwise(const Tensor& a, const Tensor& b, Op op, double (*f)(double, double)) {
  Graph& g = OpAccess::graph_of(a, b, op_name(op));
  require_same_shape(a, b, op_name(op));
  Node n;
  n.op = op;
  n.a = a.id();
  n.b = b.id();
  n.shape = a.shape();
  const auto& va = a.values();
  const auto& vb = b.values();
  n.values.resize(va.size());
  for (size_t i = 0; i < va.size(); ++i) n.values[i] = f(va[i], vb[i]);
  return OpAccess::make(g, std::move(n));
}

Tensor unary(const Tensor& a, Op op, double (*f)(double)) {
  Graph& g = OpAccess::graph_of(a, op_name(op));
  Node n;
  n.op = op;
  n.a = a.id();
  n.shape = a.shape();
  const auto& va = a.values();
  n.values.resize(va.size());
  for (size_t i = 0; i < va.size(); ++i) n.values[i] = f(va[i]);
  return OpAccess::make(g, std::move(n));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, Op::add, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, Op::sub, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, Op::mul, [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, Op::div, [](double x, double y) { return x / y; });
}

Tensor scale(const Tensor& a, double c) {
  Graph& g = OpAccess::graph_of(a, "scale");
  Node n;
  n.op = Op::scale;
  n.a = a.id();
  n.shape = a.shape();
  n.scalar = c;
  const auto& va = a.values();
  n.values.resize(va.size());
  for (size_t i = 0; i < va.size(); ++i) n.values[i] = va[i] * c;
  return OpAccess::make(g, std::move(n));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Graph& g = OpAccess::graph_of(a, b, "matmul");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows)
    fail(ErrorKind::shape_mismatch,
         "matmul: shapes " + sa.str() + " and " + sb.str() + " do not conform");
  Node n;
  n.op = Op::matmul;
  n.a = a.id();
  n.b = b.id();
  n.shape = Shape{sa.rows, sb.cols};
  n.values.assign(static_cast<size_t>(sa.rows) * sb.cols, 0.0);
  const auto& va = a.values();
  const auto& vb = b.values();
  for (int i = 0; i < sa.rows; ++i) {
    for (int k = 0; k < sa.cols; ++k) {
      const double aik = va[static_cast<size_t>(i) * sa.cols + k];
      if (aik == 0.0) continue;
      const size_t brow = static_cast<size_t>(k) * sb.cols;
      const size_t crow = static_cast<size_t>(i) * sb.cols;
      for (int j = 0; j < sb.cols; ++j) n.values[crow + j] += aik * vb[brow + j];
    }
  }
  return OpAccess::make(g, std::move(n));
}

Tensor transpose(const Tensor& a) {
  Graph& g = OpAccess::graph_of(a, "transpose");
  const Shape s = a.shape();
  Node n;
  n.op = Op::transpose;
  n.a = a.id();
  n.shape = Shape{s.cols, s.rows};
  n.values.resize(a.values().size());
  const auto& va = a.values();
  for (int i = 0; i < s.rows; ++i)
    for (int j = 0; j < s.cols; ++j)
      n.values[static_cast<size_t>(j) * s.rows + i] = va[static_cast<size_t>(i) * s.cols + j];
  return OpAccess::make(g, std::move(n));
}

Tensor relu(const Tensor& a) {
  return unary(a, Op::relu, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor step_mask(const Tensor& a) {
  return unary(a, Op::step, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, Op::tanh, [](double x) { return std::tanh(x); });
}

Tensor exp(const Tensor& a) {
  return unary(a, Op::exp, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  return unary(a, Op::log, [](double x) { return std::log(x); });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, Op::sqrt, [](double x) { return std::sqrt(x); });
}

Tensor row_sum(const Tensor& a) {
  Graph& g = OpAccess::graph_of(a, "row-sum");
  const Shape s = a.shape();
  Node n;
  n.op = Op::row_sum;
  n.a = a.id();
  n.shape = Shape{s.rows, 1};
  n.values.assign(static_cast<size_t>(s.rows), 0.0);
  const auto& va = a.values();
  for (int i = 0; i < s.rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < s.cols; ++j) acc += va[static_cast<size_t>(i) * s.cols + j];
    n.values[static_cast<size_t>(i)] = acc;
  }
  return OpAccess::make(g, std::move(n));
}

Tensor col_sum(const Tensor& a) {
  Graph& g = OpAccess::graph_of(a, "col-sum");
  const Shape s = a.shape();
  Node n;
  n.op = Op::col_sum;
  n.a = a.id();
  n.shape = Shape{1, s.cols};
  n.values.assign(static_cast<size_t>(s.cols), 0.0);
  const auto& va = a.values();
  for (int i = 0; i < s.rows; ++i)
    for (int j = 0; j < s.cols; ++j) n.values[static_cast<size_t>(j)] += va[static_cast<size_t>(i) * s.cols + j];
  return OpAccess::make(g, std::move(n));
}

Tensor sum_all(const Tensor& a) {
  Graph& g = OpAccess::graph_of(a, "sum");
  Node n;
  n.op = Op::sum_all;
  n.a = a.id();
  n.shape = Shape{1, 1};
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  n.values = {acc};
  return OpAccess::make(g, std::move(n));
}

Tensor bcast_cols(const Tensor& a, int cols) {
  Graph& g = OpAccess::graph_of(a, "bcast-cols");
  const Shape s = a.shape();
  if (s.cols != 1)
    fail(ErrorKind::shape_mismatch, "bcast-cols: input must be n x 1, got " + s.str());
  Node n;
  n.op = Op::bcast_cols;
  n.a = a.id();
  n.shape = Shape{s.rows, cols};
  n.values.resize(static_cast<size_t>(s.rows) * cols);
  const auto& va = a.values();
  for (int i = 0; i < s.rows; ++i)
    for (int j = 0; j < cols; ++j) n.values[static_cast<size_t>(i) * cols + j] = va[static_cast<size_t>(i)];
  return OpAccess::make(g, std::move(n));
}

Tensor bcast_rows(const Tensor& a, int rows) {
  Graph& g = OpAccess::graph_of(a, "bcast-rows");
  const Shape s = a.shape();
  if (s.rows != 1)
    fail(ErrorKind::shape_mismatch, "bcast-rows: input must be 1 x m, got " + s.str());
  Node n;
  n.op = Op::bcast_rows;
  n.a = a.id();
  n.shape = Shape{rows, s.cols};
  n.values.resize(static_cast<size_t>(rows) * s.cols);
  const auto& va = a.values();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < s.cols; ++j) n.values[static_cast<size_t>(i) * s.cols + j] = va[static_cast<size_t>(j)];
  return OpAccess::make(g, std::move(n));
}

Tensor bcast_all(const Tensor& a, int rows, int cols) {
  Graph& g = OpAccess::graph_of(a, "bcast-all");
  const Shape s = a.shape();
  if (s.rows != 1 || s.cols != 1)
    fail(ErrorKind::shape_mismatch, "bcast-all: input must be 1 x 1, got " + s.str());
  Node n;
  n.op = Op::bcast_all;
  n.a = a.id();
  n.shape = Shape{rows, cols};
  n.values.assign(static_cast<size_t>(rows) * cols, a.values()[0]);
  return OpAccess::make(g, std::move(n));
}

Tensor softmax_rows(const Tensor& a) {
  Graph& g = OpAccess::graph_of(a, "row-softmax");
  const Shape s = a.shape();
  Node n;
  n.op = Op::softmax_rows;
  n.a = a.id();
  n.shape = s;
  n.values.resize(a.values().size());
  const auto& va = a.values();
  for (int i = 0; i < s.rows; ++i) {
    const size_t off = static_cast<size_t>(i) * s.cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < s.cols; ++j) mx = std::max(mx, va[off + j]);
    double denom = 0.0;
    for (int j = 0; j < s.cols; ++j) {
      n.values[off + j] = std::exp(va[off + j] - mx);
      denom += n.values[off + j];
    }
    for (int j = 0; j < s.cols; ++j) n.values[off + j] /= denom;
  }
  return OpAccess::make(g, std::move(n));
}

namespace {

double stable_logsumexp(const double* v, size_t count, size_t stride = 1) {
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < count; ++i) mx = std::max(mx, v[i * stride]);
  double acc = 0.0;
  for (size_t i = 0; i < count; ++i) acc += std::exp(v[i * stride] - mx);
  return mx + std::log(acc);
}

}  // namespace

Tensor logsumexp_rows(const Tensor& a) {
  Graph& g = OpAccess::graph_of(a, "logsumexp-rows");
  const Shape s = a.shape();
  Node n;
  n.op = Op::logsumexp_rows;
  n.a = a.id();
  n.shape = Shape{s.rows, 1};
  n.values.resize(static_cast<size_t>(s.rows));
  const auto& va = a.values();
  for (int i = 0; i < s.rows; ++i)
    n.values[static_cast<size_t>(i)] =
        stable_logsumexp(va.data() + static_cast<size_t>(i) * s.cols, static_cast<size_t>(s.cols));
  return OpAccess::make(g, std::move(n));
}

Tensor logsumexp_all(const Tensor& a) {
  Graph& g = OpAccess::graph_of(a, "logsumexp");
  Node n;
  n.op = Op::logsumexp_all;
  n.a = a.id();
  n.shape = Shape{1, 1};
  n.values = {stable_logsumexp(a.values().data(), a.values().size())};
  return OpAccess::make(g, std::move(n));
}

Tensor gather(const Tensor& a, IndexListPtr entries) {
  Graph& g = OpAccess::graph_of(a, "gather");
  if (!entries || entries->empty()) fail(ErrorKind::invalid_argument, "gather: empty entry list");
  const Shape s = a.shape();
  Node n;
  n.op = Op::gather;
  n.a = a.id();
  n.shape = Shape{static_cast<int>(entries->size()), 1};
  n.indices = entries;
  n.values.resize(entries->size());
  const auto& va = a.values();
  for (size_t p = 0; p < entries->size(); ++p) {
    const auto [r, c] = (*entries)[p];
    if (r < 0 || r >= s.rows || c < 0 || c >= s.cols)
      fail(ErrorKind::invalid_argument, "gather: entry out of range for shape " + s.str());
    n.values[p] = va[static_cast<size_t>(r) * s.cols + c];
  }
  return OpAccess::make(g, std::move(n));
}

Tensor scatter_into(const Tensor& v, IndexListPtr entries, int rows, int cols) {
  Graph& g = OpAccess::graph_of(v, "scatter");
  if (!entries) fail(ErrorKind::invalid_argument, "scatter: missing entry list");
  const Shape s = v.shape();
  if (s.cols != 1 || static_cast<size_t>(s.rows) != entries->size())
    fail(ErrorKind::shape_mismatch,
         "scatter: values " + s.str() + " do not match entry count " + std::to_string(entries->size()));
  Node n;
  n.op = Op::scatter;
  n.a = v.id();
  n.shape = Shape{rows, cols};
  n.indices = entries;
  n.values.assign(static_cast<size_t>(rows) * cols, 0.0);
  const auto& vv = v.values();
  for (size_t p = 0; p < entries->size(); ++p) {
    const auto [r, c] = (*entries)[p];
    if (r < 0 || r >= rows || c < 0 || c >= cols)
      fail(ErrorKind::invalid_argument, "scatter: entry out of range");
    n.values[static_cast<size_t>(r) * cols + c] += vv[p];
  }
  return OpAccess::make(g, std::move(n));
}

// ---- composites ------------------------------------------------------------

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / a.shape().count());
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  return sum_all(mul(a, b));
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  Graph& g = OpAccess::graph_of(a, "l2-normalize-rows");
  const Shape s = a.shape();
  // eps inside the square root keeps the derivative finite for near-zero rows.
  Tensor norms = sqrt(add(row_sum(mul(a, a)), g.constant_fill(s.rows, 1, eps)));
  return div(a, bcast_cols(norms, s.cols));
}

Tensor pairwise_sq_dist(const Tensor& a) {
  const Shape s = a.shape();
  Tensor sq = row_sum(mul(a, a));  // n x 1
  Tensor gram = matmul(a, transpose(a));
  Tensor d = sub(add(bcast_cols(sq, s.rows), bcast_rows(transpose(sq), s.rows)), scale(gram, 2.0));
  // Exact zeros on the diagonal can round to small negatives; clamp.
  return relu(d);
}

Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  Graph& g = OpAccess::graph_of(x, "layernorm-rows");
  const Shape s = x.shape();
  if (gain.shape() != Shape{1, s.cols} || bias.shape() != Shape{1, s.cols})
    fail(ErrorKind::shape_mismatch, "layernorm-rows: gain/bias must be 1x" + std::to_string(s.cols));
  Tensor mu = scale(row_sum(x), 1.0 / s.cols);                       // n x 1
  Tensor centered = sub(x, bcast_cols(mu, s.cols));                  // n x m
  Tensor var = scale(row_sum(mul(centered, centered)), 1.0 / s.cols);
  Tensor inv = div(g.constant_fill(s.rows, 1, 1.0), sqrt(add(var, g.constant_fill(s.rows, 1, eps))));
  Tensor normed = mul(centered, bcast_cols(inv, s.cols));
  return add(mul(normed, bcast_rows(gain, s.rows)), bcast_rows(bias, s.rows));
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return add(y, bcast_rows(b, y.rows()));
}

// ---- reverse mode ----------------------------------------------------------

Gradients grad(const Tensor& loss, std::span<const Tensor> wrt) {
  Graph* g = loss.graph();
  if (g == nullptr) fail(ErrorKind::invalid_argument, "grad: unbound loss tensor");
  if (!(loss.shape() == Shape{1, 1}))
    fail(ErrorKind::shape_mismatch, "grad: loss must be scalar, got " + loss.shape().str());
  for (const Tensor& w : wrt) {
    if (w.graph() != g) fail(ErrorKind::invalid_argument, "grad: wrt tensor from another graph");
  }

  const int loss_id = loss.id();
  std::vector<int> adj(static_cast<size_t>(loss_id) + 1, -1);

  const auto wrap = [g](int id) { return OpAccess::wrap(*g, id); };
  const auto accumulate = [&](int input, const Tensor& contrib) {
    if (input > loss_id) fail(ErrorKind::invalid_argument, "grad: graph not topological");
    if (adj[static_cast<size_t>(input)] < 0) {
      adj[static_cast<size_t>(input)] = contrib.id();
    } else {
      adj[static_cast<size_t>(input)] = add(wrap(adj[static_cast<size_t>(input)]), contrib).id();
    }
  };

  adj[static_cast<size_t>(loss_id)] = g->constant_fill(1, 1, 1.0).id();

  for (int id = loss_id; id >= 0; --id) {
    if (adj[static_cast<size_t>(id)] < 0) continue;
    // Copy the header: emitting backward ops may reallocate node storage.
    const Node header = OpAccess::node(*g, id);
    const Tensor out = wrap(id);
    const Tensor gy = wrap(adj[static_cast<size_t>(id)]);
    switch (header.op) {
      case Op::leaf:
        break;
      case Op::add:
        accumulate(header.a, gy);
        accumulate(header.b, gy);
        break;
      case Op::sub:
        accumulate(header.a, gy);
        accumulate(header.b, scale(gy, -1.0));
        break;
      case Op::mul:
        accumulate(header.a, mul(gy, wrap(header.b)));
        accumulate(header.b, mul(gy, wrap(header.a)));
        break;
      case Op::div:
        // out = a / b: da = gy / b, db = -gy * out / b.
        accumulate(header.a, div(gy, wrap(header.b)));
        accumulate(header.b, scale(mul(gy, div(out, wrap(header.b))), -1.0));
        break;
      case Op::scale:
        accumulate(header.a, scale(gy, header.scalar));
        break;
      case Op::matmul:
        accumulate(header.a, matmul(gy, transpose(wrap(header.b))));
        accumulate(header.b, matmul(transpose(wrap(header.a)), gy));
        break;
      case Op::transpose:
        accumulate(header.a, transpose(gy));
        break;
      case Op::relu:
        accumulate(header.a, mul(gy, step_mask(wrap(header.a))));
        break;
      case Op::step:
        // Derivative defined as zero everywhere.
        break;
      case Op::tanh: {
        Tensor ones = g->constant_fill(header.shape.rows, header.shape.cols, 1.0);
        accumulate(header.a, mul(gy, sub(ones, mul(out, out))));
        break;
      }
      case Op::exp:
        accumulate(header.a, mul(gy, out));
        break;
      case Op::log:
        accumulate(header.a, div(gy, wrap(header.a)));
        break;
      case Op::sqrt:
        accumulate(header.a, div(scale(gy, 0.5), out));
        break;
      case Op::row_sum: {
        const Shape in = OpAccess::node(*g, header.a).shape;
        accumulate(header.a, bcast_cols(gy, in.cols));
        break;
      }
      case Op::col_sum: {
        const Shape in = OpAccess::node(*g, header.a).shape;
        accumulate(header.a, bcast_rows(gy, in.rows));
        break;
      }
      case Op::sum_all: {
        const Shape in = OpAccess::node(*g, header.a).shape;
        accumulate(header.a, bcast_all(gy, in.rows, in.cols));
        break;
      }
      case Op::bcast_cols:
        accumulate(header.a, row_sum(gy));
        break;
      case Op::bcast_rows:
        accumulate(header.a, col_sum(gy));
        break;
      case Op::bcast_all:
        accumulate(header.a, sum_all(gy));
        break;
      case Op::softmax_rows: {
        // da = s * (gy - rowsum(s * gy)). s is the forward output.
        Tensor inner = bcast_cols(row_sum(mul(out, gy)), header.shape.cols);
        accumulate(header.a, mul(out, sub(gy, inner)));
        break;
      }
      case Op::logsumexp_rows: {
        const Shape in = OpAccess::node(*g, header.a).shape;
        Tensor soft = exp(sub(wrap(header.a), bcast_cols(out, in.cols)));
        accumulate(header.a, mul(bcast_cols(gy, in.cols), soft));
        break;
      }
      case Op::logsumexp_all: {
        const Shape in = OpAccess::node(*g, header.a).shape;
        Tensor soft = exp(sub(wrap(header.a), bcast_all(out, in.rows, in.cols)));
        accumulate(header.a, mul(bcast_all(gy, in.rows, in.cols), soft));
        break;
      }
      case Op::gather: {
        const Shape in = OpAccess::node(*g, header.a).shape;
        accumulate(header.a, scatter_into(gy, header.indices, in.rows, in.cols));
        break;
      }
      case Op::scatter:
        accumulate(header.a, gather(gy, header.indices));
        break;
    }
  }

  Gradients out;
  out.tensors.reserve(wrt.size());
  out.reached.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    const int a = w.id() <= loss_id ? adj[static_cast<size_t>(w.id())] : -1;
    if (a >= 0) {
      out.tensors.push_back(wrap(a));
      out.reached.push_back(1);
    } else {
      const Shape s = w.shape();
      out.tensors.push_back(g->constant_fill(s.rows, s.cols, 0.0));
      out.reached.push_back(0);
    }
  }
  return out;
}

Tensor grad1(const Tensor& loss, const Tensor& wrt) {
  const Tensor arr[1] = {wrt};
  return grad(loss, std::span<const Tensor>(arr, 1)).tensors[0];
}

}  // namespace mkat::ad
