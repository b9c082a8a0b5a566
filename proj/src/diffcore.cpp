#include "poe/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace poe::diff {

namespace {

std::size_t shape_product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what + " (got " + shape_str(a) + ")");
}

Tape& same_tape(const char* op, Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape();
}

Tape& tape_of(const char* op, Var a) {
  if (a.tape() == nullptr) throw std::invalid_argument(std::string(op) + ": unbound Var");
  return *a.tape();
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_sigmoid(double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); }

bool is_matrix(const Tensor& t) { return t.rank() == 2; }

Node make_node(Op op, Tensor value, std::size_t lhs, std::uint8_t arity = 1, std::size_t rhs = 0) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.lhs = lhs;
  n.rhs = rhs;
  n.arity = arity;
  return n;
}

Var unary(Op op, Var a, Tensor value) {
  return tape_of(op_name(op), a).push(make_node(op, std::move(value), a.id()));
}

Var binary(Op op, Var a, Var b, Tensor value) {
  return same_tape(op_name(op), a, b).push(make_node(op, std::move(value), a.id(), 2, b.id()));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("Tensor: shape " + shape_str(shape_) + " does not hold " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Tensor::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.size() == 2) return shape_[0];
  return 1;
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("Tensor::item: not a scalar " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::add_row: return "add_row";
    case Op::add_scalar: return "add_scalar";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::mul_scalar: return "mul_scalar";
    case Op::scale: return "scale";
    case Op::shift: return "shift";
    case Op::matmul: return "matmul";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::sum_rows: return "sum_rows";
    case Op::mean_rows: return "mean_rows";
    case Op::sigmoid: return "sigmoid";
    case Op::log_sigmoid: return "log_sigmoid";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::gather_rows: return "gather_rows";
    case Op::pick: return "pick";
    case Op::concat_rows: return "concat_rows";
    case Op::clip: return "clip";
    case Op::minimum: return "minimum";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->node(id_).value; }
const Tensor& Var::grad() const { return tape_->node(id_).grad; }

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

// ---------------------------------------------------------------------------
// Forward ops

Var add(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() == y.shape()) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return binary(Op::add, a, b, std::move(out));
  }
  if (y.size() == 1) {
    Tensor out = x;
    const double s = y[0];
    for (auto& v : out.data()) v += s;
    return binary(Op::add_scalar, a, b, std::move(out));
  }
  if (x.size() == 1) return add(b, a);
  if (is_matrix(x) && y.cols() == x.cols() && y.rows() == 1 && y.size() == x.cols()) {
    Tensor out = x;
    const std::size_t m = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += y[j];
    return binary(Op::add_row, a, b, std::move(out));
  }
  shape_fail("add", x.shape(), y.shape());
}

Var sub(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() == y.shape()) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    return binary(Op::sub, a, b, std::move(out));
  }
  if (y.size() == 1 || x.size() == 1 || (is_matrix(x) && y.rows() == 1 && y.size() == x.cols())) {
    return add(a, neg(b));
  }
  shape_fail("sub", x.shape(), y.shape());
}

Var mul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() == y.shape()) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return binary(Op::mul, a, b, std::move(out));
  }
  if (y.size() == 1) {
    Tensor out = x;
    const double s = y[0];
    for (auto& v : out.data()) v *= s;
    return binary(Op::mul_scalar, a, b, std::move(out));
  }
  if (x.size() == 1) return mul(b, a);
  shape_fail("mul", x.shape(), y.shape());
}

Var scale(Var a, double k) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= k;
  Node n = make_node(Op::scale, std::move(out), a.id());
  n.c0 = k;
  return tape_of("scale", a).push(std::move(n));
}

Var shift(Var a, double k) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += k;
  return unary(Op::shift, a, std::move(out));
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() > 2 || y.rank() != 2 || x.cols() != y.rows() || x.rank() == 0) {
    shape_fail("matmul", x.shape(), y.shape());
  }
  const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yrow = &y[p * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += xv * yrow[j];
    }
  }
  return binary(Op::matmul, a, b, std::move(out));
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return unary(Op::tanh, a, std::move(out));
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0 ? v : 0.0;
  return unary(Op::relu, a, std::move(out));
}

Var exp(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::exp(v);
  return unary(Op::exp, a, std::move(out));
}

Var log(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) {
    if (!(v > 0)) throw DomainError("log: non-positive input " + std::to_string(v));
    v = std::log(v);
  }
  return unary(Op::log, a, std::move(out));
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  return unary(Op::sum, a, Tensor::scalar(s));
}

Var mean(Var a) {
  const Tensor& x = a.value();
  if (x.size() == 0) shape_fail("mean", x.shape(), "empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return unary(Op::mean, a, Tensor::scalar(s / static_cast<double>(x.size())));
}

namespace {
Tensor row_sums(const Tensor& x, double factor) {
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out(Shape{1, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x[i * m + j];
  if (factor != 1.0)
    for (auto& v : out.data()) v *= factor;
  return out;
}
}  // namespace

Var sum_rows(Var a) {
  const Tensor& x = a.value();
  if (!is_matrix(x)) shape_fail("sum_rows", x.shape(), "expected a matrix");
  return unary(Op::sum_rows, a, row_sums(x, 1.0));
}

Var mean_rows(Var a) {
  const Tensor& x = a.value();
  if (!is_matrix(x) || x.rows() == 0) shape_fail("mean_rows", x.shape(), "expected a non-empty matrix");
  return unary(Op::mean_rows, a, row_sums(x, 1.0 / static_cast<double>(x.rows())));
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = stable_sigmoid(v);
  return unary(Op::sigmoid, a, std::move(out));
}

Var log_sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = stable_log_sigmoid(v);
  return unary(Op::log_sigmoid, a, std::move(out));
}

namespace {
template <bool Log>
Tensor row_softmax(const Tensor& x) {
  Tensor out = x;
  const std::size_t n = x.rows(), m = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &out[i * m];
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    if constexpr (Log) {
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < m; ++j) row[j] -= lse;
    } else {
      for (std::size_t j = 0; j < m; ++j) row[j] = std::exp(row[j] - mx) / z;
    }
  }
  return out;
}
}  // namespace

Var softmax(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || x.cols() == 0) shape_fail("softmax", x.shape(), "expected rank >= 1");
  return unary(Op::softmax, a, row_softmax<false>(x));
}

Var log_softmax(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || x.cols() == 0) shape_fail("log_softmax", x.shape(), "expected rank >= 1");
  return unary(Op::log_softmax, a, row_softmax<true>(x));
}

Var gather_rows(Var table, std::span<const std::size_t> rows) {
  const Tensor& t = table.value();
  if (!is_matrix(t)) shape_fail("gather_rows", t.shape(), "table must be a matrix");
  const std::size_t m = t.cols();
  Tensor out(Shape{rows.size(), m});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= t.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " + shape_str(t.shape()));
    }
    std::copy_n(&t[rows[i] * m], m, &out[i * m]);
  }
  Node n = make_node(Op::gather_rows, std::move(out), table.id());
  n.index.assign(rows.begin(), rows.end());
  return tape_of("gather_rows", table).push(std::move(n));
}

Var pick(Var a, std::span<const std::size_t> cols) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || x.rows() != cols.size()) {
    shape_fail("pick", x.shape(), "needs one column index per row, got " + std::to_string(cols.size()));
  }
  const std::size_t m = x.cols();
  Tensor out(Shape{cols.size()});
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] >= m) throw ShapeError("pick: column " + std::to_string(cols[i]) + " out of range");
    out[i] = x[i * m + cols[i]];
  }
  Node n = make_node(Op::pick, std::move(out), a.id());
  n.index.assign(cols.begin(), cols.end());
  return tape_of("pick", a).push(std::move(n));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& tape = tape_of("concat_rows", parts[0]);
  const std::size_t m = parts[0].value().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &tape) throw std::invalid_argument("concat_rows: operands live on different tapes");
    const Tensor& v = p.value();
    if (v.cols() != m) shape_fail("concat_rows", parts[0].value().shape(), v.shape());
    total += v.rows();
  }
  Tensor out(Shape{total, m});
  std::size_t off = 0;
  Node n;
  n.op = Op::concat_rows;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data().begin(), v.data().end(), &out[off]);
    off += v.size();
    n.index.push_back(p.id());
  }
  n.value = std::move(out);
  return tape.push(std::move(n));
}

Var clip(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clip: lo > hi");
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  Node n = make_node(Op::clip, std::move(out), a.id());
  n.c0 = lo;
  n.c1 = hi;
  return tape_of("clip", a).push(std::move(n));
}

Var minimum(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) shape_fail("minimum", x.shape(), y.shape());
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(x[i], y[i]);
  return binary(Op::minimum, a, b, std::move(out));
}

std::vector<std::string> registered_ops() {
  return {"add",     "add_row",     "sub",     "mul",         "matmul",      "tanh",   "relu",
          "exp",     "log",         "sum",     "mean",        "sum_rows",    "mean_rows",
          "sigmoid", "log_sigmoid", "softmax", "log_softmax", "gather_rows", "pick", "concat_rows",
          "clip",    "minimum",     "scale",   "shift"};
}

// ---------------------------------------------------------------------------
// Backward

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
  const Tensor& rv = nodes_.at(root.id()).value;
  if (rv.size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(rv.shape()));
  for (auto& n : nodes_) n.grad = Tensor(n.value.shape(), 0.0);
  nodes_[root.id()].grad[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) backprop_node(i);
}

void Tape::backprop_node(std::size_t id) {
  Node& n = nodes_[id];
  if (n.op == Op::leaf) return;
  const Tensor& g = n.grad;
  const Tensor& y = n.value;
  auto grad_of = [this](std::size_t pid) -> Tensor& { return nodes_[pid].grad; };
  auto val_of = [this](std::size_t pid) -> const Tensor& { return nodes_[pid].value; };
  const std::size_t N = g.size();

  switch (n.op) {
    case Op::leaf: break;
    case Op::add: {
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i];
      Tensor& gb = grad_of(n.rhs);
      for (std::size_t i = 0; i < N; ++i) gb[i] += g[i];
      break;
    }
    case Op::add_row: {
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i];
      Tensor& gb = grad_of(n.rhs);
      const std::size_t m = y.cols();
      for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
      break;
    }
    case Op::add_scalar: {
      Tensor& ga = grad_of(n.lhs);
      double s = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        ga[i] += g[i];
        s += g[i];
      }
      grad_of(n.rhs)[0] += s;
      break;
    }
    case Op::sub: {
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i];
      Tensor& gb = grad_of(n.rhs);
      for (std::size_t i = 0; i < N; ++i) gb[i] -= g[i];
      break;
    }
    case Op::mul: {
      const Tensor& a = val_of(n.lhs);
      const Tensor& b = val_of(n.rhs);
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i] * b[i];
      Tensor& gb = grad_of(n.rhs);
      for (std::size_t i = 0; i < N; ++i) gb[i] += g[i] * a[i];
      break;
    }
    case Op::mul_scalar: {
      const Tensor& a = val_of(n.lhs);
      const double s = val_of(n.rhs)[0];
      Tensor& ga = grad_of(n.lhs);
      double acc = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        ga[i] += g[i] * s;
        acc += g[i] * a[i];
      }
      grad_of(n.rhs)[0] += acc;
      break;
    }
    case Op::scale: {
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i] * n.c0;
      break;
    }
    case Op::shift: {
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i];
      break;
    }
    case Op::matmul: {
      const Tensor& a = val_of(n.lhs);
      const Tensor& b = val_of(n.rhs);
      const std::size_t rows = a.rows(), k = a.cols(), m = b.cols();
      Tensor& ga = grad_of(n.lhs);
      Tensor& gb = grad_of(n.rhs);
      for (std::size_t i = 0; i < rows; ++i) {
        const double* grow = &g[i * m];
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = &b[p * m];
          double* gbrow = &gb[p * m];
          const double av = a[i * k + p];
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            acc += grow[j] * brow[j];
            gbrow[j] += av * grow[j];
          }
          ga[i * k + p] += acc;
        }
      }
      break;
    }
    case Op::tanh: {
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case Op::relu: {
      const Tensor& a = val_of(n.lhs);
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += a[i] > 0 ? g[i] : 0.0;
      break;
    }
    case Op::exp: {
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i] * y[i];
      break;
    }
    case Op::log: {
      const Tensor& a = val_of(n.lhs);
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i] / a[i];
      break;
    }
    case Op::sum: {
      Tensor& ga = grad_of(n.lhs);
      for (auto& v : ga.data()) v += g[0];
      break;
    }
    case Op::mean: {
      Tensor& ga = grad_of(n.lhs);
      const double k = g[0] / static_cast<double>(ga.size());
      for (auto& v : ga.data()) v += k;
      break;
    }
    case Op::sum_rows:
    case Op::mean_rows: {
      Tensor& ga = grad_of(n.lhs);
      const std::size_t rows = ga.rows(), m = ga.cols();
      const double k = n.op == Op::mean_rows ? 1.0 / static_cast<double>(rows) : 1.0;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j] * k;
      break;
    }
    case Op::sigmoid: {
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case Op::log_sigmoid: {
      const Tensor& a = val_of(n.lhs);
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i) ga[i] += g[i] * stable_sigmoid(-a[i]);
      break;
    }
    case Op::softmax: {
      Tensor& ga = grad_of(n.lhs);
      const std::size_t rows = y.rows(), m = y.cols();
      for (std::size_t i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
      }
      break;
    }
    case Op::log_softmax: {
      Tensor& ga = grad_of(n.lhs);
      const std::size_t rows = y.rows(), m = y.cols();
      for (std::size_t i = 0; i < rows; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < m; ++j) gs += g[i * m + j];
        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i * m + j] - std::exp(y[i * m + j]) * gs;
      }
      break;
    }
    case Op::gather_rows: {
      Tensor& gt = grad_of(n.lhs);
      const std::size_t m = y.cols();
      for (std::size_t i = 0; i < n.index.size(); ++i) {
        double* dst = &gt[n.index[i] * m];
        for (std::size_t j = 0; j < m; ++j) dst[j] += g[i * m + j];
      }
      break;
    }
    case Op::pick: {
      Tensor& ga = grad_of(n.lhs);
      const std::size_t m = ga.cols();
      for (std::size_t i = 0; i < n.index.size(); ++i) ga[i * m + n.index[i]] += g[i];
      break;
    }
    case Op::concat_rows: {
      std::size_t off = 0;
      for (std::size_t pid : n.index) {
        Tensor& gp = grad_of(pid);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        off += gp.size();
      }
      break;
    }
    case Op::clip: {
      const Tensor& a = val_of(n.lhs);
      Tensor& ga = grad_of(n.lhs);
      for (std::size_t i = 0; i < N; ++i)
        if (a[i] >= n.c0 && a[i] <= n.c1) ga[i] += g[i];
      break;
    }
    case Op::minimum: {
      const Tensor& a = val_of(n.lhs);
      const Tensor& b = val_of(n.rhs);
      Tensor& ga = grad_of(n.lhs);
      Tensor& gb = grad_of(n.rhs);
      for (std::size_t i = 0; i < N; ++i) {
        if (a[i] <= b[i]) {
          ga[i] += g[i];
        } else {
          gb[i] += g[i];
        }
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference checker

double grad_check(const ScalarFn& f, std::span<const Tensor> point, double h) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(point.size());
    for (const auto& t : point) vars.push_back(tape.leaf(t));
    Var out = f(tape, vars);
    if (!out.value().all_finite()) throw DomainError("grad_check: non-finite value at the base point");
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  auto eval = [&](const std::vector<Tensor>& pt) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(pt.size());
    for (const auto& t : pt) vars.push_back(tape.leaf(t));
    const double v = f(tape, vars).item();
    if (!std::isfinite(v)) throw DomainError("grad_check: non-finite value at a probe");
    return v;
  };

  std::vector<Tensor> probe(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t t = 0; t < probe.size(); ++t) {
    for (std::size_t i = 0; i < probe[t].size(); ++i) {
      const double x0 = probe[t][i];
      probe[t][i] = x0 + h;
      const double fp = eval(probe);
      probe[t][i] = x0 - h;
      const double fm = eval(probe);
      probe[t][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[t][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace poe::diff
