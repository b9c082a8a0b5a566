#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// arrays of doubles.
//
// A Tape records every operation in creation order; Var is a lightweight
// handle (tape pointer + node index). Calling Tape::backward on a scalar
// root fills the gradient of every node. Tapes are rebuilt per forward pass
// and must stay on one thread.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace poe::diff {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

std::string shape_str(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  bool is_scalar() const noexcept { return data_.size() == 1 && shape_.size() <= 1; }

  // 2-D view helpers; a rank-1 tensor is treated as a single row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool all_finite() const noexcept;
  void fill(double v);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class Op : std::uint8_t {
  leaf,
  add,
  add_row,      // matrix + broadcast row
  add_scalar,   // tensor + scalar node
  sub,
  mul,
  mul_scalar,   // tensor * scalar node
  scale,        // tensor * constant
  shift,        // tensor + constant
  matmul,
  tanh,
  relu,
  exp,
  log,
  sum,
  mean,
  sum_rows,
  mean_rows,
  sigmoid,
  log_sigmoid,
  softmax,
  log_softmax,
  gather_rows,
  pick,         // one element per row
  concat_rows,
  clip,
  minimum,
};

const char* op_name(Op op) noexcept;

struct Node {
  Tensor value;
  Tensor grad;
  Op op = Op::leaf;
  std::size_t lhs = 0;
  std::size_t rhs = 0;
  std::uint8_t arity = 0;
  double c0 = 0.0;
  double c1 = 0.0;
  std::vector<std::size_t> index;  // gather/pick rows, or concat parents
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  // Same as leaf; named separately so call sites read as "no gradient wanted".
  Var constant(Tensor value) { return leaf(std::move(value)); }

  // Fills grad of every node with d(root)/d(node). Gradients of a previous
  // backward call are discarded.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  Var push(Node n);

 private:
  void backprop_node(std::size_t id);
  std::vector<Node> nodes_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var shift(Var a, double k);
Var neg(Var a);
Var matmul(Var a, Var b);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);
Var mean_rows(Var a);
Var sigmoid(Var a);
Var log_sigmoid(Var a);
Var softmax(Var a);
Var log_softmax(Var a);
Var gather_rows(Var table, std::span<const std::size_t> rows);
Var pick(Var a, std::span<const std::size_t> cols);
Var concat_rows(std::span<const Var> parts);
Var clip(Var a, double lo, double hi);
Var minimum(Var a, Var b);

// Registered op names exercised by the gradient-check suite.
std::vector<std::string> registered_ops();

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Max over components of |analytic - central difference| /
// max(1, |analytic|, |numeric|). Throws DomainError on non-finite probes.
double grad_check(const ScalarFn& f, std::span<const Tensor> point, double h = 1e-5);

}  // namespace poe::diff
