// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// Every value is a rows x cols matrix of doubles; scalars are 1x1. A Tape
// records primitive operations in execution order and replays their adjoints
// in exact reverse order. Parameters live outside the tape and are referenced
// by leaf nodes; gradients are copied back into them explicitly so that several
// tapes can run over the same read-only parameters and be reduced in a fixed
// order afterwards.

#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <functional>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace meshfield::ad {

/// Cache-line aligned storage. Eigen peels vectorized reductions up to the
/// first aligned element, so a varying heap alignment would change the
/// summation order and break bit-exact reruns.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  bool operator==(const AlignedAllocator&) const { return true; }
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::array<std::size_t, 2> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  /// Value of a 1x1 tensor.
  double item() const;
  bool all_finite() const;
  void fill(double v);

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double, AlignedAllocator<double>> data_;
};

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad = Tensor(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Adjoint callback: reads grad(self) and accumulates into operand grads.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value);
  /// Leaf bound to a parameter. The tape keeps a pointer; the parameter must
  /// outlive the tape.
  Var param(Parameter& p);
  /// Leaf bound to a parameter but recorded as a constant (frozen group).
  Var frozen(const Parameter& p) { return constant(p.value); }

  Var push(Tensor value, bool requires_grad, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded adjoint in reverse.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient of a node, or nullptr if none was propagated to it.
  const Tensor* find_grad(std::size_t id) const;
  /// Gradient of a node; zeros if none was propagated. A Var recorded on a
  /// different tape yields zeros as well and trips an assertion in debug
  /// builds.
  Tensor grad(Var v) const;
  /// Mutable gradient buffer, allocated on first use.
  Tensor& grad_buffer(std::size_t id);

  /// Adds each parameter leaf's gradient into Parameter::grad, in recording
  /// order.
  void accumulate_gradients() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
};

// ---- primitive operations ---------------------------------------------------

/// x[N,in] * w[in,out] + b[1,out]
Var linear(Var x, Var w, Var b);
Var matmul(Var a, Var b);
Var relu(Var x);
Var sigmoid(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a[N,1] broadcast across the columns of b[N,M].
Var mul_rows(Var a, Var b);
Var square(Var x);
/// |x| with subgradient 0 at 0.
Var abs(Var x);
/// max(x, 0) with subgradient 0 at 0.
Var hinge(Var x);
Var sum(Var x);
Var mean(Var x);
/// Mean of (a - b)^2 over all entries.
Var mse(Var a, Var b);
Var concat_cols(Var a, Var b);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
/// Rows of x selected by index; backward scatter-adds in index order.
Var gather_rows(Var x, std::span<const std::size_t> index);
/// Sum of rows [offsets[r], offsets[r+1]) for every segment r.
Var segment_sum(Var x, std::span<const std::size_t> offsets);
/// Mean over consecutive groups of `group` rows.
Var group_mean(Var x, std::size_t group);
/// Rows with mask[r] != 0 are replaced by the matching row of `fill`
/// (a constant); gradient through replaced rows is zero.
Var replace_rows(Var x, const Tensor& fill, std::span<const char> mask);
/// Each row divided by its Euclidean norm; all-zero rows stay zero.
Var normalize_rows(Var x);
/// Forward is the identity; backward contributes exactly zero.
Var stop_gradient(Var x);

/// Frequency encoding of p[N,3]: [p, sin(2^0 pi p), cos(2^0 pi p), ...,
/// sin(2^(L-1) pi p), cos(2^(L-1) pi p)], each block componentwise.
Var positional_encoding(Var p, int degree);
std::vector<double> positional_encoding(std::span<const double, 3> p, int degree);
constexpr std::size_t encoded_size(int degree) { return 3 + 6 * static_cast<std::size_t>(degree); }

}  // namespace meshfield::ad
