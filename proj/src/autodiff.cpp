// Copyright 2026 The meshfield Authors
// SPDX-License-Identifier: Apache-2.0

#include "meshfield/autodiff.hpp"

#include <Eigen/Core>
#include <cassert>
#include <cmath>
#include <numbers>

#include "meshfield/error.hpp"

namespace meshfield::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap as_matrix(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
MatMap as_matrix(Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ConfigError(std::string(op) + ": " + what);
}

std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

// Elementwise unary op with derivative f'(x, y) evaluated from input and output.
template <typename F, typename DF>
Var unary(Var x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [xi, df](Tape& tape, std::size_t self) {
    if (!tape.requires_grad(xi)) return;
    const Tensor* g = tape.find_grad(self);
    const Tensor& xv = tape.value(xi);
    const Tensor& yv = tape.value(self);
    Tensor& gx = tape.grad_buffer(xi);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += (*g)[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(values.begin(), values.end()) {
  if (data_.size() != rows * cols)
    throw ConfigError("tensor value count " + std::to_string(data_.size()) +
                      " does not match shape " + std::to_string(rows) + "x" + std::to_string(cols));
}

double Tensor::item() const {
  if (size() != 1) throw ConfigError("item() on tensor of shape " + dims(*this));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// ---- Var / Tape -----------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = push(p.value, true, nullptr);
  nodes_[v.id()].param = &p;
  return v;
}

Var Tape::push(Tensor value, bool requires_grad, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor* Tape::find_grad(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.has_grad ? &n.grad : nullptr;
}

Tensor Tape::grad(Var v) const {
  assert(&v.tape() == this && "gradient queried for a Var recorded on another tape");
  if (&v.tape() != this) return Tensor(v.rows(), v.cols());
  if (const Tensor* g = find_grad(v.id())) return *g;
  const Tensor& val = nodes_[v.id()].value;
  return Tensor(val.rows(), val.cols());
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ConfigError("backward: loss recorded on another tape");
  if (loss.value().size() != 1)
    throw ConfigError("backward: loss must be scalar, got " + dims(loss.value()));
  if (!loss.requires_grad()) return;
  grad_buffer(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, i);
  }
}

void Tape::accumulate_gradients() const {
  for (const Node& n : nodes_) {
    if (!n.param || !n.has_grad) continue;
    Tensor& dst = n.param->grad;
    if (!dst.same_shape(n.grad)) dst = Tensor(n.grad.rows(), n.grad.cols());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
}

// ---- ops -------------------------------------------------------------------

Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require(xv.cols() == wv.rows(), "linear", "input " + dims(xv) + " vs weight " + dims(wv));
  require(bv.rows() == 1 && bv.cols() == wv.cols(), "linear", "bias " + dims(bv) + " vs weight " + dims(wv));
  Tensor out(xv.rows(), wv.cols());
  auto y = as_matrix(out);
  y.noalias() = as_matrix(xv) * as_matrix(wv);
  y.rowwise() += as_matrix(bv).row(0);
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  return x.tape().push(std::move(out), any_grad({x, w, b}), [xi, wi, bi](Tape& tape, std::size_t self) {
    const auto g = as_matrix(*tape.find_grad(self));
    if (tape.requires_grad(xi)) as_matrix(tape.grad_buffer(xi)).noalias() += g * as_matrix(tape.value(wi)).transpose();
    if (tape.requires_grad(wi)) as_matrix(tape.grad_buffer(wi)).noalias() += as_matrix(tape.value(xi)).transpose() * g;
    if (tape.requires_grad(bi)) as_matrix(tape.grad_buffer(bi)).row(0) += g.colwise().sum();
  });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.rows(), "matmul", dims(av) + " * " + dims(bv));
  Tensor out(av.rows(), bv.cols());
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), any_grad({a, b}), [ai, bi](Tape& tape, std::size_t self) {
    const auto g = as_matrix(*tape.find_grad(self));
    if (tape.requires_grad(ai)) as_matrix(tape.grad_buffer(ai)).noalias() += g * as_matrix(tape.value(bi)).transpose();
    if (tape.requires_grad(bi)) as_matrix(tape.grad_buffer(bi)).noalias() += as_matrix(tape.value(ai)).transpose() * g;
  });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var square(Var x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(Var x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var hinge(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var scale(Var a, double s) {
  return unary(a, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Var stop_gradient(Var x) { return x.tape().constant(x.value()); }

namespace {

enum class Binary { add, sub, mul };

Var binary(Var a, Var b, Binary kind, const char* name) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), name, dims(av) + " vs " + dims(bv));
  Tensor out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) {
    switch (kind) {
      case Binary::add: out[i] = av[i] + bv[i]; break;
      case Binary::sub: out[i] = av[i] - bv[i]; break;
      case Binary::mul: out[i] = av[i] * bv[i]; break;
    }
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), any_grad({a, b}), [ai, bi, kind](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.find_grad(self);
    if (tape.requires_grad(ai)) {
      Tensor& ga = tape.grad_buffer(ai);
      const Tensor& bv = tape.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += kind == Binary::mul ? g[i] * bv[i] : g[i];
    }
    if (tape.requires_grad(bi)) {
      Tensor& gb = tape.grad_buffer(bi);
      const Tensor& av = tape.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) {
        switch (kind) {
          case Binary::add: gb[i] += g[i]; break;
          case Binary::sub: gb[i] -= g[i]; break;
          case Binary::mul: gb[i] += g[i] * av[i]; break;
        }
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, Binary::add, "add"); }
Var sub(Var a, Var b) { return binary(a, b, Binary::sub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, Binary::mul, "mul"); }

Var mul_rows(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == 1 && av.rows() == bv.rows(), "mul_rows", dims(av) + " vs " + dims(bv));
  Tensor out(bv.rows(), bv.cols());
  for (std::size_t r = 0; r < bv.rows(); ++r)
    for (std::size_t c = 0; c < bv.cols(); ++c) out(r, c) = av[r] * bv(r, c);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), any_grad({a, b}), [ai, bi](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.find_grad(self);
    const Tensor& av = tape.value(ai);
    const Tensor& bv = tape.value(bi);
    if (tape.requires_grad(ai)) {
      Tensor& ga = tape.grad_buffer(ai);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) acc += g(r, c) * bv(r, c);
        ga[r] += acc;
      }
    }
    if (tape.requires_grad(bi)) {
      Tensor& gb = tape.grad_buffer(bi);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(r, c) += g(r, c) * av[r];
    }
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  const std::size_t xi = x.id();
  return x.tape().push(Tensor::scalar(acc), x.requires_grad(), [xi](Tape& tape, std::size_t self) {
    const double g = (*tape.find_grad(self))[0];
    Tensor& gx = tape.grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  require(n > 0, "mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var mse(Var a, Var b) { return mean(square(sub(a, b))); }

Var concat_cols(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rows() == bv.rows(), "concat_cols", dims(av) + " vs " + dims(bv));
  const std::size_t ca = av.cols(), cb = bv.cols();
  Tensor out(av.rows(), ca + cb);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy_n(av.row(r).data(), ca, out.row(r).data());
    std::copy_n(bv.row(r).data(), cb, out.row(r).data() + ca);
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), any_grad({a, b}), [ai, bi, ca, cb](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.find_grad(self);
    if (tape.requires_grad(ai)) {
      Tensor& ga = tape.grad_buffer(ai);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < ca; ++c) ga(r, c) += g(r, c);
    }
    if (tape.requires_grad(bi)) {
      Tensor& gb = tape.grad_buffer(bi);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < cb; ++c) gb(r, c) += g(r, ca + c);
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  require(begin <= end && end <= xv.cols(), "slice_cols", "range out of bounds for " + dims(xv));
  Tensor out(xv.rows(), end - begin);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = xv(r, c);
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [xi, begin, end](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.find_grad(self);
    Tensor& gx = tape.grad_buffer(xi);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = begin; c < end; ++c) gx(r, c) += g(r, c - begin);
  });
}

Var gather_rows(Var x, std::span<const std::size_t> index) {
  const Tensor& xv = x.value();
  Tensor out(index.size(), xv.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= xv.rows())
      throw std::out_of_range("gather_rows: index " + std::to_string(index[r]) + " >= " + std::to_string(xv.rows()));
    std::copy_n(xv.row(index[r]).data(), xv.cols(), out.row(r).data());
  }
  const std::size_t xi = x.id();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.tape().push(std::move(out), x.requires_grad(), [xi, idx = std::move(idx)](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.find_grad(self);
    Tensor& gx = tape.grad_buffer(xi);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(idx[r], c) += g(r, c);
  });
}

Var segment_sum(Var x, std::span<const std::size_t> offsets) {
  const Tensor& xv = x.value();
  require(!offsets.empty() && offsets.back() == xv.rows(), "segment_sum", "offsets do not cover " + dims(xv));
  const std::size_t segments = offsets.size() - 1;
  Tensor out(segments, xv.cols());
  for (std::size_t s = 0; s < segments; ++s)
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) out(s, c) += xv(r, c);
  const std::size_t xi = x.id();
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  return x.tape().push(std::move(out), x.requires_grad(), [xi, off = std::move(off)](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.find_grad(self);
    Tensor& gx = tape.grad_buffer(xi);
    for (std::size_t s = 0; s + 1 < off.size(); ++s)
      for (std::size_t r = off[s]; r < off[s + 1]; ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += g(s, c);
  });
}

Var group_mean(Var x, std::size_t group) {
  const Tensor& xv = x.value();
  require(group > 0 && xv.rows() % group == 0, "group_mean", "rows " + dims(xv) + " not divisible by group");
  const double inv = 1.0 / static_cast<double>(group);
  Tensor out(xv.rows() / group, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r / group, c) += xv(r, c);
  for (double& v : out.values()) v *= inv;
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [xi, group, inv](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.find_grad(self);
    Tensor& gx = tape.grad_buffer(xi);
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g(r / group, c) * inv;
  });
}

Var replace_rows(Var x, const Tensor& fill, std::span<const char> mask) {
  const Tensor& xv = x.value();
  require(fill.same_shape(xv) && mask.size() == xv.rows(), "replace_rows", "shape mismatch for " + dims(xv));
  Tensor out = xv;
  for (std::size_t r = 0; r < xv.rows(); ++r)
    if (mask[r])
      for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = fill(r, c);
  const std::size_t xi = x.id();
  std::vector<char> m(mask.begin(), mask.end());
  return x.tape().push(std::move(out), x.requires_grad(), [xi, m = std::move(m)](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.find_grad(self);
    Tensor& gx = tape.grad_buffer(xi);
    for (std::size_t r = 0; r < g.rows(); ++r)
      if (!m[r])
        for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += g(r, c);
  });
}

Var normalize_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out = xv;
  std::vector<double> norms(xv.rows(), 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v * v;
    norms[r] = std::sqrt(s);
    if (norms[r] > 0.0)
      for (double& v : out.row(r)) v /= norms[r];
  }
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [xi, norms = std::move(norms)](Tape& tape, std::size_t self) {
    // d(x/|x|) applied to g: (g - y (y . g)) / |x|
    const Tensor& g = *tape.find_grad(self);
    const Tensor& y = tape.value(self);
    Tensor& gx = tape.grad_buffer(xi);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      if (norms[r] == 0.0) continue;
      double yg = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) yg += y(r, c) * g(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += (g(r, c) - y(r, c) * yg) / norms[r];
    }
  });
}

// ---- positional encoding -----------------------------------------------------

std::vector<double> positional_encoding(std::span<const double, 3> p, int degree) {
  if (degree < 0) throw ConfigError("positional_encoding: negative degree");
  std::vector<double> out(encoded_size(degree));
  for (int c = 0; c < 3; ++c) out[c] = p[c];
  double freq = std::numbers::pi;
  for (int l = 0; l < degree; ++l, freq *= 2.0) {
    for (int c = 0; c < 3; ++c) {
      out[3 + 6 * l + c] = std::sin(freq * p[c]);
      out[3 + 6 * l + 3 + c] = std::cos(freq * p[c]);
    }
  }
  return out;
}

Var positional_encoding(Var p, int degree) {
  const Tensor& pv = p.value();
  require(pv.cols() == 3, "positional_encoding", "expected Nx3, got " + dims(pv));
  if (degree < 0) throw ConfigError("positional_encoding: negative degree");
  Tensor out(pv.rows(), encoded_size(degree));
  for (std::size_t r = 0; r < pv.rows(); ++r) {
    const auto enc = positional_encoding(std::span<const double, 3>(pv.row(r).data(), 3), degree);
    std::copy(enc.begin(), enc.end(), out.row(r).data());
  }
  const std::size_t pi = p.id();
  return p.tape().push(std::move(out), p.requires_grad(), [pi, degree](Tape& tape, std::size_t self) {
    const Tensor& g = *tape.find_grad(self);
    const Tensor& y = tape.value(self);
    Tensor& gp = tape.grad_buffer(pi);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double freq = std::numbers::pi;
      for (int c = 0; c < 3; ++c) gp(r, c) += g(r, c);
      for (int l = 0; l < degree; ++l, freq *= 2.0) {
        for (int c = 0; c < 3; ++c) {
          const std::size_t s = 3 + 6 * l + c, k = s + 3;
          // d sin(f x) = f cos(f x); d cos(f x) = -f sin(f x)
          gp(r, c) += freq * (g(r, s) * y(r, k) - g(r, k) * y(r, s));
        }
      }
    }
  });
}

}  // namespace meshfield::ad
