#pragma once

// Reverse-mode automatic differentiation over a scalar tape.
//
// Every arithmetic operation on a tracked Var appends one node holding the
// indices of its (at most two) operands and the local partial derivatives.
// Constants (index < 0) never reach the tape. The backward sweep walks the
// nodes in reverse and accumulates adjoints.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace toon3d::ad {

struct Node {
  std::int32_t lhs;
  std::int32_t rhs;
  double dlhs;
  double drhs;
};

class Tape {
 public:
  static Tape& active() {
    thread_local Tape tape;
    return tape;
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  std::int32_t push(std::int32_t lhs, double dlhs, std::int32_t rhs, double drhs) {
    nodes_.push_back(Node{lhs, rhs, dlhs, drhs});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  // Adjoints of nodes [0, n_inputs) after seeding `output` with 1.
  void backward(std::int32_t output, std::span<double> input_grads) {
    for (double& g : input_grads) g = 0.0;
    if (output < 0) return;
    adjoint_.assign(nodes_.size(), 0.0);
    adjoint_[static_cast<std::size_t>(output)] = 1.0;
    for (std::int32_t k = output; k >= 0; --k) {
      const double a = adjoint_[static_cast<std::size_t>(k)];
      if (a == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(k)];
      if (n.lhs >= 0) adjoint_[static_cast<std::size_t>(n.lhs)] += a * n.dlhs;
      if (n.rhs >= 0) adjoint_[static_cast<std::size_t>(n.rhs)] += a * n.drhs;
    }
    const std::size_t n_in = std::min(input_grads.size(), adjoint_.size());
    for (std::size_t k = 0; k < n_in; ++k) input_grads[k] = adjoint_[k];
  }

 private:
  std::vector<Node> nodes_;
  std::vector<double> adjoint_;
};

class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT: implicit constants are the point

  static Var input(double v) {
    Var out(v);
    out.index_ = Tape::active().push(-1, 0.0, -1, 0.0);
    return out;
  }

  double value() const { return value_; }
  std::int32_t index() const { return index_; }
  bool tracked() const { return index_ >= 0; }

  friend Var operator+(const Var& a, const Var& b) { return binary(a.value_ + b.value_, a, 1.0, b, 1.0); }
  friend Var operator-(const Var& a, const Var& b) { return binary(a.value_ - b.value_, a, 1.0, b, -1.0); }
  friend Var operator*(const Var& a, const Var& b) { return binary(a.value_ * b.value_, a, b.value_, b, a.value_); }
  friend Var operator/(const Var& a, const Var& b) {
    const double inv = 1.0 / b.value_;
    const double q = a.value_ * inv;
    return binary(q, a, inv, b, -q * inv);
  }
  friend Var operator-(const Var& a) { return unary(-a.value_, a, -1.0); }

  Var& operator+=(const Var& o) { return *this = *this + o; }
  Var& operator-=(const Var& o) { return *this = *this - o; }
  Var& operator*=(const Var& o) { return *this = *this * o; }
  Var& operator/=(const Var& o) { return *this = *this / o; }

  friend bool operator<(const Var& a, const Var& b) { return a.value_ < b.value_; }
  friend bool operator>(const Var& a, const Var& b) { return a.value_ > b.value_; }
  friend bool operator<=(const Var& a, const Var& b) { return a.value_ <= b.value_; }
  friend bool operator>=(const Var& a, const Var& b) { return a.value_ >= b.value_; }

  friend Var sqrt(const Var& a) {
    const double r = std::sqrt(a.value_);
    return unary(r, a, r > 0.0 ? 0.5 / r : 0.0);
  }
  // d|x|/dx taken as 0 at x = 0.
  friend Var abs(const Var& a) {
    const double d = a.value_ > 0.0 ? 1.0 : (a.value_ < 0.0 ? -1.0 : 0.0);
    return unary(std::abs(a.value_), a, d);
  }

  static Var unary(double v, const Var& a, double da) {
    Var out(v);
    if (a.tracked()) out.index_ = Tape::active().push(a.index_, da, -1, 0.0);
    return out;
  }
  static Var binary(double v, const Var& a, double da, const Var& b, double db) {
    Var out(v);
    if (a.tracked() || b.tracked()) {
      out.index_ = Tape::active().push(a.tracked() ? a.index_ : -1, da, b.tracked() ? b.index_ : -1, db);
    }
    return out;
  }

 private:
  double value_ = 0.0;
  std::int32_t index_ = -1;
};

inline double value_of(double x) { return x; }
inline long double value_of(long double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

// Scalar helpers usable for double, long double and Var.
template <class T>
T sqrt_of(const T& x) {
  using std::sqrt;
  return sqrt(x);
}
template <class T>
T abs_of(const T& x) {
  using std::abs;
  return abs(x);
}
template <class T>
T max0(const T& x) {
  return x > T(0) ? x : T(0);
}
template <class T>
T min0(const T& x) {
  return x < T(0) ? x : T(0);
}

// Gradient of `f` (a callable taking std::span<const Var>) at `x`.
template <class F>
double value_and_gradient(F&& f, std::span<const double> x, std::span<double> grad) {
  if (grad.size() != x.size()) throw std::invalid_argument("gradient buffer size mismatch");
  Tape& tape = Tape::active();
  tape.clear();
  std::vector<Var> vars;
  vars.reserve(x.size());
  for (double v : x) vars.push_back(Var::input(v));
  const Var out = f(std::span<const Var>(vars));
  tape.backward(out.index(), grad);
  tape.clear();
  return out.value();
}

}  // namespace toon3d::ad
