#include "lopf/autodiff.hpp"

#include <cmath>

#include "lopf/error.hpp"

namespace lopf::ad {

struct Tape::SolveRecord {
  std::shared_ptr<const LuFactor> lu;
  std::vector<std::int32_t> b;
  std::vector<std::int32_t> a;  // empty when A is constant
  std::int32_t first_output = 0;
};

Complex Var::value() const { return tape_ == nullptr ? Complex{} : tape_->value(index_); }

bool Var::is_real() const { return tape_ == nullptr || tape_->is_real(index_); }

Tape::Tape() { edge_begin_.push_back(0); }
Tape::~Tape() = default;

void Tape::clear() {
  value_.clear();
  real_.clear();
  input_.clear();
  edge_begin_.assign(1, 0);
  edges_.clear();
  solve_at_.clear();
  solves_.clear();
  adjoint_.clear();
  finished_ = false;
}

void Tape::check_open() const {
  if (finished_) throw UsageError("recording on a finished tape");
}

void Tape::check_operand(Var v) const {
  if (v.tape_ != this) {
    throw UsageError(v.tape_ == nullptr ? "untracked operand" : "operand belongs to a different tape");
  }
}

Var Tape::push(Complex value, bool real) {
  check_open();
  const auto index = static_cast<std::int32_t>(value_.size());
  value_.push_back(real ? Complex(value.real(), 0.0) : value);
  real_.push_back(real ? 1 : 0);
  input_.push_back(0);
  solve_at_.push_back(-1);
  edge_begin_.push_back(edge_begin_.back());
  return Var(this, index);
}

void Tape::edge(std::int32_t parent, Complex alpha, Complex beta) {
  edges_.push_back({parent, alpha, beta});
  ++edge_begin_.back();
}

Var Tape::record(Complex value) {
  Var v = push(value, false);
  input_.back() = 1;
  return v;
}

Var Tape::record_real(double value) {
  Var v = push(value, true);
  input_.back() = 1;
  return v;
}

Var Tape::constant(Complex value) { return push(value, value.imag() == 0.0); }

Var Tape::unary(Var a, Complex value, bool real, Complex alpha, Complex beta) {
  check_operand(a);
  Var w = push(value, real);
  edge(a.index_, alpha, beta);
  return w;
}

Var Tape::add(Var a, Var b) {
  check_operand(a);
  check_operand(b);
  Var w = push(a.value() + b.value(), a.is_real() && b.is_real());
  edge(a.index_, 1.0);
  edge(b.index_, 1.0);
  return w;
}

Var Tape::sub(Var a, Var b) {
  check_operand(a);
  check_operand(b);
  Var w = push(a.value() - b.value(), a.is_real() && b.is_real());
  edge(a.index_, 1.0);
  edge(b.index_, -1.0);
  return w;
}

Var Tape::mul(Var a, Var b) {
  check_operand(a);
  check_operand(b);
  const Complex x = a.value();
  const Complex y = b.value();
  Var w = push(x * y, a.is_real() && b.is_real());
  edge(a.index_, y);
  edge(b.index_, x);
  return w;
}

Var Tape::div(Var a, Var b) {
  check_operand(a);
  check_operand(b);
  const Complex x = a.value();
  const Complex y = b.value();
  const Complex q = x / y;
  Var w = push(q, a.is_real() && b.is_real());
  edge(a.index_, 1.0 / y);
  edge(b.index_, -q / y);
  return w;
}

Var Tape::affine(Var a, Complex scale, Complex shift) {
  return unary(a, scale * a.value() + shift, a.is_real() && scale.imag() == 0.0 && shift.imag() == 0.0, scale, {});
}

Var Tape::rdiv(Complex numerator, Var a) {
  const Complex y = a.value();
  const Complex q = numerator / y;
  return unary(a, q, a.is_real() && numerator.imag() == 0.0, -q / y, {});
}

Var Tape::conj(Var a) { return unary(a, std::conj(a.value()), a.is_real(), {}, 1.0); }

Var Tape::abs(Var a) {
  const Complex z = a.value();
  const double r = std::abs(z);
  // Subgradient 0 at the origin.
  const Complex u = r > 0.0 ? z / r : Complex{};
  return unary(a, r, true, std::conj(u) / 2.0, u / 2.0);
}

Var Tape::square_abs(Var a) {
  const Complex z = a.value();
  return unary(a, std::norm(z), true, std::conj(z), z);
}

Var Tape::real(Var a) { return unary(a, a.value().real(), true, 0.5, 0.5); }

Var Tape::imag(Var a) { return unary(a, a.value().imag(), true, Complex(0.0, -0.5), Complex(0.0, 0.5)); }

Var Tape::log(Var a) {
  const Complex z = a.value();
  const bool real = a.is_real() && z.real() > 0.0;
  return unary(a, std::log(z), real, 1.0 / z, {});
}

Var Tape::relu(Var a) {
  const double x = a.value().real();
  return unary(a, x > 0.0 ? x : 0.0, true, x > 0.0 ? 0.5 : 0.0, x > 0.0 ? 0.5 : 0.0);
}

Var Tape::combine(const std::vector<Complex>& coeffs, const std::vector<Var>& xs) {
  if (coeffs.size() != xs.size()) throw DimensionError("combine: coefficient and operand counts differ");
  Complex total{};
  bool real = true;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    check_operand(xs[k]);
    total += coeffs[k] * xs[k].value();
    real = real && xs[k].is_real() && coeffs[k].imag() == 0.0;
  }
  Var w = push(total, real);
  for (std::size_t k = 0; k < xs.size(); ++k) edge(xs[k].index_, coeffs[k]);
  return w;
}

Var Tape::sum(const std::vector<Var>& xs) {
  Complex total{};
  bool real = true;
  for (const Var& x : xs) {
    check_operand(x);
    total += x.value();
    real = real && x.is_real();
  }
  Var w = push(total, real);
  for (const Var& x : xs) edge(x.index_, 1.0);
  return w;
}

Var Tape::dot(const std::vector<Var>& xs, const std::vector<Var>& ys) {
  if (xs.size() != ys.size()) throw DimensionError("dot: operand lengths differ");
  Complex total{};
  bool real = true;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    check_operand(xs[k]);
    check_operand(ys[k]);
    total += xs[k].value() * ys[k].value();
    real = real && xs[k].is_real() && ys[k].is_real();
  }
  Var w = push(total, real);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    edge(xs[k].index_, ys[k].value());
    edge(ys[k].index_, xs[k].value());
  }
  return w;
}

std::vector<Var> Tape::solve_impl(std::shared_ptr<const LuFactor> lu, const std::vector<Var>* a,
                                  const std::vector<Var>& b) {
  check_open();
  const auto n = static_cast<std::size_t>(lu->size());
  if (b.size() != n) throw DimensionError("solve: right-hand side length does not match the matrix");
  if (a != nullptr && a->size() != n * n) throw DimensionError("solve: tracked matrix has the wrong entry count");
  SolveRecord rec;
  rec.lu = std::move(lu);
  ComplexVector rhs(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    check_operand(b[i]);
    rec.b.push_back(b[i].index_);
    rhs(static_cast<Eigen::Index>(i)) = b[i].value();
  }
  if (a != nullptr) {
    for (const Var& v : *a) {
      check_operand(v);
      rec.a.push_back(v.index_);
    }
  }
  const ComplexVector x = rec.lu->lu.solve(rhs);
  std::vector<Var> out;
  out.reserve(n);
  rec.first_output = static_cast<std::int32_t>(value_.size());
  for (std::size_t i = 0; i < n; ++i) out.push_back(push(x(static_cast<Eigen::Index>(i)), false));
  if (n > 0) {
    solve_at_[static_cast<std::size_t>(rec.first_output)] = static_cast<std::int32_t>(solves_.size());
    solves_.push_back(std::move(rec));
  }
  return out;
}

std::vector<Var> Tape::solve(std::shared_ptr<const LuFactor> lu, const std::vector<Var>& b) {
  return solve_impl(std::move(lu), nullptr, b);
}

std::vector<Var> Tape::solve(std::shared_ptr<const LuFactor> lu, const std::vector<Var>& a,
                             const std::vector<Var>& b) {
  return solve_impl(std::move(lu), &a, b);
}

std::vector<Var> Tape::solve(const std::vector<Var>& a, const std::vector<Var>& b, double rcond_min) {
  const auto n = static_cast<Eigen::Index>(b.size());
  if (a.size() != b.size() * b.size()) throw DimensionError("solve: tracked matrix has the wrong entry count");
  ComplexMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = a[static_cast<std::size_t>(i * n + j)].value();
  }
  return solve_impl(factorize(m, "tracked linear system", rcond_min), &a, b);
}

BackwardResult Tape::backward(Var output) {
  BackwardResult result;
  finished_ = true;
  adjoint_.assign(value_.size(), Complex{});
  if (output.tape_ == nullptr) {
    result.reachable = false;
    result.diagnostic = "output is not recorded on any tape; all gradients are zero";
    return result;
  }
  check_operand(output);
  if (!output.is_real()) {
    throw ContractError("backward requires a real-valued output");
  }

  adjoint_[static_cast<std::size_t>(output.index_)] = 1.0;
  bool touched_input = false;
  for (std::int32_t i = output.index_; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(i);
    if (solve_at_[k] >= 0) {
      const SolveRecord& rec = solves_[static_cast<std::size_t>(solve_at_[k])];
      const auto n = static_cast<Eigen::Index>(rec.b.size());
      ComplexVector xbar(n);
      for (Eigen::Index r = 0; r < n; ++r) xbar(r) = adjoint_[k + static_cast<std::size_t>(r)];
      if (xbar.squaredNorm() != 0.0) {
        const ComplexVector bbar = rec.lu->lu.adjoint().solve(xbar);
        for (Eigen::Index r = 0; r < n; ++r) adjoint_[static_cast<std::size_t>(rec.b[static_cast<std::size_t>(r)])] += bbar(r);
        if (!rec.a.empty()) {
          for (Eigen::Index r = 0; r < n; ++r) {
            for (Eigen::Index c = 0; c < n; ++c) {
              const Complex x = value_[k + static_cast<std::size_t>(c)];
              adjoint_[static_cast<std::size_t>(rec.a[static_cast<std::size_t>(r * n + c)])] -= bbar(r) * std::conj(x);
            }
          }
        }
      }
    }
    Complex w = adjoint_[k];
    if (real_[k] != 0) w = Complex(w.real(), 0.0);
    adjoint_[k] = w;
    if (w == Complex{}) continue;
    if (input_[k] != 0) touched_input = true;
    const Complex wc = std::conj(w);
    for (std::uint32_t e = edge_begin_[k]; e < edge_begin_[k + 1]; ++e) {
      const Edge& ed = edges_[e];
      adjoint_[static_cast<std::size_t>(ed.parent)] += std::conj(ed.alpha) * w + ed.beta * wc;
    }
  }
  if (!touched_input) {
    result.reachable = false;
    result.diagnostic = "output does not depend on any recorded input; all gradients are zero";
  }
  return result;
}

Complex Tape::grad(Var v) const {
  if (v.tape_ != this) return {};
  const auto k = static_cast<std::size_t>(v.index_);
  return k < adjoint_.size() ? adjoint_[k] : Complex{};
}

// ---------------------------------------------------------------------------

namespace {

Tape& tape_of(Var a) {
  if (!a.tracked()) throw UsageError("untracked operand");
  return *a.tape();
}

}  // namespace

Var operator+(Var a, Var b) { return tape_of(a).add(a, b); }
Var operator-(Var a, Var b) { return tape_of(a).sub(a, b); }
Var operator*(Var a, Var b) { return tape_of(a).mul(a, b); }
Var operator/(Var a, Var b) { return tape_of(a).div(a, b); }
Var operator-(Var a) { return tape_of(a).affine(a, -1.0, 0.0); }
Var operator+(Var a, Complex c) { return tape_of(a).affine(a, 1.0, c); }
Var operator+(Complex c, Var a) { return tape_of(a).affine(a, 1.0, c); }
Var operator-(Var a, Complex c) { return tape_of(a).affine(a, 1.0, -c); }
Var operator-(Complex c, Var a) { return tape_of(a).affine(a, -1.0, c); }
Var operator*(Var a, Complex c) { return tape_of(a).affine(a, c, 0.0); }
Var operator*(Complex c, Var a) { return tape_of(a).affine(a, c, 0.0); }
Var operator/(Var a, Complex c) { return tape_of(a).affine(a, 1.0 / c, 0.0); }
Var operator/(Complex c, Var a) { return tape_of(a).rdiv(c, a); }
Var operator+(Var a, double c) { return a + Complex(c); }
Var operator+(double c, Var a) { return a + Complex(c); }
Var operator-(Var a, double c) { return a - Complex(c); }
Var operator-(double c, Var a) { return Complex(c) - a; }
Var operator*(Var a, double c) { return a * Complex(c); }
Var operator*(double c, Var a) { return a * Complex(c); }
Var operator/(Var a, double c) { return a / Complex(c); }
Var operator/(double c, Var a) { return Complex(c) / a; }

Var& operator+=(Var& a, Var b) {
  a = a + b;
  return a;
}

Var conj(Var a) { return tape_of(a).conj(a); }
Var abs(Var a) { return tape_of(a).abs(a); }
Var real(Var a) { return tape_of(a).real(a); }
Var imag(Var a) { return tape_of(a).imag(a); }
Var log(Var a) { return tape_of(a).log(a); }
Var relu(Var a) { return tape_of(a).relu(a); }
Var norm(Var a) { return tape_of(a).square_abs(a); }

Var max_element(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("max_element of an empty list");
  Var best = xs.front();
  for (const Var& x : xs) {
    if (x.real_value() > best.real_value()) best = x;
  }
  return best;
}

}  // namespace lopf::ad
