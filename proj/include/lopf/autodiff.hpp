#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lopf/linalg.hpp"

namespace lopf::ad {

class Tape;

// Handle to a complex scalar recorded on a Tape. A default-constructed Var is
// an untracked zero.
class Var {
 public:
  Var() = default;

  Complex value() const;
  double real_value() const { return value().real(); }
  bool is_real() const;
  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::int32_t index() const { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::int32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::int32_t index_ = -1;
};

struct BackwardResult {
  bool reachable = true;
  std::string diagnostic;
};

// Append-only record of complex scalar operations with a reverse sweep.
//
// Adjoints use the packed convention  adj(z) = dL/dRe(z) + i dL/dIm(z), so a
// real loss L has gradient (adj.real(), adj.imag()) with respect to every
// recorded input. Every elementwise node is stored as a list of R-linear
// edges  dw = alpha dz + beta conj(dz);  the reverse rule for such an edge is
// adj(z) += conj(alpha) adj(w) + beta conj(adj(w)).
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var record(Complex value);
  Var record_real(double value);
  // A node that never receives gradient of its own (e.g. a fixed datum).
  Var constant(Complex value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var affine(Var a, Complex scale, Complex shift);  // scale * a + shift
  Var rdiv(Complex numerator, Var a);               // numerator / a
  Var conj(Var a);
  Var abs(Var a);
  Var real(Var a);
  Var imag(Var a);
  Var log(Var a);
  Var relu(Var a);  // real input
  Var square_abs(Var a);

  // sum_k coeffs[k] * xs[k]
  Var combine(const std::vector<Complex>& coeffs, const std::vector<Var>& xs);
  Var sum(const std::vector<Var>& xs);
  // sum_k xs[k] * ys[k]
  Var dot(const std::vector<Var>& xs, const std::vector<Var>& ys);

  // x = A^{-1} b with A held constant. `lu` factorizes A.
  std::vector<Var> solve(std::shared_ptr<const LuFactor> lu, const std::vector<Var>& b);
  // x = A^{-1} b with A (row-major, n*n entries) tracked. `lu` must factorize
  // the current values of `a`.
  std::vector<Var> solve(std::shared_ptr<const LuFactor> lu, const std::vector<Var>& a, const std::vector<Var>& b);
  // Same, factorizing the values of `a` itself.
  std::vector<Var> solve(const std::vector<Var>& a, const std::vector<Var>& b, double rcond_min = 1e-13);

  // Reverse sweep from `output`, which must be real. Marks the tape finished;
  // backward may be called again for other outputs of the same tape.
  BackwardResult backward(Var output);
  // Gradient of the last backward output with respect to `v`.
  Complex grad(Var v) const;

  void finish() { finished_ = true; }
  bool finished() const { return finished_; }
  void clear();

  std::size_t size() const { return value_.size(); }
  Complex value(std::int32_t index) const { return value_[static_cast<std::size_t>(index)]; }
  bool is_real(std::int32_t index) const { return real_[static_cast<std::size_t>(index)] != 0; }

 private:
  struct Edge {
    std::int32_t parent;
    Complex alpha;
    Complex beta;
  };
  struct SolveRecord;

  void check_open() const;
  void check_operand(Var v) const;
  Var push(Complex value, bool real);
  void edge(std::int32_t parent, Complex alpha, Complex beta = {});
  Var unary(Var a, Complex value, bool real, Complex alpha, Complex beta);
  std::vector<Var> solve_impl(std::shared_ptr<const LuFactor> lu, const std::vector<Var>* a, const std::vector<Var>& b);

  std::vector<Complex> value_;
  std::vector<std::uint8_t> real_;
  std::vector<std::uint8_t> input_;
  std::vector<std::uint32_t> edge_begin_;
  std::vector<Edge> edges_;
  std::vector<std::int32_t> solve_at_;
  std::vector<SolveRecord> solves_;
  std::vector<Complex> adjoint_;
  bool finished_ = false;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, Complex c);
Var operator+(Complex c, Var a);
Var operator-(Var a, Complex c);
Var operator-(Complex c, Var a);
Var operator*(Var a, Complex c);
Var operator*(Complex c, Var a);
Var operator/(Var a, Complex c);
Var operator/(Complex c, Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var operator/(double c, Var a);
Var& operator+=(Var& a, Var b);

Var conj(Var a);
Var abs(Var a);
Var real(Var a);
Var imag(Var a);
Var log(Var a);
Var relu(Var a);
Var norm(Var a);  // |a|^2
// Element with the largest real value (first on ties); no node is recorded.
Var max_element(const std::vector<Var>& xs);

}  // namespace lopf::ad
