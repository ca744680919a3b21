#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstring>
#include <random>

#include "lopf/autodiff.hpp"
#include "lopf/error.hpp"
#include "lopf/pf_oracle.hpp"

using namespace lopf;
using lopf::ad::Tape;
using lopf::ad::Var;

namespace {

double rel_error(const std::vector<double>& got, const std::vector<double>& want) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t k = 0; k < got.size(); ++k) {
    diff = std::max(diff, std::abs(got[k] - want[k]));
    scale = std::max(scale, std::abs(want[k]));
  }
  return diff / std::max(scale, 1.0);
}

// Builds a real output from complex inputs packed as (re, im) pairs.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

std::vector<double> tape_gradient(const Builder& build, const std::vector<double>& x, bool real_inputs) {
  Tape tape;
  std::vector<Var> in;
  const std::size_t n = real_inputs ? x.size() : x.size() / 2;
  for (std::size_t k = 0; k < n; ++k) {
    in.push_back(real_inputs ? tape.record_real(x[k]) : tape.record(Complex(x[2 * k], x[2 * k + 1])));
  }
  Var out = build(tape, in);
  tape.backward(out);
  std::vector<double> g;
  for (const Var& v : in) {
    g.push_back(tape.grad(v).real());
    if (!real_inputs) g.push_back(tape.grad(v).imag());
  }
  return g;
}

double plain_value(const Builder& build, const std::vector<double>& x, bool real_inputs) {
  Tape tape;
  std::vector<Var> in;
  const std::size_t n = real_inputs ? x.size() : x.size() / 2;
  for (std::size_t k = 0; k < n; ++k) {
    in.push_back(real_inputs ? tape.record_real(x[k]) : tape.record(Complex(x[2 * k], x[2 * k + 1])));
  }
  return build(tape, in).real_value();
}

double worst_primitive_error(const Builder& build, std::size_t inputs, bool real_inputs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(real_inputs ? inputs : 2 * inputs);
    for (double& xi : x) xi = u(rng);
    const auto fd = oracle::finite_diff([&](const std::vector<double>& p) { return plain_value(build, p, real_inputs); },
                                        x, 1e-6);
    worst = std::max(worst, rel_error(tape_gradient(build, x, real_inputs), fd));
  }
  return worst;
}

}  // namespace

TEST_CASE("record returns the recorded value and independent nodes") {
  Tape tape;
  Var a = tape.record({1.0, 2.0});
  Var b = tape.record({1.0, 2.0});
  CHECK(a.value() == Complex(1.0, 2.0));
  Var out = ad::real(a * 3.0 + b);
  tape.backward(out);
  CHECK(tape.grad(a) == Complex(3.0, 0.0));
  CHECK(tape.grad(b) == Complex(1.0, 0.0));
}

TEST_CASE("recording on a finished tape is a usage error") {
  Tape tape;
  Var a = tape.record_real(1.0);
  tape.backward(a * 2.0);
  CHECK_THROWS_AS(tape.record(1.0), UsageError);
  CHECK_THROWS_AS(a * 2.0, UsageError);
  tape.clear();
  CHECK_NOTHROW(tape.record(1.0));
}

TEST_CASE("contract and reachability") {
  Tape tape;
  Var a = tape.record({1.0, 1.0});
  CHECK_THROWS_AS(tape.backward(a * 2.0), ContractError);

  Tape other;
  Var c = other.constant(2.0);
  const auto res = other.backward(c * 3.0);
  CHECK_FALSE(res.reachable);
  CHECK_FALSE(res.diagnostic.empty());

  Tape third;
  const auto untracked = third.backward(Var{});
  CHECK_FALSE(untracked.reachable);
}

TEST_CASE("x conj(x) and Re(conj(x))") {
  Tape tape;
  Var x = tape.record({3.0, 4.0});
  tape.backward(ad::real(x * ad::conj(x)));
  CHECK(tape.grad(x).real() == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(tape.grad(x).imag() == doctest::Approx(8.0).epsilon(1e-15));

  Tape t2;
  Var y = t2.record({1.0, 1.0});
  Var re = ad::real(ad::conj(y));
  Var im = ad::imag(ad::conj(y));
  t2.backward(re);
  CHECK(t2.grad(y) == Complex(1.0, 0.0));
  t2.backward(im);
  CHECK(t2.grad(y) == Complex(0.0, -1.0));
}

TEST_CASE("every primitive matches central differences") {
  struct Case {
    const char* name;
    std::size_t inputs;
    bool real;
    Builder build;
  };
  const Complex k(0.7, -1.3);
  const std::vector<Case> cases = {
      {"add", 2, false, [](Tape&, const std::vector<Var>& v) { return ad::real(v[0] + v[1]) + ad::imag(v[0] + v[1]) * 0.5; }},
      {"sub", 2, false, [](Tape&, const std::vector<Var>& v) { return ad::real(v[0] - v[1]) - ad::imag(v[0] - v[1]) * 2.0; }},
      {"mul", 2, false, [](Tape&, const std::vector<Var>& v) { return ad::real(v[0] * v[1]) + ad::imag(v[0] * v[1]); }},
      {"div", 2, false,
       [](Tape&, const std::vector<Var>& v) { return ad::real(v[0] / (v[1] + 3.0)) + ad::imag(v[0] / (v[1] + 3.0)); }},
      {"conj", 1, false, [k](Tape&, const std::vector<Var>& v) { return ad::real(ad::conj(v[0]) * k); }},
      {"abs", 1, false, [](Tape&, const std::vector<Var>& v) { return ad::abs(v[0]); }},
      {"norm", 1, false, [](Tape&, const std::vector<Var>& v) { return ad::norm(v[0]); }},
      {"real", 1, false, [](Tape&, const std::vector<Var>& v) { return ad::real(v[0] * v[0]); }},
      {"imag", 1, false, [](Tape&, const std::vector<Var>& v) { return ad::imag(v[0] * v[0]); }},
      {"log", 1, false, [](Tape&, const std::vector<Var>& v) { return ad::real(ad::log(v[0] + 5.0)) + ad::imag(ad::log(v[0] + 5.0)); }},
      {"affine", 1, false, [k](Tape&, const std::vector<Var>& v) { return ad::imag(v[0] * k + k); }},
      {"rdiv", 1, false, [k](Tape&, const std::vector<Var>& v) { return ad::real(k / (v[0] - 4.0)); }},
      {"relu", 1, true, [](Tape&, const std::vector<Var>& v) { return ad::relu(v[0] * 3.0 + 0.1); }},
      {"combine", 3, false,
       [k](Tape& t, const std::vector<Var>& v) { return ad::real(t.combine({k, 2.0, Complex(0, 1)}, v)); }},
      {"sum", 3, false, [](Tape& t, const std::vector<Var>& v) { return ad::abs(t.sum(v)); }},
      {"dot", 4, false,
       [](Tape& t, const std::vector<Var>& v) { return ad::imag(t.dot({v[0], v[1]}, {v[2], ad::conj(v[3])})); }},
  };
  std::uint64_t seed = 11;
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(worst_primitive_error(c.build, c.inputs, c.real, seed++) < 1e-6);
  }
}

TEST_CASE("identity and scaled solves") {
  Tape tape;
  std::vector<Var> b = {tape.record({4.0, 0.0}), tape.record({6.0, 0.0})};
  const auto eye = factorize(ComplexMatrix::Identity(2, 2), "I");
  const auto x = tape.solve(eye, b);
  CHECK(x[0].value() == Complex(4.0, 0.0));
  CHECK(x[1].value() == Complex(6.0, 0.0));
  tape.backward(ad::real(x[0]) + ad::imag(x[1]) * 3.0);
  CHECK(tape.grad(b[0]) == Complex(1.0, 0.0));
  CHECK(tape.grad(b[1]) == Complex(0.0, 3.0));

  Tape t2;
  std::vector<Var> b2 = {t2.record({4.0, 0.0}), t2.record({6.0, 0.0})};
  const auto two = factorize(2.0 * ComplexMatrix::Identity(2, 2), "2I");
  const auto y = t2.solve(two, b2);
  CHECK(std::abs(y[0].value() - 2.0) < 1e-15);
  CHECK(std::abs(y[1].value() - 3.0) < 1e-15);
  t2.backward(ad::real(y[0]) + ad::real(y[1]) * 4.0);
  CHECK(std::abs(t2.grad(b2[0]) - 0.5) < 1e-15);
  CHECK(std::abs(t2.grad(b2[1]) - 2.0) < 1e-15);
}

TEST_CASE("singular solve reports the condition estimate") {
  Tape tape;
  std::vector<Var> a = {tape.record(1.0), tape.record(2.0), tape.record(2.0), tape.record(4.0)};
  std::vector<Var> b = {tape.record(1.0), tape.record(1.0)};
  try {
    tape.solve(a, b);
    FAIL("expected a singular-system error");
  } catch (const SingularSystemError& e) {
    CHECK(e.rcond() < 1e-13);
  }
}

TEST_CASE("solve with a random 3x3 real matrix against finite differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ComplexMatrix a(3, 3);
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) a(i, j) = u(rng) + (i == j ? 2.0 : 0.0);
  }
  const auto lu = factorize(a, "A");
  const Builder build = [&](Tape& t, const std::vector<Var>& b) { return ad::real(t.solve(lu, b)[0]); };
  std::vector<double> x(6);
  for (double& xi : x) xi = u(rng);
  const auto fd = oracle::finite_diff([&](const std::vector<double>& p) { return plain_value(build, p, false); }, x, 1e-6);
  CHECK(rel_error(tape_gradient(build, x, false), fd) < 1e-7);
}

TEST_CASE("tracked 4x4 Toeplitz system against finite differences") {
  // Entries of both the matrix and the right-hand side come from one series.
  const Builder build = [](Tape& t, const std::vector<Var>& c) {
    std::vector<Var> m;
    for (int j = 1; j <= 4; ++j) {
      for (int k = 1; k <= 4; ++k) m.push_back(c[static_cast<std::size_t>(4 + j - k)]);
    }
    std::vector<Var> rhs;
    for (int j = 1; j <= 4; ++j) rhs.push_back(-c[static_cast<std::size_t>(4 + j)]);
    const auto x = t.solve(m, rhs);
    return ad::real(t.sum(x)) + ad::imag(x[2]);
  };
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(18);
  for (double& xi : x) xi = u(rng);
  const auto fd = oracle::finite_diff([&](const std::vector<double>& p) { return plain_value(build, p, false); }, x, 1e-6);
  CHECK(rel_error(tape_gradient(build, x, false), fd) < 1e-6);
}

TEST_CASE("gradients are linear in the output") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Var x = tape.record({u(rng), u(rng)});
    Var y = tape.record({u(rng), u(rng)});
    Var f = ad::abs(x * y + ad::conj(x));
    Var g = ad::real(x / (y + 5.0));
    const double alpha = u(rng);
    const double beta = u(rng);
    Var h = f * alpha + g * beta;
    tape.backward(f);
    const Complex fx = tape.grad(x), fy = tape.grad(y);
    tape.backward(g);
    const Complex gx = tape.grad(x), gy = tape.grad(y);
    tape.backward(h);
    CHECK(std::abs(tape.grad(x) - (alpha * fx + beta * gx)) < 1e-14);
    CHECK(std::abs(tape.grad(y) - (alpha * fy + beta * gy)) < 1e-14);
  }
}

TEST_CASE("replay is bitwise deterministic") {
  auto run = [] {
    Tape tape;
    std::vector<Var> in;
    for (int k = 0; k < 5; ++k) in.push_back(tape.record({0.1 * k, 1.0 - 0.3 * k}));
    std::vector<Var> m;
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) m.push_back(i == j ? in[static_cast<std::size_t>(i)] + 4.0 : in[static_cast<std::size_t>((i + j) % 5)]);
    }
    const auto x = tape.solve(m, in);
    tape.backward(ad::abs(tape.sum(x)) + ad::norm(x[1]));
    std::vector<Complex> g;
    for (const Var& v : in) g.push_back(tape.grad(v));
    return g;
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(std::memcmp(&a[k], &b[k], sizeof(Complex)) == 0);
  }
}
