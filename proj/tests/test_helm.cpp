#include <doctest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>
#include <cmath>
#include <cstring>

#include "lopf/error.hpp"
#include "lopf/helm.hpp"
#include "lopf/pf_oracle.hpp"
#include "test_support.hpp"

using namespace lopf;
using lopf::helm::MismatchScope;

namespace {

using Real50 = boost::multiprecision::cpp_dec_float_50;

struct C50 {
  Real50 re, im;
};
C50 operator+(const C50& a, const C50& b) { return {a.re + b.re, a.im + b.im}; }
C50 operator*(const C50& a, const C50& b) { return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re}; }
C50 operator/(const C50& a, const C50& b) {
  const Real50 den = b.re * b.re + b.im * b.im;
  return {(a.re * b.re + a.im * b.im) / den, (a.im * b.re - a.re * b.im) / den};
}
C50 conj(const C50& a) { return {a.re, -a.im}; }
C50 neg(const C50& a) { return {-a.re, -a.im}; }

double max_cauchy_error(const helm::VoltageSeries& s) {
  double worst = 0.0;
  for (std::size_t i = 0; i < s.c.size(); ++i) {
    worst = std::max(worst, std::abs(s.c[i][0] * s.d[i][0] - 1.0));
    for (int n = 1; n <= s.n_max; ++n) {
      Complex acc{};
      for (int m = 0; m <= n; ++m) acc += s.c[i][static_cast<std::size_t>(n - m)] * s.d[i][static_cast<std::size_t>(m)];
      worst = std::max(worst, std::abs(acc));
    }
  }
  return worst;
}

double max_voltage_gap(const std::vector<Complex>& a, const std::vector<Complex>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("zero injection gives the no-flow germ") {
  auto b = test::base_case("case14.m");
  for (auto& bus : b.grid.buses) bus.shunt = {};
  for (auto& br : b.grid.branches) {
    br.b = 0.0;
    br.tap = 1.0;
    br.shift_deg = 0.0;
  }
  const auto adm = grid::build_admittance(b.grid);
  const auto s = helm::compute_coefficients(adm, 1.0, std::vector<Complex>(13), 20);
  for (std::size_t i = 0; i < s.c.size(); ++i) {
    CHECK(std::abs(s.c[i][0] - 1.0) < 1e-12);
    CHECK(std::abs(s.d[i][0] - 1.0) < 1e-12);
    for (int n = 1; n <= 20; ++n) CHECK(std::abs(s.c[i][static_cast<std::size_t>(n)]) < 1e-12);
  }
  CHECK(std::abs(helm::mean_coefficient(s, 0) - 1.0) < 1e-12);
  CHECK(std::abs(helm::mean_coefficient(s, 1)) < 1e-12);

  const std::vector<Complex> zero(14);
  const auto sol = helm::solve_powerflow(adm, zero, zero, 1.0);
  for (const auto& v : sol.v) CHECK(std::abs(v - 1.0) < 1e-14);
  CHECK(sol.epsilon < 1e-12);
}

TEST_CASE("two-bus coefficients against a 50-digit hand recursion") {
  grid::GridCase g;
  g.buses = {{1, grid::BusType::slack, {}, 0.9, 1.1, {}}, {2, grid::BusType::pq, {}, 0.9, 1.1, {}}};
  g.generators = {{1, 0.0, 2.0, -1.0, 1.0, {}, {}, 1.0}};
  // y = 1 - 5j  <=>  z = 1 / (1 - 5j) = (1 + 5j) / 26
  g.branches = {{1, 2, 1.0 / 26.0, 5.0 / 26.0, 0.0, 1.0, 0.0}};
  const auto adm = grid::build_admittance(g);
  const Complex s1(-0.1, -0.05);
  const auto s = helm::compute_coefficients(adm, 1.0, {s1}, 3);

  // Yr = y, y_s = -y, so c0 = 1 and c[n] = conj(S) conj(d[n-1]) / y.
  const C50 y{Real50(adm.y(1, 1).real()), Real50(adm.y(1, 1).imag())};
  const C50 ys{Real50(adm.y(1, 0).real()), Real50(adm.y(1, 0).imag())};
  const C50 sc = conj(C50{Real50(s1.real()), Real50(s1.imag())});
  std::vector<C50> c(4), d(4);
  c[0] = neg(ys) / y;
  d[0] = C50{1, 0} / c[0];
  for (int n = 1; n <= 3; ++n) {
    c[n] = sc * conj(d[n - 1]) / y;
    C50 acc{0, 0};
    for (int m = 0; m < n; ++m) acc = acc + c[n - m] * d[m];
    d[n] = neg(acc / c[0]);
  }
  for (int n = 0; n <= 3; ++n) {
    CAPTURE(n);
    CHECK(std::abs(s.c[1][n].real() - c[n].re.convert_to<double>()) < 1e-15);
    CHECK(std::abs(s.c[1][n].imag() - c[n].im.convert_to<double>()) < 1e-15);
    CHECK(std::abs(s.d[1][n].real() - d[n].re.convert_to<double>()) < 1e-15);
    CHECK(std::abs(s.d[1][n].imag() - d[n].im.convert_to<double>()) < 1e-15);
  }
}

TEST_CASE("series identities on the 14-bus base case") {
  const auto b = test::base_case("case14.m");
  const auto sol = helm::solve_powerflow(b.adm, b.demand, b.generation, b.v_s);
  CHECK(max_cauchy_error(sol.series) < 1e-10);
  for (std::size_t i = 0; i < sol.series.c.size(); ++i) {
    CHECK(std::abs(sol.series.c[i][0] * sol.series.d[i][0] - 1.0) < 1e-12);
  }
}

TEST_CASE("pade of simple series") {
  std::vector<Complex> geo;
  for (int n = 0; n < 3; ++n) geo.push_back(std::pow(0.5, n));
  const auto p = helm::pade(geo, 1);
  REQUIRE(p.m == 1);
  CHECK(std::abs(p.a[0] - 1.0) < 1e-12);
  CHECK(std::abs(p.a[1]) < 1e-12);
  CHECK(std::abs(p.b[0] + 0.5) < 1e-12);
  CHECK(std::abs(helm::evaluate_voltage(p) - 2.0) < 1e-12);

  // With c[2] = 0 the 1x1 Toeplitz system [2] b = -0 is well posed.
  const auto q = helm::pade({1.0, 2.0, 0.0}, 1);
  REQUIRE(q.m == 1);
  CHECK(std::abs(q.a[0] - 1.0) < 1e-12);
  CHECK(std::abs(q.a[1] - 2.0) < 1e-12);
  CHECK(std::abs(q.b[0]) < 1e-12);

  const auto z = helm::pade({Complex(0.3, 0.1)}, 0);
  CHECK(z.a.size() == 1);
  CHECK(z.b.empty());
  CHECK(helm::evaluate_voltage(z) == Complex(0.3, 0.1));
  CHECK_THROWS_AS(helm::pade({1.0, 2.0}, 1), PreconditionError);
}

TEST_CASE("pade order reduction and poles") {
  // c[1] = 0 makes the 1x1 system singular.
  const auto p = helm::pade({1.0, 0.0, 1.0}, 1);
  CHECK(p.m == 0);
  CHECK_FALSE(p.diagnostic.empty());

  helm::PadeApproximant pole;
  pole.a = {1.0, 0.0};
  pole.b = {-1.0};
  pole.m = 1;
  CHECK_THROWS_AS(helm::evaluate_voltage(pole), PoleAtOneError);
}

TEST_CASE("pade re-expansion on a solved 14-bus series") {
  const auto b = test::base_case("case14.m");
  const auto sol = helm::solve_powerflow(b.adm, b.demand, b.generation, b.v_s);
  const auto& c = sol.series.c[1];
  const int m = 5;
  const auto p = helm::pade(c, m);
  REQUIRE(p.m == m);
  // Taylor coefficients of a(z) / (1 + sum b_k z^k) by long division.
  std::vector<Complex> r(static_cast<std::size_t>(2 * m + 1));
  for (int j = 0; j <= 2 * m; ++j) {
    Complex acc = j <= m ? p.a[static_cast<std::size_t>(j)] : Complex{};
    for (int k = 1; k <= std::min(j, m); ++k) acc -= p.b[static_cast<std::size_t>(k - 1)] * r[static_cast<std::size_t>(j - k)];
    r[static_cast<std::size_t>(j)] = acc;
    CAPTURE(j);
    CHECK(std::abs(acc - c[static_cast<std::size_t>(j)]) < 1e-8);
  }
}

TEST_CASE("mismatch bounds") {
  const auto b = test::base_case("case14.m");
  const auto net = b.net();
  const auto nr = oracle::newton_raphson(b.grid, net, b.v_s);
  REQUIRE(nr.converged);
  CHECK(helm::mismatch(nr.v, net, b.adm) < 1e-10);
  auto bumped = net;
  bumped[4] += 0.1;
  CHECK(helm::mismatch(nr.v, bumped, b.adm) >= 0.1 - 1e-9);
}

TEST_CASE("helm agrees with newton-raphson at base load") {
  for (const char* name : {"case14.m", "case30.m", "case3_uc.m"}) {
    CAPTURE(name);
    const auto b = test::base_case(name);
    const auto sol = helm::solve_powerflow(b.adm, b.demand, b.generation, b.v_s);
    const auto nr = oracle::newton_raphson(b.grid, b.net(), b.v_s);
    REQUIRE(nr.converged);
    CHECK(sol.ln_epsilon() < -10.0);
    CHECK(sol.converged);
    CHECK(max_voltage_gap(sol.v, nr.v) < 1e-6);
    CHECK(sol.v[b.adm.slack_index].imag() == 0.0);
    CHECK(max_cauchy_error(sol.series) < 1e-10);
  }
}

TEST_CASE("the builders of Y agree") {
  for (const char* name : {"case14.m", "case30.m"}) {
    const auto b = test::base_case(name);
    CHECK((oracle::incidence_ybus(b.grid) - b.adm.y).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("non-physical inputs are reported, not thrown") {
  const auto b = test::base_case("case14.m");
  const std::vector<Complex> no_gen(14);
  helm::Options all;
  all.scope = MismatchScope::all_buses;
  const auto sol = helm::solve_powerflow(b.adm, b.demand, no_gen, b.v_s, all);
  CHECK_FALSE(sol.converged);

  auto heavy = b.demand;
  for (auto& d : heavy) d *= 20.0;
  CHECK_NOTHROW(helm::solve_powerflow(b.adm, heavy, b.generation, b.v_s));
  CHECK_FALSE(helm::solve_powerflow(b.adm, heavy, b.generation, b.v_s).converged);
}

TEST_CASE("coefficient tail grows with load") {
  const auto b = test::base_case("case14.m");
  const auto base = helm::solve_powerflow(b.adm, b.demand, b.generation, b.v_s);
  auto heavy = b.demand;
  auto gen = b.generation;
  for (auto& d : heavy) d *= 5.0;
  for (auto& g : gen) g *= 5.0;
  const auto loaded = helm::solve_powerflow(b.adm, heavy, gen, b.v_s);
  CHECK(loaded.c_bar_tail > base.c_bar_tail);
}

TEST_CASE("alpha sweep endpoints") {
  const auto b = test::base_case("case14.m");
  auto gen = b.generation;
  // Make alpha = 1 physical including the slack.
  gen[b.adm.slack_index] = helm::solve_powerflow(b.adm, b.demand, gen, b.v_s).slack_injection;
  std::vector<double> alphas;
  for (int k = 1; k <= 40; ++k) alphas.push_back(0.1 * k);
  alphas.push_back(0.0);
  const auto rows = helm::alpha_sweep(b.adm, b.demand, gen, b.v_s, alphas, {20});
  helm::Options all;
  all.scope = MismatchScope::all_buses;
  const auto zero = helm::solve_powerflow(b.adm, b.demand, std::vector<Complex>(14), b.v_s, all);
  CHECK(std::abs(std::exp(rows.back().ln_eps) - zero.epsilon) < 1e-9);

  std::size_t best = 0;
  for (std::size_t k = 0; k < 40; ++k) {
    if (rows[k].ln_eps < rows[best].ln_eps) best = k;
  }
  CHECK(std::abs(rows[best].alpha - 1.0) < 1e-9);
  for (std::size_t k = 10; k < 30; ++k) CHECK(rows[k + 1].ln_eps >= rows[k].ln_eps);
}

TEST_CASE("plain solve is bitwise deterministic") {
  const auto b = test::base_case("case30.m");
  const auto x = helm::solve_powerflow(b.adm, b.demand, b.generation, b.v_s);
  const auto y = helm::solve_powerflow(b.adm, b.demand, b.generation, b.v_s);
  CHECK(std::memcmp(x.v.data(), y.v.data(), x.v.size() * sizeof(Complex)) == 0);
  CHECK(std::memcmp(&x.epsilon, &y.epsilon, sizeof(double)) == 0);
}

TEST_CASE("tracked solve reproduces the plain solve") {
  const auto b = test::base_case("case14.m");
  ad::Tape tape;
  std::vector<ad::Var> d, g;
  for (std::size_t i = 0; i < 14; ++i) {
    d.push_back(tape.constant(b.demand[i]));
    g.push_back(tape.record(b.generation[i]));
  }
  const auto vs = tape.record_real(b.v_s);
  const auto tracked = helm::solve_powerflow(tape, b.adm, d, g, vs);
  const auto plain = helm::solve_powerflow(b.adm, b.demand, b.generation, b.v_s);
  REQUIRE(tracked.ok);
  CHECK(tracked.value.epsilon == plain.epsilon);
  CHECK(tracked.epsilon.real_value() == plain.epsilon);
  CHECK(max_voltage_gap(tracked.value.v, plain.v) == 0.0);
}
