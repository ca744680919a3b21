#include "lopf/helm.hpp"

#include <cmath>
#include <limits>

#include "lopf/error.hpp"

namespace lopf::helm {

namespace {

// The recursion is written once against these two arithmetic contexts: plain
// complex doubles, or nodes recorded on a tape.
struct PlainArith {
  using T = Complex;

  T constant(Complex c) const { return c; }
  static Complex value(const T& x) { return x; }
  T conj(const T& x) const { return std::conj(x); }
  T abs(const T& x) const { return std::abs(x); }
  T sum(const std::vector<T>& xs) const {
    T s{};
    for (const T& x : xs) s += x;
    return s;
  }
  T dot(const std::vector<T>& xs, const std::vector<T>& ys) const {
    T s{};
    for (std::size_t k = 0; k < xs.size(); ++k) s += xs[k] * ys[k];
    return s;
  }
  T combine(const std::vector<Complex>& coeffs, const std::vector<T>& xs) const { return dot(coeffs, xs); }
  T max(const std::vector<T>& xs) const {
    T best = xs.front();
    for (const T& x : xs) {
      if (x.real() > best.real()) best = x;
    }
    return best;
  }
  std::vector<T> solve(const std::shared_ptr<const LuFactor>& lu, const std::vector<T>& b) const {
    const ComplexVector rhs = Eigen::Map<const ComplexVector>(b.data(), static_cast<Eigen::Index>(b.size()));
    const ComplexVector x = lu->lu.solve(rhs);
    return {x.data(), x.data() + x.size()};
  }
  std::vector<T> solve(const std::shared_ptr<const LuFactor>& lu, const std::vector<T>&, const std::vector<T>& b) const {
    return solve(lu, b);
  }
};

struct TrackedArith {
  using T = ad::Var;
  ad::Tape* tape;

  T constant(Complex c) const { return tape->constant(c); }
  static Complex value(const T& x) { return x.value(); }
  T conj(const T& x) const { return tape->conj(x); }
  T abs(const T& x) const { return tape->abs(x); }
  T sum(const std::vector<T>& xs) const { return tape->sum(xs); }
  T dot(const std::vector<T>& xs, const std::vector<T>& ys) const { return tape->dot(xs, ys); }
  T combine(const std::vector<Complex>& coeffs, const std::vector<T>& xs) const { return tape->combine(coeffs, xs); }
  T max(const std::vector<T>& xs) const { return ad::max_element(xs); }
  std::vector<T> solve(const std::shared_ptr<const LuFactor>& lu, const std::vector<T>& b) const {
    return tape->solve(lu, b);
  }
  std::vector<T> solve(const std::shared_ptr<const LuFactor>& lu, const std::vector<T>& a,
                       const std::vector<T>& b) const {
    return tape->solve(lu, a, b);
  }
};

template <class T>
struct Series {
  std::vector<std::vector<T>> c;
  std::vector<std::vector<T>> d;
};

template <class Ctx>
Series<typename Ctx::T> coefficients(const Ctx& ctx, const grid::Admittance& adm, const typename Ctx::T& v_s,
                                     const std::vector<typename Ctx::T>& injection, int n_max) {
  using T = typename Ctx::T;
  if (n_max < 1) throw PreconditionError("series order must be at least 1");
  if (!(Ctx::value(v_s).real() > 0.0)) throw PreconditionError("slack voltage must be positive");
  const std::size_t m = adm.non_slack.size();
  if (injection.size() != m) throw DimensionError("injection vector does not match the number of non-slack buses");
  const auto orders = static_cast<std::size_t>(n_max) + 1;

  std::vector<T> rhs(m);
  for (std::size_t r = 0; r < m; ++r) rhs[r] = v_s * (-adm.y_slack(static_cast<Eigen::Index>(r)));
  std::vector<std::vector<T>> c(orders), d(orders);
  c[0] = ctx.solve(adm.reduced_lu, rhs);
  d[0].resize(m);
  for (std::size_t r = 0; r < m; ++r) {
    const Complex c0 = Ctx::value(c[0][r]);
    if (!(std::abs(c0) > 1e-12) || !std::isfinite(std::abs(c0))) {
      throw DegenerateEmbeddingError("germ voltage vanishes at bus position " + std::to_string(adm.non_slack[r]));
    }
    d[0][r] = 1.0 / c[0][r];
  }

  std::vector<T> s_conj(m);
  for (std::size_t r = 0; r < m; ++r) s_conj[r] = ctx.conj(injection[r]);
  std::vector<T> cs, ds;
  for (std::size_t n = 1; n < orders; ++n) {
    for (std::size_t r = 0; r < m; ++r) rhs[r] = s_conj[r] * ctx.conj(d[n - 1][r]);
    c[n] = ctx.solve(adm.reduced_lu, rhs);
    d[n].resize(m);
    for (std::size_t r = 0; r < m; ++r) {
      cs.clear();
      ds.clear();
      for (std::size_t k = 0; k < n; ++k) {
        cs.push_back(c[n - k][r]);
        ds.push_back(d[k][r]);
      }
      d[n][r] = -(ctx.dot(cs, ds) / c[0][r]);
    }
  }

  // Re-index per bus, inserting the constant slack series.
  const std::size_t buses = m + 1;
  Series<T> out;
  out.c.assign(buses, {});
  out.d.assign(buses, {});
  const T zero = ctx.constant(0.0);
  out.c[adm.slack_index].assign(orders, zero);
  out.d[adm.slack_index].assign(orders, zero);
  out.c[adm.slack_index][0] = v_s;
  out.d[adm.slack_index][0] = 1.0 / v_s;
  for (std::size_t r = 0; r < m; ++r) {
    auto& ci = out.c[adm.non_slack[r]];
    auto& di = out.d[adm.non_slack[r]];
    for (std::size_t n = 0; n < orders; ++n) {
      ci.push_back(c[n][r]);
      di.push_back(d[n][r]);
    }
  }
  return out;
}

template <class Ctx>
struct Approximant {
  std::vector<typename Ctx::T> a;
  std::vector<typename Ctx::T> b;
  int m = 0;
  std::string diagnostic;
};

template <class Ctx>
Approximant<Ctx> pade_impl(const Ctx& ctx, const std::vector<typename Ctx::T>& c, int m, double rcond_min) {
  using T = typename Ctx::T;
  if (m < 0) throw PreconditionError("Pade order must be non-negative");
  if (c.size() < static_cast<std::size_t>(2 * m + 1)) {
    throw PreconditionError("Pade order " + std::to_string(m) + " needs " + std::to_string(2 * m + 1) +
                            " coefficients, got " + std::to_string(c.size()));
  }
  Approximant<Ctx> out;
  const int requested = m;
  std::shared_ptr<const LuFactor> lu;
  for (; m > 0; --m) {
    ComplexMatrix toeplitz(m, m);
    for (int j = 1; j <= m; ++j) {
      for (int k = 1; k <= m; ++k) toeplitz(j - 1, k - 1) = Ctx::value(c[static_cast<std::size_t>(m + j - k)]);
    }
    if (!toeplitz.allFinite()) continue;
    lu = factorize(toeplitz, "Pade denominator system", 0.0);
    if (lu->rcond >= rcond_min) break;
  }
  if (m != requested) {
    out.diagnostic = "Pade order reduced from " + std::to_string(requested) + " to " + std::to_string(m) +
                     " (ill-conditioned denominator system)";
  }
  out.m = m;
  if (m == 0) {
    out.a = {c[0]};
    return out;
  }
  std::vector<T> entries;
  entries.reserve(static_cast<std::size_t>(m * m));
  for (int j = 1; j <= m; ++j) {
    for (int k = 1; k <= m; ++k) entries.push_back(c[static_cast<std::size_t>(m + j - k)]);
  }
  std::vector<T> rhs;
  for (int j = 1; j <= m; ++j) rhs.push_back(c[static_cast<std::size_t>(m + j)] * -1.0);
  out.b = ctx.solve(lu, entries, rhs);

  out.a.push_back(c[0]);
  std::vector<T> bs, cs;
  for (int j = 1; j <= m; ++j) {
    bs.clear();
    cs.clear();
    for (int k = 1; k <= j; ++k) {
      bs.push_back(out.b[static_cast<std::size_t>(k - 1)]);
      cs.push_back(c[static_cast<std::size_t>(j - k)]);
    }
    out.a.push_back(c[static_cast<std::size_t>(j)] + ctx.dot(bs, cs));
  }
  return out;
}

template <class Ctx>
typename Ctx::T evaluate_impl(const Ctx& ctx, const Approximant<Ctx>& p) {
  const auto num = ctx.sum(p.a);
  if (p.b.empty()) return num;
  const auto den = ctx.sum(p.b) + 1.0;
  if (!(std::abs(Ctx::value(den)) >= 1e-12)) {
    throw PoleAtOneError("Pade denominator vanishes at z = 1 (|1 + sum b| = " +
                         std::to_string(std::abs(Ctx::value(den))) + ")");
  }
  return num / den;
}

template <class Ctx>
struct Residual {
  typename Ctx::T epsilon;
  typename Ctx::T slack_flow;  // v_s conj((Y v)_s)
};

template <class Ctx>
Residual<Ctx> residual_impl(const Ctx& ctx, const std::vector<typename Ctx::T>& v,
                            const std::vector<typename Ctx::T>& net, const grid::Admittance& adm, MismatchScope scope) {
  using T = typename Ctx::T;
  const std::size_t n = adm.bus_count();
  if (v.size() != n || net.size() != n) throw DimensionError("mismatch: vector lengths do not match the network");
  std::vector<Complex> row(n);
  std::vector<T> magnitudes;
  Residual<Ctx> out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) row[k] = adm.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    const T flow = v[i] * ctx.conj(ctx.combine(row, v));
    if (i == adm.slack_index) {
      out.slack_flow = flow;
      if (scope == MismatchScope::non_slack) continue;
    }
    magnitudes.push_back(ctx.abs(net[i] - flow));
  }
  if (magnitudes.empty()) {
    out.epsilon = ctx.constant(0.0);
  } else {
    out.epsilon = ctx.max(magnitudes);
  }
  return out;
}

template <class Ctx>
typename Ctx::T mean_coefficient_impl(const Ctx& ctx, const Series<typename Ctx::T>& s, int n) {
  std::vector<typename Ctx::T> column;
  for (const auto& ci : s.c) column.push_back(ci.at(static_cast<std::size_t>(n)));
  return ctx.sum(column) / static_cast<double>(column.size());
}

template <class Ctx>
struct Core {
  bool has_series = false;
  bool ok = false;
  Series<typename Ctx::T> series;
  std::vector<typename Ctx::T> v;
  typename Ctx::T epsilon{};
  typename Ctx::T c_bar_tail{};
  typename Ctx::T slack_injection{};
  std::vector<std::string> diagnostics;
};

template <class Ctx>
Core<Ctx> run(const Ctx& ctx, const grid::Admittance& adm, const std::vector<typename Ctx::T>& demand,
              const std::vector<typename Ctx::T>& generation, const typename Ctx::T& v_s, const Options& options) {
  using T = typename Ctx::T;
  const std::size_t n = adm.bus_count();
  if (demand.size() != n || generation.size() != n) {
    throw DimensionError("demand and generation must have one entry per bus");
  }
  if (options.pade_m < 0 || options.n_max < 2 * options.pade_m) {
    throw PreconditionError("series order must be at least twice the Pade order");
  }
  std::vector<T> net(n);
  for (std::size_t i = 0; i < n; ++i) net[i] = generation[i] - demand[i];
  std::vector<T> injection;
  for (std::size_t i : adm.non_slack) injection.push_back(net[i]);

  Core<Ctx> out;
  out.series = coefficients(ctx, adm, v_s, injection, options.n_max);
  out.has_series = true;
  out.c_bar_tail = ctx.abs(mean_coefficient_impl(ctx, out.series, options.n_max));

  out.v.assign(n, T{});
  out.v[adm.slack_index] = v_s;
  try {
    for (std::size_t i : adm.non_slack) {
      const auto p = pade_impl(ctx, out.series.c[i], options.pade_m, options.pade_rcond);
      if (!p.diagnostic.empty()) out.diagnostics.push_back("bus position " + std::to_string(i) + ": " + p.diagnostic);
      out.v[i] = evaluate_impl(ctx, p);
    }
  } catch (const PoleAtOneError& e) {
    out.diagnostics.emplace_back(e.what());
    return out;
  }
  const auto res = residual_impl(ctx, out.v, net, adm, options.scope);
  out.epsilon = res.epsilon;
  out.slack_injection = res.slack_flow + demand[adm.slack_index];
  out.ok = std::isfinite(Ctx::value(res.epsilon).real());
  return out;
}

template <class Ctx>
PFSolution to_plain(const Core<Ctx>& core, const Options& options) {
  PFSolution out;
  out.diagnostics = core.diagnostics;
  if (core.has_series) {
    out.series.n_max = options.n_max;
    for (std::size_t i = 0; i < core.series.c.size(); ++i) {
      std::vector<Complex> ci, di;
      for (const auto& x : core.series.c[i]) ci.push_back(Ctx::value(x));
      for (const auto& x : core.series.d[i]) di.push_back(Ctx::value(x));
      out.series.c.push_back(std::move(ci));
      out.series.d.push_back(std::move(di));
    }
    out.c_bar_tail = Ctx::value(core.c_bar_tail).real();
  }
  if (!core.ok) {
    out.epsilon = std::numeric_limits<double>::infinity();
    out.converged = false;
    if (!core.v.empty()) out.v.assign(core.v.size(), Complex(std::numeric_limits<double>::quiet_NaN(), 0.0));
    return out;
  }
  for (const auto& x : core.v) out.v.push_back(Ctx::value(x));
  out.epsilon = Ctx::value(core.epsilon).real();
  out.slack_injection = Ctx::value(core.slack_injection);
  out.converged = out.ln_epsilon() < options.ln_xi;
  return out;
}

}  // namespace

double PFSolution::ln_epsilon() const { return std::log(epsilon); }

VoltageSeries compute_coefficients(const grid::Admittance& adm, double v_s, const std::vector<Complex>& injection,
                                   int n_max) {
  const auto s = coefficients(PlainArith{}, adm, Complex(v_s), injection, n_max);
  return {n_max, s.c, s.d};
}

PadeApproximant pade(const std::vector<Complex>& c, int m, double rcond_min) {
  const auto p = pade_impl(PlainArith{}, c, m, rcond_min);
  return {p.a, p.b, p.m, m, p.diagnostic};
}

Complex evaluate_voltage(const PadeApproximant& p) {
  Approximant<PlainArith> q;
  q.a = p.a;
  q.b = p.b;
  q.m = p.m;
  return evaluate_impl(PlainArith{}, q);
}

std::vector<Complex> evaluate_voltage(const std::vector<PadeApproximant>& p) {
  std::vector<Complex> out;
  out.reserve(p.size());
  for (const auto& x : p) out.push_back(evaluate_voltage(x));
  return out;
}

double mismatch(const std::vector<Complex>& v, const std::vector<Complex>& net, const grid::Admittance& adm,
                MismatchScope scope) {
  return residual_impl(PlainArith{}, v, net, adm, scope).epsilon.real();
}

Complex mean_coefficient(const VoltageSeries& s, int n) {
  if (n < 0 || n > s.n_max) throw PreconditionError("coefficient order out of range");
  Complex total{};
  for (const auto& ci : s.c) total += ci[static_cast<std::size_t>(n)];
  return total / static_cast<double>(s.c.size());
}

PFSolution solve_powerflow(const grid::Admittance& adm, const std::vector<Complex>& demand,
                           const std::vector<Complex>& generation, double v_s, const Options& options) {
  return to_plain(run(PlainArith{}, adm, demand, generation, Complex(v_s), options), options);
}

TrackedSolution solve_powerflow(ad::Tape& tape, const grid::Admittance& adm, const std::vector<ad::Var>& demand,
                                const std::vector<ad::Var>& generation, ad::Var v_s, const Options& options) {
  const TrackedArith ctx{&tape};
  const auto core = run(ctx, adm, demand, generation, v_s, options);
  TrackedSolution out;
  out.value = to_plain(core, options);
  out.ok = core.ok;
  out.c_bar_tail = core.c_bar_tail;
  if (core.ok) {
    out.v = core.v;
    out.epsilon = core.epsilon;
    out.slack_injection = core.slack_injection;
  }
  return out;
}

std::vector<SweepRow> alpha_sweep(const grid::Admittance& adm, const std::vector<Complex>& demand,
                                  const std::vector<Complex>& generation, double v_s,
                                  const std::vector<double>& alphas, const std::vector<int>& orders,
                                  const Options& options) {
  std::vector<SweepRow> rows;
  for (int n : orders) {
    Options o = options;
    o.n_max = n;
    o.pade_m = n / 2;
    o.scope = MismatchScope::all_buses;
    for (double alpha : alphas) {
      std::vector<Complex> scaled(generation.size());
      for (std::size_t i = 0; i < generation.size(); ++i) scaled[i] = alpha * generation[i];
      const PFSolution sol = solve_powerflow(adm, demand, scaled, v_s, o);
      rows.push_back({alpha, n, sol.ln_epsilon()});
    }
  }
  return rows;
}

}  // namespace lopf::helm
