#include "lopf/pf_oracle.hpp"

#include <cmath>

#include "lopf/error.hpp"

namespace lopf::oracle {

std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& fn,
                                const std::vector<double>& x, double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw PreconditionError("finite_diff: step must be positive and finite");
  std::vector<double> g(x.size());
  std::vector<double> probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const double up = fn(probe);
    probe[k] = x[k] - h;
    const double down = fn(probe);
    probe[k] = x[k];
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

ComplexMatrix incidence_ybus(const grid::GridCase& grid) {
  const auto nb = static_cast<Eigen::Index>(grid.bus_count());
  const auto nl = static_cast<Eigen::Index>(grid.branches.size());
  Eigen::MatrixXd cf = Eigen::MatrixXd::Zero(nl, nb);
  Eigen::MatrixXd ct = Eigen::MatrixXd::Zero(nl, nb);
  ComplexVector yff(nl), yft(nl), ytf(nl), ytt(nl);
  for (Eigen::Index l = 0; l < nl; ++l) {
    const auto& br = grid.branches[static_cast<std::size_t>(l)];
    if (br.r == 0.0 && br.x == 0.0) throw SingularBranchError(br.from, br.to);
    cf(l, static_cast<Eigen::Index>(grid.bus_index(br.from))) = 1.0;
    ct(l, static_cast<Eigen::Index>(grid.bus_index(br.to))) = 1.0;
    const Complex ys = Complex(1.0, 0.0) / Complex(br.r, br.x);
    const Complex bc(0.0, br.b / 2.0);
    const double rad = br.shift_deg * 3.14159265358979323846 / 180.0;
    const Complex tap = br.tap * Complex(std::cos(rad), std::sin(rad));
    ytt(l) = ys + bc;
    yff(l) = ytt(l) / (tap * std::conj(tap));
    yft(l) = -ys / std::conj(tap);
    ytf(l) = -ys / tap;
  }
  const ComplexMatrix cfc = cf.cast<Complex>();
  const ComplexMatrix ctc = ct.cast<Complex>();
  const ComplexMatrix yf = yff.asDiagonal() * cfc + yft.asDiagonal() * ctc;
  const ComplexMatrix yt = ytf.asDiagonal() * cfc + ytt.asDiagonal() * ctc;
  ComplexMatrix y = cfc.transpose() * yf + ctc.transpose() * yt;
  for (Eigen::Index i = 0; i < nb; ++i) y(i, i) += grid.buses[static_cast<std::size_t>(i)].shunt;
  return y;
}

NrResult newton_raphson(const grid::GridCase& grid, const std::vector<Complex>& injection, double v_s, double tol,
                        int max_iter) {
  const ComplexMatrix y = incidence_ybus(grid);
  const auto n = y.rows();
  if (static_cast<Eigen::Index>(injection.size()) != n) throw DimensionError("injection must have one entry per bus");
  const auto slack = static_cast<Eigen::Index>(grid.slack_index());
  std::vector<Eigen::Index> pq;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i != slack) pq.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(pq.size());
  ComplexVector s(n);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = injection[static_cast<std::size_t>(i)];

  Eigen::VectorXd angle = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd mag = Eigen::VectorXd::Constant(n, v_s);
  NrResult out;
  for (int iter = 0;; ++iter) {
    ComplexVector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = std::polar(mag(i), angle(i));
    const ComplexVector current = y * v;
    const ComplexVector mis = v.cwiseProduct(current.conjugate()) - s;
    double worst = 0.0;
    for (Eigen::Index i : pq) worst = std::max(worst, std::abs(mis(i)));
    out.iterations = iter;
    out.residual = worst;
    out.v.assign(v.data(), v.data() + n);
    if (!std::isfinite(worst)) return out;
    if (worst < tol) {
      out.converged = true;
      return out;
    }
    if (iter >= max_iter) return out;

    // dS/dVa and dS/dVm in the usual polar form.
    const ComplexMatrix dv = v.asDiagonal();
    const ComplexVector vn = v.cwiseQuotient(mag.cast<Complex>());
    const ComplexMatrix ds_da = Complex(0.0, 1.0) * dv * (ComplexMatrix(current.asDiagonal()) - y * dv).conjugate();
    const ComplexMatrix ds_dm =
        dv * (y * ComplexMatrix(vn.asDiagonal())).conjugate() + ComplexMatrix(current.conjugate().asDiagonal()) * ComplexMatrix(vn.asDiagonal());
    Eigen::MatrixXd jac(2 * m, 2 * m);
    Eigen::VectorXd f(2 * m);
    for (Eigen::Index r = 0; r < m; ++r) {
      f(r) = mis(pq[static_cast<std::size_t>(r)]).real();
      f(m + r) = mis(pq[static_cast<std::size_t>(r)]).imag();
      for (Eigen::Index c = 0; c < m; ++c) {
        const Complex a = ds_da(pq[static_cast<std::size_t>(r)], pq[static_cast<std::size_t>(c)]);
        const Complex b = ds_dm(pq[static_cast<std::size_t>(r)], pq[static_cast<std::size_t>(c)]);
        jac(r, c) = a.real();
        jac(r, m + c) = b.real();
        jac(m + r, c) = a.imag();
        jac(m + r, m + c) = b.imag();
      }
    }
    const Eigen::VectorXd dx = jac.partialPivLu().solve(-f);
    if (!dx.allFinite()) return out;
    for (Eigen::Index r = 0; r < m; ++r) {
      angle(pq[static_cast<std::size_t>(r)]) += dx(r);
      mag(pq[static_cast<std::size_t>(r)]) += dx(m + r);
    }
  }
}

namespace {

std::vector<double> axis(double lo, double hi, int points) {
  if (points <= 1 || hi == lo) return {0.5 * (lo + hi)};
  std::vector<double> out;
  for (int j = 0; j < points; ++j) out.push_back(lo + (hi - lo) * j / (points - 1));
  return out;
}

}  // namespace

OpfResult brute_force_opf(const grid::GridCase& grid, const std::vector<Complex>& demand,
                          const BruteForceOptions& options) {
  const auto gens = grid.controllable_generators();
  const std::size_t k = gens.size();
  if (k > 3) throw PreconditionError("brute-force search supports at most 3 controllable generators");
  if (options.resolution < 1) throw PreconditionError("grid resolution must be positive");
  if (demand.size() != grid.bus_count()) throw DimensionError("demand must have one entry per bus");

  const auto slack = grid.slack_index();
  const grid::Bus& slack_bus = grid.buses[slack];
  const grid::Generator& slack_gen = grid.slack_generator();
  const auto vs_axis = axis(slack_bus.v_min, slack_bus.v_max, options.slack_points);
  const ComplexMatrix y = incidence_ybus(grid);

  struct Axis {
    std::vector<double> p, q;
  };
  std::vector<Axis> axes;
  for (std::size_t g : gens) {
    const auto& gen = grid.generators[g];
    axes.push_back({axis(gen.p_min, gen.p_max, options.resolution), axis(gen.q_min, gen.q_max, options.resolution)});
  }

  OpfResult result;
  std::vector<int> commit(k);
  std::vector<std::size_t> pi(k), qi(k);
  for (unsigned mask = 0; mask < (1u << k); ++mask) {
    for (std::size_t j = 0; j < k; ++j) commit[j] = (mask >> j) & 1u;
    std::fill(pi.begin(), pi.end(), 0);
    std::fill(qi.begin(), qi.end(), 0);
    while (true) {
      std::vector<Complex> gen_values(k);
      std::vector<Complex> injection(grid.bus_count());
      for (std::size_t i = 0; i < injection.size(); ++i) injection[i] = -demand[i];
      double cost = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        if (commit[j] == 0) continue;
        const auto& gen = grid.generators[gens[j]];
        gen_values[j] = {axes[j].p[pi[j]], axes[j].q[qi[j]]};
        injection[grid.bus_index(gen.bus_id)] += gen_values[j];
        cost += gen.cost(gen_values[j].real());
      }
      for (double vs : vs_axis) {
        ++result.evaluated;
        const NrResult nr = newton_raphson(grid, injection, vs);
        if (!nr.converged || !(std::log(nr.residual) < options.ln_xi || nr.residual == 0.0)) continue;
        bool ok = true;
        for (std::size_t i = 0; i < grid.bus_count() && ok; ++i) {
          if (i == slack) continue;
          const double mag = std::abs(nr.v[i]);
          ok = mag <= grid.buses[i].v_max && mag >= grid.buses[i].v_min;
        }
        if (!ok) continue;
        Complex yv{};
        for (std::size_t c = 0; c < grid.bus_count(); ++c) {
          yv += y(static_cast<Eigen::Index>(slack), static_cast<Eigen::Index>(c)) * nr.v[c];
        }
        const Complex slack_s = nr.v[slack] * std::conj(yv) + demand[slack];
        if (slack_s.real() > slack_gen.p_max || slack_s.real() < slack_gen.p_min || slack_s.imag() > slack_gen.q_max ||
            slack_s.imag() < slack_gen.q_min) {
          continue;
        }
        ++result.feasible_count;
        const double total = cost + slack_gen.cost(slack_s.real());
        if (!result.feasible || total < result.best.cost) {
          result.feasible = true;
          result.best = {commit, gen_values, vs, nr.v, slack_s, total};
        }
      }
      // Advance the mixed-radix counter over committed units only.
      std::size_t j = 0;
      for (; j < k; ++j) {
        if (commit[j] == 0) continue;
        if (++qi[j] < axes[j].q.size()) break;
        qi[j] = 0;
        if (++pi[j] < axes[j].p.size()) break;
        pi[j] = 0;
      }
      if (j == k) break;
    }
  }
  return result;
}

}  // namespace lopf::oracle
