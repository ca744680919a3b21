#pragma once

#include <string>
#include <vector>

#include "lopf/autodiff.hpp"
#include "lopf/grid_model.hpp"
#include "lopf/linalg.hpp"

namespace lopf::helm {

// Which buses enter the mismatch norm. `non_slack` leaves the slack free to
// absorb the imbalance; `all_buses` also compares the slack's generation
// against the power it would have to inject.
enum class MismatchScope { non_slack, all_buses };

struct Options {
  int n_max = 20;
  int pade_m = 10;
  double ln_xi = -10.0;       // converged iff ln(epsilon) < ln_xi
  double pade_rcond = 1e-14;  // Toeplitz systems below this are reduced in order
  MismatchScope scope = MismatchScope::non_slack;
};

// Coefficients per bus position: c[i][n], d[i][n] for n = 0..n_max. The slack
// row holds the constant series v_s.
struct VoltageSeries {
  int n_max = 0;
  std::vector<std::vector<Complex>> c;
  std::vector<std::vector<Complex>> d;
};

struct PadeApproximant {
  std::vector<Complex> a;  // m + 1 numerator coefficients
  std::vector<Complex> b;  // m denominator coefficients (b_0 = 1 implicit)
  int m = 0;
  int requested_m = 0;
  std::string diagnostic;  // set when the order was reduced
};

struct PFSolution {
  std::vector<Complex> v;
  double epsilon = 0.0;
  double c_bar_tail = 0.0;
  Complex slack_injection{};
  bool converged = false;
  VoltageSeries series;
  std::vector<std::string> diagnostics;

  double ln_epsilon() const;
};

// `injection` is S_g - S_d at the non-slack buses, in Admittance::non_slack order.
VoltageSeries compute_coefficients(const grid::Admittance& adm, double v_s, const std::vector<Complex>& injection,
                                   int n_max);

PadeApproximant pade(const std::vector<Complex>& c, int m, double rcond_min = 1e-14);

// Approximant evaluated at z = 1.
Complex evaluate_voltage(const PadeApproximant& p);
std::vector<Complex> evaluate_voltage(const std::vector<PadeApproximant>& p);

// inf-norm of S_g - S_d - diag(v) conj(Y v); `net` = S_g - S_d for every bus.
double mismatch(const std::vector<Complex>& v, const std::vector<Complex>& net, const grid::Admittance& adm,
                MismatchScope scope = MismatchScope::non_slack);

// Mean of c_i[n] over all buses.
Complex mean_coefficient(const VoltageSeries& s, int n);

// Demand and generation are full per-bus vectors. Non-physical inputs give a
// large (possibly infinite) epsilon and converged = false.
PFSolution solve_powerflow(const grid::Admittance& adm, const std::vector<Complex>& demand,
                           const std::vector<Complex>& generation, double v_s, const Options& options = {});

struct TrackedSolution {
  PFSolution value;
  bool ok = false;  // false when no voltages could be recovered (epsilon = inf)
  std::vector<ad::Var> v;
  ad::Var epsilon;
  ad::Var c_bar_tail;
  ad::Var slack_injection;
};

TrackedSolution solve_powerflow(ad::Tape& tape, const grid::Admittance& adm, const std::vector<ad::Var>& demand,
                                const std::vector<ad::Var>& generation, ad::Var v_s, const Options& options = {});

struct SweepRow {
  double alpha = 0.0;
  int n = 0;
  double ln_eps = 0.0;
};

// ln epsilon of the solve at (demand, alpha * generation) for every alpha and
// series order. Uses the all-buses mismatch so the slack's scaled generation
// is part of the comparison.
std::vector<SweepRow> alpha_sweep(const grid::Admittance& adm, const std::vector<Complex>& demand,
                                  const std::vector<Complex>& generation, double v_s,
                                  const std::vector<double>& alphas, const std::vector<int>& orders,
                                  const Options& options = {});

}  // namespace lopf::helm
