#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "lopf/grid_model.hpp"
#include "lopf/linalg.hpp"

// Reference implementations used by tests and acceptance checks only.
namespace lopf::oracle {

// Central differences of `fn` at `x`, one coordinate at a time.
std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& fn,
                                const std::vector<double>& x, double h = 1e-6);

// Bus admittance matrix assembled from branch incidence matrices, independent
// of grid::build_admittance.
ComplexMatrix incidence_ybus(const grid::GridCase& grid);

struct NrResult {
  bool converged = false;
  int iterations = 0;
  std::vector<Complex> v;
  double residual = 0.0;  // inf-norm over non-slack buses
};

// Polar Newton-Raphson from a flat start v = v_s at every bus. `injection` is
// the specified net complex power S_g - S_d per bus (slack entry ignored).
NrResult newton_raphson(const grid::GridCase& grid, const std::vector<Complex>& injection, double v_s,
                        double tol = 1e-10, int max_iter = 50);

struct OpfCandidate {
  std::vector<int> commitment;          // one entry per controllable generator
  std::vector<Complex> generation;      // per controllable generator (zero when off)
  double v_s = 1.0;
  std::vector<Complex> v;
  Complex slack_injection{};
  double cost = 0.0;
};

struct OpfResult {
  bool feasible = false;
  OpfCandidate best;
  long evaluated = 0;
  long feasible_count = 0;
};

struct BruteForceOptions {
  int resolution = 21;     // grid points per P and Q axis
  int slack_points = 5;    // grid points for the slack voltage magnitude
  double ln_xi = -10.0;
};

// Exhaustive scan over commitments, per-generator (P, Q) grids inside the
// limit boxes and the slack voltage grid; every candidate is validated with
// newton_raphson and the feasibility rules of the trainer.
OpfResult brute_force_opf(const grid::GridCase& grid, const std::vector<Complex>& demand,
                          const BruteForceOptions& options = {});

}  // namespace lopf::oracle
