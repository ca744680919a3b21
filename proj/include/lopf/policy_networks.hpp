#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lopf/autodiff.hpp"
#include "lopf/grid_model.hpp"
#include "lopf/helm.hpp"

namespace lopf::policy {

using Eigen::VectorXd;

// Fully connected network with tanh hidden layers and a linear output layer.
// Parameters live in one flat vector: for each layer, the weight matrix
// (column-major, out x in) followed by the bias.
class Mlp {
 public:
  struct Cache {
    std::vector<VectorXd> activations;  // input, then each hidden layer output
  };

  Mlp() = default;
  explicit Mlp(std::vector<int> widths);

  const std::vector<int>& widths() const { return widths_; }
  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  Eigen::Index parameter_count() const { return params.size(); }

  // Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  void initialize(std::uint64_t seed);

  VectorXd forward(const VectorXd& x, Cache* cache = nullptr) const;
  // Gradient of <dout, output> with respect to the parameters.
  VectorXd backward(const Cache& cache, const VectorXd& dout) const;

  VectorXd params;

 private:
  std::vector<int> widths_;
};

// Case-derived constants shared by the three networks.
struct PolicyLayout {
  std::size_t buses = 0;
  std::size_t slack = 0;
  std::vector<std::size_t> generators;   // indices into GridCase::generators (controllable units)
  std::vector<std::size_t> gen_bus;      // bus position of each controllable unit
  VectorXd p_min, p_max, q_min, q_max;   // per controllable unit
  double v_min = 0.9, v_max = 1.1;       // slack voltage box
  VectorXd demand_scale;                 // per bus, floor 1e-3

  std::size_t unit_count() const { return generators.size(); }
  std::size_t constraint_count() const { return 2 * (buses - 1) + 4; }
};

PolicyLayout make_layout(const grid::GridCase& grid);

struct PolicyBundle {
  PolicyLayout layout;
  Mlp theta;  // g: demand features + commitment -> (P, Q) per unit, slack voltage
  Mlp psi;    // u: demand features + k+ -> multipliers
  Mlp phi;    // b: demand features -> commitment logits
  // Constant factor applied to u's outputs so multipliers live on the scale of
  // the generation cost.
  double multiplier_scale = 1.0;
  std::string case_hash;
};

PolicyBundle make_bundle(const grid::GridCase& grid, int hidden, std::uint64_t seed);

VectorXd demand_features(const PolicyLayout& layout, const std::vector<Complex>& demand);

struct GOutput {
  std::vector<Complex> generation;  // per controllable unit, before commitment masking
  double v_s = 1.0;
  Mlp::Cache cache;
  VectorXd sigma;  // sigmoid of every output unit
};

GOutput forward_g(const PolicyBundle& bundle, const std::vector<Complex>& demand, const std::vector<int>& commitment);
// Gradient with respect to theta given dL/dP, dL/dQ per unit and dL/dv_s.
VectorXd backward_g(const PolicyBundle& bundle, const GOutput& out, const VectorXd& dp, const VectorXd& dq, double dvs);

struct UOutput {
  VectorXd multipliers;  // softplus outputs (before multiplier_scale)
  VectorXd pre;
  Mlp::Cache cache;
};

UOutput forward_u(const PolicyBundle& bundle, const std::vector<Complex>& demand, const VectorXd& k_plus);
// Gradient with respect to psi of <dmult, multipliers>.
VectorXd backward_u(const PolicyBundle& bundle, const UOutput& out, const VectorXd& dmult);

struct BOutput {
  VectorXd logits;
  VectorXd probs;
  Mlp::Cache cache;
};

BOutput forward_b(const PolicyBundle& bundle, const std::vector<Complex>& demand);
// Gradient with respect to phi given the gradient with respect to the logits.
VectorXd backward_b(const PolicyBundle& bundle, const BOutput& out, const VectorXd& dlogits);

// log q(b) for the factorized Bernoulli with the given logits.
double log_prob(const VectorXd& logits, const std::vector<int>& commitment);
// d log q(b) / d logits = b - p.
VectorXd log_prob_grad(const VectorXd& logits, const std::vector<int>& commitment);

// Raw constraint values k (positive = violated): per non-slack bus
// |v| - Vmax and Vmin - |v|, then for the slack P - Pmax, Pmin - P,
// Q - Qmax, Qmin - Q.
VectorXd constraint_values(const helm::PFSolution& solution, const grid::GridCase& grid);
std::vector<ad::Var> constraint_values(ad::Tape& tape, const helm::TrackedSolution& solution,
                                       const grid::GridCase& grid);

// Sum of committed units' quadratic costs plus the slack machine's cost at
// P = Re(slack_injection). `generation` and `commitment` are per controllable unit.
double generation_cost(const grid::GridCase& grid, const std::vector<Complex>& generation,
                       const std::vector<int>& commitment, Complex slack_injection);
ad::Var generation_cost(ad::Tape& tape, const grid::GridCase& grid, const std::vector<ad::Var>& generation,
                        const std::vector<int>& commitment, ad::Var slack_injection);

nlohmann::json to_json(const PolicyBundle& bundle);
PolicyBundle bundle_from_json(const nlohmann::json& j, const grid::GridCase& grid);

}  // namespace lopf::policy
