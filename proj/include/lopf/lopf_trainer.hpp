#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lopf/grid_model.hpp"
#include "lopf/helm.hpp"
#include "lopf/policy_networks.hpp"

namespace lopf::trainer {

using Eigen::VectorXd;
using Demand = std::vector<Complex>;

struct TrainConfig {
  int batch = 32;
  int samples = 16;
  double lr_theta = 1e-3;
  double lr_psi = 1e-3;
  double lr_phi = 1e-3;
  std::string optimizer = "sgd";  // "sgd" or "adam"
  double ln_xi = -10.0;
  int n_max = 20;
  int pade_m = 10;
  int steps = 500;
  std::uint64_t seed = 1;
  int hidden = 128;
  int threads = 1;
  int lambda_window = 100;
  double penalty_factor = 10.0;

  void validate() const;
  // Identifies the settings that influence results (not steps or threads).
  std::string hash() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Static pieces of one training problem.
struct Problem {
  grid::GridCase grid;
  grid::Admittance adm;
  helm::Options helm;

  static Problem make(grid::GridCase grid, const TrainConfig& config);
};

struct Triplet {
  bool solved = false;    // power flow produced voltages
  bool physical = false;  // ln epsilon < ln xi
  double epsilon = 0.0;
  double loss = 0.0;      // generation cost + scaled dual term
  double c_bar = 0.0;
  double cost = 0.0;
  helm::PFSolution solution;
  std::vector<Complex> generation;  // per controllable unit after masking
  double v_s = 1.0;
  VectorXd k;
  VectorXd multipliers;  // scaled u outputs
  // Gradients of the loss (theta, psi) and of ln c_bar (theta); empty when
  // not requested or not defined. The cost gradient is filled for `all` only.
  VectorXd grad_theta_loss;
  VectorXd grad_theta_cost;
  VectorXd grad_psi;
  VectorXd grad_theta_proxy;
};

enum class Gradients { none, automatic, all };

// `automatic` differentiates the loss for physical solves and ln c_bar otherwise.
Triplet solve_triplet(const policy::PolicyBundle& bundle, const Problem& problem, const Demand& demand,
                      const std::vector<int>& commitment, Gradients grads = Gradients::automatic);

struct Feasibility {
  bool feasible = false;
  std::vector<std::string> violated;  // "mismatch", "slack-limits", "voltage-limits"
};

// Boundaries are inclusive: a constraint value of exactly zero passes.
Feasibility check_feasibility(const helm::PFSolution& solution, const grid::GridCase& grid, double ln_xi = -10.0);

struct ElboSample {
  std::vector<int> bits;
  double loss = 0.0;
  bool feasible = false;
};

struct ElboResult {
  double elbo = 0.0;
  VectorXd grad_logits;  // ascent direction for the Bernoulli logits
};

// Monte-Carlo ELBO with log p(b) = log(lambda) - lambda * L(b); infeasible
// samples use L = penalty. The expected log p is differentiated with the
// score-function estimator and a leave-one-out baseline, the entropy of the
// factorized q analytically.
ElboResult elbo(const std::vector<ElboSample>& samples, const VectorXd& logits, double lambda, double penalty);

struct ExactElbo {
  double elbo = 0.0;
  double kl = 0.0;
  double log_evidence = 0.0;
  VectorXd grad;  // with respect to the categorical logits
};

// ELBO of a categorical q = softmax(logits) over every configuration against
// unnormalized log p, by enumeration.
ExactElbo elbo_exact(const VectorXd& logits, const VectorXd& log_p);

struct OptimizerState {
  VectorXd m;
  VectorXd v;
  long t = 0;
};

struct TrainerState {
  long step = 0;
  std::deque<double> cost_window;
  double bootstrap_cost = 1.0;
  std::optional<double> running_max_loss;
  OptimizerState theta_loss, theta_proxy, psi, phi;

  double lambda() const;
  double penalty(double factor) const;
};

// Bootstrap cost and multiplier scaling from the all-on, mid-box setpoint at base demand.
TrainerState initialize(policy::PolicyBundle& bundle, const Problem& problem);

struct StepMetrics {
  long step = 0;
  double physical_frac = 0.0;  // triplets with ln eps < ln xi
  double feasible_frac = 0.0;  // instances with a sampled configuration passing every criterion
  double mean_ln_eps = 0.0;
  double mean_loss = 0.0;
  double elbo = 0.0;
  double lambda = 0.0;
  int skipped_updates = 0;
  std::vector<std::string> diagnostics;
};

StepMetrics train_step(policy::PolicyBundle& bundle, TrainerState& state, const Problem& problem,
                       const std::vector<Demand>& batch, const TrainConfig& config);

// Instance indices for step `step`.
std::vector<std::size_t> select_batch(std::size_t train_size, const TrainConfig& config, long step);

struct Inference {
  std::vector<int> commitment;
  std::vector<Complex> generation;
  double v_s = 1.0;
  helm::PFSolution solution;
  double cost = 0.0;
  bool feasible = false;
  std::vector<std::string> violated;
  int candidates = 0;
};

Inference infer(const policy::PolicyBundle& bundle, const Problem& problem, const Demand& demand, int samples,
                std::uint64_t seed);

struct EvalRow {
  std::size_t instance = 0;
  bool feasible = false;
  double cost = 0.0;
  double seconds = 0.0;
  std::vector<std::string> violated;
  bool kkt = false;  // every k_i <= 1e-6
  std::optional<double> oracle_cost;
};

struct EvalReport {
  double feasible_pct = 0.0;
  double kkt_pct = 0.0;
  double mean_cost = 0.0;         // over instances feasible for the policy (and the oracle when given)
  double mean_oracle_cost = 0.0;  // same instances
  std::size_t cost_instances = 0;
  double mean_seconds = 0.0;
  std::vector<EvalRow> rows;
};

// `oracle`, when non-empty, holds one optional reference cost per instance
// (absent = oracle infeasible).
EvalReport evaluate(const policy::PolicyBundle& bundle, const Problem& problem, const std::vector<Demand>& test,
                    int samples, std::uint64_t seed, const std::vector<std::optional<double>>& oracle = {},
                    int threads = 1);

nlohmann::json checkpoint_json(const policy::PolicyBundle& bundle, const TrainerState& state,
                               const TrainConfig& config);
void save_checkpoint(const std::string& path, const policy::PolicyBundle& bundle, const TrainerState& state,
                     const TrainConfig& config);

struct Checkpoint {
  policy::PolicyBundle bundle;
  TrainerState state;
  TrainConfig config;
};

Checkpoint load_checkpoint(const std::string& path, const grid::GridCase& grid);

}  // namespace lopf::trainer
