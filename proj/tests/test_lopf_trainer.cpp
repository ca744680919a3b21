#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lopf/binary_sampler.hpp"
#include "lopf/error.hpp"
#include "lopf/lopf_trainer.hpp"
#include "test_support.hpp"

using namespace lopf;
using Eigen::VectorXd;

namespace {

// The line cannot carry the whole load: the slack machine alone has no
// power-flow solution, the local unit makes one possible.
const char* kWeakLine = R"(function mpc = weak_line
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 0 1 1.1 0.7;
  2 1 100 10 0 0 1 1 0 0 1 1.1 0.7;
];
mpc.gen = [
  1 0 0 200 -200 1 100 1 300 0;
  2 0 0 50 -50 1 100 1 150 0;
];
mpc.branch = [
  1 2 0.0 0.8 0 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0 10 0;
  2 0 0 3 0 20 0;
];
)";

trainer::TrainConfig small_config() {
  trainer::TrainConfig c;
  c.batch = 4;
  c.samples = 2;
  c.hidden = 8;
  c.optimizer = "adam";
  c.lr_theta = 1e-3;
  c.lr_psi = 1e-3;
  c.lr_phi = 1e-2;
  c.seed = 21;
  return c;
}

std::vector<trainer::Demand> scaled_demands(const grid::GridCase& g, std::initializer_list<double> scales) {
  std::vector<trainer::Demand> out;
  for (double s : scales) {
    auto d = g.demand();
    for (auto& x : d) x *= s;
    out.push_back(d);
  }
  return out;
}

std::vector<trainer::StepMetrics> run_steps(policy::PolicyBundle& b, trainer::TrainerState& st,
                                            const trainer::Problem& p, const std::vector<trainer::Demand>& train,
                                            const trainer::TrainConfig& c, int steps) {
  std::vector<trainer::StepMetrics> out;
  for (int i = 0; i < steps; ++i) {
    std::vector<trainer::Demand> batch;
    for (auto k : trainer::select_batch(train.size(), c, st.step)) batch.push_back(train[k]);
    out.push_back(trainer::train_step(b, st, p, batch, c));
  }
  return out;
}

// Independent KL(q || p) for categorical q and normalized p.
double kl_divergence(const VectorXd& logits, const VectorXd& log_p_unnorm) {
  VectorXd q = (logits.array() - logits.maxCoeff()).exp();
  q /= q.sum();
  VectorXd p = (log_p_unnorm.array() - log_p_unnorm.maxCoeff()).exp();
  p /= p.sum();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) kl += q(i) * std::log(q(i) / p(i));
  return kl;
}

}  // namespace

TEST_CASE("loss equals generation cost when every constraint is slack") {
  const auto grid = grid::load_case(test::data_path("case3_uc.m"));
  const auto cfg = small_config();
  const auto prob = trainer::Problem::make(grid, cfg);
  auto b = policy::make_bundle(grid, cfg.hidden, 3);
  trainer::initialize(b, prob);
  const auto t = trainer::solve_triplet(b, prob, grid.demand(), {1}, trainer::Gradients::all);
  REQUIRE(t.physical);
  REQUIRE(t.k.maxCoeff() < 0.0);
  CHECK(t.loss == t.cost);
  CHECK(t.epsilon >= 0.0);
  CHECK(t.c_bar >= 0.0);
}

TEST_CASE("triplet gradients with respect to theta match finite differences on the 3-bus case") {
  const auto grid = grid::load_case(test::data_path("case3_uc.m"));
  const auto cfg = small_config();
  const auto prob = trainer::Problem::make(grid, cfg);
  auto b = policy::make_bundle(grid, cfg.hidden, 5);
  trainer::initialize(b, prob);
  for (double scale : {0.8, 1.0, 1.2}) {
    auto d = grid.demand();
    for (auto& x : d) x *= scale;
    const auto t = trainer::solve_triplet(b, prob, d, {1}, trainer::Gradients::all);
    REQUIRE(t.k.maxCoeff() < 0.0);  // k+ = 0 nearby, so u does not move the loss
    const auto at = [&](const VectorXd& params, bool proxy) {
      auto c = b;
      c.theta.params = params;
      const auto r = trainer::solve_triplet(c, prob, d, {1}, trainer::Gradients::none);
      return proxy ? std::log(r.c_bar) : r.loss;
    };
    const VectorXd fd_loss = test::finite_diff([&](const VectorXd& p) { return at(p, false); }, b.theta.params);
    const VectorXd fd_proxy = test::finite_diff([&](const VectorXd& p) { return at(p, true); }, b.theta.params);
    CHECK((t.grad_theta_loss - fd_loss).norm() <= 1e-4 * fd_loss.norm());
    CHECK((t.grad_theta_proxy - fd_proxy).norm() <= 1e-4 * fd_proxy.norm());
  }
}

TEST_CASE("no commitment on the weak line is non-physical and routed to the proxy") {
  const auto grid = grid::parse_case(kWeakLine);
  const auto cfg = small_config();
  const auto prob = trainer::Problem::make(grid, cfg);
  auto b = policy::make_bundle(grid, cfg.hidden, 1);
  b.theta.params.setZero();
  trainer::initialize(b, prob);
  const auto off = trainer::solve_triplet(b, prob, grid.demand(), {0});
  CHECK_FALSE(off.physical);
  CHECK(std::log(off.epsilon) >= cfg.ln_xi);
  CHECK(off.grad_theta_proxy.size() == b.theta.params.size());
  CHECK(off.grad_theta_loss.size() == 0);
  const auto on = trainer::solve_triplet(b, prob, grid.demand(), {1});
  CHECK(on.physical);
  CHECK(on.grad_theta_loss.size() == b.theta.params.size());

  const auto inf = trainer::infer(b, prob, grid.demand(), 2, 7);
  CHECK(inf.commitment == std::vector<int>{1});
}

TEST_CASE("feasibility check: inclusive limits and named violations") {
  const auto base = test::base_case("case3_uc.m");
  const auto sol = helm::solve_powerflow(base.adm, base.demand, base.generation, base.v_s);
  auto grid = base.grid;
  const auto ok = trainer::check_feasibility(sol, grid);
  REQUIRE(ok.feasible);
  grid.buses[1].v_max = std::abs(sol.v[1]);  // exactly on the boundary
  CHECK(trainer::check_feasibility(sol, grid).feasible);
  grid.buses[1].v_max = std::nextafter(std::abs(sol.v[1]), 0.0);
  auto f = trainer::check_feasibility(sol, grid);
  CHECK_FALSE(f.feasible);
  CHECK(f.violated == std::vector<std::string>{"voltage-limits"});

  grid = base.grid;
  grid.generators[0].q_max = sol.slack_injection.imag() - 1e-3;
  auto bad = sol;
  bad.epsilon = std::exp(-9.0);
  f = trainer::check_feasibility(bad, grid);
  CHECK(f.violated == std::vector<std::string>{"mismatch", "slack-limits"});
}

TEST_CASE("ELBO estimate and score gradient") {
  VectorXd logits(3);
  logits << 0.4, -1.1, 2.0;
  const double lambda = 0.01;
  std::vector<trainer::ElboSample> s = {{{1, 0, 1}, 120.0, true}, {{0, 0, 1}, 150.0, true}, {{1, 1, 1}, 0.0, false}};
  const double penalty = 900.0;
  const auto r = trainer::elbo(s, logits, lambda, penalty);
  double expect = 0.0;
  for (const auto& x : s) {
    const double l = x.feasible ? x.loss : penalty;
    expect += std::log(lambda) - lambda * l - policy::log_prob(logits, x.bits);
  }
  CHECK(std::abs(r.elbo - expect / 3.0) < 1e-12);

  // equal losses: the baseline cancels the score term, leaving the entropy gradient
  for (auto& x : s) {
    x.loss = 77.0;
    x.feasible = true;
  }
  const auto eq = trainer::elbo(s, logits, lambda, penalty);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits(i)));
    CHECK(std::abs(eq.grad_logits(i) + logits(i) * p * (1.0 - p)) < 1e-15);
  }
  CHECK_THROWS_AS(trainer::elbo({s[0]}, logits, lambda, penalty), PreconditionError);
}

TEST_CASE("tabular q equal to p attains the evidence") {
  const double lambda = 0.5;
  const VectorXd losses = (VectorXd(4) << 1.0, 2.5, 0.3, 4.0).finished();
  const VectorXd log_p = (std::log(lambda) - lambda * losses.array()).matrix();
  double z = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) z += lambda * std::exp(-lambda * losses(i));
  const auto r = trainer::elbo_exact(log_p, log_p);
  CHECK(std::abs(r.elbo - std::log(z)) < 1e-10);
  CHECK(std::abs(r.kl) < 1e-10);
}

TEST_CASE("ELBO ascent on a tabular q over three units drives KL to zero") {
  const double lambda = 0.8;
  VectorXd losses(8);
  losses << 3.0, 1.2, 2.2, 0.4, 5.0, 0.9, 1.7, 2.6;
  const VectorXd log_p = (std::log(lambda) - lambda * losses.array()).matrix();
  double z = 0.0;
  for (Eigen::Index i = 0; i < 8; ++i) z += lambda * std::exp(-lambda * losses(i));
  VectorXd logits = VectorXd::Zero(8);
  double kl = 0.0;
  for (int step = 0; step < 2000; ++step) {
    const auto r = trainer::elbo_exact(logits, log_p);
    kl = kl_divergence(logits, log_p);
    REQUIRE(std::abs(r.elbo + kl - std::log(z)) < 1e-10);
    logits += 0.5 * r.grad;
  }
  CHECK(kl < 1e-3);
}

TEST_CASE("training is deterministic and resumes bitwise from a checkpoint") {
  const auto grid = grid::load_case(test::data_path("case3_uc.m"));
  const auto cfg = small_config();
  const auto prob = trainer::Problem::make(grid, cfg);
  const auto train = scaled_demands(grid, {0.7, 0.9, 1.0, 1.1, 1.3});

  auto b1 = policy::make_bundle(grid, cfg.hidden, cfg.seed);
  auto s1 = trainer::initialize(b1, prob);
  const auto m1 = run_steps(b1, s1, prob, train, cfg, 10);
  auto b2 = policy::make_bundle(grid, cfg.hidden, cfg.seed);
  auto s2 = trainer::initialize(b2, prob);
  run_steps(b2, s2, prob, train, cfg, 10);
  CHECK(b1.theta.params == b2.theta.params);
  CHECK(b1.psi.params == b2.psi.params);
  CHECK(b1.phi.params == b2.phi.params);

  auto b3 = policy::make_bundle(grid, cfg.hidden, cfg.seed);
  auto s3 = trainer::initialize(b3, prob);
  run_steps(b3, s3, prob, train, cfg, 4);
  const auto path = (std::filesystem::temp_directory_path() / "lopf_resume_test.json").string();
  trainer::save_checkpoint(path, b3, s3, cfg);
  auto ck = trainer::load_checkpoint(path, grid);
  CHECK(ck.config.hash() == cfg.hash());
  const auto m3 = run_steps(ck.bundle, ck.state, prob, train, ck.config, 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(m3[static_cast<std::size_t>(i)].step == m1[static_cast<std::size_t>(i + 4)].step);
    CHECK(m3[static_cast<std::size_t>(i)].elbo == m1[static_cast<std::size_t>(i + 4)].elbo);
    CHECK(m3[static_cast<std::size_t>(i)].mean_loss == m1[static_cast<std::size_t>(i + 4)].mean_loss);
    CHECK(m3[static_cast<std::size_t>(i)].lambda == m1[static_cast<std::size_t>(i + 4)].lambda);
  }
  CHECK(ck.bundle.theta.params == b1.theta.params);
  CHECK(ck.bundle.phi.params == b1.phi.params);

  const auto other = grid::load_case(test::data_path("case14.m"));
  CHECK_THROWS_AS(trainer::load_checkpoint(path, other), ContractError);
  { std::ofstream(path) << "{not json"; }
  CHECK_THROWS_AS(trainer::load_checkpoint(path, grid), ContractError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(trainer::load_checkpoint(path, grid), IoError);
}

TEST_CASE("a small dual step cannot lower the Lagrangian on the batch") {
  const auto grid = grid::load_case(test::data_path("case3_uc.m"));
  auto cfg = small_config();
  cfg.optimizer = "sgd";
  cfg.lr_theta = 0.0;
  cfg.lr_phi = 0.0;
  cfg.lr_psi = 1e-6;
  const auto prob = trainer::Problem::make(grid, cfg);
  const auto batch = scaled_demands(grid, {1.9, 2.0, 2.1});
  auto b = policy::make_bundle(grid, cfg.hidden, 8);
  auto st = trainer::initialize(b, prob);
  // S = 2 covers both commitments, so the sampled set is known in advance.
  const auto total = [&](const policy::PolicyBundle& bb, double* violation) {
    double sum = 0.0;
    for (const auto& d : batch) {
      for (int on : {0, 1}) {
        const auto t = trainer::solve_triplet(bb, prob, d, {on}, trainer::Gradients::none);
        if (!t.physical) continue;
        sum += t.loss;
        if (violation) *violation += t.k.cwiseMax(0.0).sum();
      }
    }
    return sum;
  };
  double violation = 0.0;
  const double before = total(b, &violation);
  REQUIRE(violation > 0.0);
  const auto theta = b.theta.params;
  trainer::train_step(b, st, prob, batch, cfg);
  CHECK(b.theta.params == theta);
  const double after = total(b, nullptr);
  CHECK(after >= before - 1e-9);
  CHECK(after > before);
}

TEST_CASE("inference with every configuration matches exhaustive search given g") {
  const auto grid = grid::load_case(test::data_path("case3_uc.m"));
  const auto cfg = small_config();
  const auto prob = trainer::Problem::make(grid, cfg);
  auto b = policy::make_bundle(grid, cfg.hidden, 2);
  trainer::initialize(b, prob);
  for (const auto& d : scaled_demands(grid, {0.6, 1.0, 1.4})) {
    const auto inf = trainer::infer(b, prob, d, 2, 3);
    CHECK(inf.candidates == 2);
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> arg;
    for (int on : {0, 1}) {
      const auto t = trainer::solve_triplet(b, prob, d, {on}, trainer::Gradients::none);
      if (trainer::check_feasibility(t.solution, grid).feasible && t.cost < best) {
        best = t.cost;
        arg = {on};
      }
    }
    if (!arg.empty()) {
      CHECK(inf.feasible);
      CHECK(inf.commitment == arg);
      CHECK(std::abs(inf.cost - best) <= 1e-9 * best);
    }
  }
}

TEST_CASE("evaluation needs a test set and reports feasibility") {
  const auto grid = grid::load_case(test::data_path("case3_uc.m"));
  const auto cfg = small_config();
  const auto prob = trainer::Problem::make(grid, cfg);
  auto b = policy::make_bundle(grid, cfg.hidden, 2);
  trainer::initialize(b, prob);
  CHECK_THROWS_AS(trainer::evaluate(b, prob, {}, 2, 1), PreconditionError);
  const auto test_set = scaled_demands(grid, {0.8, 1.0});
  const auto rep = trainer::evaluate(b, prob, test_set, 2, 1, {}, 2);
  CHECK(rep.rows.size() == 2);
  CHECK(rep.feasible_pct >= 0.0);
  CHECK(rep.feasible_pct <= 100.0);
  const auto rep1 = trainer::evaluate(b, prob, test_set, 2, 1, {}, 1);
  CHECK(rep1.mean_cost == rep.mean_cost);
}

TEST_CASE("config validation") {
  trainer::TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.samples = 1;
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  c = {};
  c.optimizer = "rmsprop";
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  c = {};
  c.pade_m = 11;
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  c = {};
  auto d = c;
  d.steps = 9;
  d.threads = 4;
  CHECK(c.hash() == d.hash());
  d.lr_phi = 0.5;
  CHECK(c.hash() != d.hash());
  CHECK(trainer::TrainConfig::from_json(c.to_json()).hash() == c.hash());
}
