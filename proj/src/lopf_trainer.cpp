#include "lopf/lopf_trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "lopf/binary_sampler.hpp"
#include "lopf/error.hpp"
#include "lopf/rng.hpp"

namespace lopf::trainer {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kProbFloor = 1e-12;

template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<Complex> per_bus(const policy::PolicyLayout& lay, const std::vector<Complex>& units,
                             const std::vector<int>& commitment) {
  std::vector<Complex> g(lay.buses, Complex{});
  for (std::size_t j = 0; j < units.size(); ++j) {
    if (commitment[j] != 0) g[lay.gen_bus[j]] = units[j];
  }
  return g;
}

Eigen::VectorXd clamp_probs(const Eigen::VectorXd& p) {
  return p.unaryExpr([](double v) { return std::clamp(v, kProbFloor, 1.0 - kProbFloor); });
}

bool finite(const VectorXd& v) { return v.size() == 0 || v.allFinite(); }

void apply_update(VectorXd& params, const VectorXd& grad, OptimizerState& st, double lr, const std::string& kind,
                  bool ascent) {
  const double sign = ascent ? 1.0 : -1.0;
  if (kind == "sgd") {
    params += sign * lr * grad;
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (st.m.size() != params.size()) {
    st.m = VectorXd::Zero(params.size());
    st.v = VectorXd::Zero(params.size());
    st.t = 0;
  }
  ++st.t;
  st.m = b1 * st.m + (1.0 - b1) * grad;
  st.v = b2 * st.v + (1.0 - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  params += sign * lr * ((st.m / c1).array() / ((st.v / c2).array().sqrt() + eps)).matrix();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd vec_from(const nlohmann::json& j) {
  const auto xs = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

nlohmann::json opt_json(const OptimizerState& s) { return {{"m", vec_json(s.m)}, {"v", vec_json(s.v)}, {"t", s.t}}; }

OptimizerState opt_from(const nlohmann::json& j) {
  OptimizerState s;
  s.m = vec_from(j.at("m"));
  s.v = vec_from(j.at("v"));
  s.t = j.at("t").get<long>();
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  const auto need = [](bool ok, const std::string& what) {
    if (!ok) throw PreconditionError(what);
  };
  need(batch >= 1, "batch must be at least 1");
  need(samples >= 2, "samples must be at least 2");
  for (double lr : {lr_theta, lr_psi, lr_phi}) need(std::isfinite(lr) && lr >= 0.0, "learning rates must be >= 0");
  need(optimizer == "sgd" || optimizer == "adam", "optimizer must be sgd or adam");
  need(std::isfinite(ln_xi), "ln xi must be finite");
  need(pade_m >= 0 && n_max >= 2 * pade_m && n_max >= 1, "need n_max >= 2 * pade_m");
  need(steps >= 0, "steps must be non-negative");
  need(hidden >= 1, "hidden width must be positive");
  need(threads >= 1, "threads must be at least 1");
  need(lambda_window >= 1, "lambda window must be at least 1");
  need(penalty_factor > 0.0, "penalty factor must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch", batch},         {"samples", samples},   {"lr_theta", lr_theta},
          {"lr_psi", lr_psi},       {"lr_phi", lr_phi},     {"optimizer", optimizer},
          {"ln_xi", ln_xi},         {"n_max", n_max},       {"pade_m", pade_m},
          {"steps", steps},         {"seed", seed},         {"hidden", hidden},
          {"threads", threads},     {"lambda_window", lambda_window},
          {"penalty_factor", penalty_factor}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch = j.value("batch", c.batch);
  c.samples = j.value("samples", c.samples);
  c.lr_theta = j.value("lr_theta", c.lr_theta);
  c.lr_psi = j.value("lr_psi", c.lr_psi);
  c.lr_phi = j.value("lr_phi", c.lr_phi);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.ln_xi = j.value("ln_xi", c.ln_xi);
  c.n_max = j.value("n_max", c.n_max);
  c.pade_m = j.value("pade_m", c.pade_m);
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
  c.hidden = j.value("hidden", c.hidden);
  c.threads = j.value("threads", c.threads);
  c.lambda_window = j.value("lambda_window", c.lambda_window);
  c.penalty_factor = j.value("penalty_factor", c.penalty_factor);
  return c;
}

std::string TrainConfig::hash() const {
  auto j = to_json();
  j.erase("steps");
  j.erase("threads");
  std::ostringstream os;
  os << std::hex << fnv1a(j.dump());
  return os.str();
}

Problem Problem::make(grid::GridCase g, const TrainConfig& config) {
  Problem p;
  p.adm = grid::build_admittance(g);
  p.grid = std::move(g);
  p.helm.n_max = config.n_max;
  p.helm.pade_m = config.pade_m;
  p.helm.ln_xi = config.ln_xi;
  return p;
}

// ---------------------------------------------------------------------------

Triplet solve_triplet(const policy::PolicyBundle& bundle, const Problem& problem, const Demand& demand,
                      const std::vector<int>& commitment, Gradients grads) {
  const auto& lay = bundle.layout;
  const auto units = lay.unit_count();
  Triplet t;
  t.epsilon = kInf;
  t.c_bar = kInf;
  t.loss = kInf;
  t.cost = kInf;

  const policy::GOutput g = policy::forward_g(bundle, demand, commitment);
  t.v_s = g.v_s;
  ad::Tape tape;
  std::vector<ad::Var> unit_vars, masked;
  for (std::size_t j = 0; j < units; ++j) {
    unit_vars.push_back(tape.record(g.generation[j]));
    masked.push_back(commitment[j] != 0 ? unit_vars.back() : tape.constant(0.0));
    t.generation.push_back(commitment[j] != 0 ? g.generation[j] : Complex{});
  }
  const ad::Var vs = tape.record_real(g.v_s);
  std::vector<ad::Var> gen_bus(lay.buses), dem;
  for (std::size_t i = 0; i < lay.buses; ++i) {
    gen_bus[i] = tape.constant(0.0);
    dem.push_back(tape.constant(demand.at(i)));
  }
  for (std::size_t j = 0; j < units; ++j) {
    if (commitment[j] != 0) gen_bus[lay.gen_bus[j]] = masked[j];
  }

  helm::TrackedSolution ts;
  try {
    ts = helm::solve_powerflow(tape, problem.adm, dem, gen_bus, vs, problem.helm);
  } catch (const Error& e) {
    t.solution.diagnostics.push_back(e.what());
    return t;
  }
  t.solution = ts.value;
  t.epsilon = ts.value.epsilon;
  t.c_bar = ts.value.c_bar_tail;
  t.solved = ts.ok;
  t.physical = ts.ok && std::log(t.epsilon) < problem.helm.ln_xi;

  ad::Var loss, ln_cbar, cost;
  VectorXd kplus;
  policy::UOutput u;
  if (ts.ok) {
    const auto k = policy::constraint_values(tape, ts, problem.grid);
    t.k.resize(static_cast<Eigen::Index>(k.size()));
    kplus.resize(t.k.size());
    std::vector<ad::Var> kp;
    for (std::size_t i = 0; i < k.size(); ++i) {
      t.k(static_cast<Eigen::Index>(i)) = k[i].real_value();
      kp.push_back(tape.relu(k[i]));
      kplus(static_cast<Eigen::Index>(i)) = kp.back().real_value();
    }
    u = policy::forward_u(bundle, demand, kplus);
    t.multipliers = bundle.multiplier_scale * u.multipliers;
    std::vector<Complex> coeffs(kp.size());
    for (std::size_t i = 0; i < kp.size(); ++i) coeffs[i] = t.multipliers(static_cast<Eigen::Index>(i));
    cost = policy::generation_cost(tape, problem.grid, masked, commitment, ts.slack_injection);
    t.cost = cost.real_value();
    loss = cost + tape.combine(coeffs, kp);
    t.loss = loss.real_value();
  }
  const bool cbar_ok = std::isfinite(t.c_bar) && t.c_bar > 0.0;
  if (cbar_ok) ln_cbar = tape.log(ts.c_bar_tail);

  const bool want_loss = ts.ok && (grads == Gradients::all || (grads == Gradients::automatic && t.physical));
  const bool want_proxy = cbar_ok && (grads == Gradients::all || (grads == Gradients::automatic && !t.physical));
  const auto theta_grad = [&]() {
    VectorXd dp(static_cast<Eigen::Index>(units)), dq(static_cast<Eigen::Index>(units));
    for (std::size_t j = 0; j < units; ++j) {
      const Complex a = tape.grad(unit_vars[j]);
      dp(static_cast<Eigen::Index>(j)) = a.real();
      dq(static_cast<Eigen::Index>(j)) = a.imag();
    }
    return policy::backward_g(bundle, g, dp, dq, tape.grad(vs).real());
  };
  if (want_loss) {
    tape.backward(loss);
    t.grad_theta_loss = theta_grad();
    t.grad_psi = policy::backward_u(bundle, u, bundle.multiplier_scale * kplus);
  }
  if (ts.ok && grads == Gradients::all) {
    tape.backward(cost);
    t.grad_theta_cost = theta_grad();
  }
  if (want_proxy) {
    tape.backward(ln_cbar);
    t.grad_theta_proxy = theta_grad();
  }
  return t;
}

Feasibility check_feasibility(const helm::PFSolution& solution, const grid::GridCase& grid, double ln_xi) {
  Feasibility f;
  if (!(std::log(solution.epsilon) < ln_xi)) f.violated.emplace_back("mismatch");
  bool voltage_ok = solution.v.size() == grid.bus_count();
  for (std::size_t i = 0; voltage_ok && i < grid.bus_count(); ++i) {
    const double mag = std::abs(solution.v[i]);
    voltage_ok = mag <= grid.buses[i].v_max && mag >= grid.buses[i].v_min;
  }
  const auto& g = grid.slack_generator();
  const Complex s = solution.slack_injection;
  const bool slack_ok = s.real() <= g.p_max && s.real() >= g.p_min && s.imag() <= g.q_max && s.imag() >= g.q_min;
  if (!slack_ok) f.violated.emplace_back("slack-limits");
  if (!voltage_ok) f.violated.emplace_back("voltage-limits");
  f.feasible = f.violated.empty();
  return f;
}

ElboResult elbo(const std::vector<ElboSample>& samples, const VectorXd& logits, double lambda, double penalty) {
  if (samples.size() < 2) throw PreconditionError("ELBO needs at least two samples for the baseline");
  const auto s = samples.size();
  std::vector<double> reward(s), log_q(s);
  double mean_reward = 0.0;
  ElboResult out;
  for (std::size_t j = 0; j < s; ++j) {
    const double l = samples[j].feasible ? samples[j].loss : penalty;
    reward[j] = std::log(lambda) - lambda * l;
    log_q[j] = policy::log_prob(logits, samples[j].bits);
    out.elbo += reward[j] - log_q[j];
    mean_reward += reward[j];
  }
  out.elbo /= static_cast<double>(s);
  out.grad_logits = VectorXd::Zero(logits.size());
  for (std::size_t j = 0; j < s; ++j) {
    const double baseline = (mean_reward - reward[j]) / static_cast<double>(s - 1);
    out.grad_logits += (reward[j] - baseline) * policy::log_prob_grad(logits, samples[j].bits);
  }
  out.grad_logits /= static_cast<double>(s);
  // Entropy of independent Bernoullis: dH/dl = -l p (1 - p).
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits(i)));
    out.grad_logits(i) -= logits(i) * p * (1.0 - p);
  }
  return out;
}

ExactElbo elbo_exact(const VectorXd& logits, const VectorXd& log_p) {
  if (logits.size() != log_p.size() || logits.size() == 0) throw DimensionError("logits and log p must match");
  const double mx = logits.maxCoeff();
  const VectorXd ex = (logits.array() - mx).exp();
  const double z = ex.sum();
  const VectorXd q = ex / z;
  const VectorXd log_q = (logits.array() - mx - std::log(z)).matrix();
  const double pmx = log_p.maxCoeff();
  ExactElbo out;
  out.log_evidence = pmx + std::log((log_p.array() - pmx).exp().sum());
  const VectorXd f = log_p - log_q;
  out.elbo = q.dot(f);
  out.kl = out.log_evidence - out.elbo;
  out.grad = q.cwiseProduct((f.array() - out.elbo).matrix());
  return out;
}

// ---------------------------------------------------------------------------

double TrainerState::lambda() const {
  if (cost_window.empty()) return 1.0 / bootstrap_cost;
  const double mean = std::accumulate(cost_window.begin(), cost_window.end(), 0.0) /
                      static_cast<double>(cost_window.size());
  return 1.0 / std::max(mean, 1e-9);
}

double TrainerState::penalty(double factor) const {
  return factor * (running_max_loss ? std::max(*running_max_loss, bootstrap_cost) : bootstrap_cost);
}

TrainerState initialize(policy::PolicyBundle& bundle, const Problem& problem) {
  const auto& lay = bundle.layout;
  const std::vector<int> all_on(lay.unit_count(), 1);
  std::vector<Complex> units;
  for (std::size_t j = 0; j < lay.unit_count(); ++j) {
    const auto i = static_cast<Eigen::Index>(j);
    units.emplace_back(0.5 * (lay.p_min(i) + lay.p_max(i)), 0.5 * (lay.q_min(i) + lay.q_max(i)));
  }
  const double v_s = 0.5 * (lay.v_min + lay.v_max);
  double cost = kInf;
  try {
    const auto sol = helm::solve_powerflow(problem.adm, problem.grid.demand(), per_bus(lay, units, all_on), v_s,
                                           problem.helm);
    cost = policy::generation_cost(problem.grid, units, all_on, sol.slack_injection);
  } catch (const Error&) {
  }
  if (!std::isfinite(cost) || cost < 1.0) {
    cost = 0.0;
    for (const auto& g : problem.grid.generators) cost += g.cost(0.5 * (g.p_min + g.p_max));
    cost = std::max(std::abs(cost), 1.0);
  }
  TrainerState st;
  st.bootstrap_cost = cost;
  bundle.multiplier_scale = cost;
  return st;
}

std::vector<std::size_t> select_batch(std::size_t train_size, const TrainConfig& config, long step) {
  if (train_size == 0) throw PreconditionError("training set is empty");
  std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(step), 0xba7c4ULL));
  std::vector<std::size_t> idx(static_cast<std::size_t>(config.batch));
  for (auto& i : idx) i = static_cast<std::size_t>(rng() % train_size);
  return idx;
}

StepMetrics train_step(policy::PolicyBundle& bundle, TrainerState& state, const Problem& problem,
                       const std::vector<Demand>& batch, const TrainConfig& config) {
  if (batch.empty()) throw PreconditionError("batch is empty");
  const auto units = bundle.layout.unit_count();
  if (units < 63 && static_cast<std::uint64_t>(config.samples) > (std::uint64_t{1} << units)) {
    throw PreconditionError("samples exceed the number of distinct commitments");
  }
  const double lambda = state.lambda();
  const double penalty = state.penalty(config.penalty_factor);

  struct InstanceResult {
    std::vector<Triplet> triplets;
    std::vector<int> fully_feasible;
    ElboResult elbo;
    VectorXd grad_phi;
  };
  std::vector<InstanceResult> results(batch.size());
  parallel_for(batch.size(), config.threads, [&](std::size_t i) {
    auto& r = results[i];
    const policy::BOutput b = policy::forward_b(bundle, batch[i]);
    const auto configs = sampler::sample_without_replacement(
        clamp_probs(b.probs), config.samples, derive_seed(config.seed, static_cast<std::uint64_t>(state.step), i));
    std::vector<ElboSample> es;
    for (const auto& c : configs) {
      r.triplets.push_back(solve_triplet(bundle, problem, batch[i], c.bits));
      const auto& t = r.triplets.back();
      es.push_back({c.bits, t.loss, t.physical});
      r.fully_feasible.push_back(t.physical && check_feasibility(t.solution, problem.grid, config.ln_xi).feasible);
    }
    r.elbo = elbo(es, b.logits, lambda, penalty);
    r.grad_phi = policy::backward_b(bundle, b, r.elbo.grad_logits);
  });

  StepMetrics m;
  m.step = state.step;
  m.lambda = lambda;
  VectorXd g_phi = VectorXd::Zero(bundle.phi.params.size());
  VectorXd g_psi = VectorXd::Zero(bundle.psi.params.size());
  VectorXd g_theta_l = VectorXd::Zero(bundle.theta.params.size());
  VectorXd g_theta_c = VectorXd::Zero(bundle.theta.params.size());
  std::size_t n_trip = 0, n_phys = 0, n_proxy = 0, n_eps = 0, n_feasible_inst = 0;
  double sum_ln_eps = 0.0, sum_loss = 0.0, sum_elbo = 0.0;
  std::vector<double> new_costs;
  double max_loss = -kInf;
  for (const auto& r : results) {
    g_phi += r.grad_phi;
    sum_elbo += r.elbo.elbo;
    if (std::any_of(r.fully_feasible.begin(), r.fully_feasible.end(), [](int f) { return f != 0; })) {
      ++n_feasible_inst;
    }
    for (const auto& t : r.triplets) {
      ++n_trip;
      const double le = std::log(t.epsilon);
      if (std::isfinite(le)) {
        sum_ln_eps += le;
        ++n_eps;
      }
      if (t.physical) {
        ++n_phys;
        sum_loss += t.loss;
        max_loss = std::max(max_loss, t.loss);
        new_costs.push_back(t.cost);
        if (t.grad_psi.size() > 0) g_psi += lambda * t.grad_psi;
        if (t.grad_theta_loss.size() > 0) g_theta_l += lambda * t.grad_theta_loss;
      } else if (t.grad_theta_proxy.size() > 0) {
        g_theta_c += t.grad_theta_proxy;
        ++n_proxy;
      }
    }
  }
  m.physical_frac = static_cast<double>(n_phys) / static_cast<double>(n_trip);
  m.feasible_frac = static_cast<double>(n_feasible_inst) / static_cast<double>(batch.size());
  m.mean_ln_eps = n_eps > 0 ? sum_ln_eps / static_cast<double>(n_eps) : kInf;
  m.mean_loss = n_phys > 0 ? sum_loss / static_cast<double>(n_phys) : std::numeric_limits<double>::quiet_NaN();
  m.elbo = sum_elbo / static_cast<double>(batch.size());

  g_phi /= static_cast<double>(batch.size());
  if (n_phys > 0) {
    g_psi /= static_cast<double>(n_phys);
    g_theta_l /= static_cast<double>(n_phys);
  }
  if (n_proxy > 0) g_theta_c /= static_cast<double>(n_proxy);

  const auto update = [&](const char* name, VectorXd& params, const VectorXd& grad, OptimizerState& st, double lr,
                          bool ascent, bool active) {
    if (!active) return;
    if (!finite(grad)) {
      ++m.skipped_updates;
      m.diagnostics.push_back(std::string("non-finite gradient for ") + name + "; update skipped");
      return;
    }
    apply_update(params, grad, st, lr, config.optimizer, ascent);
  };
  update("phi", bundle.phi.params, g_phi, state.phi, config.lr_phi, true, true);
  update("psi", bundle.psi.params, g_psi, state.psi, config.lr_psi, true, n_phys > 0);
  update("theta(loss)", bundle.theta.params, g_theta_l, state.theta_loss, config.lr_theta, false, n_phys > 0);
  update("theta(proxy)", bundle.theta.params, g_theta_c, state.theta_proxy, config.lr_theta, false, n_proxy > 0);

  for (double c : new_costs) {
    state.cost_window.push_back(c);
    while (static_cast<int>(state.cost_window.size()) > config.lambda_window) state.cost_window.pop_front();
  }
  if (n_phys > 0) state.running_max_loss = std::max(state.running_max_loss.value_or(-kInf), max_loss);
  ++state.step;
  return m;
}

// ---------------------------------------------------------------------------

Inference infer(const policy::PolicyBundle& bundle, const Problem& problem, const Demand& demand, int samples,
                std::uint64_t seed) {
  if (samples < 1) throw PreconditionError("samples must be at least 1");
  const auto& lay = bundle.layout;
  const policy::BOutput b = policy::forward_b(bundle, demand);
  const VectorXd probs = clamp_probs(b.probs);
  std::uint64_t cap = lay.unit_count() < 63 ? std::uint64_t{1} << lay.unit_count() : ~std::uint64_t{0};
  const int count = static_cast<int>(std::min<std::uint64_t>(cap, static_cast<std::uint64_t>(samples)));
  // The mode first, then sampled alternatives.
  auto candidates = sampler::most_probable(probs, 1);
  for (auto& c : sampler::sample_without_replacement(probs, count, seed)) {
    if (c.bits != candidates.front().bits && static_cast<int>(candidates.size()) < count) {
      candidates.push_back(std::move(c));
    }
  }

  Inference best;
  bool have = false;
  double best_eps = kInf;
  for (const auto& c : candidates) {
    const policy::GOutput g = policy::forward_g(bundle, demand, c.bits);
    std::vector<Complex> units(lay.unit_count());
    for (std::size_t j = 0; j < units.size(); ++j) units[j] = c.bits[j] != 0 ? g.generation[j] : Complex{};
    Inference cand;
    cand.commitment = c.bits;
    cand.generation = units;
    cand.v_s = g.v_s;
    try {
      cand.solution = helm::solve_powerflow(problem.adm, demand, per_bus(lay, units, c.bits), g.v_s, problem.helm);
    } catch (const Error& e) {
      cand.solution.epsilon = kInf;
      cand.solution.diagnostics.push_back(e.what());
    }
    const auto f = check_feasibility(cand.solution, problem.grid, problem.helm.ln_xi);
    cand.feasible = f.feasible;
    cand.violated = f.violated;
    cand.cost = cand.solution.v.empty() ? kInf
                                        : policy::generation_cost(problem.grid, units, c.bits,
                                                                  cand.solution.slack_injection);
    bool take = false;
    if (!have) {
      take = true;
    } else if (cand.feasible != best.feasible) {
      take = cand.feasible;
    } else if (cand.feasible) {
      take = cand.cost < best.cost;
    } else {
      take = cand.solution.epsilon < best_eps;
    }
    if (take) {
      best = std::move(cand);
      best_eps = best.solution.epsilon;
      have = true;
    }
  }
  best.candidates = static_cast<int>(candidates.size());
  return best;
}

EvalReport evaluate(const policy::PolicyBundle& bundle, const Problem& problem, const std::vector<Demand>& test,
                    int samples, std::uint64_t seed, const std::vector<std::optional<double>>& oracle,
                    int threads) {
  if (test.empty()) throw PreconditionError("test set is empty");
  if (!oracle.empty() && oracle.size() != test.size()) throw DimensionError("one oracle cost per test instance");
  EvalReport rep;
  rep.rows.resize(test.size());
  parallel_for(test.size(), threads, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Inference inf = infer(bundle, problem, test[i], samples, derive_seed(seed, i, 0x1f));
    const auto t1 = std::chrono::steady_clock::now();
    EvalRow& row = rep.rows[i];
    row.instance = i;
    row.feasible = inf.feasible;
    row.cost = inf.cost;
    row.violated = inf.violated;
    row.seconds = std::chrono::duration<double>(t1 - t0).count();
    if (!inf.solution.v.empty() && std::isfinite(inf.solution.epsilon)) {
      const VectorXd k = policy::constraint_values(inf.solution, problem.grid);
      row.kkt = k.allFinite() && k.maxCoeff() <= 1e-6;
    }
    if (!oracle.empty()) row.oracle_cost = oracle[i];
  });
  std::size_t feasible = 0, kkt = 0;
  double seconds = 0.0;
  for (const auto& row : rep.rows) {
    feasible += row.feasible ? 1 : 0;
    kkt += row.kkt ? 1 : 0;
    seconds += row.seconds;
    if (row.feasible && (oracle.empty() || row.oracle_cost)) {
      rep.mean_cost += row.cost;
      if (row.oracle_cost) rep.mean_oracle_cost += *row.oracle_cost;
      ++rep.cost_instances;
    }
  }
  const auto n = static_cast<double>(test.size());
  rep.feasible_pct = 100.0 * static_cast<double>(feasible) / n;
  rep.kkt_pct = 100.0 * static_cast<double>(kkt) / n;
  rep.mean_seconds = seconds / n;
  if (rep.cost_instances > 0) {
    rep.mean_cost /= static_cast<double>(rep.cost_instances);
    rep.mean_oracle_cost /= static_cast<double>(rep.cost_instances);
  }
  return rep;
}

// ---------------------------------------------------------------------------

nlohmann::json checkpoint_json(const policy::PolicyBundle& bundle, const TrainerState& state,
                               const TrainConfig& config) {
  nlohmann::json tr = {{"step", state.step},
                       {"cost_window", std::vector<double>(state.cost_window.begin(), state.cost_window.end())},
                       {"bootstrap_cost", state.bootstrap_cost},
                       {"optimizers",
                        {{"theta_loss", opt_json(state.theta_loss)},
                         {"theta_proxy", opt_json(state.theta_proxy)},
                         {"psi", opt_json(state.psi)},
                         {"phi", opt_json(state.phi)}}}};
  tr["running_max_loss"] = state.running_max_loss ? nlohmann::json(*state.running_max_loss) : nlohmann::json();
  return {{"format", "lopf-checkpoint"}, {"version", 1},          {"config_hash", config.hash()},
          {"config", config.to_json()},  {"policy", policy::to_json(bundle)}, {"trainer", tr}};
}

void save_checkpoint(const std::string& path, const policy::PolicyBundle& bundle, const TrainerState& state,
                     const TrainConfig& config) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << checkpoint_json(bundle, state, config).dump(1) << '\n';
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path, const grid::GridCase& grid) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "lopf-checkpoint") throw ContractError("not a checkpoint file: " + path);
  Checkpoint c;
  try {
    c.config = TrainConfig::from_json(j.at("config"));
    if (j.at("config_hash").get<std::string>() != c.config.hash()) {
      throw ContractError("checkpoint config hash does not match its config");
    }
    c.bundle = policy::bundle_from_json(j.at("policy"), grid);
    const auto& tr = j.at("trainer");
    c.state.step = tr.at("step").get<long>();
    for (double v : tr.at("cost_window").get<std::vector<double>>()) c.state.cost_window.push_back(v);
    c.state.bootstrap_cost = tr.at("bootstrap_cost").get<double>();
    if (!tr.at("running_max_loss").is_null()) c.state.running_max_loss = tr.at("running_max_loss").get<double>();
    const auto& o = tr.at("optimizers");
    c.state.theta_loss = opt_from(o.at("theta_loss"));
    c.state.theta_proxy = opt_from(o.at("theta_proxy"));
    c.state.psi = opt_from(o.at("psi"));
    c.state.phi = opt_from(o.at("phi"));
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("checkpoint " + path + " is malformed: " + e.what());
  }
  return c;
}

}  // namespace lopf::trainer
