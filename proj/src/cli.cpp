#include "lopf/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "lopf/demand_datakit.hpp"
#include "lopf/error.hpp"
#include "lopf/grid_model.hpp"
#include "lopf/helm.hpp"
#include "lopf/lopf_trainer.hpp"
#include "lopf/pf_oracle.hpp"
#include "lopf/rng.hpp"

namespace lopf::cli {

namespace {

struct Settings {
  std::string case_path;
  std::string demand_path;
  std::string checkpoint;
  std::string out = "-";
  std::uint64_t seed = 1;
  trainer::TrainConfig train;
  // demand stream
  std::size_t synth_count = 2500;
  double ratio = 0.15;
  double train_fraction = 0.8;
  std::uint64_t data_seed = 7;
  int row = -1;
  double load_scale = 1.0;
  double alpha = 1.0;
  double v_s = std::numeric_limits<double>::quiet_NaN();
  // subcommand specifics
  int points = 20;
  int count = 500;
  std::string orders = "10,20,30,40";
  std::string mode = "nr";
  int resolution = 21;
  int slack_points = 5;
  bool with_oracle = false;
  int limit = 0;
  int checkpoint_every = 50;
  bool resume = false;
  int eps_n_max = 4;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string bits_text(const std::vector<int>& bits) {
  std::string s;
  for (int b : bits) s += b != 0 ? '1' : '0';
  return s.empty() ? "-" : s;
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f << text;
    if (!f) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

grid::GridCase need_case(const Settings& s) {
  if (s.case_path.empty()) throw UsageError("--case is required");
  return grid::load_case(s.case_path);
}

helm::Options helm_options(const Settings& s) {
  helm::Options o;
  o.n_max = s.train.n_max;
  o.pade_m = s.train.pade_m;
  o.ln_xi = s.train.ln_xi;
  return o;
}

std::vector<trainer::Demand> scaled(std::vector<trainer::Demand> rows, double k) {
  for (auto& r : rows) {
    for (auto& x : r) x *= k;
  }
  return rows;
}

// --demand rows (all, or --row), else the base case.
std::vector<trainer::Demand> explicit_demand(const grid::GridCase& g, const Settings& s) {
  std::vector<trainer::Demand> rows;
  if (!s.demand_path.empty()) {
    rows = demand::load_csv(s.demand_path, g);
    if (s.row >= 0) {
      if (static_cast<std::size_t>(s.row) >= rows.size()) throw UsageError("--row is past the end of the demand file");
      rows = {rows[static_cast<std::size_t>(s.row)]};
    }
  } else {
    rows = {g.demand()};
  }
  return scaled(std::move(rows), s.load_scale);
}

// Training or test part of the demand stream (--demand file, else synthetic).
std::vector<trainer::Demand> stream_part(const grid::GridCase& g, const Settings& s, bool train_part) {
  std::vector<trainer::Demand> rows;
  if (!s.demand_path.empty()) {
    rows = demand::load_csv(s.demand_path, g);
  } else {
    rows = demand::synthesize(g, s.synth_count, s.ratio, s.data_seed).rows;
  }
  auto [train, test] = demand::split(rows, s.train_fraction);
  return train_part ? train : test;
}

std::vector<int> parse_ints(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw UsageError("bad integer list '" + text + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string cmd_solve(const Settings& s) {
  const auto g = need_case(s);
  const auto adm = grid::build_admittance(g);
  const auto d = explicit_demand(g, s).front();
  auto gen = g.base_generation();
  for (auto& x : gen) x *= s.alpha;
  const double v_s = std::isnan(s.v_s) ? g.slack_generator().v_setpoint : s.v_s;
  const auto t0 = std::chrono::steady_clock::now();
  const auto sol = helm::solve_powerflow(adm, d, gen, v_s, helm_options(s));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream os;
  os << "# case=" << g.name << " n_max=" << s.train.n_max << " pade_m=" << s.train.pade_m << '\n';
  os << "# ln_eps=" << num(sol.ln_epsilon()) << " converged=" << (sol.converged ? 1 : 0)
     << " c_bar_tail=" << num(sol.c_bar_tail) << " slack_p=" << num(sol.slack_injection.real())
     << " slack_q=" << num(sol.slack_injection.imag()) << " seconds=" << num(secs) << '\n';
  for (const auto& msg : sol.diagnostics) os << "# diagnostic: " << msg << '\n';
  os << "# bus\tvm\tva_deg\n";
  for (std::size_t i = 0; i < g.bus_count(); ++i) {
    os << g.buses[i].id << '\t' << num(std::abs(sol.v[i])) << '\t' << num(std::arg(sol.v[i]) * 180.0 / M_PI) << '\n';
  }
  return os.str();
}

double rel_error(const Eigen::VectorXd& tape, const std::vector<double>& fd) {
  const Eigen::Map<const Eigen::VectorXd> f(fd.data(), static_cast<Eigen::Index>(fd.size()));
  const double scale = f.norm();
  return scale > 0.0 ? (tape - f).norm() / scale : (tape - f).norm();
}

std::string cmd_gradcheck(const Settings& s) {
  const auto g = need_case(s);
  trainer::TrainConfig cfg = s.train;
  const auto problem = trainer::Problem::make(g, cfg);
  if (s.eps_n_max < 2) throw UsageError("--eps-n-max must be at least 2");
  const auto units = g.controllable_generators();
  std::vector<std::size_t> unit_bus;
  for (auto u : units) unit_bus.push_back(g.bus_index(g.generators[u].bus_id));
  const auto base_gen = g.base_generation();
  const double v_s = g.slack_generator().v_setpoint;

  std::ostringstream os;
  os << "# case=" << g.name << " points=" << s.points << " seed=" << s.seed << " h=1e-06"
     << " eps_order_max=" << s.eps_n_max << '\n';
  os << "# point\tquantity\trel_error\n";
  double worst = 0.0;
  for (int p = 0; p < s.points; ++p) {
    std::mt19937_64 rng(derive_seed(s.seed, static_cast<std::uint64_t>(p)));
    std::vector<Complex> d, gen;
    helm::Options eps_opts = problem.helm;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 100) throw PreconditionError("no feasible random point found");
      d = g.demand();
      for (auto& x : d) x *= 0.8 + 0.4 * uniform01(rng);
      gen = base_gen;
      for (auto b : unit_bus) gen[b] = Complex(gen[b].real() * (0.8 + 0.4 * uniform01(rng)), gen[b].imag() + 0.05 * (uniform01(rng) - 0.5));
      const auto sol = helm::solve_powerflow(problem.adm, d, gen, v_s, problem.helm);
      if (!sol.converged) continue;
      // epsilon is checked at a truncated order where it is well above
      // roundoff: the largest even n <= eps_n_max with epsilon >= 1e-5
      bool found = false;
      for (int n = s.eps_n_max - s.eps_n_max % 2; n >= 2 && !found; n -= 2) {
        eps_opts.n_max = n;
        eps_opts.pade_m = n / 2;
        const double e = helm::solve_powerflow(problem.adm, d, gen, v_s, eps_opts).epsilon;
        found = std::isfinite(e) && e >= 1e-5;
      }
      if (found) break;
    }
    // coordinates: Re then Im of every controllable unit's injection
    std::vector<double> x;
    for (auto b : unit_bus) x.push_back(gen[b].real());
    for (auto b : unit_bus) x.push_back(gen[b].imag());
    const auto k = unit_bus.size();
    const auto at = [&](const std::vector<double>& xs, const helm::Options& o, bool eps) {
      auto gg = gen;
      for (std::size_t j = 0; j < k; ++j) gg[unit_bus[j]] = Complex(xs[j], xs[k + j]);
      const auto sol = helm::solve_powerflow(problem.adm, d, gg, v_s, o);
      return eps ? sol.epsilon : sol.c_bar_tail;
    };
    for (bool eps : {true, false}) {
      const helm::Options& o = eps ? eps_opts : problem.helm;
      ad::Tape tape;
      std::vector<ad::Var> dv, gv;
      for (const auto& v : d) dv.push_back(tape.constant(v));
      for (const auto& v : gen) gv.push_back(tape.constant(v));
      std::vector<ad::Var> inputs;
      for (auto b : unit_bus) {
        gv[b] = tape.record(gen[b]);
        inputs.push_back(gv[b]);
      }
      const auto ts = helm::solve_powerflow(tape, problem.adm, dv, gv, tape.constant(v_s), o);
      tape.backward(eps ? ts.epsilon : ts.c_bar_tail);
      Eigen::VectorXd grad(static_cast<Eigen::Index>(2 * k));
      for (std::size_t j = 0; j < k; ++j) {
        grad(static_cast<Eigen::Index>(j)) = tape.grad(inputs[j]).real();
        grad(static_cast<Eigen::Index>(k + j)) = tape.grad(inputs[j]).imag();
      }
      const auto fd = oracle::finite_diff([&](const std::vector<double>& xs) { return at(xs, o, eps); }, x);
      const double r = rel_error(grad, fd);
      worst = std::max(worst, r);
      os << p << '\t' << (eps ? "d_eps/d_Sg@n=" + std::to_string(o.n_max) : std::string("d_cbar/d_Sg")) << '\t'
         << num(r) << '\n';
    }
    // generation cost with respect to theta, on a subset of coordinates
    auto bundle = policy::make_bundle(g, 8, derive_seed(s.seed, static_cast<std::uint64_t>(p), 1));
    trainer::initialize(bundle, problem);
    const std::vector<int> on(units.size(), 1);
    const auto t = trainer::solve_triplet(bundle, problem, d, on, trainer::Gradients::all);
    if (t.grad_theta_cost.size() == 0) throw PreconditionError("cost gradient unavailable at a random point");
    std::set<Eigen::Index> pick;
    const auto total = bundle.theta.params.size();
    while (static_cast<Eigen::Index>(pick.size()) < std::min<Eigen::Index>(32, total)) {
      pick.insert(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(total)));
    }
    std::vector<double> xs;
    Eigen::VectorXd tape_sub(static_cast<Eigen::Index>(pick.size()));
    Eigen::Index r = 0;
    for (auto i : pick) {
      xs.push_back(bundle.theta.params(i));
      tape_sub(r++) = t.grad_theta_cost(i);
    }
    const auto fd = oracle::finite_diff(
        [&](const std::vector<double>& v) {
          auto b = bundle;
          Eigen::Index q = 0;
          for (auto i : pick) b.theta.params(i) = v[static_cast<std::size_t>(q++)];
          return trainer::solve_triplet(b, problem, d, on, trainer::Gradients::none).cost;
        },
        xs);
    const double rc = rel_error(tape_sub, fd);
    worst = std::max(worst, rc);
    os << p << "\td_cost/d_theta\t" << num(rc) << '\n';
  }
  os << "# max_rel_error=" << num(worst) << '\n';
  return os.str();
}

std::string cmd_sweep_alpha(const Settings& s) {
  const auto g = need_case(s);
  const auto adm = grid::build_admittance(g);
  const auto d = explicit_demand(g, s).front();
  std::vector<double> alphas;
  for (int i = 1; i <= 40; ++i) alphas.push_back(0.1 * i);
  auto gen = g.base_generation();
  const double v_s = g.slack_generator().v_setpoint;
  // alpha = 1 is the solved operating point, slack included
  gen[adm.slack_index] = helm::solve_powerflow(adm, d, gen, v_s, helm_options(s)).slack_injection;
  const auto rows = helm::alpha_sweep(adm, d, gen, v_s, alphas, parse_ints(s.orders), helm_options(s));
  std::ostringstream os;
  os << "# case=" << g.name << " orders=" << s.orders << '\n' << "# alpha\tn\tln_eps\n";
  for (const auto& r : rows) os << num(r.alpha) << '\t' << r.n << '\t' << num(r.ln_eps) << '\n';
  return os.str();
}

std::string cmd_sweep_coeff(const Settings& s) {
  const auto g = need_case(s);
  const auto adm = grid::build_admittance(g);
  const auto opts = helm_options(s);
  std::mt19937_64 rng(derive_seed(s.seed, 0xc0ef));
  std::ostringstream os;
  os << "# case=" << g.name << " count=" << s.count << " seed=" << s.seed << " n_max=" << opts.n_max << '\n';
  os << "# index\tload_scale\talpha\tln_cbar\tln_eps\n";
  for (int i = 0; i < s.count; ++i) {
    const double scale = 0.5 + 2.5 * uniform01(rng);
    const double alpha = 0.1 + 3.9 * uniform01(rng);
    auto d = g.demand();
    for (auto& x : d) x *= scale * (0.9 + 0.2 * uniform01(rng));
    auto gen = g.base_generation();
    for (auto& x : gen) x *= alpha;
    double ln_cbar = std::numeric_limits<double>::infinity(), ln_eps = ln_cbar;
    try {
      const auto sol = helm::solve_powerflow(adm, d, gen, g.slack_generator().v_setpoint, opts);
      ln_cbar = std::log(sol.c_bar_tail);
      ln_eps = sol.ln_epsilon();
    } catch (const Error&) {
    }
    os << i << '\t' << num(scale) << '\t' << num(alpha) << '\t' << num(ln_cbar) << '\t' << num(ln_eps) << '\n';
  }
  return os.str();
}

std::string metrics_header() {
  return "# step\tphysical_frac\tfeasible_frac\tmean_ln_eps\tmean_loss\telbo\tlambda\tskipped\n";
}

std::string metrics_row(const trainer::StepMetrics& m) {
  std::ostringstream os;
  os << m.step << '\t' << num(m.physical_frac) << '\t' << num(m.feasible_frac) << '\t' << num(m.mean_ln_eps) << '\t'
     << num(m.mean_loss) << '\t' << num(m.elbo) << '\t' << num(m.lambda) << '\t' << m.skipped_updates << '\n';
  return os.str();
}

std::string cmd_train(const Settings& s, std::ostream& err) {
  const auto g = need_case(s);
  trainer::TrainConfig cfg = s.train;
  cfg.seed = s.seed;
  cfg.validate();
  const auto problem = trainer::Problem::make(g, cfg);
  const auto train = stream_part(g, s, true);
  policy::PolicyBundle bundle;
  trainer::TrainerState state;
  if (s.resume && !s.checkpoint.empty() && std::filesystem::exists(s.checkpoint)) {
    auto ck = trainer::load_checkpoint(s.checkpoint, g);
    if (ck.config.hash() != cfg.hash()) throw ContractError("training flags differ from the checkpoint's config");
    bundle = std::move(ck.bundle);
    state = std::move(ck.state);
  } else {
    bundle = policy::make_bundle(g, cfg.hidden, cfg.seed);
    state = trainer::initialize(bundle, problem);
  }
  std::string text = "# case=" + g.name + " config_hash=" + cfg.hash() + " train_rows=" +
                     std::to_string(train.size()) + '\n' + metrics_header();
  const auto t0 = std::chrono::steady_clock::now();
  while (state.step < cfg.steps) {
    std::vector<trainer::Demand> batch;
    for (auto i : trainer::select_batch(train.size(), cfg, state.step)) batch.push_back(train[i]);
    const auto m = trainer::train_step(bundle, state, problem, batch, cfg);
    text += metrics_row(m);
    for (const auto& d : m.diagnostics) err << "# step " << m.step << ": " << d << '\n';
    if (!s.checkpoint.empty() && s.checkpoint_every > 0 && state.step % s.checkpoint_every == 0) {
      trainer::save_checkpoint(s.checkpoint, bundle, state, cfg);
    }
  }
  if (!s.checkpoint.empty()) trainer::save_checkpoint(s.checkpoint, bundle, state, cfg);
  text += "# seconds=" + num(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + '\n';
  return text;
}

trainer::Checkpoint need_checkpoint(const Settings& s, const grid::GridCase& g) {
  if (s.checkpoint.empty()) throw UsageError("--checkpoint is required");
  return trainer::load_checkpoint(s.checkpoint, g);
}

std::string cmd_infer(const Settings& s) {
  const auto g = need_case(s);
  const auto ck = need_checkpoint(s, g);
  const auto problem = trainer::Problem::make(g, ck.config);
  const auto rows = explicit_demand(g, s);
  std::ostringstream os;
  os << "# case=" << g.name << " samples=" << s.train.samples << " seed=" << s.seed << '\n';
  os << "# instance\tfeasible\tcost\tln_eps\tv_s\tcommitment";
  for (auto u : g.controllable_generators()) os << "\tp_" << g.generators[u].bus_id << "\tq_" << g.generators[u].bus_id;
  os << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = trainer::infer(ck.bundle, problem, rows[i], s.train.samples, derive_seed(s.seed, i, 0x1f));
    os << i << '\t' << (r.feasible ? 1 : 0) << '\t' << num(r.cost) << '\t' << num(r.solution.ln_epsilon()) << '\t'
       << num(r.v_s) << '\t' << bits_text(r.commitment);
    for (const auto& x : r.generation) os << '\t' << num(x.real()) << '\t' << num(x.imag());
    os << '\n';
  }
  return os.str();
}

std::string cmd_evaluate(const Settings& s) {
  const auto g = need_case(s);
  const auto ck = need_checkpoint(s, g);
  const auto problem = trainer::Problem::make(g, ck.config);
  auto test = s.demand_path.empty() ? stream_part(g, s, false) : scaled(demand::load_csv(s.demand_path, g), s.load_scale);
  if (s.limit > 0 && test.size() > static_cast<std::size_t>(s.limit)) test.resize(static_cast<std::size_t>(s.limit));
  std::vector<std::optional<double>> oracle_costs;
  double oracle_seconds = 0.0;
  if (s.with_oracle) {
    oracle::BruteForceOptions bo;
    bo.resolution = s.resolution;
    bo.slack_points = s.slack_points;
    bo.ln_xi = ck.config.ln_xi;
    for (const auto& d : test) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto r = oracle::brute_force_opf(g, d, bo);
      oracle_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      oracle_costs.push_back(r.feasible ? std::optional<double>(r.best.cost) : std::nullopt);
    }
    oracle_seconds /= static_cast<double>(test.size());
  }
  const auto rep = trainer::evaluate(ck.bundle, problem, test, s.train.samples, s.seed, oracle_costs, s.train.threads);
  std::ostringstream os;
  os << "# case=" << g.name << " instances=" << test.size() << " samples=" << s.train.samples << '\n';
  os << "# feasible_pct=" << num(rep.feasible_pct) << " kkt_pct=" << num(rep.kkt_pct)
     << " mean_cost=" << num(rep.mean_cost) << " mean_seconds=" << num(rep.mean_seconds) << '\n';
  if (s.with_oracle) {
    const double gap = rep.mean_oracle_cost > 0.0 ? 100.0 * (rep.mean_cost / rep.mean_oracle_cost - 1.0) : 0.0;
    os << "# mean_oracle_cost=" << num(rep.mean_oracle_cost) << " gap_pct=" << num(gap)
       << " compared=" << rep.cost_instances << " oracle_seconds=" << num(oracle_seconds) << '\n';
  }
  os << "# instance\tfeasible\tkkt\tcost\toracle_cost\tseconds\tviolated\n";
  for (const auto& r : rep.rows) {
    std::string v;
    for (const auto& x : r.violated) v += (v.empty() ? "" : ",") + x;
    os << r.instance << '\t' << (r.feasible ? 1 : 0) << '\t' << (r.kkt ? 1 : 0) << '\t' << num(r.cost) << '\t'
       << (r.oracle_cost ? num(*r.oracle_cost) : "-") << '\t' << num(r.seconds) << '\t' << (v.empty() ? "-" : v)
       << '\n';
  }
  return os.str();
}

std::string cmd_synth(const Settings& s, std::ostream& err) {
  const auto g = need_case(s);
  const auto set = demand::synthesize(g, static_cast<std::size_t>(s.count), s.ratio, s.seed);
  for (const auto& d : set.diagnostics) err << "# " << d << '\n';
  return demand::to_csv(set.rows, g, s.seed);
}

std::string cmd_oracle(const Settings& s) {
  const auto g = need_case(s);
  const auto d = explicit_demand(g, s).front();
  std::ostringstream os;
  if (s.mode == "nr") {
    auto inj = g.base_generation();
    for (std::size_t i = 0; i < inj.size(); ++i) inj[i] = s.alpha * inj[i] - d[i];
    const double v_s = std::isnan(s.v_s) ? g.slack_generator().v_setpoint : s.v_s;
    const auto r = oracle::newton_raphson(g, inj, v_s);
    os << "# converged=" << (r.converged ? 1 : 0) << " iterations=" << r.iterations << " residual=" << num(r.residual)
       << '\n'
       << "# bus\tvm\tva_deg\n";
    for (std::size_t i = 0; i < r.v.size(); ++i) {
      os << g.buses[i].id << '\t' << num(std::abs(r.v[i])) << '\t' << num(std::arg(r.v[i]) * 180.0 / M_PI) << '\n';
    }
  } else if (s.mode == "opf") {
    oracle::BruteForceOptions bo;
    bo.resolution = s.resolution;
    bo.slack_points = s.slack_points;
    bo.ln_xi = s.train.ln_xi;
    const auto r = oracle::brute_force_opf(g, d, bo);
    os << "# feasible=" << (r.feasible ? 1 : 0) << " evaluated=" << r.evaluated << " feasible_count=" << r.feasible_count
       << '\n';
    if (r.feasible) {
      os << "# cost=" << num(r.best.cost) << " v_s=" << num(r.best.v_s) << " commitment=" << bits_text(r.best.commitment)
         << " slack_p=" << num(r.best.slack_injection.real()) << " slack_q=" << num(r.best.slack_injection.imag())
         << '\n'
         << "# bus\tp\tq\n";
      const auto units = g.controllable_generators();
      for (std::size_t j = 0; j < units.size(); ++j) {
        os << g.generators[units[j]].bus_id << '\t' << num(r.best.generation[j].real()) << '\t'
           << num(r.best.generation[j].imag()) << '\n';
      }
    }
  } else {
    throw UsageError("--mode must be nr or opf");
  }
  return os.str();
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  return s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Settings s;
  CLI::App app{"Differentiable power flow and learned optimal power flow"};
  app.set_config("--config", "", "key = value file; command-line flags take precedence");
  app.require_subcommand(1, 1);
  auto& t = s.train;
  app.add_option("--case", s.case_path, "case file");
  app.add_option("--demand", s.demand_path, "demand CSV");
  app.add_option("--seed", s.seed, "random seed")->capture_default_str();
  app.add_option("--steps", t.steps, "training steps")->capture_default_str();
  app.add_option("--batch", t.batch, "instances per step")->capture_default_str();
  app.add_option("--samples", t.samples, "commitments per instance")->capture_default_str();
  app.add_option("--n-max", t.n_max, "series order")->capture_default_str();
  app.add_option("--pade-m", t.pade_m, "Pade order")->capture_default_str();
  app.add_option("--xi-ln", t.ln_xi, "log-mismatch threshold")->capture_default_str();
  app.add_option("--lr-theta", t.lr_theta, "set-point network rate")->capture_default_str();
  app.add_option("--lr-psi", t.lr_psi, "multiplier network rate")->capture_default_str();
  app.add_option("--lr-phi", t.lr_phi, "commitment network rate")->capture_default_str();
  app.add_option("--optimizer", t.optimizer, "sgd or adam")->capture_default_str();
  app.add_option("--hidden", t.hidden, "hidden width")->capture_default_str();
  app.add_option("--threads", t.threads, "concurrent instance evaluations")->capture_default_str();
  app.add_option("--checkpoint", s.checkpoint, "checkpoint file");
  app.add_option("--checkpoint-every", s.checkpoint_every, "steps between checkpoints")->capture_default_str();
  app.add_flag("--resume", s.resume, "continue from --checkpoint when it exists");
  app.add_option("--out", s.out, "output file, '-' for stdout")->capture_default_str();
  app.add_option("--synth-count", s.synth_count, "synthetic rows when no --demand")->capture_default_str();
  app.add_option("--ratio", s.ratio, "synthetic std/mean ratio")->capture_default_str();
  app.add_option("--train-fraction", s.train_fraction, "chronological train share")->capture_default_str();
  app.add_option("--data-seed", s.data_seed, "seed of the synthetic stream")->capture_default_str();
  app.add_option("--row", s.row, "single demand row");
  app.add_option("--load-scale", s.load_scale, "demand multiplier")->capture_default_str();
  app.add_option("--alpha", s.alpha, "generation multiplier")->capture_default_str();
  app.add_option("--vs", s.v_s, "slack voltage magnitude");
  app.add_option("--points", s.points, "gradcheck points")->capture_default_str();
  app.add_option("--count", s.count, "rows or tuples to generate")->capture_default_str();
  app.add_option("--orders", s.orders, "series orders for sweep-alpha")->capture_default_str();
  app.add_option("--mode", s.mode, "oracle mode: nr or opf")->capture_default_str();
  app.add_option("--resolution", s.resolution, "brute-force grid points")->capture_default_str();
  app.add_option("--slack-points", s.slack_points, "brute-force slack voltage points")->capture_default_str();
  app.add_flag("--oracle", s.with_oracle, "evaluate: compare with brute-force OPF");
  app.add_option("--limit", s.limit, "evaluate at most this many instances");
  app.add_option("--eps-n-max", s.eps_n_max, "gradcheck: highest series order for the epsilon check")->capture_default_str();

  const std::vector<std::pair<const char*, const char*>> subs = {
      {"solve", "power flow for the case's generation"},
      {"gradcheck", "tape gradients against finite differences"},
      {"sweep-alpha", "ln eps over generation scalings"},
      {"sweep-coeff", "ln |c_bar| against ln eps over random scalings"},
      {"train", "learn the policy"},
      {"infer", "set-points from a checkpoint"},
      {"evaluate", "held-out feasibility and cost report"},
      {"synth-demand", "synthetic demand CSV"},
      {"oracle", "Newton-Raphson or brute-force OPF"}};
  for (const auto& [name, help] : subs) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error kind=usage message=\"" << one_line(e.what()) << "\"\n";
    return 2;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (s.train.threads < 1) throw UsageError("--threads must be at least 1");
    std::string text;
    if (cmd == "solve") {
      text = cmd_solve(s);
    } else if (cmd == "gradcheck") {
      text = cmd_gradcheck(s);
    } else if (cmd == "sweep-alpha") {
      text = cmd_sweep_alpha(s);
    } else if (cmd == "sweep-coeff") {
      text = cmd_sweep_coeff(s);
    } else if (cmd == "train") {
      text = cmd_train(s, err);
    } else if (cmd == "infer") {
      text = cmd_infer(s);
    } else if (cmd == "evaluate") {
      text = cmd_evaluate(s);
    } else if (cmd == "synth-demand") {
      text = cmd_synth(s, err);
    } else {
      text = cmd_oracle(s);
    }
    emit(s.out, text, out);
  } catch (const Error& e) {
    err << "error kind=" << e.kind() << " message=\"" << one_line(e.what()) << "\"\n";
    return e.kind() == "usage" ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error kind=internal message=\"" << one_line(e.what()) << "\"\n";
    return 1;
  }
  return 0;
}

}  // namespace lopf::cli
