#include "lopf/policy_networks.hpp"

#include <cmath>

#include "lopf/error.hpp"
#include "lopf/rng.hpp"

namespace lopf::policy {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Mlp::Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw DimensionError("an MLP needs at least an input and an output width");
  Eigen::Index n = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    if (widths_[l] < 0 || widths_[l + 1] < 0) throw DimensionError("negative layer width");
    n += static_cast<Eigen::Index>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
  }
  params = VectorXd::Zero(n);
}

void Mlp::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    const double limit = in + out > 0 ? std::sqrt(6.0 / (in + out)) : 0.0;
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(in) * out; ++k) {
      params(offset++) = (2.0 * uniform01(rng) - 1.0) * limit;
    }
    for (int k = 0; k < out; ++k) params(offset++) = 0.0;
  }
}

VectorXd Mlp::forward(const VectorXd& x, Cache* cache) const {
  if (x.size() != input_width()) {
    throw DimensionError("network input has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(input_width()));
  }
  if (cache != nullptr) cache->activations.clear();
  VectorXd a = x;
  Eigen::Index offset = 0;
  const std::size_t layers = widths_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + offset, out, in);
    offset += static_cast<Eigen::Index>(in) * out;
    Eigen::Map<const VectorXd> b(params.data() + offset, out);
    offset += out;
    if (cache != nullptr) cache->activations.push_back(a);
    VectorXd z = w * a + b;
    a = l + 1 < layers ? VectorXd(z.array().tanh()) : z;
  }
  return a;
}

VectorXd Mlp::backward(const Cache& cache, const VectorXd& dout) const {
  const std::size_t layers = widths_.size() - 1;
  if (cache.activations.size() != layers) throw UsageError("backward needs the cache of a forward pass");
  if (dout.size() != output_width()) throw DimensionError("output gradient has the wrong width");
  VectorXd grad(params.size());
  std::vector<Eigen::Index> offsets(layers);
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += static_cast<Eigen::Index>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
  }
  VectorXd delta = dout;
  for (std::size_t l = layers; l-- > 0;) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    const VectorXd& a = cache.activations[l];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offsets[l], out, in);
    gw.noalias() = delta * a.transpose();
    grad.segment(offsets[l] + static_cast<Eigen::Index>(in) * out, out) = delta;
    if (l > 0) {
      Eigen::Map<const Eigen::MatrixXd> w(params.data() + offsets[l], out, in);
      delta = (w.transpose() * delta).array() * (1.0 - a.array().square());
    }
  }
  return grad;
}

PolicyLayout make_layout(const grid::GridCase& grid) {
  PolicyLayout layout;
  layout.buses = grid.bus_count();
  layout.slack = grid.slack_index();
  layout.generators = grid.controllable_generators();
  const auto k = static_cast<Eigen::Index>(layout.generators.size());
  layout.p_min.resize(k);
  layout.p_max.resize(k);
  layout.q_min.resize(k);
  layout.q_max.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& g = grid.generators[layout.generators[static_cast<std::size_t>(j)]];
    layout.gen_bus.push_back(grid.bus_index(g.bus_id));
    layout.p_min(j) = g.p_min;
    layout.p_max(j) = g.p_max;
    layout.q_min(j) = g.q_min;
    layout.q_max(j) = g.q_max;
  }
  layout.v_min = grid.buses[layout.slack].v_min;
  layout.v_max = grid.buses[layout.slack].v_max;
  layout.demand_scale.resize(static_cast<Eigen::Index>(layout.buses));
  for (std::size_t i = 0; i < layout.buses; ++i) {
    layout.demand_scale(static_cast<Eigen::Index>(i)) = std::max(std::abs(grid.buses[i].demand), 1e-3);
  }
  return layout;
}

PolicyBundle make_bundle(const grid::GridCase& grid, int hidden, std::uint64_t seed) {
  if (hidden < 1) throw PreconditionError("hidden width must be positive");
  PolicyBundle bundle;
  bundle.layout = make_layout(grid);
  bundle.case_hash = grid::case_hash(grid);
  const int n = static_cast<int>(2 * bundle.layout.buses);
  const int k = static_cast<int>(bundle.layout.unit_count());
  const int c = static_cast<int>(bundle.layout.constraint_count());
  bundle.theta = Mlp({n + k, hidden, hidden, 2 * k + 1});
  bundle.psi = Mlp({n + c, hidden, hidden, c});
  bundle.phi = Mlp({n, hidden, hidden, k});
  bundle.theta.initialize(derive_seed(seed, 1));
  bundle.psi.initialize(derive_seed(seed, 2));
  bundle.phi.initialize(derive_seed(seed, 3));
  return bundle;
}

VectorXd demand_features(const PolicyLayout& layout, const std::vector<Complex>& demand) {
  if (demand.size() != layout.buses) throw DimensionError("demand vector does not match the network");
  const auto n = static_cast<Eigen::Index>(layout.buses);
  VectorXd x(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i) = demand[static_cast<std::size_t>(i)].real() / layout.demand_scale(i);
    x(n + i) = demand[static_cast<std::size_t>(i)].imag() / layout.demand_scale(i);
  }
  return x;
}

GOutput forward_g(const PolicyBundle& bundle, const std::vector<Complex>& demand, const std::vector<int>& commitment) {
  const auto& lay = bundle.layout;
  const auto k = static_cast<Eigen::Index>(lay.unit_count());
  if (static_cast<Eigen::Index>(commitment.size()) != k) throw DimensionError("commitment vector has the wrong length");
  const VectorXd features = demand_features(lay, demand);
  VectorXd x(features.size() + k);
  x << features, VectorXd::Zero(k);
  for (Eigen::Index j = 0; j < k; ++j) x(features.size() + j) = commitment[static_cast<std::size_t>(j)];
  GOutput out;
  const VectorXd z = bundle.theta.forward(x, &out.cache);
  out.sigma = z.unaryExpr([](double v) { return sigmoid(v); });
  for (Eigen::Index j = 0; j < k; ++j) {
    const double p = (lay.p_max(j) - lay.p_min(j)) * out.sigma(j) + lay.p_min(j);
    const double q = (lay.q_max(j) - lay.q_min(j)) * out.sigma(k + j) + lay.q_min(j);
    out.generation.emplace_back(p, q);
  }
  out.v_s = (lay.v_max - lay.v_min) * out.sigma(2 * k) + lay.v_min;
  return out;
}

VectorXd backward_g(const PolicyBundle& bundle, const GOutput& out, const VectorXd& dp, const VectorXd& dq, double dvs) {
  const auto& lay = bundle.layout;
  const auto k = static_cast<Eigen::Index>(lay.unit_count());
  VectorXd dz(2 * k + 1);
  const auto slope = [&](Eigen::Index i) { return out.sigma(i) * (1.0 - out.sigma(i)); };
  for (Eigen::Index j = 0; j < k; ++j) {
    dz(j) = dp(j) * (lay.p_max(j) - lay.p_min(j)) * slope(j);
    dz(k + j) = dq(j) * (lay.q_max(j) - lay.q_min(j)) * slope(k + j);
  }
  dz(2 * k) = dvs * (lay.v_max - lay.v_min) * slope(2 * k);
  return bundle.theta.backward(out.cache, dz);
}

UOutput forward_u(const PolicyBundle& bundle, const std::vector<Complex>& demand, const VectorXd& k_plus) {
  const auto c = static_cast<Eigen::Index>(bundle.layout.constraint_count());
  if (k_plus.size() != c) throw DimensionError("constraint vector has the wrong length");
  const VectorXd features = demand_features(bundle.layout, demand);
  VectorXd x(features.size() + c);
  x << features, k_plus;
  UOutput out;
  out.pre = bundle.psi.forward(x, &out.cache);
  out.multipliers = out.pre.unaryExpr([](double v) { return softplus(v); });
  return out;
}

VectorXd backward_u(const PolicyBundle& bundle, const UOutput& out, const VectorXd& dmult) {
  const VectorXd dz = dmult.array() * out.pre.unaryExpr([](double v) { return sigmoid(v); }).array();
  return bundle.psi.backward(out.cache, dz);
}

BOutput forward_b(const PolicyBundle& bundle, const std::vector<Complex>& demand) {
  BOutput out;
  out.logits = bundle.phi.forward(demand_features(bundle.layout, demand), &out.cache);
  out.probs = out.logits.unaryExpr([](double v) { return sigmoid(v); });
  return out;
}

VectorXd backward_b(const PolicyBundle& bundle, const BOutput& out, const VectorXd& dlogits) {
  return bundle.phi.backward(out.cache, dlogits);
}

double log_prob(const VectorXd& logits, const std::vector<int>& commitment) {
  if (static_cast<Eigen::Index>(commitment.size()) != logits.size()) throw DimensionError("commitment length mismatch");
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    total -= commitment[static_cast<std::size_t>(j)] != 0 ? softplus(-logits(j)) : softplus(logits(j));
  }
  return total;
}

VectorXd log_prob_grad(const VectorXd& logits, const std::vector<int>& commitment) {
  VectorXd g(logits.size());
  for (Eigen::Index j = 0; j < logits.size(); ++j) g(j) = commitment[static_cast<std::size_t>(j)] - sigmoid(logits(j));
  return g;
}

VectorXd constraint_values(const helm::PFSolution& solution, const grid::GridCase& grid) {
  const std::size_t n = grid.bus_count();
  const std::size_t slack = grid.slack_index();
  VectorXd k(static_cast<Eigen::Index>(2 * (n - 1) + 4));
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == slack) continue;
    const double mag = std::abs(solution.v.at(i));
    k(r++) = mag - grid.buses[i].v_max;
    k(r++) = grid.buses[i].v_min - mag;
  }
  const auto& g = grid.slack_generator();
  const Complex s = solution.slack_injection;
  k(r++) = s.real() - g.p_max;
  k(r++) = g.p_min - s.real();
  k(r++) = s.imag() - g.q_max;
  k(r++) = g.q_min - s.imag();
  return k;
}

std::vector<ad::Var> constraint_values(ad::Tape& tape, const helm::TrackedSolution& solution,
                                       const grid::GridCase& grid) {
  if (!solution.ok) throw PreconditionError("constraint values need a solved power flow");
  const std::size_t n = grid.bus_count();
  const std::size_t slack = grid.slack_index();
  std::vector<ad::Var> k;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == slack) continue;
    const ad::Var mag = tape.abs(solution.v[i]);
    k.push_back(mag - grid.buses[i].v_max);
    k.push_back(grid.buses[i].v_min - mag);
  }
  const auto& g = grid.slack_generator();
  const ad::Var p = tape.real(solution.slack_injection);
  const ad::Var q = tape.imag(solution.slack_injection);
  k.push_back(p - g.p_max);
  k.push_back(g.p_min - p);
  k.push_back(q - g.q_max);
  k.push_back(g.q_min - q);
  return k;
}

double generation_cost(const grid::GridCase& grid, const std::vector<Complex>& generation,
                       const std::vector<int>& commitment, Complex slack_injection) {
  const auto units = grid.controllable_generators();
  if (generation.size() != units.size() || commitment.size() != units.size()) {
    throw DimensionError("generation and commitment must have one entry per controllable unit");
  }
  double total = grid.slack_generator().cost(slack_injection.real());
  for (std::size_t j = 0; j < units.size(); ++j) {
    if (commitment[j] != 0) total += grid.generators[units[j]].cost(generation[j].real());
  }
  return total;
}

ad::Var generation_cost(ad::Tape& tape, const grid::GridCase& grid, const std::vector<ad::Var>& generation,
                        const std::vector<int>& commitment, ad::Var slack_injection) {
  const auto units = grid.controllable_generators();
  if (generation.size() != units.size() || commitment.size() != units.size()) {
    throw DimensionError("generation and commitment must have one entry per controllable unit");
  }
  std::vector<ad::Var> terms{grid.slack_generator().cost(tape.real(slack_injection))};
  for (std::size_t j = 0; j < units.size(); ++j) {
    if (commitment[j] != 0) terms.push_back(grid.generators[units[j]].cost(tape.real(generation[j])));
  }
  return tape.sum(terms);
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json network_json(const Mlp& m) {
  return {{"widths", m.widths()}, {"params", std::vector<double>(m.params.data(), m.params.data() + m.params.size())}};
}

Mlp network_from_json(const nlohmann::json& j, const std::vector<int>& expected, const char* name) {
  const auto widths = j.at("widths").get<std::vector<int>>();
  if (widths != expected) {
    throw DimensionError(std::string("network '") + name + "' has widths that do not fit this case");
  }
  Mlp m(widths);
  const auto params = j.at("params").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(params.size()) != m.parameter_count()) {
    throw DimensionError(std::string("network '") + name + "' has the wrong parameter count");
  }
  m.params = Eigen::Map<const VectorXd>(params.data(), static_cast<Eigen::Index>(params.size()));
  return m;
}

}  // namespace

nlohmann::json to_json(const PolicyBundle& bundle) {
  return {{"case_hash", bundle.case_hash},
          {"multiplier_scale", bundle.multiplier_scale},
          {"theta", network_json(bundle.theta)},
          {"psi", network_json(bundle.psi)},
          {"phi", network_json(bundle.phi)}};
}

PolicyBundle bundle_from_json(const nlohmann::json& j, const grid::GridCase& grid) {
  PolicyBundle bundle;
  bundle.layout = make_layout(grid);
  bundle.case_hash = j.at("case_hash").get<std::string>();
  if (bundle.case_hash != grid::case_hash(grid)) {
    throw ContractError("checkpoint was written for a different case (hash " + bundle.case_hash + ")");
  }
  bundle.multiplier_scale = j.at("multiplier_scale").get<double>();
  const int hidden = j.at("theta").at("widths").at(1).get<int>();
  const int n = static_cast<int>(2 * bundle.layout.buses);
  const int k = static_cast<int>(bundle.layout.unit_count());
  const int c = static_cast<int>(bundle.layout.constraint_count());
  bundle.theta = network_from_json(j.at("theta"), {n + k, hidden, hidden, 2 * k + 1}, "theta");
  bundle.psi = network_from_json(j.at("psi"), {n + c, hidden, hidden, c}, "psi");
  bundle.phi = network_from_json(j.at("phi"), {n, hidden, hidden, k}, "phi");
  return bundle;
}

}  // namespace lopf::policy
