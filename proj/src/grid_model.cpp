#include "lopf/grid_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "lopf/error.hpp"

namespace lopf::grid {

std::string_view to_string(BusType type) {
  switch (type) {
    case BusType::slack:
      return "slack";
    case BusType::pq:
      return "pq";
    case BusType::gen:
      return "gen";
  }
  return "?";
}

std::size_t GridCase::bus_index(int id) const {
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].id == id) return i;
  }
  throw CaseError("unknown bus id " + std::to_string(id), {id});
}

std::size_t GridCase::slack_index() const {
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].type == BusType::slack) return i;
  }
  throw CaseError("case has no slack bus", {});
}

const Generator* GridCase::generator_at(std::size_t bus) const {
  const int id = buses.at(bus).id;
  for (const auto& g : generators) {
    if (g.bus_id == id) return &g;
  }
  return nullptr;
}

const Generator& GridCase::slack_generator() const {
  const Generator* g = generator_at(slack_index());
  if (g == nullptr) {
    throw CaseError("slack bus has no generator", {buses[slack_index()].id});
  }
  return *g;
}

std::vector<std::size_t> GridCase::controllable_generators() const {
  const int slack_id = buses.at(slack_index()).id;
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < generators.size(); ++k) {
    if (generators[k].bus_id != slack_id) out.push_back(k);
  }
  return out;
}

std::vector<Complex> GridCase::demand() const {
  std::vector<Complex> out;
  out.reserve(buses.size());
  for (const auto& b : buses) out.push_back(b.demand);
  return out;
}

std::vector<Complex> GridCase::base_generation() const {
  std::vector<Complex> out(buses.size());
  for (const auto& g : generators) out[bus_index(g.bus_id)] += g.dispatch;
  return out;
}

void validate(const GridCase& grid) {
  if (!(grid.base_mva > 0.0)) {
    throw CaseError("baseMVA must be positive", {});
  }
  std::set<int> ids;
  std::vector<int> slack_ids;
  for (const auto& b : grid.buses) {
    if (!ids.insert(b.id).second) {
      throw CaseError("duplicate bus id " + std::to_string(b.id), {b.id});
    }
    if (b.type == BusType::slack) slack_ids.push_back(b.id);
    if (!(b.v_min < b.v_max)) {
      throw CaseError("bus " + std::to_string(b.id) + " has Vmin >= Vmax", {b.id});
    }
  }
  if (slack_ids.empty()) {
    throw CaseError("case has no slack bus", {});
  }
  if (slack_ids.size() > 1) {
    std::string list;
    for (int id : slack_ids) list += (list.empty() ? "" : ", ") + std::to_string(id);
    throw CaseError("more than one slack bus: " + list, slack_ids);
  }
  std::set<int> gen_buses;
  for (const auto& g : grid.generators) {
    if (ids.count(g.bus_id) == 0) {
      throw CaseError("generator references unknown bus " + std::to_string(g.bus_id), {g.bus_id});
    }
    if (!gen_buses.insert(g.bus_id).second) {
      throw CaseError("more than one generator record on bus " + std::to_string(g.bus_id), {g.bus_id});
    }
    if (!(g.p_min <= g.p_max)) {
      throw CaseError("generator at bus " + std::to_string(g.bus_id) + " has Pmin > Pmax", {g.bus_id});
    }
    if (!(g.q_min <= g.q_max)) {
      throw CaseError("generator at bus " + std::to_string(g.bus_id) + " has Qmin > Qmax", {g.bus_id});
    }
  }
  if (gen_buses.count(slack_ids.front()) == 0) {
    throw CaseError("slack bus " + std::to_string(slack_ids.front()) + " has no generator", {slack_ids.front()});
  }
  for (const auto& br : grid.branches) {
    for (int end : {br.from, br.to}) {
      if (ids.count(end) == 0) {
        throw CaseError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            " references unknown bus " + std::to_string(end),
                        {br.from, br.to});
      }
    }
    if (br.from == br.to) {
      throw CaseError("branch connects bus " + std::to_string(br.from) + " to itself", {br.from});
    }
  }
}

// ---------------------------------------------------------------------------
// Text format

namespace {

struct Row {
  int line = 0;
  std::vector<std::string> cells;
};

struct RawCase {
  std::optional<long double> base_mva;
  int base_line = 0;
  std::string name;
  std::map<std::string, std::vector<Row>> tables;
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

void split_cells(std::string_view s, int line, std::vector<Row>& rows) {
  // Rows end at ';' or end of line; cells are separated by blanks or commas.
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto semi = s.find(';', pos);
    const auto piece = s.substr(pos, semi == std::string_view::npos ? std::string_view::npos : semi - pos);
    Row row{line, {}};
    std::size_t i = 0;
    while (i < piece.size()) {
      while (i < piece.size() && (piece[i] == ' ' || piece[i] == '\t' || piece[i] == ',' || piece[i] == '\r')) ++i;
      std::size_t j = i;
      while (j < piece.size() && piece[j] != ' ' && piece[j] != '\t' && piece[j] != ',' && piece[j] != '\r') ++j;
      if (j > i) row.cells.emplace_back(piece.substr(i, j - i));
      i = j;
    }
    if (!row.cells.empty()) rows.push_back(std::move(row));
    if (semi == std::string_view::npos) break;
    pos = semi + 1;
  }
}

RawCase scan(std::string_view text) {
  RawCase raw;
  std::vector<Row>* table = nullptr;
  bool skipping = false;
  char closer = ']';
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size() || (pos == text.size() && false)) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (const auto pct = line.find('%'); pct != std::string_view::npos) line = line.substr(0, pct);
    line = trim(line);
    if (line.empty()) continue;

    if (table != nullptr || skipping) {
      const auto end = line.find(closer);
      const auto body = line.substr(0, end);
      if (table != nullptr) split_cells(body, line_no, *table);
      if (end != std::string_view::npos) {
        table = nullptr;
        skipping = false;
      }
      continue;
    }

    if (line.starts_with("function")) {
      const auto eq = line.find('=');
      if (eq != std::string_view::npos) raw.name = std::string(trim(line.substr(eq + 1)));
      continue;
    }
    if (!line.starts_with("mpc.")) {
      throw ParseError(line_no, "expected an 'mpc.<field> = ...' statement, got '" + std::string(line) + "'");
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(line_no, "missing '=' in assignment");
    }
    const std::string field(trim(line.substr(4, eq - 4)));
    std::string_view rhs = trim(line.substr(eq + 1));
    if (rhs.starts_with('[') || rhs.starts_with('{')) {
      closer = rhs.front() == '[' ? ']' : '}';
      const bool known = rhs.front() == '[' && (field == "bus" || field == "gen" || field == "branch" || field == "gencost");
      rhs.remove_prefix(1);
      if (known) {
        if (raw.tables.count(field) != 0) throw ParseError(line_no, "table '" + field + "' defined twice");
        table = &raw.tables[field];
      } else {
        skipping = true;
      }
      const auto end = rhs.find(closer);
      if (table != nullptr) split_cells(rhs.substr(0, end), line_no, *table);
      if (end != std::string_view::npos) {
        table = nullptr;
        skipping = false;
      }
      continue;
    }
    if (field == "baseMVA") {
      std::string value(rhs);
      if (!value.empty() && value.back() == ';') value.pop_back();
      char* endp = nullptr;
      const long double v = std::strtold(value.c_str(), &endp);
      if (endp == value.c_str() || std::string_view(endp).find_first_not_of(" \t") != std::string_view::npos) {
        throw ParseError(line_no, "baseMVA is not a number: '" + value + "'");
      }
      raw.base_mva = v;
      raw.base_line = line_no;
    }
    // Other scalar fields (version, ...) carry nothing we use.
  }
  if (table != nullptr || skipping) {
    throw ParseError(line_no, "unterminated table");
  }
  return raw;
}

double to_double(const Row& row, std::size_t col) {
  const std::string& s = row.cells[col];
  double v = 0.0;
  const char* first = s.data();
  if (!s.empty() && s.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(row.line, "column " + std::to_string(col + 1) + ": '" + s + "' is not a number");
  }
  return v;
}

long double to_long_double(const Row& row, std::size_t col) {
  const std::string& s = row.cells[col];
  char* endp = nullptr;
  const long double v = std::strtold(s.c_str(), &endp);
  if (endp == s.c_str() || *endp != '\0') {
    throw ParseError(row.line, "column " + std::to_string(col + 1) + ": '" + s + "' is not a number");
  }
  return v;
}

int to_int(const Row& row, std::size_t col) {
  const double v = to_double(row, col);
  if (v != std::floor(v) || std::abs(v) > 2e9) {
    throw ParseError(row.line, "column " + std::to_string(col + 1) + ": expected an integer");
  }
  return static_cast<int>(v);
}

// Unit conversions between file units and per-unit are carried out in
// extended precision so serialize/parse round-trips bit-exactly.
double scale_down(const Row& row, std::size_t col, long double base) {
  return static_cast<double>(to_long_double(row, col) / base);
}

double scale_up(const Row& row, std::size_t col, long double factor) {
  return static_cast<double>(to_long_double(row, col) * factor);
}

void require_columns(const Row& row, std::size_t n, const char* table) {
  if (row.cells.size() < n) {
    throw ParseError(row.line, std::string(table) + " row needs at least " + std::to_string(n) + " columns, found " +
                                   std::to_string(row.cells.size()));
  }
}

}  // namespace

GridCase parse_case(std::string_view text) {
  const RawCase raw = scan(text);
  if (!raw.base_mva) throw ParseError(1, "missing mpc.baseMVA");
  GridCase grid;
  grid.name = raw.name.empty() ? "case" : raw.name;
  grid.base_mva = static_cast<double>(*raw.base_mva);
  const long double base = *raw.base_mva;
  if (!(base > 0)) throw ParseError(raw.base_line, "baseMVA must be positive");

  auto table = [&](const char* name) -> const std::vector<Row>& {
    static const std::vector<Row> empty;
    const auto it = raw.tables.find(name);
    return it == raw.tables.end() ? empty : it->second;
  };

  for (const Row& row : table("bus")) {
    require_columns(row, 13, "bus");
    Bus bus;
    bus.id = to_int(row, 0);
    switch (to_int(row, 1)) {
      case 1:
        bus.type = BusType::pq;
        break;
      case 2:
        bus.type = BusType::gen;
        break;
      case 3:
        bus.type = BusType::slack;
        break;
      default:
        throw ParseError(row.line, "bus " + std::to_string(bus.id) + ": unsupported bus type " + row.cells[1]);
    }
    bus.demand = {scale_down(row, 2, base), scale_down(row, 3, base)};
    bus.shunt = {scale_down(row, 4, base), scale_down(row, 5, base)};
    bus.v_max = to_double(row, 11);
    bus.v_min = to_double(row, 12);
    grid.buses.push_back(bus);
  }

  const auto& gen_rows = table("gen");
  const auto& cost_rows = table("gencost");
  if (cost_rows.size() < gen_rows.size()) {
    throw CaseError("gencost has " + std::to_string(cost_rows.size()) + " rows for " +
                        std::to_string(gen_rows.size()) + " generators",
                    {});
  }
  for (std::size_t k = 0; k < gen_rows.size(); ++k) {
    const Row& row = gen_rows[k];
    require_columns(row, 10, "gen");
    if (to_double(row, 7) <= 0.0) continue;  // out of service
    Generator g;
    g.bus_id = to_int(row, 0);
    g.dispatch = {scale_down(row, 1, base), scale_down(row, 2, base)};
    g.q_max = scale_down(row, 3, base);
    g.q_min = scale_down(row, 4, base);
    g.v_setpoint = to_double(row, 5);
    g.p_max = scale_down(row, 8, base);
    g.p_min = scale_down(row, 9, base);

    const Row& cost = cost_rows[k];
    require_columns(cost, 4, "gencost");
    if (to_int(cost, 0) != 2) {
      throw ParseError(cost.line, "only polynomial (model 2) costs are supported");
    }
    const int n = to_int(cost, 3);
    if (n < 1 || n > 3) throw ParseError(cost.line, "polynomial costs of degree above 2 are not supported");
    require_columns(cost, 4 + static_cast<std::size_t>(n), "gencost");
    const long double factors[3] = {base * base, base, 1.0L};
    double coeffs[3] = {0.0, 0.0, 0.0};
    for (int j = 0; j < n; ++j) {
      const int power = n - 1 - j;
      coeffs[2 - power] = scale_up(cost, 4 + static_cast<std::size_t>(j), factors[2 - power]);
    }
    g.cost = {coeffs[0], coeffs[1], coeffs[2]};

    auto same_bus = std::find_if(grid.generators.begin(), grid.generators.end(),
                                 [&](const Generator& o) { return o.bus_id == g.bus_id; });
    if (same_bus == grid.generators.end()) {
      grid.generators.push_back(g);
    } else {
      same_bus->p_min += g.p_min;
      same_bus->p_max += g.p_max;
      same_bus->q_min += g.q_min;
      same_bus->q_max += g.q_max;
      same_bus->cost.c2 += g.cost.c2;
      same_bus->cost.c1 += g.cost.c1;
      same_bus->cost.c0 += g.cost.c0;
      same_bus->dispatch += g.dispatch;
    }
  }

  for (const Row& row : table("branch")) {
    require_columns(row, 11, "branch");
    if (to_double(row, 10) <= 0.0) continue;
    Branch br;
    br.from = to_int(row, 0);
    br.to = to_int(row, 1);
    br.r = to_double(row, 2);
    br.x = to_double(row, 3);
    br.b = to_double(row, 4);
    const double tap = to_double(row, 8);
    br.tap = tap == 0.0 ? 1.0 : tap;
    br.shift_deg = to_double(row, 9);
    grid.branches.push_back(br);
  }

  validate(grid);
  return grid;
}

GridCase load_case(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open case file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str());
}

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// Finds the shortest decimal whose per-unit conversion reproduces `value`.
std::string file_units(double value, long double factor, bool divide_on_parse) {
  const long double guess = divide_on_parse ? static_cast<long double>(value) * factor
                                            : static_cast<long double>(value) / factor;
  char buf[64];
  for (int p = 1; p <= 21; ++p) {
    std::snprintf(buf, sizeof buf, "%.*Lg", p, guess);
    const long double parsed = std::strtold(buf, nullptr);
    const double back = static_cast<double>(divide_on_parse ? parsed / factor : parsed * factor);
    if (back == value) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.21Lg", guess);
  return buf;
}

}  // namespace

std::string serialize_case(const GridCase& grid) {
  const long double base = grid.base_mva;
  auto mw = [&](double pu) { return file_units(pu, base, true); };
  std::ostringstream out;
  out << "function mpc = " << grid.name << "\n\n";
  out << "mpc.version = '2';\n";
  out << "mpc.baseMVA = " << shortest(grid.base_mva) << ";\n\n";

  out << "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n";
  out << "mpc.bus = [\n";
  for (const auto& b : grid.buses) {
    const int type = b.type == BusType::pq ? 1 : b.type == BusType::gen ? 2 : 3;
    out << '\t' << b.id << '\t' << type << '\t' << mw(b.demand.real()) << '\t' << mw(b.demand.imag()) << '\t'
        << mw(b.shunt.real()) << '\t' << mw(b.shunt.imag()) << "\t1\t1\t0\t0\t1\t" << shortest(b.v_max) << '\t'
        << shortest(b.v_min) << ";\n";
  }
  out << "];\n\n";

  out << "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\n";
  out << "mpc.gen = [\n";
  for (const auto& g : grid.generators) {
    out << '\t' << g.bus_id << '\t' << mw(g.dispatch.real()) << '\t' << mw(g.dispatch.imag()) << '\t' << mw(g.q_max)
        << '\t' << mw(g.q_min) << '\t' << shortest(g.v_setpoint) << '\t' << shortest(grid.base_mva) << "\t1\t"
        << mw(g.p_max) << '\t' << mw(g.p_min) << ";\n";
  }
  out << "];\n\n";

  out << "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\n";
  out << "mpc.branch = [\n";
  for (const auto& br : grid.branches) {
    out << '\t' << br.from << '\t' << br.to << '\t' << shortest(br.r) << '\t' << shortest(br.x) << '\t'
        << shortest(br.b) << "\t0\t0\t0\t" << shortest(br.tap) << '\t' << shortest(br.shift_deg) << "\t1\t-360\t360;\n";
  }
  out << "];\n\n";

  out << "%\t2\tstartup\tshutdown\tn\tc2\tc1\tc0\n";
  out << "mpc.gencost = [\n";
  for (const auto& g : grid.generators) {
    out << "\t2\t0\t0\t3\t" << file_units(g.cost.c2, base * base, false) << '\t'
        << file_units(g.cost.c1, base, false) << '\t' << file_units(g.cost.c0, 1.0L, false) << ";\n";
  }
  out << "];\n";
  return out.str();
}

std::string case_hash(const GridCase& grid) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : serialize_case(grid)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Admittance

Admittance build_admittance(const GridCase& grid) {
  const std::size_t n = grid.buses.size();
  Admittance adm;
  adm.y = ComplexMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (const auto& br : grid.branches) {
    if (br.r == 0.0 && br.x == 0.0) throw SingularBranchError(br.from, br.to);
    const auto f = static_cast<Eigen::Index>(grid.bus_index(br.from));
    const auto t = static_cast<Eigen::Index>(grid.bus_index(br.to));
    const Complex series = 1.0 / Complex(br.r, br.x);
    const Complex half_charging(0.0, br.b / 2.0);
    const Complex ratio = std::polar(br.tap, br.shift_deg * std::numbers::pi / 180.0);
    adm.y(f, f) += (series + half_charging) / std::norm(ratio);
    adm.y(t, t) += series + half_charging;
    adm.y(f, t) -= series / std::conj(ratio);
    adm.y(t, f) -= series / ratio;
  }
  for (std::size_t i = 0; i < n; ++i) {
    adm.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += grid.buses[i].shunt;
  }

  adm.slack_index = grid.slack_index();
  for (std::size_t i = 0; i < n; ++i) {
    if (i != adm.slack_index) adm.non_slack.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(adm.non_slack.size());
  const auto s = static_cast<Eigen::Index>(adm.slack_index);
  adm.y_reduced.resize(m, m);
  adm.y_slack.resize(m);
  adm.y_slack_row.resize(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = static_cast<Eigen::Index>(adm.non_slack[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < m; ++c) {
      adm.y_reduced(r, c) = adm.y(i, static_cast<Eigen::Index>(adm.non_slack[static_cast<std::size_t>(c)]));
    }
    adm.y_slack(r) = adm.y(i, s);
    adm.y_slack_row(r) = adm.y(s, i);
  }
  adm.y_slack_self = adm.y(s, s);
  adm.reduced_lu = factorize(adm.y_reduced, "reduced admittance matrix");
  return adm;
}

ComplexMatrix reassemble(const Admittance& adm) {
  const auto n = static_cast<Eigen::Index>(adm.non_slack.size() + 1);
  const auto s = static_cast<Eigen::Index>(adm.slack_index);
  ComplexMatrix y(n, n);
  y(s, s) = adm.y_slack_self;
  for (Eigen::Index r = 0; r < n - 1; ++r) {
    const auto i = static_cast<Eigen::Index>(adm.non_slack[static_cast<std::size_t>(r)]);
    y(i, s) = adm.y_slack(r);
    y(s, i) = adm.y_slack_row(r);
    for (Eigen::Index c = 0; c < n - 1; ++c) {
      y(i, static_cast<Eigen::Index>(adm.non_slack[static_cast<std::size_t>(c)])) = adm.y_reduced(r, c);
    }
  }
  return y;
}

}  // namespace lopf::grid
