#include "lopf/demand_datakit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "lopf/error.hpp"
#include "lopf/rng.hpp"

namespace lopf::demand {

namespace {

// Box-Muller on the portable uniform draw.
double normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> cells(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string c;
  while (std::getline(ss, c, ',')) out.push_back(trim(c));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

ParseError parse_error(const std::string& message, std::size_t line) {
  return ParseError(static_cast<int>(line), message);
}

}  // namespace

DemandSet synthesize(const grid::GridCase& grid, std::size_t count, double ratio, std::uint64_t seed) {
  return synthesize(grid, count, std::vector<double>(grid.bus_count(), ratio), seed);
}

DemandSet synthesize(const grid::GridCase& grid, std::size_t count, const std::vector<double>& ratios,
                     std::uint64_t seed) {
  const std::size_t n = grid.bus_count();
  if (ratios.size() != n) throw DimensionError("one std/mean ratio per bus is required");
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw PreconditionError("std/mean ratios must be >= 0");
  }
  if (count < 2) throw PreconditionError("at least two rows are needed to impose a standard deviation");
  DemandSet out;
  out.rows.assign(count, Demand(n, Complex{}));
  const auto t_count = static_cast<double>(count);
  for (std::size_t i = 0; i < n; ++i) {
    const Complex base = grid.buses[i].demand;
    const double mean = std::abs(base);
    if (mean == 0.0) continue;
    const Complex pf = base / mean;
    std::mt19937_64 rng(derive_seed(seed, i));
    const double phase = 2.0 * std::numbers::pi * uniform01(rng);
    std::vector<double> x(count);
    double ar = 0.0;
    for (std::size_t t = 0; t < count; ++t) {
      ar = 0.7 * ar + 0.3 * normal(rng);
      x[t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 24.0 + phase) + ar;
    }
    double mx = 0.0;
    for (double v : x) mx += v;
    mx /= t_count;
    double var = 0.0;
    for (double& v : x) {
      v -= mx;
      var += v * v;
    }
    const double sd = std::sqrt(var / t_count);
    double ratio = ratios[i];
    const double lowest = *std::min_element(x.begin(), x.end());
    if (sd > 0.0 && lowest < 0.0 && 1.0 + ratio * lowest / sd < 0.01) {
      const double clipped = 0.99 * sd / -lowest;
      char buf[160];
      std::snprintf(buf, sizeof buf, "bus %d: ratio %.6g clipped to %.6g to keep demand positive",
                    grid.buses[i].id, ratio, clipped);
      out.diagnostics.emplace_back(buf);
      ratio = clipped;
    }
    const double scale = sd > 0.0 ? ratio * mean / sd : 0.0;
    for (std::size_t t = 0; t < count; ++t) out.rows[t][i] = (mean + scale * x[t]) * pf;
  }
  return out;
}

std::vector<Demand> parse_csv(const std::string& text, const grid::GridCase& grid) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    header = cells(line);
    break;
  }
  if (header.empty()) throw parse_error("demand CSV has no header", line_no);

  const std::size_t n = grid.bus_count();
  enum class Kind { active, p, q };
  struct Column {
    std::size_t bus;
    Kind kind;
  };
  std::vector<Column> columns;
  std::vector<int> seen_p(n, 0);
  for (const auto& h : header) {
    std::string id = h;
    Kind kind = Kind::active;
    if (const auto colon = h.find(':'); colon != std::string::npos) {
      id = h.substr(0, colon);
      const std::string suffix = h.substr(colon + 1);
      if (suffix == "p") {
        kind = Kind::p;
      } else if (suffix == "q") {
        kind = Kind::q;
      } else {
        throw parse_error("unknown demand column '" + h + "'", line_no);
      }
    }
    double idv = 0.0;
    if (!parse_number(id, idv) || idv != std::floor(idv)) throw parse_error("bad bus id '" + h + "' in header", line_no);
    const std::size_t bus = grid.bus_index(static_cast<int>(idv));
    columns.push_back({bus, kind});
    if (kind != Kind::q) seen_p[bus] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen_p[i]) throw CaseError("demand CSV has no column for bus " + std::to_string(grid.buses[i].id),
                                    {grid.buses[i].id});
  }

  std::vector<Demand> rows;
  std::size_t data_row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    ++data_row;
    const auto cs = cells(line);
    if (cs.size() != columns.size()) {
      throw parse_error("row " + std::to_string(data_row) + " has " + std::to_string(cs.size()) + " cells, expected " +
                           std::to_string(columns.size()),
                       line_no);
    }
    Demand d(n, Complex{});
    for (std::size_t c = 0; c < cs.size(); ++c) {
      double v = 0.0;
      if (!parse_number(cs[c], v)) {
        throw parse_error("non-numeric cell '" + cs[c] + "' at row " + std::to_string(data_row) + ", column " +
                             std::to_string(c + 1),
                         line_no);
      }
      v /= grid.base_mva;
      const auto& col = columns[c];
      const Complex base = grid.buses[col.bus].demand;
      switch (col.kind) {
        case Kind::active:
          d[col.bus] = base.real() != 0.0 ? Complex(v, v * base.imag() / base.real()) : Complex(v, 0.0);
          break;
        case Kind::p:
          d[col.bus].real(v);
          break;
        case Kind::q:
          d[col.bus].imag(v);
          break;
      }
    }
    rows.push_back(std::move(d));
  }
  return rows;
}

std::vector<Demand> load_csv(const std::string& path, const grid::GridCase& grid) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), grid);
}

std::string to_csv(const std::vector<Demand>& rows, const grid::GridCase& grid, std::uint64_t seed) {
  std::ostringstream os;
  os << "# seed=" << seed << " case_hash=" << grid::case_hash(grid) << '\n';
  for (std::size_t i = 0; i < grid.bus_count(); ++i) {
    os << (i ? "," : "") << grid.buses[i].id << ":p," << grid.buses[i].id << ":q";
  }
  os << '\n';
  char buf[64];
  for (const auto& r : rows) {
    if (r.size() != grid.bus_count()) throw DimensionError("demand row does not match the network");
    for (std::size_t i = 0; i < r.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.17g,%.17g", i ? "," : "", r[i].real() * grid.base_mva,
                    r[i].imag() * grid.base_mva);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

void save_csv(const std::string& path, const std::vector<Demand>& rows, const grid::GridCase& grid,
              std::uint64_t seed) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << to_csv(rows, grid, seed);
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + ": " + ec.message());
}

std::pair<std::vector<Demand>, std::vector<Demand>> split(const std::vector<Demand>& rows, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw PreconditionError("train fraction must lie in (0, 1)");
  const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows.size())));
  return {std::vector<Demand>(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cut)),
          std::vector<Demand>(rows.begin() + static_cast<std::ptrdiff_t>(cut), rows.end())};
}

}  // namespace lopf::demand
