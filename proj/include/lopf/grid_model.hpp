#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lopf/linalg.hpp"

namespace lopf::grid {

enum class BusType { slack, pq, gen };

std::string_view to_string(BusType type);

// All electrical quantities are per-unit on GridCase::base_mva.
struct Bus {
  int id = 0;
  BusType type = BusType::pq;
  Complex shunt{};  // admittance drawn at 1 p.u. voltage
  double v_min = 0.9;
  double v_max = 1.1;
  Complex demand{};

  bool operator==(const Bus&) const = default;
};

// c2 * p^2 + c1 * p + c0 in $/h with p in per-unit.
struct QuadraticCost {
  double c2 = 0.0;
  double c1 = 0.0;
  double c0 = 0.0;

  template <class T>
  T operator()(const T& p) const {
    return c2 * p * p + c1 * p + c0;
  }

  bool operator==(const QuadraticCost&) const = default;
};

// One machine per bus; several machines on a bus are aggregated at parse time.
struct Generator {
  int bus_id = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  QuadraticCost cost;
  // Base-case operating point carried by the case file (PG + jQG, VG).
  Complex dispatch{};
  double v_setpoint = 1.0;

  bool operator==(const Generator&) const = default;
};

struct Branch {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b = 0.0;  // total line-charging susceptance
  double tap = 1.0;
  double shift_deg = 0.0;

  bool operator==(const Branch&) const = default;
};

struct GridCase {
  std::string name = "case";
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Generator> generators;
  std::vector<Branch> branches;

  std::size_t bus_count() const { return buses.size(); }
  std::size_t bus_index(int id) const;  // throws CaseError for unknown ids
  std::size_t slack_index() const;
  // Generator located at bus position `bus`, or nullptr.
  const Generator* generator_at(std::size_t bus) const;
  const Generator& slack_generator() const;
  // Generators other than the slack machine, in case order. These are the
  // units the policy controls and may decommit.
  std::vector<std::size_t> controllable_generators() const;

  std::vector<Complex> demand() const;
  // Base-case generation per bus from the gen table (zero where no machine).
  std::vector<Complex> base_generation() const;

  bool operator==(const GridCase&) const = default;
};

// Throws CaseError when an invariant of GridCase does not hold.
void validate(const GridCase& grid);

// Parses the MATPOWER-style text format documented in docs/case_format.md.
GridCase parse_case(std::string_view text);
GridCase load_case(const std::string& path);
std::string serialize_case(const GridCase& grid);

// FNV-1a of the serialized case; identifies a network in provenance headers.
std::string case_hash(const GridCase& grid);

struct Admittance {
  ComplexMatrix y;          // N x N bus admittance
  ComplexMatrix y_reduced;  // slack row and column removed
  ComplexVector y_slack;    // Y[i, slack] for non-slack rows i (drives the germ)
  ComplexVector y_slack_row;  // Y[slack, i] for non-slack columns i
  Complex y_slack_self{};
  std::size_t slack_index = 0;
  std::vector<std::size_t> non_slack;  // bus position of each reduced row
  std::shared_ptr<const LuFactor> reduced_lu;

  std::size_t bus_count() const { return static_cast<std::size_t>(y.rows()); }
};

Admittance build_admittance(const GridCase& grid);

// Rebuilds the full Y from the reduced blocks held by `adm`.
ComplexMatrix reassemble(const Admittance& adm);

}  // namespace lopf::grid
