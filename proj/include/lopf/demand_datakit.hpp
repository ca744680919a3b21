#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lopf/grid_model.hpp"

namespace lopf::demand {

using Demand = std::vector<Complex>;

struct DemandSet {
  std::vector<Demand> rows;  // T rows of per-bus complex demand, p.u.
  std::vector<std::string> diagnostics;
};

// Daily sinusoid (period 24 rows) plus AR(1) noise per bus, rescaled so the
// per-bus mean is the base |S_d| and the population std / mean equals
// ratios[i]; the base power factor is kept. Buses with zero base demand stay
// zero. A ratio that would make some row non-positive is lowered until the
// smallest value is 1% of the mean, with a diagnostic.
DemandSet synthesize(const grid::GridCase& grid, std::size_t count, const std::vector<double>& ratios,
                     std::uint64_t seed);
DemandSet synthesize(const grid::GridCase& grid, std::size_t count, double ratio, std::uint64_t seed);

// Header: one cell per bus id. A bare id carries active power in MW with the
// base-case power factor; "<id>:p" / "<id>:q" carry MW and Mvar explicitly.
// Lines starting with '#' are ignored.
std::vector<Demand> load_csv(const std::string& path, const grid::GridCase& grid);
std::vector<Demand> parse_csv(const std::string& text, const grid::GridCase& grid);

// Explicit p/q columns in MW / Mvar, preceded by "# seed=<seed> case_hash=<hash>".
std::string to_csv(const std::vector<Demand>& rows, const grid::GridCase& grid, std::uint64_t seed);
void save_csv(const std::string& path, const std::vector<Demand>& rows, const grid::GridCase& grid,
              std::uint64_t seed);

// Chronological split: the first round(fraction * T) rows train.
std::pair<std::vector<Demand>, std::vector<Demand>> split(const std::vector<Demand>& rows, double train_fraction);

}  // namespace lopf::demand
