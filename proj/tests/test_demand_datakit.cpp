#include <doctest.h>

#include <cmath>

#include "lopf/demand_datakit.hpp"
#include "lopf/error.hpp"
#include "test_support.hpp"

using namespace lopf;

namespace {

const char* kTwoBus = R"(function mpc = two_bus
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 0 1 1.1 0.9;
  2 1 50 20 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0.02 0.04 0 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0.01 20 5;
];
)";

}  // namespace

TEST_CASE("synthetic demand hits the per-bus mean and std/mean targets") {
  const auto grid = grid::load_case(test::data_path("case14.m"));
  std::vector<double> ratios(grid.bus_count());
  for (std::size_t i = 0; i < ratios.size(); ++i) ratios[i] = 0.05 + 0.01 * static_cast<double>(i);
  const auto set = demand::synthesize(grid, 500, ratios, 3);
  REQUIRE(set.rows.size() == 500);
  CHECK(set.diagnostics.empty());
  for (std::size_t i = 0; i < grid.bus_count(); ++i) {
    const double base = std::abs(grid.buses[i].demand);
    double mean = 0.0, var = 0.0;
    for (const auto& r : set.rows) mean += std::abs(r[i]);
    mean /= 500.0;
    for (const auto& r : set.rows) var += (std::abs(r[i]) - mean) * (std::abs(r[i]) - mean);
    const double sd = std::sqrt(var / 500.0);
    CHECK(std::abs(mean - base) < 1e-9);
    if (base > 0.0) {
      CHECK(std::abs(sd / mean - ratios[i]) < 1e-9);
      for (const auto& r : set.rows) {
        REQUIRE(r[i].real() > 0.0);
        // power factor kept
        REQUIRE(std::abs(std::arg(r[i]) - std::arg(grid.buses[i].demand)) < 1e-12);
      }
    } else {
      for (const auto& r : set.rows) REQUIRE(r[i] == Complex{});
    }
  }
}

TEST_CASE("synthesis is deterministic and clips unreachable ratios") {
  const auto grid = grid::load_case(test::data_path("case14.m"));
  CHECK(demand::synthesize(grid, 100, 0.2, 9).rows == demand::synthesize(grid, 100, 0.2, 9).rows);
  CHECK(demand::synthesize(grid, 100, 0.2, 9).rows != demand::synthesize(grid, 100, 0.2, 10).rows);
  const auto wild = demand::synthesize(grid, 200, 5.0, 9);
  CHECK_FALSE(wild.diagnostics.empty());
  for (const auto& r : wild.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (std::abs(grid.buses[i].demand) > 0.0) REQUIRE(r[i].real() > 0.0);
    }
  }
  CHECK_THROWS_AS(demand::synthesize(grid, 10, -0.1, 1), PreconditionError);
}

TEST_CASE("CSV ingestion") {
  const auto grid = grid::parse_case(kTwoBus);
  const auto rows = demand::parse_csv("1,2\n0,50\n0,25\n0,100\n", grid);
  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0].size() == 2);
  // 25 MW at the base power factor 50 + 20j
  CHECK(std::abs(rows[1][1] - Complex(0.25, 0.1)) < 1e-15);

  const auto zeros = demand::parse_csv("2,1\n0,0\n0,0\n", grid);
  for (const auto& r : zeros) CHECK(r == std::vector<Complex>{0.0, 0.0});

  try {
    demand::parse_csv("1\n3\n", grid);
    FAIL("missing column accepted");
  } catch (const CaseError& e) {
    CHECK(e.entities() == std::vector<int>{2});
    CHECK(std::string(e.what()).find("bus 2") != std::string::npos);
  }
  try {
    demand::parse_csv("1,2\n0,1\n0,abc\n", grid);
    FAIL("non-numeric cell accepted");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("column 2") != std::string::npos);
    CHECK(e.line() == 3);
  }
}

TEST_CASE("persisted CSV carries provenance and reloads") {
  const auto grid = grid::load_case(test::data_path("case14.m"));
  const auto set = demand::synthesize(grid, 30, 0.1, 4);
  const std::string text = demand::to_csv(set.rows, grid, 4);
  CHECK(text.rfind("# seed=4 case_hash=" + grid::case_hash(grid) + "\n", 0) == 0);
  const auto back = demand::parse_csv(text, grid);
  REQUIRE(back.size() == set.rows.size());
  for (std::size_t t = 0; t < back.size(); ++t) {
    for (std::size_t i = 0; i < back[t].size(); ++i) CHECK(std::abs(back[t][i] - set.rows[t][i]) < 1e-14);
  }
}

TEST_CASE("chronological split is a partition") {
  std::vector<demand::Demand> rows(26280);
  for (std::size_t t = 0; t < rows.size(); ++t) rows[t] = {Complex(static_cast<double>(t), 0.0)};
  const auto [train, test] = demand::split(rows, 20280.0 / 26280.0);
  CHECK(train.size() == 20280);
  CHECK(test.size() == 6000);
  CHECK(train.front() == rows.front());
  CHECK(test.front() == rows[20280]);
  CHECK(test.back() == rows.back());

  std::vector<demand::Demand> ten(10, demand::Demand{});
  const auto [a, b] = demand::split(ten, 0.5);
  CHECK(a.size() == 5);
  CHECK(b.size() == 5);
  CHECK_THROWS_AS(demand::split(ten, 1.0), PreconditionError);
  CHECK_THROWS_AS(demand::split(ten, 0.0), PreconditionError);
}
