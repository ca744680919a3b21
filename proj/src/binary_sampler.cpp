#include "lopf/binary_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>
#include <set>

#include "lopf/error.hpp"
#include "lopf/rng.hpp"

namespace lopf::sampler {

namespace {

void check_probs(const Eigen::VectorXd& probs) {
  if (probs.size() > 62) throw PreconditionError("at most 62 binary variables are supported");
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    if (!(probs(j) > 0.0 && probs(j) < 1.0)) {
      throw PreconditionError("inclusion probabilities must lie strictly inside (0, 1)");
    }
  }
}

double log_q(const Eigen::VectorXd& probs, const std::vector<int>& bits) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < probs.size(); ++j) {
    total += bits[static_cast<std::size_t>(j)] != 0 ? std::log(probs(j)) : std::log1p(-probs(j));
  }
  return total;
}

std::vector<int> bits_of(std::uint64_t mask, Eigen::Index n) {
  std::vector<int> bits(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) bits[static_cast<std::size_t>(j)] = static_cast<int>((mask >> j) & 1u);
  return bits;
}

}  // namespace

double Configuration::probability() const { return std::exp(log_q); }

std::uint64_t mask_of(const std::vector<int>& bits) {
  std::uint64_t mask = 0;
  for (std::size_t j = 0; j < bits.size(); ++j) {
    if (bits[j] != 0) mask |= std::uint64_t{1} << j;
  }
  return mask;
}

std::vector<Configuration> most_probable(const Eigen::VectorXd& probs, std::size_t count,
                                         const std::vector<std::uint64_t>& exclude) {
  check_probs(probs);
  const auto n = probs.size();
  std::uint64_t mode = 0;
  std::vector<std::pair<double, Eigen::Index>> flips;  // cost of leaving the mode, per bit
  for (Eigen::Index j = 0; j < n; ++j) {
    if (probs(j) >= 0.5) mode |= std::uint64_t{1} << j;
    flips.emplace_back(std::abs(std::log(probs(j)) - std::log1p(-probs(j))), j);
  }
  std::sort(flips.begin(), flips.end());

  // Subsets of flips in nondecreasing total cost: each subset (ending at
  // sorted position i) spawns "add i+1" and "replace i by i+1".
  struct Node {
    double cost;
    std::uint64_t set;  // over sorted positions
    int last;
  };
  const auto worse = [](const Node& a, const Node& b) {
    return a.cost != b.cost ? a.cost > b.cost : a.set > b.set;
  };
  std::priority_queue<Node, std::vector<Node>, decltype(worse)> heap(worse);
  const std::set<std::uint64_t> skip(exclude.begin(), exclude.end());
  std::vector<Configuration> out;
  auto emit = [&](std::uint64_t sorted_set) {
    std::uint64_t mask = mode;
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((sorted_set >> i) & 1u) mask ^= std::uint64_t{1} << flips[static_cast<std::size_t>(i)].second;
    }
    if (skip.count(mask) != 0) return;
    Configuration c;
    c.bits = bits_of(mask, n);
    c.log_q = log_q(probs, c.bits);
    out.push_back(std::move(c));
  };
  emit(0);
  if (n > 0) heap.push({flips[0].first, 1, 0});
  while (out.size() < count && !heap.empty()) {
    const Node top = heap.top();
    heap.pop();
    emit(top.set);
    if (top.last + 1 < n) {
      const auto next = static_cast<std::size_t>(top.last + 1);
      heap.push({top.cost + flips[next].first, top.set | (std::uint64_t{1} << next), top.last + 1});
      heap.push({top.cost - flips[static_cast<std::size_t>(top.last)].first + flips[next].first,
                 (top.set & ~(std::uint64_t{1} << top.last)) | (std::uint64_t{1} << next), top.last + 1});
    }
  }
  if (out.size() > count) out.resize(count);
  return out;
}

std::vector<Configuration> sample_without_replacement(const Eigen::VectorXd& probs, int count, std::uint64_t seed) {
  check_probs(probs);
  const auto n = probs.size();
  if (count < 0) throw PreconditionError("sample count must be non-negative");
  if (n < 63 && static_cast<std::uint64_t>(count) > (std::uint64_t{1} << n)) {
    throw PreconditionError("cannot draw " + std::to_string(count) + " distinct configurations of " +
                            std::to_string(n) + " bits");
  }
  std::mt19937_64 rng(seed);
  std::set<std::uint64_t> seen;
  std::vector<std::uint64_t> order;
  std::vector<Configuration> out;
  const long cap = 100L * count;
  for (long attempt = 0; attempt < cap && static_cast<int>(out.size()) < count; ++attempt) {
    std::uint64_t mask = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (uniform01(rng) < probs(j)) mask |= std::uint64_t{1} << j;
    }
    if (!seen.insert(mask).second) continue;
    order.push_back(mask);
    Configuration c;
    c.bits = bits_of(mask, n);
    c.log_q = log_q(probs, c.bits);
    out.push_back(std::move(c));
  }
  if (static_cast<int>(out.size()) < count) {
    auto fill = most_probable(probs, static_cast<std::size_t>(count) - out.size(), order);
    for (auto& c : fill) out.push_back(std::move(c));
  }
  return out;
}

std::vector<Configuration> enumerate_all(const Eigen::VectorXd& probs) {
  check_probs(probs);
  if (probs.size() > 20) throw PreconditionError("enumeration is limited to 20 binary variables");
  const std::uint64_t total = std::uint64_t{1} << probs.size();
  std::vector<Configuration> out;
  out.reserve(total);
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    Configuration c;
    c.bits = bits_of(mask, probs.size());
    c.log_q = log_q(probs, c.bits);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace lopf::sampler
