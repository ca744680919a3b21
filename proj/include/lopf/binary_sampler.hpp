#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace lopf::sampler {

struct Configuration {
  std::vector<int> bits;
  double log_q = 0.0;
  double probability() const;
};

// S distinct draws from the factorized Bernoulli with inclusion
// probabilities `probs`, in draw order. Duplicates are redrawn; after
// 100 * S attempts the remainder is filled with the most probable
// configurations not yet drawn.
std::vector<Configuration> sample_without_replacement(const Eigen::VectorXd& probs, int count, std::uint64_t seed);

// Every configuration, indexed by the bit mask sum_j bits[j] << j.
std::vector<Configuration> enumerate_all(const Eigen::VectorXd& probs);

// Configurations in order of decreasing probability, skipping `exclude`
// masks, until `count` have been produced.
std::vector<Configuration> most_probable(const Eigen::VectorXd& probs, std::size_t count,
                                         const std::vector<std::uint64_t>& exclude = {});

std::uint64_t mask_of(const std::vector<int>& bits);

}  // namespace lopf::sampler
