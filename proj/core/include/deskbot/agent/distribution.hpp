#pragma once

#include <random>
#include <span>
#include <vector>

namespace deskbot::agent {

inline constexpr double kActionStd = 0.36;

// Diagonal Gaussian with one fixed standard deviation for every joint.
struct ActionDistribution {
  std::vector<double> mean;
  double stddev = kActionStd;
};

std::vector<double> sample_action(const ActionDistribution& dist, std::mt19937_64& rng);

// Sum over joints of -(a - mu)^2 / (2 sigma^2) - ln sigma - ln(2 pi) / 2.
double log_prob(const ActionDistribution& dist, std::span<const double> action);

}  // namespace deskbot::agent
