#include "deskbot/agent/distribution.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::agent {

std::vector<double> sample_action(const ActionDistribution& dist, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> a(dist.mean.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = dist.mean[i] + dist.stddev * noise(rng);
  return a;
}

double log_prob(const ActionDistribution& dist, std::span<const double> action) {
  if (action.size() != dist.mean.size()) {
    throw ContractViolation(fmt::format("log_prob: action has {} entries, mean has {}", action.size(),
                                        dist.mean.size()));
  }
  const double s = dist.stddev;
  const double norm = std::log(s) + 0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (std::size_t i = 0; i < action.size(); ++i) {
    const double z = action[i] - dist.mean[i];
    lp += -z * z / (2.0 * s * s) - norm;
  }
  return lp;
}

}  // namespace deskbot::agent
