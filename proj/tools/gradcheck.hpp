#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deskbot/env/environment.hpp"

namespace deskbot::tools {

struct ProbeResult {
  std::string param;
  int probes = 0;
  double max_rel_err = 0.0;
  double max_abs_grad = 0.0;
};

struct GradcheckReport {
  std::vector<ProbeResult> params;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  bool passed() const { return max_rel_err < tolerance; }
};

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;
// Denominator floor for the relative error, so probes whose true gradient is
// numerically zero compare on an absolute scale instead of amplifying round-off.
inline constexpr double kGradcheckFloor = 1e-6;

// Two-arm desk scene with all modalities, used when no config is supplied.
env::EnvConfig desk_scene();

// Central differences of the full PPO loss (policy + value) against reverse mode,
// for every parameter tensor of the agent.
GradcheckReport run_gradcheck(const env::EnvConfig& scene, std::uint64_t seed, int probes_per_tensor,
                              bool inject_tanh_fault);

}  // namespace deskbot::tools
