#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "deskbot/env/instruction.hpp"
#include "deskbot/render/raster.hpp"
#include "deskbot/sim/kinematics.hpp"

namespace deskbot::env {

inline constexpr int kStackDepth = 3;

struct EnvConfig {
  sim::RobotModel robot = sim::planar_2x3();
  double contact_radius = sim::kDefaultContactRadius;
  std::vector<sim::SceneObject> objects;
  render::TableSpec table;
  std::vector<render::CameraSpec> cameras;
  InstructionSet instructions;
  int horizon = 32;

  // Throws ConfigError when any component is invalid.
  void validate() const;
};

struct Observation {
  Instruction instruction;
  std::vector<render::Image> images;  // one per camera, config order
  std::vector<double> proprio;        // joint angles
  std::vector<bool> tactile;

  bool operator==(const Observation&) const = default;
};

// frames[0] is the newest observation.
struct State {
  std::array<Observation, kStackDepth> frames;
};

struct StepResult {
  State state;
  double reward = 0.0;      // raw reward scaled by 1/horizon
  double raw_reward = 0.0;  // compute_reward output
  bool done = false;
  sim::ContactReport contacts;
  bool target_touched = false;
  int wrong_contacts = 0;
};

// One episode at a time, single-threaded, owns its generator.
class Environment {
 public:
  explicit Environment(EnvConfig config);

  // Home pose, configured cubes, instruction drawn uniformly with `seed`, and the
  // first observation replicated across the stack.
  State reset(std::uint64_t seed);
  // Same, with the instruction chosen by index instead of drawn.
  State reset_with_instruction(std::uint64_t seed, int instruction);

  // Throws ContractViolation when called before reset or after the episode ended.
  StepResult step(std::span<const double> action);

  const EnvConfig& config() const { return config_; }
  const sim::JointState& joint_state() const { return joints_; }
  const Instruction& instruction() const;
  const RewardSpec& reward_spec() const;
  int instruction_index() const { return instruction_; }
  int steps_taken() const { return step_; }
  bool done() const { return step_ >= config_.horizon; }

  Observation observe(const sim::ContactReport& contacts) const;

 private:
  EnvConfig config_;
  std::mt19937_64 rng_;
  sim::JointState joints_;
  State state_;
  int instruction_ = -1;
  int step_ = 0;
};

}  // namespace deskbot::env
