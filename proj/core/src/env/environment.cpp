#include "deskbot/env/environment.hpp"

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::env {

void EnvConfig::validate() const {
  robot.validate();
  sim::validate_scene(objects);
  if (!(contact_radius > 0.0)) throw ConfigError("contact_radius must be positive");
  if (horizon <= 0) throw ConfigError("horizon must be positive");
  if (cameras.empty()) throw ConfigError("at least one camera is required");
  for (const auto& c : cameras) c.validate();
  instructions.validate(objects);
}

Environment::Environment(EnvConfig config) : config_(std::move(config)) { config_.validate(); }

const Instruction& Environment::instruction() const {
  if (instruction_ < 0) throw ContractViolation("environment has not been reset");
  return config_.instructions.instructions[instruction_];
}

const RewardSpec& Environment::reward_spec() const {
  if (instruction_ < 0) throw ContractViolation("environment has not been reset");
  return config_.instructions.reward_specs[instruction_];
}

Observation Environment::observe(const sim::ContactReport& contacts) const {
  Observation o;
  o.instruction = instruction();
  o.images.reserve(config_.cameras.size());
  for (const auto& cam : config_.cameras) {
    o.images.push_back(render::render_scene(config_.robot, joints_, config_.objects, cam, config_.table));
  }
  o.proprio = joints_.angles;
  o.tactile = contacts.tactile_bits;
  return o;
}

State Environment::reset(std::uint64_t seed) {
  if (config_.instructions.size() == 0) throw ConfigError("instruction set is empty");
  rng_.seed(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(config_.instructions.size()) - 1);
  return reset_with_instruction(seed, pick(rng_));
}

State Environment::reset_with_instruction(std::uint64_t seed, int instruction) {
  if (instruction < 0 || instruction >= static_cast<int>(config_.instructions.size())) {
    throw ContractViolation(fmt::format("instruction index {} outside set of {}", instruction,
                                        config_.instructions.size()));
  }
  rng_.seed(seed);
  instruction_ = instruction;
  step_ = 0;
  joints_.angles = config_.robot.home_pose();
  const auto contacts =
      sim::detect_touches(config_.robot, joints_, config_.objects, config_.contact_radius);
  const Observation first = observe(contacts);
  state_.frames = {first, first, first};
  return state_;
}

StepResult Environment::step(std::span<const double> action) {
  if (instruction_ < 0) throw ContractViolation("step called before reset");
  if (done()) throw ContractViolation(fmt::format("step called after episode end ({} steps)", step_));
  joints_ = sim::apply_action(config_.robot, joints_, action);
  StepResult r;
  r.contacts = sim::detect_touches(config_.robot, joints_, config_.objects, config_.contact_radius);
  const auto& spec = reward_spec();
  r.raw_reward = compute_reward(spec, r.contacts, config_.objects);
  r.reward = r.raw_reward / config_.horizon;
  r.target_touched = touches_target(spec, r.contacts, config_.objects);
  r.wrong_contacts = wrong_contacts(spec, r.contacts, config_.objects);
  state_.frames[2] = std::move(state_.frames[1]);
  state_.frames[1] = std::move(state_.frames[0]);
  state_.frames[0] = observe(r.contacts);
  ++step_;
  r.done = done();
  r.state = state_;
  return r;
}

}  // namespace deskbot::env
