#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "deskbot/agent/network.hpp"
#include "deskbot/env/environment.hpp"
#include "deskbot/ppo/trainer.hpp"

namespace deskbot::config {

// Everything needed to reproduce one experiment. Stored as sectioned key/value
// text; see README for the format.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  std::string robot = "planar-2x3";
  env::EnvConfig env;
  agent::Modalities modalities;
  double actor_head_gain = 1.0;
  ppo::TrainerConfig trainer;

  // Trainer config with the experiment seed applied.
  ppo::TrainerConfig trainer_config() const;
  agent::InitOptions init_options() const { return {seed, actor_head_gain}; }

  bool operator==(const ExperimentConfig& other) const;
};

// Throws ConfigError carrying the offending line number when possible.
ExperimentConfig parse_experiment(std::string_view text);
ExperimentConfig load_experiment(const std::filesystem::path& path);
std::string serialize_experiment(const ExperimentConfig& config);

}  // namespace deskbot::config
