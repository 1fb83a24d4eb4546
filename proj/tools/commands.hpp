#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "deskbot/config/experiment.hpp"

namespace deskbot::tools {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitShape = 4,
  kExitOutput = 5,
};

// Overrides the config's output_dir as <root>/<experiment name> when set.
inline constexpr const char* kOutputRootEnv = "DESKBOT_OUTPUT_ROOT";

struct TrainOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::optional<std::filesystem::path> out;
  std::optional<int> max_updates;  // stop early, for smoke runs
  bool quiet = false;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path config;
  std::optional<int> episodes;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

struct RenderOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<int> instruction;
  std::optional<std::filesystem::path> out;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int probes = 6;  // per parameter tensor
  bool inject_fault = false;
  std::optional<std::filesystem::path> config;  // built-in desk scene when absent
};

int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);
int cmd_render_rollout(const RenderOptions& options, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err);

std::filesystem::path resolve_output_dir(const config::ExperimentConfig& cfg,
                                         const std::optional<std::filesystem::path>& flag);

// Column names of metrics.csv for a given instruction set.
std::vector<std::string> metrics_columns(const env::InstructionSet& instructions);

}  // namespace deskbot::tools
