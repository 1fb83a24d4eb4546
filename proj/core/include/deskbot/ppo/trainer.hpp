#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "deskbot/agent/distribution.hpp"
#include "deskbot/agent/network.hpp"
#include "deskbot/env/environment.hpp"
#include "deskbot/nn/adam.hpp"
#include "deskbot/nn/params.hpp"

namespace deskbot::ppo {

struct TrainerConfig {
  double lr = 1e-5;
  int epochs = 60;
  double clip_eps = 0.2;
  double gamma = 0.99;
  double value_coef = 0.5;
  // The action standard deviation is fixed, so the entropy is a constant and this
  // coefficient never changes a gradient. Kept for config compatibility.
  double entropy_coef = 0.0;
  int rollouts = 24;
  long total_steps = 230400;
  int eval_every = 10;
  int eval_episodes = 30;
  std::uint64_t seed = 0;
  int workers = 1;
  // Rows per forward/backward chunk inside an epoch; gradients are summed over
  // chunks, so this only bounds memory.
  int chunk_rows = 128;

  bool operator==(const TrainerConfig&) const = default;

  // Throws ConfigError for out-of-range values.
  void validate() const;
};

// Welford accumulator over completed episodic returns.
class RunningRewardStats {
 public:
  void push(double episodic_return);
  long count() const { return count_; }
  double mean() const { return mean_; }
  double variance() const;  // sample variance, 0 with fewer than two episodes
  double stddev() const;

 private:
  long count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline constexpr double kRewardStdFloor = 1e-4;
inline constexpr double kAdvantageStdFloor = 1e-8;

// R rollouts x T steps; row index = rollout * T + step.
struct TrajectoryBatch {
  int rollouts = 0;
  int horizon = 0;
  agent::PolicyInputs inputs;       // state fed to the policy at each step
  nn::Tensor actions;               // [R*T, dof], unclamped samples
  std::vector<double> log_prob_old;
  std::vector<double> value_old;
  std::vector<double> rewards;      // normalized
  std::vector<double> env_rewards;  // as returned by the environment
  std::vector<bool> done;
  std::vector<int> instruction;     // per rollout
  std::vector<double> episode_returns;  // per rollout, sum of env_rewards
  std::vector<bool> episode_success;    // target touched at least once
  std::vector<int> wrong_contact_steps;  // per rollout

  int rows() const { return rollouts * horizon; }
};

// Shared, read-only context for collection and evaluation.
struct PolicyContext {
  const nn::ParamStore* params = nullptr;
  agent::AgentDims dims;
  agent::Modalities modalities;
  agent::JointLimits limits;
  double action_std = agent::kActionStd;
};

agent::AgentDims dims_for(const env::EnvConfig& config);

// Runs R seeded episodes of exactly `horizon` steps with the frozen policy, then
// folds each episode's return into `stats` and divides every reward by
// max(stats.stddev(), kRewardStdFloor).
TrajectoryBatch collect_rollouts(const PolicyContext& policy, const env::EnvConfig& env_config, int rollouts,
                                 std::mt19937_64& rng, RunningRewardStats& stats, int workers = 1);

struct ReturnsAdvantages {
  std::vector<double> returns;
  std::vector<double> advantages;  // standardized over the batch
};

// Discounted reward-to-go within each episode (no GAE); advantage = return - value_old.
ReturnsAdvantages compute_returns_advantages(const TrajectoryBatch& batch, double gamma);

struct UpdateMetrics {
  double policy_loss = 0.0;  // averaged over epochs
  double value_loss = 0.0;
  double clip_frac = 0.0;
  double mean_ratio = 0.0;
  double first_epoch_max_ratio_dev = 0.0;  // max |ratio - 1| before any step
  long surrogate_violations = 0;           // samples where the clipped term exceeded the unclipped one
};

struct LossTerms {
  nn::Var total;
  nn::Var policy;
  nn::Var value;
  nn::Var ratio;
  nn::Var unclipped;  // ratio * advantage, per row
  nn::Var surrogate;  // min(unclipped, clipped), per row
};

// PPO loss on a slice of rows, normalised by `batch_rows` so slices sum to the batch loss.
LossTerms ppo_loss(nn::Graph& g, const nn::ParamStore& params, const PolicyContext& policy,
                   const agent::PolicyInputs& inputs, const nn::Tensor& actions,
                   std::span<const double> log_prob_old, std::span<const double> advantages,
                   std::span<const double> returns, const TrainerConfig& config, int batch_rows);

// `epochs` full-batch Adam steps on the clipped surrogate plus value loss. Throws
// NumericalError on a non-finite loss or parameter; `dump_on_nan`, when given, is
// called with the batch first.
UpdateMetrics ppo_update(nn::ParamStore& params, nn::Adam& optimizer, const PolicyContext& policy,
                         const TrajectoryBatch& batch, const ReturnsAdvantages& targets,
                         const TrainerConfig& config,
                         const std::function<void(const TrajectoryBatch&, const ReturnsAdvantages&)>& dump_on_nan = {});

// Evaluation episodes draw from a stream disjoint from the training seed.
inline constexpr std::uint64_t kEvalSeedOffset = 1000003;

struct EvalReport {
  double mean_return = 0.0;
  std::vector<double> success_rate;  // per instruction
  std::vector<int> episodes_per_instruction;
  double wrong_contact_rate = 0.0;   // fraction of steps with any wrong-cube contact
  double max_return = 0.0;
  std::vector<double> episode_returns;
  std::vector<int> episode_instruction;
  std::vector<bool> episode_success;
  std::vector<int> episode_wrong_steps;
};

// Deterministic evaluation (actions are the distribution means). Episode e runs
// instruction e mod K, so every instruction is covered evenly.
EvalReport evaluate_policy(const PolicyContext& policy, const env::EnvConfig& env_config, int episodes,
                           std::uint64_t seed);

// Uniformly random joint poses within the limits at every step.
EvalReport evaluate_random_policy(const env::EnvConfig& env_config, int episodes, std::uint64_t seed);

struct UpdateRecord {
  int update_idx = 0;
  long env_steps = 0;
  double mean_return = 0.0;
  UpdateMetrics metrics;
  std::vector<double> rollout_success;  // per instruction, NaN when not sampled
};

// Owns parameters, optimizer, reward statistics and the run generator.
class Trainer {
 public:
  Trainer(env::EnvConfig env_config, agent::Modalities modalities, TrainerConfig config,
          agent::InitOptions init);

  // One collection + update cycle.
  UpdateRecord update();
  EvalReport evaluate() const;

  int updates_done() const { return updates_; }
  int planned_updates() const;
  long env_steps() const { return env_steps_; }
  const nn::ParamStore& params() const { return params_; }
  nn::ParamStore& params() { return params_; }
  const nn::Adam& optimizer() const { return adam_; }
  const PolicyContext& context() const { return context_; }
  const env::EnvConfig& env_config() const { return env_config_; }
  const TrainerConfig& config() const { return config_; }

  // Called with the offending batch before a NumericalError propagates.
  void set_nan_dump(std::function<void(const TrajectoryBatch&, const ReturnsAdvantages&)> dump) {
    nan_dump_ = std::move(dump);
  }

 private:
  env::EnvConfig env_config_;
  TrainerConfig config_;
  nn::ParamStore params_;
  nn::Adam adam_;
  PolicyContext context_;
  RunningRewardStats stats_;
  std::mt19937_64 rng_;
  int updates_ = 0;
  long env_steps_ = 0;
  std::function<void(const TrajectoryBatch&, const ReturnsAdvantages&)> nan_dump_;
};

}  // namespace deskbot::ppo
