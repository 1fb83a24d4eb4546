#include "deskbot/ppo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::ppo {

void TrainerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("trainer.lr must be positive");
  if (epochs <= 0) throw ConfigError("trainer.epochs must be positive");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("trainer.clip_eps must lie in (0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("trainer.gamma must lie in (0, 1]");
  if (value_coef < 0.0 || entropy_coef < 0.0) throw ConfigError("loss coefficients must be non-negative");
  if (rollouts <= 0) throw ConfigError("trainer.rollouts must be positive");
  if (total_steps <= 0) throw ConfigError("trainer.total_steps must be positive");
  if (eval_every <= 0 || eval_episodes <= 0) throw ConfigError("evaluation settings must be positive");
  if (workers <= 0) throw ConfigError("workers must be positive");
  if (chunk_rows <= 0) throw ConfigError("trainer.chunk_rows must be positive");
}

void RunningRewardStats::push(double episodic_return) {
  ++count_;
  const double delta = episodic_return - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (episodic_return - mean_);
}

double RunningRewardStats::variance() const {
  return count_ < 2 ? 0.0 : std::max(0.0, m2_ / static_cast<double>(count_ - 1));
}

double RunningRewardStats::stddev() const { return std::sqrt(variance()); }

agent::AgentDims dims_for(const env::EnvConfig& config) {
  agent::AgentDims d;
  d.dof = config.robot.dof();
  d.tactile = config.robot.fingertip_count();
  d.cameras = static_cast<int>(config.cameras.size());
  if (config.cameras.empty()) throw ConfigError("no cameras configured");
  d.image_height = config.cameras.front().height;
  d.image_width = config.cameras.front().width;
  for (const auto& c : config.cameras) {
    if (c.height != d.image_height || c.width != d.image_width) {
      throw ConfigError("all cameras must share one resolution");
    }
  }
  d.validate();
  return d;
}

namespace {

// Runs fn(worker, first, last) over contiguous blocks of [0, n).
template <typename F>
void parallel_blocks(int n, int workers, F fn) {
  workers = std::clamp(workers, 1, std::max(1, n));
  if (workers == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int first = n * w / workers;
    const int last = n * (w + 1) / workers;
    threads.emplace_back([&, w, first, last] {
      try {
        fn(w, first, last);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void copy_rows(const agent::PolicyInputs& src, int src_row, int count, agent::PolicyInputs& dst, int dst_row) {
  std::copy(src.tokens.begin() + src_row, src.tokens.begin() + src_row + count, dst.tokens.begin() + dst_row);
  auto copy = [&](const nn::Tensor& s, nn::Tensor& d) {
    const std::size_t row = s.size() / static_cast<std::size_t>(s.dim(0));
    std::copy_n(s.ptr() + row * src_row, row * count, d.ptr() + row * dst_row);
  };
  copy(src.images, dst.images);
  copy(src.proprio_tactile, dst.proprio_tactile);
}

}  // namespace

TrajectoryBatch collect_rollouts(const PolicyContext& policy, const env::EnvConfig& env_config, int rollouts,
                                 std::mt19937_64& rng, RunningRewardStats& stats, int workers) {
  if (policy.params == nullptr) throw ContractViolation("collect_rollouts: no policy parameters");
  if (rollouts <= 0) throw ContractViolation("collect_rollouts: rollouts must be positive");
  const int horizon = env_config.horizon;
  const int rows = rollouts * horizon;
  const auto& dims = policy.dims;

  std::vector<std::uint64_t> episode_seeds(static_cast<std::size_t>(rollouts));
  std::vector<std::uint64_t> noise_seeds(static_cast<std::size_t>(rollouts));
  for (int r = 0; r < rollouts; ++r) {
    episode_seeds[r] = rng();
    noise_seeds[r] = rng();
  }

  TrajectoryBatch b;
  b.rollouts = rollouts;
  b.horizon = horizon;
  b.inputs.tokens.resize(static_cast<std::size_t>(rows));
  b.inputs.images = nn::Tensor({rows, dims.image_height, dims.image_width, dims.vision_channels()});
  b.inputs.proprio_tactile = nn::Tensor({rows, dims.proprio_inputs()});
  b.actions = nn::Tensor({rows, dims.dof});
  b.log_prob_old.assign(rows, 0.0);
  b.value_old.assign(rows, 0.0);
  b.rewards.assign(rows, 0.0);
  b.env_rewards.assign(rows, 0.0);
  b.done.assign(rows, false);
  b.instruction.assign(rollouts, 0);
  b.episode_returns.assign(rollouts, 0.0);
  b.episode_success.assign(rollouts, false);
  b.wrong_contact_steps.assign(rollouts, 0);

  parallel_blocks(rollouts, workers, [&](int, int first, int last) {
    const int n = last - first;
    if (n == 0) return;
    std::vector<env::Environment> envs;
    std::vector<env::State> states;
    std::vector<std::mt19937_64> noise;
    envs.reserve(n);
    for (int r = first; r < last; ++r) {
      envs.emplace_back(env_config);
      states.push_back(envs.back().reset(episode_seeds[r]));
      noise.emplace_back(noise_seeds[r]);
      b.instruction[r] = envs.back().instruction_index();
    }
    for (int t = 0; t < horizon; ++t) {
      std::vector<const env::State*> ptrs;
      for (const auto& s : states) ptrs.push_back(&s);
      const auto inputs = agent::make_inputs(dims, policy.modalities, ptrs);
      const auto outputs = agent::evaluate(*policy.params, dims, policy.limits, inputs);
      for (int k = 0; k < n; ++k) {
        const int r = first + k;
        const int row = r * horizon + t;
        copy_rows(inputs, k, 1, b.inputs, row);
        const agent::ActionDistribution dist{outputs[k].mean_action, policy.action_std};
        const auto action = agent::sample_action(dist, noise[k]);
        std::copy(action.begin(), action.end(), b.actions.ptr() + static_cast<std::size_t>(row) * dims.dof);
        b.log_prob_old[row] = agent::log_prob(dist, action);
        b.value_old[row] = outputs[k].value;
        auto step = envs[k].step(action);
        b.env_rewards[row] = step.reward;
        b.done[row] = step.done;
        b.episode_returns[r] += step.reward;
        if (step.target_touched) b.episode_success[r] = true;
        if (step.wrong_contacts > 0) ++b.wrong_contact_steps[r];
        states[k] = std::move(step.state);
      }
    }
  });

  for (int r = 0; r < rollouts; ++r) stats.push(b.episode_returns[r]);
  const double scale = 1.0 / std::max(stats.stddev(), kRewardStdFloor);
  for (int i = 0; i < rows; ++i) b.rewards[i] = b.env_rewards[i] * scale;
  return b;
}

ReturnsAdvantages compute_returns_advantages(const TrajectoryBatch& batch, double gamma) {
  const int rows = batch.rows();
  ReturnsAdvantages out;
  out.returns.assign(rows, 0.0);
  out.advantages.assign(rows, 0.0);
  for (int r = 0; r < batch.rollouts; ++r) {
    double acc = 0.0;
    for (int t = batch.horizon - 1; t >= 0; --t) {
      const int i = r * batch.horizon + t;
      if (batch.done[i]) acc = 0.0;
      acc = batch.rewards[i] + gamma * acc;
      out.returns[i] = acc;
    }
  }
  double mean = 0.0;
  for (int i = 0; i < rows; ++i) {
    out.advantages[i] = out.returns[i] - batch.value_old[i];
    mean += out.advantages[i];
  }
  mean /= rows;
  double var = 0.0;
  for (double a : out.advantages) var += (a - mean) * (a - mean);
  const double sd = std::max(std::sqrt(var / rows), kAdvantageStdFloor);
  for (double& a : out.advantages) a = (a - mean) / sd;
  return out;
}

LossTerms ppo_loss(nn::Graph& g, const nn::ParamStore& params, const PolicyContext& policy,
                   const agent::PolicyInputs& inputs, const nn::Tensor& actions,
                   std::span<const double> log_prob_old, std::span<const double> advantages,
                   std::span<const double> returns, const TrainerConfig& config, int batch_rows) {
  const int n = inputs.rows();
  const double weight = static_cast<double>(n) / batch_rows;
  const auto vars = agent::forward_policy(g, params, policy.dims, policy.limits, inputs);
  const nn::Var logp = nn::gaussian_log_prob(g, vars.mean, actions, policy.action_std);
  auto column = [n](std::span<const double> v) { return nn::Tensor({n}, std::vector<double>(v.begin(), v.end())); };
  const nn::Var ratio = nn::exp(g, nn::sub(g, logp, g.constant(column(log_prob_old))));
  const nn::Var adv = g.constant(column(advantages));
  const nn::Var unclipped = nn::mul(g, ratio, adv);
  const nn::Var clipped = nn::mul(g, nn::clamp(g, ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps), adv);
  const nn::Var surrogate = nn::minimum(g, unclipped, clipped);
  const nn::Var policy_loss = nn::scale(g, nn::mean(g, surrogate), -weight);
  const nn::Var value = nn::reshape(g, vars.value, {n});
  const nn::Var value_loss =
      nn::scale(g, nn::mean(g, nn::square(g, nn::sub(g, value, g.constant(column(returns))))), weight);
  const nn::Var total = nn::add(g, policy_loss, nn::scale(g, value_loss, config.value_coef));
  return {total, policy_loss, value_loss, ratio, unclipped, surrogate};
}

UpdateMetrics ppo_update(nn::ParamStore& params, nn::Adam& optimizer, const PolicyContext& base,
                         const TrajectoryBatch& batch, const ReturnsAdvantages& targets, const TrainerConfig& config,
                         const std::function<void(const TrajectoryBatch&, const ReturnsAdvantages&)>& dump_on_nan) {
  const int rows = batch.rows();
  PolicyContext policy = base;
  policy.params = &params;
  UpdateMetrics m;
  long clipped = 0;
  double ratio_sum = 0.0;
  const int dof = policy.dims.dof;
  auto fail = [&](const std::string& what) {
    if (dump_on_nan) dump_on_nan(batch, targets);
    throw NumericalError(what);
  };
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    nn::Gradients grads = nn::Gradients::zeros_like(params);
    double policy_loss = 0.0, value_loss = 0.0;
    for (int first = 0; first < rows; first += config.chunk_rows) {
      const int count = std::min(config.chunk_rows, rows - first);
      const auto inputs = agent::slice_inputs(batch.inputs, first, count);
      nn::Tensor actions({count, dof},
                         std::vector<double>(batch.actions.data().begin() + static_cast<std::ptrdiff_t>(first) * dof,
                                             batch.actions.data().begin() + static_cast<std::ptrdiff_t>(first + count) * dof));
      nn::Graph g;
      const auto loss = ppo_loss(g, params, policy, inputs, actions,
                                 std::span(batch.log_prob_old).subspan(first, count),
                                 std::span(targets.advantages).subspan(first, count),
                                 std::span(targets.returns).subspan(first, count), config, rows);
      const double total = g.value(loss.total).item();
      if (!std::isfinite(total)) fail(fmt::format("non-finite loss at epoch {}", epoch));
      policy_loss += g.value(loss.policy).item();
      value_loss += g.value(loss.value).item();
      const nn::Tensor& ratio = g.value(loss.ratio);
      const nn::Tensor& unclipped = g.value(loss.unclipped);
      const nn::Tensor& surrogate = g.value(loss.surrogate);
      for (int i = 0; i < count; ++i) {
        const double rho = ratio[static_cast<std::size_t>(i)];
        if (surrogate[static_cast<std::size_t>(i)] > unclipped[static_cast<std::size_t>(i)]) ++m.surrogate_violations;
        if (std::abs(rho - 1.0) > config.clip_eps) ++clipped;
        ratio_sum += rho;
        if (epoch == 0) m.first_epoch_max_ratio_dev = std::max(m.first_epoch_max_ratio_dev, std::abs(rho - 1.0));
      }
      grads.accumulate(g.backward(loss.total, params));
    }
    m.policy_loss += policy_loss / config.epochs;
    m.value_loss += value_loss / config.epochs;
    try {
      optimizer.step(params, grads);
    } catch (const NumericalError& e) {
      fail(e.what());
    }
    for (const auto& [name, t] : params) {
      if (!t.all_finite()) fail(fmt::format("parameter '{}' became non-finite", name));
    }
  }
  const double samples = static_cast<double>(rows) * config.epochs;
  m.clip_frac = clipped / samples;
  m.mean_ratio = ratio_sum / samples;
  return m;
}

namespace {

EvalReport summarize(const env::EnvConfig& env_config, const std::vector<double>& returns,
                     const std::vector<int>& instr, const std::vector<bool>& success,
                     const std::vector<int>& wrong_steps, long total_steps) {
  EvalReport rep;
  const std::size_t k = env_config.instructions.size();
  rep.success_rate.assign(k, 0.0);
  rep.episodes_per_instruction.assign(k, 0);
  rep.max_return = returns.empty() ? 0.0 : -std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < returns.size(); ++e) {
    rep.mean_return += returns[e] / static_cast<double>(returns.size());
    rep.max_return = std::max(rep.max_return, returns[e]);
    ++rep.episodes_per_instruction[instr[e]];
    if (success[e]) rep.success_rate[instr[e]] += 1.0;
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (rep.episodes_per_instruction[i] > 0) rep.success_rate[i] /= rep.episodes_per_instruction[i];
  }
  long wrong = 0;
  for (int w : wrong_steps) wrong += w;
  rep.wrong_contact_rate = total_steps > 0 ? static_cast<double>(wrong) / total_steps : 0.0;
  rep.episode_returns = returns;
  rep.episode_instruction = instr;
  rep.episode_success = success;
  rep.episode_wrong_steps = wrong_steps;
  return rep;
}

// All episodes advance in lockstep so the policy sees one batch per step.
template <typename ActionFn>
EvalReport run_episodes(const env::EnvConfig& env_config, int episodes, std::uint64_t seed, ActionFn act) {
  std::mt19937_64 seeds(seed);
  const int k = static_cast<int>(env_config.instructions.size());
  std::vector<env::Environment> envs;
  std::vector<env::State> states;
  std::vector<double> returns(static_cast<std::size_t>(episodes), 0.0);
  std::vector<int> instr;
  std::vector<bool> success(static_cast<std::size_t>(episodes), false);
  envs.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    envs.emplace_back(env_config);
    states.push_back(envs.back().reset_with_instruction(seeds(), e % k));
    instr.push_back(e % k);
  }
  std::vector<int> wrong(static_cast<std::size_t>(episodes), 0);
  long steps = 0;
  for (int t = 0; t < env_config.horizon; ++t) {
    std::vector<const env::State*> ptrs;
    for (const auto& s : states) ptrs.push_back(&s);
    const std::vector<std::vector<double>> actions = act(ptrs);
    for (int e = 0; e < episodes; ++e) {
      auto r = envs[e].step(actions[e]);
      returns[e] += r.reward;
      if (r.target_touched) success[e] = true;
      if (r.wrong_contacts > 0) ++wrong[e];
      ++steps;
      states[e] = std::move(r.state);
    }
  }
  return summarize(env_config, returns, instr, success, wrong, steps);
}

}  // namespace

EvalReport evaluate_policy(const PolicyContext& policy, const env::EnvConfig& env_config, int episodes,
                           std::uint64_t seed) {
  if (policy.params == nullptr) throw ContractViolation("evaluate_policy: no policy parameters");
  return run_episodes(env_config, episodes, seed, [&](const std::vector<const env::State*>& states) {
    const auto inputs = agent::make_inputs(policy.dims, policy.modalities, states);
    std::vector<std::vector<double>> actions;
    for (auto& out : agent::evaluate(*policy.params, policy.dims, policy.limits, inputs)) {
      actions.push_back(std::move(out.mean_action));
    }
    return actions;
  });
}

EvalReport evaluate_random_policy(const env::EnvConfig& env_config, int episodes, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return run_episodes(env_config, episodes, seed, [&](const std::vector<const env::State*>& states) {
    std::vector<std::vector<double>> actions;
    for (std::size_t i = 0; i < states.size(); ++i) {
      std::vector<double> a;
      for (const auto& j : env_config.robot.joints) {
        a.push_back(std::uniform_real_distribution<double>(j.limit_min, j.limit_max)(rng));
      }
      actions.push_back(std::move(a));
    }
    return actions;
  });
}

Trainer::Trainer(env::EnvConfig env_config, agent::Modalities modalities, TrainerConfig config,
                 agent::InitOptions init)
    : env_config_(std::move(env_config)), config_(config), adam_(nn::AdamConfig{config.lr}), rng_(config.seed) {
  env_config_.validate();
  config_.validate();
  context_.dims = dims_for(env_config_);
  context_.modalities = modalities;
  context_.limits = agent::JointLimits::of(env_config_.robot);
  params_ = agent::init_params(context_.dims, init);
  context_.params = &params_;
}

int Trainer::planned_updates() const {
  const long per_update = static_cast<long>(config_.rollouts) * env_config_.horizon;
  return static_cast<int>(std::max(1L, config_.total_steps / per_update));
}

UpdateRecord Trainer::update() {
  context_.params = &params_;
  const auto batch = collect_rollouts(context_, env_config_, config_.rollouts, rng_, stats_, config_.workers);
  const auto targets = compute_returns_advantages(batch, config_.gamma);
  UpdateRecord rec;
  rec.metrics = ppo_update(params_, adam_, context_, batch, targets, config_, nan_dump_);
  ++updates_;
  env_steps_ += batch.rows();
  rec.update_idx = updates_;
  rec.env_steps = env_steps_;
  const std::size_t k = env_config_.instructions.size();
  std::vector<int> count(k, 0);
  rec.rollout_success.assign(k, 0.0);
  for (int r = 0; r < batch.rollouts; ++r) {
    rec.mean_return += batch.episode_returns[r] / batch.rollouts;
    ++count[batch.instruction[r]];
    if (batch.episode_success[r]) rec.rollout_success[batch.instruction[r]] += 1.0;
  }
  for (std::size_t i = 0; i < k; ++i) {
    rec.rollout_success[i] = count[i] > 0 ? rec.rollout_success[i] / count[i] : std::numeric_limits<double>::quiet_NaN();
  }
  return rec;
}

EvalReport Trainer::evaluate() const {
  PolicyContext ctx = context_;
  ctx.params = &params_;
  return evaluate_policy(ctx, env_config_, config_.eval_episodes, config_.seed + kEvalSeedOffset);
}

}  // namespace deskbot::ppo
