#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "deskbot/config/experiment.hpp"
#include "deskbot/error.hpp"
#include "deskbot/ppo/trainer.hpp"

using namespace deskbot;
using namespace deskbot::ppo;

namespace {

config::ExperimentConfig experiment(const std::string& file) {
  return config::load_experiment(std::string(DESKBOT_CONFIG_DIR) + "/" + file);
}

// Shrinks the cameras so batches stay cheap in unit tests.
env::EnvConfig small_env(const std::string& file) {
  auto env = experiment(file).env;
  for (auto& c : env.cameras) {
    c.height = 8;
    c.width = 4;
  }
  return env;
}

TrajectoryBatch manual_batch(std::vector<double> rewards, int horizon) {
  TrajectoryBatch b;
  b.horizon = horizon;
  b.rollouts = static_cast<int>(rewards.size()) / horizon;
  b.rewards = rewards;
  b.value_old.assign(rewards.size(), 0.0);
  b.done.assign(rewards.size(), false);
  for (int r = 0; r < b.rollouts; ++r) b.done[static_cast<std::size_t>((r + 1) * horizon - 1)] = true;
  return b;
}

PolicyContext context_for(const env::EnvConfig& env, const nn::ParamStore& params) {
  PolicyContext ctx;
  ctx.dims = dims_for(env);
  ctx.limits = agent::JointLimits::of(env.robot);
  ctx.params = &params;
  return ctx;
}

}  // namespace

TEST_SUITE("ppotrainer") {

TEST_CASE("returns are discounted future sums within an episode") {
  auto out = compute_returns_advantages(manual_batch({0, 0, 1}, 3), 1.0);
  CHECK(out.returns == std::vector<double>{1, 1, 1});
  out = compute_returns_advantages(manual_batch({1, 0, 0}, 3), 0.5);
  CHECK(out.returns == std::vector<double>{1, 0, 0});
  out = compute_returns_advantages(manual_batch({1, 1, 2, 4}, 2), 0.5);
  CHECK(out.returns == std::vector<double>{1.5, 1, 4, 4});
}

TEST_CASE("advantages are standardized") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.7, 3.0);
  std::vector<double> rewards(24 * 32);
  for (double& r : rewards) r = n(rng);
  auto b = manual_batch(rewards, 32);
  for (double& v : b.value_old) v = n(rng);
  const auto out = compute_returns_advantages(b, 0.99);
  const double mean = std::accumulate(out.advantages.begin(), out.advantages.end(), 0.0) / out.advantages.size();
  double var = 0.0;
  for (double a : out.advantages) var += (a - mean) * (a - mean);
  CHECK(std::abs(mean) < 1e-10);
  CHECK(std::abs(std::sqrt(var / out.advantages.size()) - 1.0) < 1e-10);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (i % 32 == 31) CHECK(out.returns[i] == rewards[i]);
  }
}

TEST_CASE("constant advantages hit the std floor without blowing up") {
  const auto out = compute_returns_advantages(manual_batch({0, 0, 0, 0}, 2), 0.99);
  for (double a : out.advantages) CHECK(a == 0.0);
}

TEST_CASE("Welford statistics") {
  RunningRewardStats s;
  CHECK(s.variance() == 0.0);
  for (double v : {2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0}) s.push(v);
  CHECK(s.count() == 8);
  CHECK(s.mean() == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(s.variance() == doctest::Approx(32.0 / 7.0).epsilon(1e-14));
}

TEST_CASE("reward normalization is scale invariant") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> stream(5, std::vector<double>(8));
  for (auto& ep : stream) {
    for (double& r : ep) r = u(rng);
  }
  auto normalized = [&](double c) {
    RunningRewardStats s;
    std::vector<double> out;
    for (const auto& ep : stream) {
      s.push(c * std::accumulate(ep.begin(), ep.end(), 0.0));
      if (s.count() < 2) continue;
      for (double r : ep) out.push_back(c * r / std::max(s.stddev(), kRewardStdFloor));
    }
    return out;
  };
  const auto a = normalized(1.0);
  const auto b = normalized(37.5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
}

TEST_CASE("collection shape, zero-reward floor and determinism") {
  const auto env = small_env("exp1.cfg");
  const auto params = agent::zero_params(dims_for(env));
  const auto ctx = context_for(env, params);
  std::mt19937_64 rng(3);
  RunningRewardStats stats;
  const auto b = collect_rollouts(ctx, env, 1, rng, stats);
  CHECK(b.rows() == 32);
  CHECK(b.actions.shape() == std::vector<int>{32, 6});
  CHECK(b.inputs.rows() == 32);
  CHECK(b.done[31]);
  CHECK(std::count(b.done.begin(), b.done.end(), true) == 1);
  CHECK(stats.count() == 1);
  for (std::size_t i = 0; i < b.rewards.size(); ++i) {
    CHECK(std::isfinite(b.rewards[i]));
    CHECK(b.rewards[i] == b.env_rewards[i] / kRewardStdFloor);
  }

  // A scene whose target cube is out of reach pays nothing at all.
  auto far = env;
  for (auto& o : far.objects) o.center.y() = 1.25;
  far.objects[0].center.x() = -0.5;
  far.objects[1].center.x() = 0.0;
  far.objects[2].center.x() = 0.5;
  RunningRewardStats zero_stats;
  std::mt19937_64 rng2(4);
  const auto z = collect_rollouts(ctx, far, 3, rng2, zero_stats);
  for (double r : z.rewards) CHECK(r == 0.0);

  auto run = [&] {
    std::mt19937_64 r(5);
    RunningRewardStats s;
    return collect_rollouts(ctx, env, 2, r, s);
  };
  const auto x = run();
  const auto y = run();
  CHECK(x.actions == y.actions);
  CHECK(x.rewards == y.rewards);
  CHECK(x.log_prob_old == y.log_prob_old);
  CHECK(x.inputs.images == y.inputs.images);
}

TEST_CASE("ratio identity and clip on the first epoch") {
  const auto env = small_env("exp2.cfg");
  auto params = agent::init_params(dims_for(env), {6, 1.0});
  const auto ctx = context_for(env, params);
  std::mt19937_64 rng(7);
  RunningRewardStats stats;
  const auto batch = collect_rollouts(ctx, env, 2, rng, stats);
  const auto targets = compute_returns_advantages(batch, 0.99);
  TrainerConfig cfg;
  cfg.epochs = 3;
  cfg.chunk_rows = 20;
  nn::Adam adam({1e-4});
  const auto m = ppo_update(params, adam, ctx, batch, targets, cfg);
  CHECK(m.first_epoch_max_ratio_dev < 1e-12);
  CHECK(m.surrogate_violations == 0);
  CHECK(adam.steps() == 3);
  CHECK(std::isfinite(m.policy_loss));
}

TEST_CASE("chunking does not change the gradient") {
  const auto env = small_env("exp1.cfg");
  auto base = agent::init_params(dims_for(env), {8, 1.0});
  const auto ctx = context_for(env, base);
  std::mt19937_64 rng(9);
  RunningRewardStats stats;
  const auto batch = collect_rollouts(ctx, env, 2, rng, stats);
  const auto targets = compute_returns_advantages(batch, 0.99);
  auto run = [&](int chunk) {
    auto p = base;
    TrainerConfig cfg;
    cfg.epochs = 1;
    cfg.chunk_rows = chunk;
    nn::Adam adam({1e-3});
    ppo_update(p, adam, ctx, batch, targets, cfg);
    return p;
  };
  const auto a = run(64);
  const auto b = run(7);
  for (const auto& [name, t] : a) {
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(b.at(name)[i] == doctest::Approx(t[i]).epsilon(1e-9));
  }
}

TEST_CASE("clipped term uses 1 + eps above the range") {
  nn::ParamStore none;
  nn::Graph g;
  const auto ratio = g.constant(nn::Tensor({1}, {1.5}));
  const auto clipped = nn::clamp(g, ratio, 0.8, 1.2);
  CHECK(g.value(clipped)[0] == 1.2);
  const auto adv = g.constant(nn::Tensor({1}, {2.0}));
  const auto s = nn::minimum(g, nn::mul(g, ratio, adv), nn::mul(g, clipped, adv));
  CHECK(g.value(s)[0] == doctest::Approx(2.4).epsilon(1e-15));
}

TEST_CASE("single-row loss matches a hand computation") {
  // Zero parameters: mean action = home pose, value = 0. With dof 6, sigma 0.36 and
  // action = mean + 0.036 on every joint, log pi = 6 * (-0.005 - ln 0.36 - ln(2 pi) / 2).
  const auto env = small_env("exp1.cfg");
  const auto params = agent::zero_params(dims_for(env));
  const auto ctx = context_for(env, params);
  env::Environment e(env);
  const auto s = e.reset(0);
  const std::vector<const env::State*> ptrs = {&s};
  const auto inputs = agent::make_inputs(ctx.dims, ctx.modalities, ptrs);
  const auto home = env.robot.home_pose();
  nn::Tensor actions({1, 6});
  for (int j = 0; j < 6; ++j) actions[static_cast<std::size_t>(j)] = home[static_cast<std::size_t>(j)] + 0.036;
  const double log_pi = 6.0 * (-0.005 - std::log(0.36) - 0.5 * std::log(2 * M_PI));
  const std::vector<double> old = {log_pi - 0.1};  // ratio e^0.1 = 1.10517
  const std::vector<double> adv = {-1.5};
  const std::vector<double> ret = {0.8};
  TrainerConfig cfg;
  nn::Graph g;
  const auto terms = ppo_loss(g, params, ctx, inputs, actions, old, adv, ret, cfg, 1);
  // min(1.10517 * -1.5, 1.10517 * -1.5) = -1.657756; policy = 1.657756;
  // value = 0.64; total = 1.657756 + 0.5 * 0.64.
  const double expected = 1.5 * std::exp(0.1) + 0.32;
  CHECK(g.value(terms.total).item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(g.value(terms.total).item() == doctest::Approx(1.977756).epsilon(1e-6));
  CHECK(g.value(terms.ratio)[0] == doctest::Approx(std::exp(0.1)).epsilon(1e-12));
}

TEST_CASE("zero-init Exp-I evaluation returns zero") {
  const auto env = experiment("exp1.cfg").env;
  const auto params = agent::zero_params(dims_for(env));
  const auto rep = evaluate_policy(context_for(env, params), env, 6, 11);
  CHECK(rep.mean_return == 0.0);
  CHECK(rep.success_rate == std::vector<double>{0.0});
  CHECK(rep.episode_returns.size() == 6);
}

TEST_CASE("evaluation reports stay in range and cover instructions evenly") {
  const auto env = small_env("exp3.cfg");
  const auto params = agent::init_params(dims_for(env), {12, 1.0});
  const auto rep = evaluate_policy(context_for(env, params), env, 9, 13);
  CHECK(rep.episodes_per_instruction == std::vector<int>{3, 3, 3});
  for (double s : rep.success_rate) CHECK((s >= 0.0 && s <= 1.0));
  CHECK((rep.wrong_contact_rate >= 0.0 && rep.wrong_contact_rate <= 1.0));
  for (double r : rep.episode_returns) CHECK(r <= 6.0);
  const auto random = evaluate_random_policy(env, 9, 13);
  CHECK(random.episode_returns.size() == 9);
  CHECK(evaluate_random_policy(env, 9, 13).episode_returns == random.episode_returns);
}

TEST_CASE("trainer runs are reproducible") {
  auto cfg = experiment("exp1.cfg");
  cfg.env = small_env("exp1.cfg");
  cfg.trainer.rollouts = 2;
  cfg.trainer.epochs = 2;
  cfg.trainer.total_steps = 128;
  auto run = [&] {
    Trainer t(cfg.env, cfg.modalities, cfg.trainer_config(), cfg.init_options());
    CHECK(t.planned_updates() == 2);
    const auto r1 = t.update();
    const auto r2 = t.update();
    CHECK(r2.env_steps == 128);
    return std::pair{t.params(), std::vector<double>{r1.metrics.policy_loss, r2.metrics.value_loss, r2.mean_return}};
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.second == b.second);
  for (const auto& [name, t] : a.first) {
    INFO(name);
    CHECK(t == b.first.at(name));
  }
}

TEST_CASE("trainer config validation") {
  TrainerConfig c;
  CHECK_NOTHROW(c.validate());
  c.clip_eps = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.gamma = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

}
