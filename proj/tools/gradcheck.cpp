#include "gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "deskbot/agent/distribution.hpp"
#include "deskbot/agent/network.hpp"
#include "deskbot/nn/graph.hpp"
#include "deskbot/ppo/trainer.hpp"

namespace deskbot::tools {

env::EnvConfig desk_scene() {
  env::EnvConfig c;
  c.objects = {
      {0, sim::Color::kBlue, sim::Vec3(-0.30, 0.80, 0.04), 0.04},
      {1, sim::Color::kRed, sim::Vec3(0.30, 0.80, 0.04), 0.04},
      {2, sim::Color::kGreen, sim::Vec3(0.0, 0.95, 0.04), 0.04},
  };
  render::CameraSpec front;
  front.pose = render::CameraPose::kFront;
  front.window_min = {-0.6, -0.1};
  front.window_max = {0.6, 0.3};
  render::CameraSpec top;
  top.pose = render::CameraPose::kTop;
  top.window_min = {-0.6, 0.2};
  top.window_max = {0.6, 1.3};
  c.cameras = {front, top};
  for (auto color : {sim::Color::kBlue, sim::Color::kRed, sim::Color::kGreen}) {
    env::RewardSpec spec;
    spec.kind = env::RewardKind::kPerFinger;
    spec.target_color = color;
    spec.wrong_penalty = -0.1;
    c.instructions.add("Touch the " + std::string(sim::color_name(color)) + " cube.", spec);
  }
  return c;
}

GradcheckReport run_gradcheck(const env::EnvConfig& scene, std::uint64_t seed, int probes_per_tensor,
                              bool inject_tanh_fault) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  ppo::PolicyContext ctx;
  ctx.dims = ppo::dims_for(scene);
  ctx.modalities = agent::Modalities{true, true, true};
  ctx.limits = agent::JointLimits::of(scene.robot);
  nn::ParamStore params = agent::init_params(ctx.dims, {seed, 1.0});
  // Move away from the zero-bias, unit-gain initial point so every term is exercised.
  for (auto& [name, t] : params) {
    for (double& v : t.data()) v += 0.05 * normal(rng);
  }
  ctx.params = &params;

  // Two states from each instruction's episode under random joint targets.
  std::vector<env::State> states;
  env::Environment env(scene);
  for (std::size_t k = 0; k < scene.instructions.size(); ++k) {
    auto s = env.reset_with_instruction(rng(), static_cast<int>(k));
    for (int t = 0; t < 4; ++t) {
      std::vector<double> a;
      for (const auto& j : scene.robot.joints) {
        a.push_back(std::uniform_real_distribution<double>(j.limit_min, j.limit_max)(rng));
      }
      s = env.step(a).state;
      if (t % 2 == 1) states.push_back(s);
    }
  }
  std::vector<const env::State*> ptrs;
  for (const auto& s : states) ptrs.push_back(&s);
  const auto inputs = agent::make_inputs(ctx.dims, ctx.modalities, ptrs);
  const int n = inputs.rows();

  // Actions drawn around the current mean; old log-probs offset so ratios sit
  // inside the clip range but away from 1.
  const auto outputs = agent::evaluate(params, ctx.dims, ctx.limits, inputs);
  nn::Tensor actions({n, ctx.dims.dof});
  std::vector<double> log_prob_old(n), advantages(n), returns(n);
  for (int i = 0; i < n; ++i) {
    const agent::ActionDistribution dist{outputs[i].mean_action, ctx.action_std};
    const auto a = agent::sample_action(dist, rng);
    std::copy(a.begin(), a.end(), actions.ptr() + static_cast<std::size_t>(i) * ctx.dims.dof);
    log_prob_old[i] = agent::log_prob(dist, a) + std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
    advantages[i] = normal(rng);
    returns[i] = normal(rng);
  }
  const ppo::TrainerConfig config;
  auto loss_value = [&](bool record, nn::Gradients* grads) {
    nn::Graph g(record);
    g.inject_tanh_fault(inject_tanh_fault);
    const auto terms = ppo::ppo_loss(g, params, ctx, inputs, actions, log_prob_old, advantages, returns, config, n);
    if (grads != nullptr) *grads = g.backward(terms.total, params);
    return g.value(terms.total).item();
  };

  nn::Gradients grads;
  loss_value(true, &grads);

  GradcheckReport report;
  report.tolerance = kGradcheckTolerance;
  for (auto& [name, tensor] : params) {
    const nn::Tensor& grad = grads.at(name);
    const std::size_t size = tensor.size();
    std::vector<std::size_t> order(size);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(grad[a]) > std::abs(grad[b]); });
    // Half of the probes on the largest gradients, the rest uniformly at random.
    std::vector<std::size_t> probes;
    const std::size_t want = std::min<std::size_t>(size, static_cast<std::size_t>(probes_per_tensor));
    for (std::size_t i = 0; i < (want + 1) / 2; ++i) probes.push_back(order[i]);
    while (probes.size() < want) {
      const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, size - 1)(rng);
      if (std::find(probes.begin(), probes.end(), idx) == probes.end()) probes.push_back(idx);
    }

    ProbeResult res{name, static_cast<int>(probes.size()), 0.0, std::abs(grad[order[0]])};
    for (std::size_t idx : probes) {
      const double orig = tensor[idx];
      tensor[idx] = orig + kGradcheckStep;
      const double up = loss_value(false, nullptr);
      tensor[idx] = orig - kGradcheckStep;
      const double down = loss_value(false, nullptr);
      tensor[idx] = orig;
      const double numeric = (up - down) / (2.0 * kGradcheckStep);
      const double analytic = grad[idx];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
      res.max_rel_err = std::max(res.max_rel_err, std::abs(analytic - numeric) / denom);
    }
    report.max_rel_err = std::max(report.max_rel_err, res.max_rel_err);
    report.params.push_back(res);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace deskbot::tools
