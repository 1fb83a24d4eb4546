#include <benchmark/benchmark.h>

#include <random>

#include "deskbot/agent/network.hpp"
#include "deskbot/env/environment.hpp"
#include "deskbot/nn/graph.hpp"
#include "deskbot/render/raster.hpp"
#include "deskbot/sim/kinematics.hpp"

using namespace deskbot;

namespace {

std::vector<sim::SceneObject> row_layout() {
  return {{0, sim::Color::kBlue, sim::Vec3(0.05, 0.85, 0.04), 0.04},
          {1, sim::Color::kGreen, sim::Vec3(0.20, 0.85, 0.04), 0.04},
          {2, sim::Color::kRed, sim::Vec3(0.35, 0.85, 0.04), 0.04}};
}

render::CameraSpec top_camera(int height) {
  render::CameraSpec c;
  c.pose = render::CameraPose::kTop;
  c.height = height;
  c.width = height / 2;
  c.window_min = {-0.6, 0.2};
  c.window_max = {0.6, 1.3};
  return c;
}

void BM_ForwardKinematics(benchmark::State& state) {
  const auto robot = sim::planar_2x3();
  const sim::JointState js{{0.3, -0.2, 0.1, -0.4, 0.5, 0.2}};
  for (auto _ : state) benchmark::DoNotOptimize(sim::forward_kinematics(robot, js));
}
BENCHMARK(BM_ForwardKinematics);

void BM_DetectTouches(benchmark::State& state) {
  const auto robot = sim::planar_2x3();
  const sim::JointState js{{0.3, -0.2, 0.1, -0.4, 0.5, 0.2}};
  const auto objs = row_layout();
  for (auto _ : state) benchmark::DoNotOptimize(sim::detect_touches(robot, js, objs));
}
BENCHMARK(BM_DetectTouches);

void BM_Render(benchmark::State& state) {
  const auto robot = sim::planar_2x3();
  const sim::JointState js{robot.home_pose()};
  const auto objs = row_layout();
  const auto cam = top_camera(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(render::render_scene(robot, js, objs, cam));
}
BENCHMARK(BM_Render)->Arg(32)->Arg(64);

agent::AgentDims dims_at(int height) {
  agent::AgentDims d;
  d.image_height = height;
  d.image_width = height / 2;
  return d;
}

agent::PolicyInputs random_inputs(const agent::AgentDims& d, int n) {
  std::mt19937_64 rng(1);
  agent::PolicyInputs in;
  for (int i = 0; i < n; ++i) in.tokens.push_back(env::tokenize(i % 2 ? "Touch the red cube." : "Touch the blue cube."));
  in.images = nn::normal({n, d.image_height, d.image_width, d.vision_channels()}, 0.5, rng);
  in.proprio_tactile = nn::normal({n, d.proprio_inputs()}, 0.5, rng);
  return in;
}

// Args: image height, batch rows.
void BM_PolicyForward(benchmark::State& state) {
  const auto d = dims_at(static_cast<int>(state.range(0)));
  const int n = static_cast<int>(state.range(1));
  const auto params = agent::init_params(d, {1, 1.0});
  const auto limits = agent::JointLimits::of(sim::planar_2x3());
  const auto in = random_inputs(d, n);
  for (auto _ : state) benchmark::DoNotOptimize(agent::evaluate(params, d, limits, in));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_PolicyForward)->Args({32, 24})->Args({32, 128})->Args({64, 128})->Unit(benchmark::kMillisecond);

void BM_PolicyForwardBackward(benchmark::State& state) {
  const auto d = dims_at(static_cast<int>(state.range(0)));
  const int n = static_cast<int>(state.range(1));
  const auto params = agent::init_params(d, {1, 1.0});
  const auto limits = agent::JointLimits::of(sim::planar_2x3());
  const auto in = random_inputs(d, n);
  for (auto _ : state) {
    nn::Graph g;
    const auto vars = agent::forward_policy(g, params, d, limits, in);
    const auto loss = nn::add(g, nn::sum(g, nn::square(g, vars.mean)), nn::sum(g, vars.value));
    benchmark::DoNotOptimize(g.backward(loss, params));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_PolicyForwardBackward)->Args({32, 128})->Args({64, 128})->Unit(benchmark::kMillisecond);

void BM_Conv2d(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const int h = static_cast<int>(state.range(0));
  const auto x = nn::normal({128, h, h / 2, 18}, 1.0, rng);
  const auto w = nn::normal({16, 3, 3, 18}, 0.1, rng);
  const nn::Tensor b({16});
  for (auto _ : state) {
    nn::Graph g(false);
    benchmark::DoNotOptimize(g.value(nn::conv2d(g, g.constant(x), g.constant(w), g.constant(b))));
  }
}
BENCHMARK(BM_Conv2d)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
