#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "deskbot/agent/distribution.hpp"
#include "deskbot/agent/network.hpp"
#include "deskbot/config/experiment.hpp"
#include "deskbot/error.hpp"
#include "deskbot/ppo/trainer.hpp"

using namespace deskbot;
using namespace deskbot::agent;

namespace {

config::ExperimentConfig experiment(const std::string& file) {
  return config::load_experiment(std::string(DESKBOT_CONFIG_DIR) + "/" + file);
}

AgentDims small_dims() {
  AgentDims d;
  d.image_height = 8;
  d.image_width = 4;
  return d;
}

PolicyInputs random_inputs(const AgentDims& d, int n, std::mt19937_64& rng) {
  PolicyInputs in;
  const std::vector<std::vector<int>> sentences = {env::tokenize("Touch the blue cube."),
                                                   env::tokenize("Touch the red cube.")};
  for (int i = 0; i < n; ++i) in.tokens.push_back(sentences[static_cast<std::size_t>(i) % 2]);
  in.images = nn::normal({n, d.image_height, d.image_width, d.vision_channels()}, 0.5, rng);
  in.proprio_tactile = nn::normal({n, d.proprio_inputs()}, 0.5, rng);
  return in;
}

}  // namespace

TEST_SUITE("encoders") {

TEST_CASE("parameter names and shapes") {
  const AgentDims d;
  const auto p = init_params(d, {1, 1.0});
  CHECK(p.at("lang.embed").shape() == std::vector<int>{10, 50});
  CHECK(p.at("lang.l0.wq").shape() == std::vector<int>{50, 50});
  CHECK(p.contains("lang.l2.ln2.g"));
  CHECK_FALSE(p.contains("lang.l3.wq"));
  CHECK(p.at("vision.conv1.w").shape() == std::vector<int>{16, 3, 3, 18});
  CHECK(p.at("vision.fc1.w").shape() == std::vector<int>{256, 16 * 8 * 32});
  CHECK(p.at("vision.fc2.w").shape() == std::vector<int>{256, 256});
  CHECK(p.at("proprio.fc.w").shape() == std::vector<int>{128, 36});
  CHECK(p.at("actor.fc1.w").shape() == std::vector<int>{500, 434});
  CHECK(p.at("actor.fc2.w").shape() == std::vector<int>{256, 500});
  CHECK(p.at("actor.fc3.w").shape() == std::vector<int>{128, 256});
  CHECK(p.at("actor.fc4.w").shape() == std::vector<int>{6, 128});
  CHECK(p.at("critic.fc4.w").shape() == std::vector<int>{1, 128});
  CHECK(d.fused_width() == 434);
  CHECK(d.vision_channels() == 18);
}

TEST_CASE("initialisation is seeded") {
  const AgentDims d = small_dims();
  CHECK(init_params(d, {3, 1.0}) == init_params(d, {3, 1.0}));
  CHECK_FALSE(init_params(d, {3, 1.0}) == init_params(d, {4, 1.0}));
}

TEST_CASE("dims validation") {
  AgentDims d;
  d.image_height = 30;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d = AgentDims{};
  d.lang.heads = 3;
  CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("single-token attention map is one") {
  const AgentDims d = small_dims();
  const auto p = init_params(d, {5, 1.0});
  nn::Graph g;
  std::vector<nn::Tensor> maps;
  encode_instruction(g, p, d.lang, {env::tokenize("")}, &maps);
  REQUIRE(maps.size() == 3);
  for (const auto& m : maps) {
    // Only the bos key is valid, so every query puts all its weight there.
    for (int h = 0; h < 2; ++h) {
      for (int r = 0; r < env::kMaxTokens; ++r) {
        const std::size_t base = static_cast<std::size_t>((h * env::kMaxTokens + r) * env::kMaxTokens);
        CHECK(m[base] == 1.0);
      }
    }
  }
}

TEST_CASE("attention rows sum to one") {
  const AgentDims d = small_dims();
  const auto p = init_params(d, {6, 1.0});
  nn::Graph g;
  std::vector<nn::Tensor> maps;
  encode_instruction(g, p, d.lang,
                     {env::tokenize("Touch the blue cube."), env::tokenize("Grab green."), env::tokenize("cube")},
                     &maps);
  for (const auto& m : maps) {
    for (std::size_t row = 0; row < m.size() / env::kMaxTokens; ++row) {
      double total = 0.0;
      for (int k = 0; k < env::kMaxTokens; ++k) total += m[row * env::kMaxTokens + k];
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("instruction pooling averages the non-pad token outputs") {
  const AgentDims d = small_dims();
  const auto p = init_params(d, {7, 1.0});
  const auto seq = env::tokenize("Touch the red cube.");
  nn::Graph g;
  const auto pooled = g.value(encode_instruction(g, p, d.lang, {seq}));
  const auto tokens = g.value(encode_tokens(g, p, d.lang, {seq}));
  const int hidden = d.lang.hidden;
  for (int j = 0; j < hidden; ++j) {
    double acc = 0.0;
    int count = 0;
    for (int t = 0; t < env::kMaxTokens; ++t) {
      if (seq[static_cast<std::size_t>(t)] == env::kPad) continue;
      acc += tokens[static_cast<std::size_t>(t * hidden + j)];
      ++count;
    }
    CHECK(pooled[static_cast<std::size_t>(j)] == doctest::Approx(acc / count).epsilon(1e-12));
  }
}

TEST_CASE("different instructions give different embeddings") {
  const AgentDims d = small_dims();
  const auto p = init_params(d, {8, 1.0});
  nn::Graph g;
  const auto& out = g.value(encode_instruction(
      g, p, d.lang, {env::tokenize("Touch the blue cube."), env::tokenize("Touch the red cube.")}));
  double diff = 0.0;
  for (int j = 0; j < 50; ++j) diff += std::abs(out[static_cast<std::size_t>(j)] - out[static_cast<std::size_t>(50 + j)]);
  CHECK(diff > 1e-3);
}

TEST_CASE("vision encoder on zero images with zero biases is zero") {
  const AgentDims d = small_dims();
  auto p = init_params(d, {9, 1.0});
  for (const char* b : {"vision.conv1.b", "vision.conv2.b", "vision.fc1.b", "vision.fc2.b"}) {
    for (double& v : p.at(b).data()) v = 0.0;
  }
  nn::Graph g;
  const auto v = encode_vision(g, p, g.constant(nn::Tensor({2, 8, 4, 18})));
  CHECK(g.shape(v) == std::vector<int>{2, 256});
  for (double x : g.value(v).data()) CHECK(x == 0.0);
}

TEST_CASE("vision output width is 256 at any resolution") {
  for (auto [h, w] : {std::pair{8, 4}, std::pair{16, 8}, std::pair{12, 24}}) {
    AgentDims d;
    d.image_height = h;
    d.image_width = w;
    const auto p = init_params(d, {10, 1.0});
    nn::Graph g(false);
    const auto v = encode_vision(g, p, g.constant(nn::Tensor({1, h, w, 18}, 0.3)));
    CHECK(g.shape(v) == std::vector<int>{1, 256});
  }
}

TEST_CASE("proprio encoder is linear before the squash") {
  const AgentDims d = small_dims();
  auto p = init_params(d, {11, 1.0});
  for (double& v : p.at("proprio.fc.b").data()) v = 0.0;
  std::mt19937_64 rng(12);
  const auto x = nn::normal({1, 36}, 0.01, rng);
  nn::Tensor x2 = x;
  for (double& v : x2.data()) v *= 2.0;
  nn::Graph g;
  const auto& a = g.value(nn::linear(g, g.constant(x), g.param(p, "proprio.fc.w"), g.param(p, "proprio.fc.b")));
  const auto& b = g.value(nn::linear(g, g.constant(x2), g.param(p, "proprio.fc.w"), g.param(p, "proprio.fc.b")));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(2.0 * a[i]).epsilon(1e-14));
  const auto h = encode_proprio_tactile(g, p, g.constant(nn::Tensor({1, 36})));
  CHECK(g.shape(h) == std::vector<int>{1, 128});
  for (double v : g.value(h).data()) CHECK(v == 0.0);
}

TEST_CASE("fusion order is language, vision, proprio") {
  std::mt19937_64 rng(13);
  nn::Graph g;
  const auto l = g.constant(nn::normal({2, 50}, 1.0, rng));
  const auto v = g.constant(nn::normal({2, 256}, 1.0, rng));
  const auto h = g.constant(nn::normal({2, 128}, 1.0, rng));
  const auto& b = g.value(fuse(g, l, v, h));
  CHECK(b.shape() == std::vector<int>{2, 434});
  for (int r = 0; r < 2; ++r) {
    for (int j = 0; j < 50; ++j) CHECK(b[static_cast<std::size_t>(r * 434 + j)] == g.value(l)[static_cast<std::size_t>(r * 50 + j)]);
    for (int j = 0; j < 128; ++j) {
      CHECK(b[static_cast<std::size_t>(r * 434 + 306 + j)] == g.value(h)[static_cast<std::size_t>(r * 128 + j)]);
    }
  }
}

TEST_CASE("zero parameters give midpoint actions and zero value") {
  const auto cfg = experiment("exp3.cfg");
  AgentDims d = small_dims();
  const auto p = zero_params(d);
  std::mt19937_64 rng(14);
  const auto limits = JointLimits::of(cfg.env.robot);
  const auto out = evaluate(p, d, limits, random_inputs(d, 3, rng));
  const auto home = cfg.env.robot.home_pose();
  for (const auto& o : out) {
    CHECK(o.mean_action == home);
    CHECK(o.value == 0.0);
  }
}

TEST_CASE("actor output stays within the joint limits") {
  AgentDims d = small_dims();
  auto p = init_params(d, {15, 1.0});
  for (double& v : p.at("actor.fc4.b").data()) v = 50.0;
  std::mt19937_64 rng(16);
  const auto robot = sim::planar_2x3();
  const auto limits = JointLimits::of(robot);
  const auto out = evaluate(p, d, limits, random_inputs(d, 4, rng));
  for (const auto& o : out) {
    REQUIRE(o.mean_action.size() == 6);
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(o.mean_action[j] >= limits.lower[j]);
      CHECK(o.mean_action[j] <= limits.upper[j]);
    }
  }
}

TEST_CASE("critic value responds to its parameters") {
  AgentDims d = small_dims();
  auto p = init_params(d, {17, 1.0});
  std::mt19937_64 rng(18);
  const auto in = random_inputs(d, 2, rng);
  const auto limits = JointLimits::of(sim::planar_2x3());
  nn::Graph g;
  const auto vars = forward_policy(g, p, d, limits, in);
  const auto grads = g.backward(nn::sum(g, vars.value), p);
  const double analytic = grads.at("critic.fc1.w")[7];
  const double h = 1e-5;
  const double orig = p.at("critic.fc1.w")[7];
  p.at("critic.fc1.w")[7] = orig + h;
  const double up = evaluate(p, d, limits, in)[0].value + evaluate(p, d, limits, in)[1].value;
  p.at("critic.fc1.w")[7] = orig - h;
  const double down = evaluate(p, d, limits, in)[0].value + evaluate(p, d, limits, in)[1].value;
  CHECK(std::abs(up - down) > 0.0);
  CHECK(analytic == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5));
}

TEST_CASE("log-prob at the mean") {
  const ActionDistribution dist{{0.4}, 0.36};
  const double expected = -std::log(0.36) - 0.5 * std::log(2 * std::numbers::pi);
  CHECK(log_prob(dist, dist.mean) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(expected == doctest::Approx(0.10262).epsilon(1e-4));
}

TEST_CASE("seeded sampling is reproducible") {
  const ActionDistribution dist{{0.1, -0.2, 0.3}, kActionStd};
  std::mt19937_64 a(19), b(19);
  for (int i = 0; i < 10; ++i) CHECK(sample_action(dist, a) == sample_action(dist, b));
}

TEST_CASE("sample mean converges to the distribution mean") {
  const ActionDistribution dist{{0.25, -0.5}, kActionStd};
  std::mt19937_64 rng(20);
  const int n = 100000;
  double s0 = 0.0, s1 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto a = sample_action(dist, rng);
    s0 += a[0];
    s1 += a[1];
  }
  const double tol = 3 * kActionStd / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(s0 / n - 0.25) < tol);
  CHECK(std::abs(s1 / n + 0.5) < tol);
}

TEST_CASE("inputs respect disabled modalities") {
  const auto cfg = experiment("exp3.cfg");
  env::Environment e(cfg.env);
  auto s = e.reset(0);
  s = e.step(std::vector<double>{0.3, 0.2, 0.1, -0.3, -0.2, -0.1}).state;
  const auto d = ppo::dims_for(cfg.env);
  const std::vector<const env::State*> ptrs = {&s};
  auto nonzero = [](const nn::Tensor& t) {
    int n = 0;
    for (double v : t.data()) n += v != 0.0 ? 1 : 0;
    return n;
  };
  const auto all = make_inputs(d, {true, true, true}, ptrs);
  CHECK(nonzero(all.images) > 0);
  CHECK(nonzero(all.proprio_tactile) > 0);
  CHECK(all.tokens[0] == e.instruction().tokens);
  const auto vision_only = make_inputs(d, {true, false, false}, ptrs);
  CHECK(vision_only.images == all.images);
  CHECK(nonzero(vision_only.proprio_tactile) == 0);
  const auto blind = make_inputs(d, {false, true, true}, ptrs);
  CHECK(nonzero(blind.images) == 0);
  CHECK(blind.proprio_tactile == all.proprio_tactile);
  const auto part = slice_inputs(make_inputs(d, {true, true, true}, std::vector<const env::State*>{&s, &s, &s}), 1, 2);
  CHECK(part.rows() == 2);
}

}
