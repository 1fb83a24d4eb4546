#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "deskbot/error.hpp"
#include "deskbot/nn/adam.hpp"
#include "deskbot/nn/checkpoint.hpp"
#include "deskbot/nn/graph.hpp"

using namespace deskbot;
using namespace deskbot::nn;

namespace {

ParamStore store_with(const std::string& name, Tensor t) {
  ParamStore s;
  s.insert(name, std::move(t));
  return s;
}

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  return normal(std::move(shape), scale, rng);
}

// Three-layer tanh MLP with a scalar sum-of-squares loss.
double mlp_loss(const ParamStore& p, const Tensor& x, Gradients* grads) {
  Graph g(grads != nullptr);
  auto h = tanh(g, linear(g, g.constant(x), g.param(p, "w1"), g.param(p, "b1")));
  h = tanh(g, linear(g, h, g.param(p, "w2"), g.param(p, "b2")));
  const auto y = linear(g, h, g.param(p, "w3"), g.param(p, "b3"));
  const auto loss = mean(g, square(g, y));
  if (grads != nullptr) *grads = g.backward(loss, p);
  return g.value(loss).item();
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.shape_str() == "[2, 3]");
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4}), ContractViolation);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0}), ContractViolation);
  CHECK(Tensor::scalar(2.0).item() == 2.0);
  CHECK_THROWS_AS(t.item(), ContractViolation);
  t[4] = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("softmax of equal logits is uniform") {
  Graph g;
  const auto s = softmax_rows(g, g.constant(Tensor({1, 3}, 0.0)));
  for (double v : g.value(s).data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(1);
  Graph g;
  const auto s = softmax_rows(g, g.constant(random_tensor({7, 9}, rng, 30.0)));
  const auto& v = g.value(s);
  for (int r = 0; r < 7; ++r) {
    double total = 0.0;
    for (int c = 0; c < 9; ++c) total += v[static_cast<std::size_t>(r * 9 + c)];
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("maxpool picks the window maximum") {
  Graph g;
  const auto y = maxpool2x2(g, g.constant(Tensor({1, 2, 2, 1}, {1.0, 2.0, 3.0, 4.0})));
  CHECK(g.shape(y) == std::vector<int>{1, 1, 1, 1});
  CHECK(g.value(y)[0] == 4.0);
  CHECK_THROWS_AS(maxpool2x2(g, g.constant(Tensor({1, 3, 2, 1}))), ContractViolation);
}

TEST_CASE("conv2d with a centred delta kernel is the identity") {
  std::mt19937_64 rng(2);
  const int c = 3;
  Tensor w({c, 3, 3, c});
  for (int o = 0; o < c; ++o) w[static_cast<std::size_t>(((o * 3 + 1) * 3 + 1) * c + o)] = 1.0;
  const Tensor x = random_tensor({2, 5, 4, c}, rng);
  Graph g;
  const auto y = conv2d(g, g.constant(x), g.constant(w), g.constant(Tensor({c})));
  CHECK(g.value(y).shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(g.value(y)[i] == doctest::Approx(x[i]).epsilon(1e-14));
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(3);
  const int n = 2, h = 4, wd = 6, c = 2, o = 3;
  const Tensor x = random_tensor({n, h, wd, c}, rng);
  const Tensor w = random_tensor({o, 3, 3, c}, rng);
  const Tensor b = random_tensor({o}, rng);
  Graph g;
  const auto& y = g.value(conv2d(g, g.constant(x), g.constant(w), g.constant(b)));
  for (int s = 0; s < n; ++s) {
    for (int r = 0; r < h; ++r) {
      for (int q = 0; q < wd; ++q) {
        for (int k = 0; k < o; ++k) {
          double acc = b[static_cast<std::size_t>(k)];
          for (int dr = -1; dr <= 1; ++dr) {
            for (int dq = -1; dq <= 1; ++dq) {
              const int rr = r + dr, qq = q + dq;
              if (rr < 0 || rr >= h || qq < 0 || qq >= wd) continue;
              for (int ci = 0; ci < c; ++ci) {
                acc += x[static_cast<std::size_t>(((s * h + rr) * wd + qq) * c + ci)] *
                       w[static_cast<std::size_t>(((k * 3 + dr + 1) * 3 + dq + 1) * c + ci)];
              }
            }
          }
          CHECK(y[static_cast<std::size_t>(((s * h + r) * wd + q) * o + k)] == doctest::Approx(acc).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("shape mismatch names both shapes") {
  Graph g;
  try {
    add(g, g.constant(Tensor({2, 3})), g.constant(Tensor({3, 2})));
    FAIL("expected a contract violation");
  } catch (const ContractViolation& e) {
    const std::string what = e.what();
    CHECK(what.find("[2, 3]") != std::string::npos);
    CHECK(what.find("[3, 2]") != std::string::npos);
  }
}

TEST_CASE("gradient of sum is all ones") {
  std::mt19937_64 rng(4);
  const auto p = store_with("w", random_tensor({3, 4}, rng));
  Graph g;
  const auto grads = g.backward(sum(g, g.param(p, "w")), p);
  for (double v : grads.at("w").data()) CHECK(v == 1.0);
}

TEST_CASE("gradient of sum of tanh at zero is all ones") {
  const auto p = store_with("w", Tensor({2, 5}));
  Graph g;
  const auto grads = g.backward(sum(g, tanh(g, g.param(p, "w"))), p);
  for (double v : grads.at("w").data()) CHECK(v == 1.0);
}

TEST_CASE("unreachable parameters get zero gradients and non-scalar losses are refused") {
  ParamStore p;
  p.insert("a", Tensor({2}, 1.0));
  p.insert("b", Tensor({3}, 1.0));
  Graph g;
  const auto grads = g.backward(sum(g, g.param(p, "a")), p);
  CHECK(grads.at("b") == Tensor({3}));
  Graph g2;
  CHECK_THROWS_AS(g2.backward(g2.param(p, "a"), p), ContractViolation);
}

TEST_CASE("MLP gradients match central differences") {
  std::mt19937_64 rng(5);
  ParamStore p;
  p.insert("w1", random_tensor({8, 5}, rng, 0.5));
  p.insert("b1", random_tensor({8}, rng, 0.1));
  p.insert("w2", random_tensor({6, 8}, rng, 0.5));
  p.insert("b2", random_tensor({6}, rng, 0.1));
  p.insert("w3", random_tensor({2, 6}, rng, 0.5));
  p.insert("b3", random_tensor({2}, rng, 0.1));
  const Tensor x = random_tensor({4, 5}, rng);
  Gradients grads;
  mlp_loss(p, x, &grads);
  const std::vector<std::string> names = {"w1", "b1", "w2", "b2", "w3", "b3"};
  const double h = 1e-5;
  for (int probe = 0; probe < 20; ++probe) {
    const auto& name = names[static_cast<std::size_t>(probe) % names.size()];
    Tensor& t = p.at(name);
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, t.size() - 1)(rng);
    const double orig = t[idx];
    t[idx] = orig + h;
    const double up = mlp_loss(p, x, nullptr);
    t[idx] = orig - h;
    const double down = mlp_loss(p, x, nullptr);
    t[idx] = orig;
    CHECK(rel_err(grads.at(name)[idx], (up - down) / (2 * h)) < 1e-4);
  }
}

TEST_CASE("every op's backward matches central differences") {
  std::mt19937_64 rng(6);
  ParamStore p;
  p.insert("img", random_tensor({2, 4, 4, 2}, rng));
  p.insert("cw", random_tensor({3, 3, 3, 2}, rng, 0.3));
  p.insert("cb", random_tensor({3}, rng, 0.1));
  p.insert("emb", random_tensor({5, 4}, rng));
  p.insert("lg", random_tensor({4}, rng));
  p.insert("lb", random_tensor({4}, rng));
  const std::vector<bool> valid = {true, true, false, true, true, true};
  auto loss_of = [&](Gradients* grads) {
    Graph g(grads != nullptr);
    auto v = maxpool2x2(g, tanh(g, conv2d(g, g.param(p, "img"), g.param(p, "cw"), g.param(p, "cb"))));
    v = reshape(g, v, {2, 12});
    auto e = embedding(g, g.param(p, "emb"), {1, 2, 0, 4, 3, 1});
    e = layer_norm(g, e, g.param(p, "lg"), g.param(p, "lb"));
    const auto att = self_attention(g, e, scale(g, e, 0.7), exp(g, scale(g, e, 0.3)), 3, 2, valid);
    const auto pooled = masked_mean_rows(g, att, 3, valid);
    auto fused = concat_cols(g, {v, pooled, gather_rows(g, pooled, {1, 0})});
    fused = softmax_rows(g, fused);
    fused = minimum(g, fused, add_scalar(g, scale(g, fused, -1.0), 0.05));
    const auto c = clamp(g, mul(g, fused, fused), -0.5, 0.002);
    const auto loss = add(g, sum(g, sub(g, fused, c)), mean(g, affine_cols(g, v, std::vector<double>(12, 1.5), std::vector<double>(12, 0.2))));
    if (grads != nullptr) *grads = g.backward(loss, p);
    return g.value(loss).item();
  };
  Gradients grads;
  loss_of(&grads);
  const double h = 1e-6;
  for (auto& [name, t] : p) {
    for (std::size_t idx = 0; idx < t.size(); idx += std::max<std::size_t>(1, t.size() / 7)) {
      const double orig = t[idx];
      t[idx] = orig + h;
      const double up = loss_of(nullptr);
      t[idx] = orig - h;
      const double down = loss_of(nullptr);
      t[idx] = orig;
      const double numeric = (up - down) / (2 * h);
      INFO(name, " ", idx);
      CHECK(std::abs(grads.at(name)[idx] - numeric) <= 1e-6 + 1e-4 * std::abs(numeric));
    }
  }
}

TEST_CASE("gaussian log-prob and its gradient") {
  const auto p = store_with("mu", Tensor({1, 1}, {0.2}));
  Graph g;
  const auto lp = gaussian_log_prob(g, g.param(p, "mu"), Tensor({1, 1}, {0.5}), 0.36);
  const double expected = -0.09 / (2 * 0.36 * 0.36) - std::log(0.36) - 0.5 * std::log(2 * M_PI);
  CHECK(g.value(lp)[0] == doctest::Approx(expected).epsilon(1e-14));
  const auto grads = g.backward(sum(g, lp), p);
  CHECK(grads.at("mu")[0] == doctest::Approx(0.3 / (0.36 * 0.36)).epsilon(1e-12));
}

TEST_CASE("attention probabilities mask invalid keys") {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({4, 4}, rng);
  Graph g;
  Tensor probs;
  const auto q = g.constant(x);
  self_attention(g, q, q, q, 4, 2, {true, true, false, false}, &probs);
  CHECK(probs.shape() == std::vector<int>{1, 2, 4, 4});
  for (int h = 0; h < 2; ++h) {
    for (int r = 0; r < 4; ++r) {
      const std::size_t base = static_cast<std::size_t>((h * 4 + r) * 4);
      CHECK(probs[base + 2] == 0.0);
      CHECK(probs[base + 3] == 0.0);
      CHECK(std::abs(probs[base] + probs[base + 1] - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("first Adam step moves by lr") {
  auto p = store_with("w", Tensor({1}, {0.5}));
  Gradients g;
  g.insert("w", Tensor({1}, {1.0}));
  Adam adam({1e-3});
  adam.step(p, g);
  CHECK(p.at("w")[0] == doctest::Approx(0.5 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(std::abs(p.at("w")[0] - 0.499) < 1e-10);
  CHECK(adam.steps() == 1);
}

TEST_CASE("zero gradients leave parameters unchanged") {
  std::mt19937_64 rng(8);
  auto p = store_with("w", random_tensor({3, 3}, rng));
  const auto before = p;
  Adam adam;
  for (int i = 0; i < 3; ++i) adam.step(p, Gradients::zeros_like(p));
  CHECK(p == before);
}

TEST_CASE("non-finite gradient aborts the step") {
  auto p = store_with("w", Tensor({2}, 1.0));
  Gradients g;
  g.insert("w", Tensor({2}, {0.1, std::numeric_limits<double>::infinity()}));
  Adam adam;
  CHECK_THROWS_AS(adam.step(p, g), NumericalError);
  CHECK(p.at("w") == Tensor({2}, 1.0));
  CHECK(adam.steps() == 0);
}

TEST_CASE("Adam trajectories are deterministic") {
  auto run = [] {
    std::mt19937_64 rng(9);
    auto p = store_with("w", random_tensor({4}, rng));
    Adam adam({1e-2});
    for (int i = 0; i < 5; ++i) {
      Graph g;
      const auto grads = g.backward(sum(g, square(g, g.param(p, "w"))), p);
      adam.step(p, grads);
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("initializers are seeded") {
  std::mt19937_64 a(10), b(10);
  CHECK(xavier_uniform({5, 7}, 7, 5, a) == xavier_uniform({5, 7}, 7, 5, b));
  std::mt19937_64 c(11);
  const auto t = xavier_uniform({50, 70}, 70, 50, c, 0.5);
  const double bound = 0.5 * std::sqrt(6.0 / 120.0);
  for (double v : t.data()) CHECK(std::abs(v) <= bound);
}

TEST_CASE("checkpoint round-trip with optimizer state") {
  std::mt19937_64 rng(12);
  ParamStore p;
  p.insert("actor.fc1.w", random_tensor({3, 2}, rng));
  p.insert("actor.fc1.b", random_tensor({3}, rng));
  Adam adam;
  Gradients g;
  g.insert("actor.fc1.w", random_tensor({3, 2}, rng));
  g.insert("actor.fc1.b", random_tensor({3}, rng));
  adam.step(p, g);
  const auto path = std::filesystem::temp_directory_path() / "deskbot_test.ckpt";
  save_checkpoint(path, p, &adam);
  const auto ck = load_checkpoint(path);
  CHECK(ck.params == p);
  REQUIRE(ck.optimizer.has_value());
  CHECK(ck.optimizer->step == 1);
  CHECK(ck.optimizer->first_moment == adam.first_moment());
  CHECK(ck.optimizer->second_moment == adam.second_moment());
  save_checkpoint(path, p);
  CHECK_FALSE(load_checkpoint(path).optimizer.has_value());
  std::filesystem::remove(path);
}

TEST_CASE("malformed checkpoints are rejected") {
  const auto path = std::filesystem::temp_directory_path() / "deskbot_bad.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS(load_checkpoint(path));
  CHECK_THROWS(load_checkpoint(path.string() + ".missing"));
  std::filesystem::remove(path);
}

TEST_CASE("compatibility check names the offending tensor") {
  ParamStore a, b;
  a.insert("actor.fc4.w", Tensor({6, 128}));
  b.insert("actor.fc4.w", Tensor({5, 128}));
  try {
    check_compatible(a, b);
    FAIL("expected a shape mismatch");
  } catch (const ShapeMismatch& e) {
    CHECK(std::string(e.what()).find("actor.fc4.w") != std::string::npos);
  }
  ParamStore c;
  c.insert("actor.fc4.b", Tensor({6}));
  CHECK_THROWS_AS(check_compatible(a, c), ShapeMismatch);
  CHECK_NOTHROW(check_compatible(a, a));
}

}
