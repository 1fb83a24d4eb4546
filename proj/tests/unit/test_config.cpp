#include <doctest.h>

#include "deskbot/config/experiment.hpp"
#include "deskbot/error.hpp"

using namespace deskbot;
using namespace deskbot::config;

namespace {

std::string path_of(const std::string& file) { return std::string(DESKBOT_CONFIG_DIR) + "/" + file; }

int error_line(const std::string& text) {
  try {
    parse_experiment(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

const char* kMinimal = R"(
[experiment]
name = tiny
seed = 3

[robot]
config = planar-2x3

[cube.0]
color = blue
center = 0.05 0.85 0.04
half_extent = 0.04

[camera.top]
width = 8
height = 16
window = -0.6 0.6 0.2 1.3

[instruction.0]
text = Touch the blue cube.
reward = touch_binary
target = blue
)";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("shipped configs load") {
  const auto e1 = load_experiment(path_of("exp1.cfg"));
  CHECK(e1.env.instructions.size() == 1);
  CHECK(e1.env.instructions.instructions[0].text == "Touch the blue cube.");
  CHECK(e1.env.objects.size() == 3);
  CHECK(e1.env.horizon == 32);
  CHECK(e1.trainer.rollouts == 24);
  const auto e2 = load_experiment(path_of("exp2.cfg"));
  CHECK(e2.env.instructions.size() == 3);
  const auto e3 = load_experiment(path_of("exp3.cfg"));
  CHECK(e3.env.instructions.reward_specs[0].kind == env::RewardKind::kPerFinger);
  CHECK(e3.env.instructions.reward_specs[0].wrong_penalty == -0.1);
  CHECK(e3.modalities == agent::Modalities{true, true, true});
}

TEST_CASE("round trip through text") {
  for (const char* f : {"exp1.cfg", "exp2.cfg", "exp3.cfg"}) {
    const auto a = load_experiment(path_of(f));
    const auto b = parse_experiment(serialize_experiment(a));
    CHECK(a == b);
    CHECK(serialize_experiment(b) == serialize_experiment(a));
  }
  const auto m = parse_experiment(kMinimal);
  CHECK(parse_experiment(serialize_experiment(m)) == m);
}

TEST_CASE("defaults fill omitted sections") {
  const auto m = parse_experiment(kMinimal);
  CHECK(m.name == "tiny");
  CHECK(m.seed == 3);
  CHECK(m.trainer.lr == 1e-5);
  CHECK(m.trainer.epochs == 60);
  CHECK(m.trainer_config().seed == 3);
  CHECK(m.env.cameras.size() == 1);
}

TEST_CASE("errors carry the offending line") {
  std::string text = kMinimal;
  CHECK(error_line(text + "bogus line\n") == 23);
  CHECK(error_line(text + "[trainer]\nlr = fast\n") == 24);
  CHECK(error_line(text + "[trainer]\nlearning = 1\n") == 24);
  CHECK(error_line(text + "[mystery]\n") == 23);
  CHECK(error_line(text + "[experiment]\n") == 23);
  std::string bad_color = text;
  bad_color.replace(bad_color.find("color = blue"), 12, "color = pink");
  CHECK(error_line(bad_color) == 10);
  std::string bad_robot = text;
  bad_robot.replace(bad_robot.find("planar-2x3"), 10, "octopus");
  CHECK(error_line(bad_robot) == 7);
}

TEST_CASE("semantic errors are config errors") {
  std::string text = kMinimal;
  std::string no_target = text;
  no_target.replace(no_target.find("target = blue"), 13, "target = red");
  CHECK_THROWS_AS(parse_experiment(no_target), ConfigError);
  CHECK_THROWS_AS(parse_experiment(text + "[trainer]\nclip_eps = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(load_experiment("/nonexistent/deskbot.cfg"), ConfigError);
}

}
