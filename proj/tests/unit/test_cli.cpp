#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "deskbot/agent/network.hpp"
#include "deskbot/nn/checkpoint.hpp"
#include "deskbot/ppo/trainer.hpp"

using namespace deskbot;
using namespace deskbot::tools;
namespace fs = std::filesystem;

namespace {

// Exp-II scene with small cameras and a two-update budget.
fs::path tiny_config(const fs::path& dir) {
  auto cfg = config::load_experiment(std::string(DESKBOT_CONFIG_DIR) + "/exp2.cfg");
  for (auto& c : cfg.env.cameras) {
    c.height = 8;
    c.width = 4;
  }
  cfg.trainer.rollouts = 2;
  cfg.trainer.epochs = 1;
  cfg.trainer.total_steps = 128;
  cfg.trainer.eval_every = 1;
  cfg.trainer.eval_episodes = 3;
  cfg.output_dir = (dir / "run").string();
  fs::create_directories(dir);
  const auto path = dir / "tiny.cfg";
  std::ofstream(path) << config::serialize_experiment(cfg);
  return path;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("deskbot_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("missing config exits with 2") {
  std::ostringstream out, err;
  CHECK(cmd_train({"/nonexistent/exp.cfg"}, out, err) == kExitConfig);
  CHECK_FALSE(err.str().empty());
  CHECK(cmd_eval({"/nonexistent.ckpt", "/nonexistent/exp.cfg"}, out, err) == kExitConfig);
}

TEST_CASE("malformed config exits with 2 and names the line") {
  const auto dir = scratch("malformed");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.cfg") << "[experiment]\nname = x\nseed = -4\n";
  std::ostringstream out, err;
  CHECK(cmd_train({dir / "bad.cfg"}, out, err) == kExitConfig);
  CHECK(err.str().find("line 3") != std::string::npos);
}

TEST_CASE("train, eval and render-rollout on a tiny run") {
  const auto dir = scratch("run");
  const auto cfg = tiny_config(dir);
  std::ostringstream out, err;
  TrainOptions train{cfg};
  train.quiet = true;
  REQUIRE(cmd_train(train, out, err) == kExitOk);
  const auto run = dir / "run";
  CHECK(fs::exists(run / "config.cfg"));
  CHECK(fs::exists(run / "final.ckpt"));
  CHECK(fs::exists(run / "learning_curve.svg"));
  CHECK(fs::exists(run / "checkpoints" / "update_00002.ckpt"));

  const auto metrics = lines(run / "metrics.csv");
  REQUIRE(metrics.size() == 3);
  CHECK(metrics[0] ==
        "update_idx,env_steps,mean_return,policy_loss,value_loss,clip_frac,mean_ratio,success_blue,success_red,"
        "success_green");
  const auto cols = metrics_columns(config::load_experiment(cfg).env.instructions);
  CHECK(cols.size() == 10);
  CHECK(lines(run / "eval.csv").size() == 3);

  std::ostringstream out2;
  EvalOptions eval{run / "final.ckpt", cfg};
  eval.episodes = 5;
  CHECK(cmd_eval(eval, out2, err) == kExitOk);
  CHECK(lines(run / "eval_episodes.csv").size() == 6);
  CHECK(out2.str().find("mean return") != std::string::npos);

  RenderOptions render{run / "final.ckpt", cfg};
  render.out = dir / "frames";
  CHECK(cmd_render_rollout(render, out, err) == kExitOk);
  int frames = 0;
  for (const auto& e : fs::directory_iterator(dir / "frames")) frames += e.path().extension() == ".ppm";
  CHECK(frames == 64);
  CHECK(fs::exists(dir / "frames" / "frame_000_front.ppm"));
  CHECK(fs::exists(dir / "frames" / "frame_031_top.ppm"));
  const auto first = slurp(dir / "frames" / "frame_005_top.ppm");
  render.out = dir / "frames2";
  CHECK(cmd_render_rollout(render, out, err) == kExitOk);
  CHECK(slurp(dir / "frames2" / "frame_005_top.ppm") == first);
}

TEST_CASE("same seed gives byte-identical metrics") {
  const auto dir = scratch("determinism");
  const auto cfg = tiny_config(dir);
  std::ostringstream out, err;
  TrainOptions a{cfg};
  a.quiet = true;
  a.out = dir / "a";
  TrainOptions b = a;
  b.out = dir / "b";
  REQUIRE(cmd_train(a, out, err) == kExitOk);
  REQUIRE(cmd_train(b, out, err) == kExitOk);
  CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
  CHECK(slurp(dir / "a" / "final.ckpt") == slurp(dir / "b" / "final.ckpt"));
  TrainOptions c = a;
  c.out = dir / "c";
  c.seed = 99;
  REQUIRE(cmd_train(c, out, err) == kExitOk);
  CHECK(slurp(dir / "c" / "final.ckpt") != slurp(dir / "a" / "final.ckpt"));
}

TEST_CASE("incompatible checkpoint exits with 4") {
  const auto dir = scratch("shape");
  const auto cfg = tiny_config(dir);
  auto dims = ppo::dims_for(config::load_experiment(cfg).env);
  dims.dof = 5;
  nn::save_checkpoint(dir / "wrong.ckpt", agent::zero_params(dims));
  std::ostringstream out, err;
  CHECK(cmd_eval({dir / "wrong.ckpt", cfg}, out, err) == kExitShape);
  CHECK(err.str().find("actor.fc4") != std::string::npos);
  CHECK(cmd_render_rollout({dir / "wrong.ckpt", cfg}, out, err) == kExitShape);
}

TEST_CASE("zero-init checkpoint on Exp-I evaluates to zero") {
  const auto dir = scratch("zero");
  fs::create_directories(dir);
  const auto cfg_path = std::string(DESKBOT_CONFIG_DIR) + "/exp1.cfg";
  const auto cfg = config::load_experiment(cfg_path);
  nn::save_checkpoint(dir / "zero.ckpt", agent::zero_params(ppo::dims_for(cfg.env)));
  std::ostringstream out, err;
  EvalOptions eval{dir / "zero.ckpt", cfg_path};
  eval.episodes = 4;
  eval.out = dir;
  CHECK(cmd_eval(eval, out, err) == kExitOk);
  const auto rows = lines(dir / "eval_episodes.csv");
  REQUIRE(rows.size() == 5);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].find(",0,0,0") != std::string::npos);
}

TEST_CASE("unwritable output directory exits with 5") {
  const auto dir = scratch("unwritable");
  const auto cfg = tiny_config(dir);
  std::ofstream(dir / "blocker") << "file";
  std::ostringstream out, err;
  TrainOptions train{cfg};
  train.quiet = true;
  train.out = dir / "blocker" / "run";
  CHECK(cmd_train(train, out, err) == kExitOutput);
  const auto ckpt = dir / "z.ckpt";
  nn::save_checkpoint(ckpt, agent::zero_params(ppo::dims_for(config::load_experiment(cfg).env)));
  RenderOptions render{ckpt, cfg};
  render.out = dir / "blocker" / "frames";
  CHECK(cmd_render_rollout(render, out, err) == kExitOutput);
}

TEST_CASE("output root override") {
  auto cfg = config::load_experiment(std::string(DESKBOT_CONFIG_DIR) + "/exp1.cfg");
  CHECK(resolve_output_dir(cfg, fs::path("/tmp/x")) == fs::path("/tmp/x"));
  ::setenv(kOutputRootEnv, "/tmp/deskbot_root", 1);
  CHECK(resolve_output_dir(cfg, std::nullopt) == fs::path("/tmp/deskbot_root/exp1"));
  ::unsetenv(kOutputRootEnv);
  CHECK(resolve_output_dir(cfg, std::nullopt) == fs::path("runs/exp1"));
}

TEST_CASE("gradcheck reports per-parameter errors and catches a corrupted op") {
  std::ostringstream out, err;
  GradcheckOptions ok;
  ok.probes = 2;
  CHECK(cmd_gradcheck(ok, out, err) == kExitOk);
  CHECK(out.str().find("actor.fc1.w") != std::string::npos);
  CHECK(out.str().find("lang.l0.wq") != std::string::npos);
  CHECK(out.str().find("PASS") != std::string::npos);
  std::ostringstream bad_out;
  GradcheckOptions bad = ok;
  bad.inject_fault = true;
  CHECK(cmd_gradcheck(bad, bad_out, err) == kExitFailure);
  CHECK(bad_out.str().find("FAIL") != std::string::npos);
}

}
