#include "commands.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "deskbot/agent/network.hpp"
#include "deskbot/error.hpp"
#include "deskbot/nn/checkpoint.hpp"
#include "deskbot/ppo/trainer.hpp"
#include "gradcheck.hpp"
#include "svg.hpp"

namespace deskbot::tools {

namespace fs = std::filesystem;

namespace {

// Output directory problems map to their own exit code.
struct OutputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void ensure_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw OutputError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw OutputError(fmt::format("output directory '{}' is not writable", dir.string()));
  }
  fs::remove(probe, ec);
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw OutputError(fmt::format("cannot write '{}'", path.string()));
  return f;
}

config::ExperimentConfig load_with_seed(const fs::path& path, const std::optional<std::uint64_t>& seed) {
  auto cfg = config::load_experiment(path);
  if (seed) {
    cfg.seed = *seed;
    cfg.trainer.seed = *seed;
  }
  return cfg;
}

std::string num(double v) { return fmt::format("{}", v); }

std::string instruction_label(const env::InstructionSet& set, std::size_t i) {
  const std::string color(sim::color_name(set.reward_specs[i].target_color));
  int same = 0;
  for (const auto& spec : set.reward_specs) same += spec.target_color == set.reward_specs[i].target_color;
  return same == 1 ? color : fmt::format("{}_{}", i, color);
}

ppo::PolicyContext context_for(const config::ExperimentConfig& cfg, const nn::ParamStore& params) {
  ppo::PolicyContext ctx;
  ctx.params = &params;
  ctx.dims = ppo::dims_for(cfg.env);
  ctx.modalities = cfg.modalities;
  ctx.limits = agent::JointLimits::of(cfg.env.robot);
  return ctx;
}

// Loads a checkpoint and checks it against the parameter layout `cfg` implies.
nn::Checkpoint load_for(const config::ExperimentConfig& cfg, const fs::path& path) {
  auto ckpt = nn::load_checkpoint(path);
  nn::check_compatible(agent::zero_params(ppo::dims_for(cfg.env)), ckpt.params);
  return ckpt;
}

void dump_batch(const fs::path& path, const ppo::TrajectoryBatch& b, const ppo::ReturnsAdvantages& ra) {
  std::ofstream f(path);
  if (!f) return;
  fmt::print(f, "row,rollout,step,instruction,env_reward,reward,log_prob_old,value_old,return,advantage");
  const int dof = b.actions.dim(1);
  for (int j = 0; j < dof; ++j) fmt::print(f, ",action_{}", j);
  fmt::print(f, "\n");
  for (int i = 0; i < b.rows(); ++i) {
    const int r = i / b.horizon;
    fmt::print(f, "{},{},{},{},{},{},{},{},{},{}", i, r, i % b.horizon, b.instruction[r], num(b.env_rewards[i]),
               num(b.rewards[i]), num(b.log_prob_old[i]), num(b.value_old[i]), num(ra.returns[i]),
               num(ra.advantages[i]));
    for (int j = 0; j < dof; ++j) fmt::print(f, ",{}", num(b.actions[static_cast<std::size_t>(i) * dof + j]));
    fmt::print(f, "\n");
  }
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    fmt::print(err, "numerical error: {}\n", e.what());
    return kExitNumerical;
  } catch (const ShapeMismatch& e) {
    fmt::print(err, "checkpoint mismatch: {}\n", e.what());
    return kExitShape;
  } catch (const OutputError& e) {
    fmt::print(err, "output error: {}\n", e.what());
    return kExitOutput;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitFailure;
  }
}

}  // namespace

fs::path resolve_output_dir(const config::ExperimentConfig& cfg, const std::optional<fs::path>& flag) {
  if (flag) return *flag;
  if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') {
    return fs::path(root) / cfg.name;
  }
  return cfg.output_dir;
}

std::vector<std::string> metrics_columns(const env::InstructionSet& instructions) {
  std::vector<std::string> cols = {"update_idx", "env_steps", "mean_return", "policy_loss",
                                   "value_loss", "clip_frac", "mean_ratio"};
  for (std::size_t i = 0; i < instructions.size(); ++i) cols.push_back("success_" + instruction_label(instructions, i));
  return cols;
}

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!fs::exists(o.config)) throw ConfigError(fmt::format("config file '{}' not found", o.config.string()));
    auto cfg = load_with_seed(o.config, o.seed);
    if (o.workers < 1) throw ConfigError("--workers must be at least 1");
    const fs::path dir = resolve_output_dir(cfg, o.out);
    ensure_writable(dir);
    ensure_writable(dir / "checkpoints");
    {
      auto f = open_output(dir / "config.cfg");
      f << config::serialize_experiment(cfg);
    }

    auto tc = cfg.trainer_config();
    tc.workers = o.workers;
    ppo::Trainer trainer(cfg.env, cfg.modalities, tc, cfg.init_options());
    trainer.set_nan_dump([&dir](const ppo::TrajectoryBatch& b, const ppo::ReturnsAdvantages& ra) {
      dump_batch(dir / "nan_batch.csv", b, ra);
    });
    int updates = trainer.planned_updates();
    if (o.max_updates) updates = std::min(updates, *o.max_updates);

    const auto& set = cfg.env.instructions;
    auto metrics = open_output(dir / "metrics.csv");
    auto evals = open_output(dir / "eval.csv");
    fmt::print(metrics, "{}\n", fmt::join(metrics_columns(set), ","));
    fmt::print(evals, "update_idx,env_steps,eval_return,wrong_contact_rate,success");
    for (std::size_t i = 0; i < set.size(); ++i) fmt::print(evals, ",success_{}", instruction_label(set, i));
    fmt::print(evals, "\n");

    if (!o.quiet) {
      fmt::print(out, "training {} for {} updates ({} env steps each), output in {}\n", cfg.name, updates,
                 static_cast<long>(tc.rollouts) * cfg.env.horizon, dir.string());
    }
    for (int u = 1; u <= updates; ++u) {
      const auto rec = trainer.update();
      fmt::print(metrics, "{},{},{},{},{},{},{}", rec.update_idx, rec.env_steps, num(rec.mean_return),
                 num(rec.metrics.policy_loss), num(rec.metrics.value_loss), num(rec.metrics.clip_frac),
                 num(rec.metrics.mean_ratio));
      for (double s : rec.rollout_success) fmt::print(metrics, ",{}", num(s));
      fmt::print(metrics, "\n");
      metrics.flush();

      if (u % tc.eval_every == 0 || u == updates) {
        const auto rep = trainer.evaluate();
        double success = 0.0;
        for (double s : rep.success_rate) success += s / static_cast<double>(rep.success_rate.size());
        fmt::print(evals, "{},{},{},{},{}", u, trainer.env_steps(), num(rep.mean_return),
                   num(rep.wrong_contact_rate), num(success));
        for (double s : rep.success_rate) fmt::print(evals, ",{}", num(s));
        fmt::print(evals, "\n");
        evals.flush();
        nn::save_checkpoint(dir / "checkpoints" / fmt::format("update_{:05}.ckpt", u), trainer.params(),
                            &trainer.optimizer());
        if (!o.quiet) {
          fmt::print(out, "update {:4}  steps {:7}  rollout return {:.3f}  eval return {:.3f}  success {:.2f}\n", u,
                     trainer.env_steps(), rec.mean_return, rep.mean_return, success);
        }
      }
    }
    metrics.close();
    nn::save_checkpoint(dir / "final.ckpt", trainer.params(), &trainer.optimizer());
    write_learning_curve(dir / "metrics.csv", dir / "learning_curve.svg", cfg.name);
    if (!o.quiet) fmt::print(out, "done: {}\n", (dir / "final.ckpt").string());
    return static_cast<int>(kExitOk);
  });
}

int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    auto cfg = load_with_seed(o.config, o.seed);
    const auto ckpt = load_for(cfg, o.checkpoint);
    const int episodes = o.episodes.value_or(cfg.trainer.eval_episodes);
    if (episodes < 1) throw ConfigError("--episodes must be positive");
    const fs::path dir = o.out.value_or(o.checkpoint.parent_path().empty() ? fs::path(".") : o.checkpoint.parent_path());
    ensure_writable(dir);

    const auto rep = ppo::evaluate_policy(context_for(cfg, ckpt.params), cfg.env, episodes,
                                          cfg.seed + ppo::kEvalSeedOffset);
    auto csv = open_output(dir / "eval_episodes.csv");
    fmt::print(csv, "episode,instruction,return,success,wrong_contact_steps\n");
    for (std::size_t e = 0; e < rep.episode_returns.size(); ++e) {
      fmt::print(csv, "{},{},{},{},{}\n", e, rep.episode_instruction[e], num(rep.episode_returns[e]),
                 rep.episode_success[e] ? 1 : 0, rep.episode_wrong_steps[e]);
    }
    fmt::print(out, "episodes: {}\nmean return: {:.4f}\nwrong-contact rate: {:.4f}\n\n", episodes, rep.mean_return,
               rep.wrong_contact_rate);
    fmt::print(out, "{:<28} {:>8} {:>8}\n", "instruction", "episodes", "success");
    for (std::size_t i = 0; i < cfg.env.instructions.size(); ++i) {
      fmt::print(out, "{:<28} {:>8} {:>8.3f}\n", cfg.env.instructions.instructions[i].text,
                 rep.episodes_per_instruction[i], rep.success_rate[i]);
    }
    return static_cast<int>(kExitOk);
  });
}

int cmd_render_rollout(const RenderOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    auto cfg = load_with_seed(o.config, o.seed);
    const auto ckpt = load_for(cfg, o.checkpoint);
    const fs::path dir = resolve_output_dir(cfg, o.out);
    ensure_writable(dir);

    const auto ctx = context_for(cfg, ckpt.params);
    env::Environment env(cfg.env);
    env::State state;
    if (o.instruction) {
      if (*o.instruction < 0 || static_cast<std::size_t>(*o.instruction) >= cfg.env.instructions.size()) {
        throw ConfigError(fmt::format("--instruction {} is out of range", *o.instruction));
      }
      state = env.reset_with_instruction(cfg.seed, *o.instruction);
    } else {
      state = env.reset(cfg.seed);
    }
    double ret = 0.0;
    int frames = 0;
    for (int t = 0; t < cfg.env.horizon; ++t) {
      const auto& obs = state.frames[0];
      for (std::size_t c = 0; c < cfg.env.cameras.size(); ++c) {
        const char* cam = cfg.env.cameras[c].pose == render::CameraPose::kFront ? "front" : "top";
        const fs::path file = dir / fmt::format("frame_{:03}_{}.ppm", t, cam);
        try {
          render::write_ppm(obs.images[c], file);
        } catch (const std::exception& e) {
          throw OutputError(e.what());
        }
        ++frames;
      }
      const env::State* ptr = &state;
      const auto inputs = agent::make_inputs(ctx.dims, ctx.modalities, std::span(&ptr, 1));
      const auto action = agent::evaluate(ckpt.params, ctx.dims, ctx.limits, inputs).front().mean_action;
      auto step = env.step(action);
      ret += step.reward;
      state = std::move(step.state);
    }
    fmt::print(out, "instruction: {}\nreturn: {:.4f}\nwrote {} frames to {}\n", env.instruction().text, ret, frames,
               dir.string());
    return static_cast<int>(kExitOk);
  });
}

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const env::EnvConfig scene = o.config ? config::load_experiment(*o.config).env : desk_scene();
    const auto rep = run_gradcheck(scene, o.seed, o.probes, o.inject_fault);
    fmt::print(out, "{:<22} {:>6} {:>12} {:>12}\n", "parameter", "probes", "max |grad|", "max rel err");
    for (const auto& p : rep.params) {
      fmt::print(out, "{:<22} {:>6} {:>12.3e} {:>12.3e}{}\n", p.param, p.probes, p.max_abs_grad, p.max_rel_err,
                 p.max_rel_err < rep.tolerance ? "" : "  FAIL");
    }
    fmt::print(out, "max relative error {:.3e} (tolerance {:.0e}), {:.1f}s: {}\n", rep.max_rel_err, rep.tolerance,
               rep.seconds, rep.passed() ? "PASS" : "FAIL");
    return static_cast<int>(rep.passed() ? kExitOk : kExitFailure);
  });
}

}  // namespace deskbot::tools
