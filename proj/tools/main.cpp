#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace deskbot::tools;

int main(int argc, char** argv) {
  CLI::App app{"deskbot: instruction-conditioned reaching with PPO"};
  app.require_subcommand(1);

  TrainOptions train;
  std::uint64_t train_seed = 0;
  std::string train_out;
  int max_updates = 0;
  auto* t = app.add_subcommand("train", "Train a policy from an experiment config");
  t->add_option("config", train.config, "Experiment config file")->required();
  auto* t_seed = t->add_option("--seed", train_seed, "Override the config seed");
  t->add_option("--workers", train.workers, "Rollout collection threads")->check(CLI::PositiveNumber);
  auto* t_out = t->add_option("--out", train_out, "Output directory");
  auto* t_max = t->add_option("--max-updates", max_updates, "Stop after this many updates")->check(CLI::PositiveNumber);
  t->add_flag("--quiet", train.quiet, "Only report errors");

  EvalOptions eval;
  std::uint64_t eval_seed = 0;
  std::string eval_out;
  int episodes = 0;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint deterministically");
  e->add_option("checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("config", eval.config, "Experiment config file")->required();
  auto* e_eps = e->add_option("--episodes", episodes, "Evaluation episodes")->check(CLI::PositiveNumber);
  auto* e_seed = e->add_option("--seed", eval_seed, "Override the config seed");
  auto* e_out = e->add_option("--out", eval_out, "Directory for eval_episodes.csv");
  int eval_workers = 1;
  e->add_option("--workers", eval_workers, "Accepted for interface symmetry; evaluation is batched");

  RenderOptions render;
  std::uint64_t render_seed = 0;
  std::string render_out;
  int instruction = 0;
  auto* r = app.add_subcommand("render-rollout", "Write PPM frames of one deterministic episode");
  r->add_option("checkpoint", render.checkpoint, "Checkpoint file")->required();
  r->add_option("config", render.config, "Experiment config file")->required();
  auto* r_seed = r->add_option("--seed", render_seed, "Episode seed");
  auto* r_out = r->add_option("--out", render_out, "Output directory");
  auto* r_instr = r->add_option("--instruction", instruction, "Force an instruction index");
  int render_workers = 1;
  r->add_option("--workers", render_workers, "Accepted for interface symmetry");

  GradcheckOptions grad;
  std::string grad_config;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  g->add_option("--seed", grad.seed, "Seed for parameters and probe selection");
  g->add_option("--probes", grad.probes, "Probes per parameter tensor")->check(CLI::PositiveNumber);
  g->add_flag("--inject-fault", grad.inject_fault, "Corrupt the tanh derivative; the check must fail");
  auto* g_cfg = g->add_option("--config", grad_config, "Take scene dimensions from this config");
  int grad_workers = 1;
  g->add_option("--workers", grad_workers, "Accepted for interface symmetry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : kExitConfig;
  }

  if (t->parsed()) {
    if (*t_seed) train.seed = train_seed;
    if (*t_out) train.out = train_out;
    if (*t_max) train.max_updates = max_updates;
    return cmd_train(train, std::cout, std::cerr);
  }
  if (e->parsed()) {
    if (*e_eps) eval.episodes = episodes;
    if (*e_seed) eval.seed = eval_seed;
    if (*e_out) eval.out = eval_out;
    return cmd_eval(eval, std::cout, std::cerr);
  }
  if (r->parsed()) {
    if (*r_seed) render.seed = render_seed;
    if (*r_out) render.out = render_out;
    if (*r_instr) render.instruction = instruction;
    return cmd_render_rollout(render, std::cout, std::cerr);
  }
  if (*g_cfg) grad.config = grad_config;
  return cmd_gradcheck(grad, std::cout, std::cerr);
}
