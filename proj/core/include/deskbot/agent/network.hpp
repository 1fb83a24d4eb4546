#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "deskbot/env/environment.hpp"
#include "deskbot/nn/graph.hpp"
#include "deskbot/nn/params.hpp"

namespace deskbot::agent {

struct LangEncoderConfig {
  int layers = 3;
  int heads = 2;
  int hidden = 50;
  int max_len = env::kMaxTokens;
  int vocab = env::kVocabSize;
  int ff_width = 100;

  void validate() const;
};

// Network sizes. Defaults are the desk configuration.
struct AgentDims {
  int dof = 6;
  int tactile = 6;
  int stack = env::kStackDepth;
  int cameras = 2;
  int image_height = 64;
  int image_width = 32;
  LangEncoderConfig lang;
  int conv1_channels = 16;
  int conv2_channels = 32;
  int vision_width = 256;
  int proprio_width = 128;
  std::array<int, 3> trunk = {500, 256, 128};

  int vision_channels() const { return stack * cameras * 3; }
  int proprio_inputs() const { return stack * (dof + tactile); }
  int fused_width() const { return lang.hidden + vision_width + proprio_width; }

  // Throws ConfigError when the image size is not divisible by 4 or heads do not
  // divide the hidden width.
  void validate() const;
};

// Which perceptual channels reach the network; disabled ones are fed as zeros.
struct Modalities {
  bool vision = true;
  bool proprio = true;
  bool tactile = true;

  bool operator==(const Modalities&) const = default;
};

struct InitOptions {
  std::uint64_t seed = 0;
  // Multiplies the Xavier bound of the actor's output layer.
  double actor_head_gain = 1.0;
};

// Parameter names: lang.embed, lang.l{i}.{wq,wk,wv,ln1.g,ln1.b,ff1.w,ff1.b,ff2.w,ff2.b,
// ln2.g,ln2.b}, vision.{conv1,conv2,fc1,fc2}.{w,b}, proprio.fc.{w,b},
// actor.fc{1..4}.{w,b}, critic.fc{1..4}.{w,b}.
nn::ParamStore init_params(const AgentDims& dims, const InitOptions& options);
// Same names and shapes, every entry zero.
nn::ParamStore zero_params(const AgentDims& dims);

// One batch of network inputs built from environment states.
struct PolicyInputs {
  std::vector<std::vector<int>> tokens;  // one token sequence per row
  nn::Tensor images;                     // [N, H, W, stack * cameras * 3]
  nn::Tensor proprio_tactile;            // [N, stack * (dof + tactile)]

  int rows() const { return static_cast<int>(tokens.size()); }
};

PolicyInputs make_inputs(const AgentDims& dims, const Modalities& modalities,
                         std::span<const env::State* const> states);
// Rows [first, first + count) of `all`.
PolicyInputs slice_inputs(const PolicyInputs& all, int first, int count);

struct JointLimits {
  std::vector<double> lower;
  std::vector<double> upper;

  static JointLimits of(const sim::RobotModel& robot);
};

// Sinusoidal positional encoding [len, width].
nn::Tensor positional_encoding(int len, int width);

// Transformer encoder over each distinct token sequence -> [sequences, hidden].
// attention_maps, when given, receives one [sequences, heads, L, L] tensor per layer.
nn::Var encode_instruction(nn::Graph& g, const nn::ParamStore& params, const LangEncoderConfig& cfg,
                           const std::vector<std::vector<int>>& sequences,
                           std::vector<nn::Tensor>* attention_maps = nullptr);
// Per-token outputs of the last encoder layer, [sequences * L, hidden].
nn::Var encode_tokens(nn::Graph& g, const nn::ParamStore& params, const LangEncoderConfig& cfg,
                      const std::vector<std::vector<int>>& sequences,
                      std::vector<nn::Tensor>* attention_maps = nullptr);
nn::Var encode_vision(nn::Graph& g, const nn::ParamStore& params, nn::Var images);
nn::Var encode_proprio_tactile(nn::Graph& g, const nn::ParamStore& params, nn::Var inputs);
// Concatenation in the order (language, vision, proprio+tactile).
nn::Var fuse(nn::Graph& g, nn::Var language, nn::Var vision, nn::Var proprio);
// Mean action mapped into the joint limits, [N, dof].
nn::Var actor_forward(nn::Graph& g, const nn::ParamStore& params, nn::Var fused, const JointLimits& limits);
// State value, [N, 1].
nn::Var critic_forward(nn::Graph& g, const nn::ParamStore& params, nn::Var fused);

struct PolicyVars {
  nn::Var mean;   // [N, dof]
  nn::Var value;  // [N, 1]
};

// Full forward pass. Each distinct instruction in the batch is encoded once.
PolicyVars forward_policy(nn::Graph& g, const nn::ParamStore& params, const AgentDims& dims,
                          const JointLimits& limits, const PolicyInputs& inputs);

struct PolicyOutput {
  std::vector<double> mean_action;
  double value = 0.0;
};

// Inference without recording a tape.
std::vector<PolicyOutput> evaluate(const nn::ParamStore& params, const AgentDims& dims,
                                   const JointLimits& limits, const PolicyInputs& inputs);

}  // namespace deskbot::agent
