#include "deskbot/agent/network.hpp"

#include <cmath>
#include <map>

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::agent {

using nn::Graph;
using nn::ParamStore;
using nn::Tensor;
using nn::Var;

void LangEncoderConfig::validate() const {
  if (layers <= 0 || heads <= 0 || hidden <= 0 || max_len <= 0 || vocab <= 0 || ff_width <= 0) {
    throw ConfigError("language encoder sizes must be positive");
  }
  if (hidden % heads != 0) {
    throw ConfigError(fmt::format("hidden width {} is not divisible by {} heads", hidden, heads));
  }
}

void AgentDims::validate() const {
  lang.validate();
  if (dof <= 0 || tactile < 0 || stack <= 0 || cameras <= 0) throw ConfigError("agent dimensions must be positive");
  if (image_height <= 0 || image_width <= 0 || image_height % 4 != 0 || image_width % 4 != 0) {
    throw ConfigError(fmt::format("image size {}x{} must be positive and divisible by 4", image_height,
                                  image_width));
  }
}

JointLimits JointLimits::of(const sim::RobotModel& robot) {
  JointLimits l;
  for (const auto& j : robot.joints) {
    l.lower.push_back(j.limit_min);
    l.upper.push_back(j.limit_max);
  }
  return l;
}

namespace {

struct LayerShape {
  std::string name;
  std::vector<int> shape;
  int fan_in = 0;
  int fan_out = 0;
  enum Kind { kWeight, kBias, kOnes, kEmbedding } kind = kWeight;
};

void add_linear(std::vector<LayerShape>& out, const std::string& prefix, int in, int outw) {
  out.push_back({prefix + ".w", {outw, in}, in, outw, LayerShape::kWeight});
  out.push_back({prefix + ".b", {outw}, 0, 0, LayerShape::kBias});
}

std::vector<LayerShape> layout(const AgentDims& d) {
  d.validate();
  std::vector<LayerShape> l;
  const int h = d.lang.hidden;
  l.push_back({"lang.embed", {d.lang.vocab, h}, 0, 0, LayerShape::kEmbedding});
  for (int i = 0; i < d.lang.layers; ++i) {
    const std::string p = fmt::format("lang.l{}", i);
    for (const char* proj : {".wq", ".wk", ".wv"}) {
      l.push_back({p + proj, {h, h}, h, h, LayerShape::kWeight});
    }
    l.push_back({p + ".ln1.g", {h}, 0, 0, LayerShape::kOnes});
    l.push_back({p + ".ln1.b", {h}, 0, 0, LayerShape::kBias});
    add_linear(l, p + ".ff1", h, d.lang.ff_width);
    add_linear(l, p + ".ff2", d.lang.ff_width, h);
    l.push_back({p + ".ln2.g", {h}, 0, 0, LayerShape::kOnes});
    l.push_back({p + ".ln2.b", {h}, 0, 0, LayerShape::kBias});
  }
  const int c = d.vision_channels();
  l.push_back({"vision.conv1.w", {d.conv1_channels, 3, 3, c}, 9 * c, 9 * d.conv1_channels, LayerShape::kWeight});
  l.push_back({"vision.conv1.b", {d.conv1_channels}, 0, 0, LayerShape::kBias});
  l.push_back({"vision.conv2.w", {d.conv2_channels, 3, 3, d.conv1_channels}, 9 * d.conv1_channels,
               9 * d.conv2_channels, LayerShape::kWeight});
  l.push_back({"vision.conv2.b", {d.conv2_channels}, 0, 0, LayerShape::kBias});
  const int flat = (d.image_height / 4) * (d.image_width / 4) * d.conv2_channels;
  add_linear(l, "vision.fc1", flat, d.vision_width);
  add_linear(l, "vision.fc2", d.vision_width, d.vision_width);
  add_linear(l, "proprio.fc", d.proprio_inputs(), d.proprio_width);
  for (const char* head : {"actor", "critic"}) {
    int in = d.fused_width();
    for (int k = 0; k < 3; ++k) {
      add_linear(l, fmt::format("{}.fc{}", head, k + 1), in, d.trunk[k]);
      in = d.trunk[k];
    }
    add_linear(l, fmt::format("{}.fc4", head), in, std::string(head) == "actor" ? d.dof : 1);
  }
  return l;
}

}  // namespace

ParamStore init_params(const AgentDims& dims, const InitOptions& options) {
  std::mt19937_64 rng(options.seed);
  ParamStore p;
  for (const auto& s : layout(dims)) {
    switch (s.kind) {
      case LayerShape::kWeight: {
        const double gain = s.name == "actor.fc4.w" ? options.actor_head_gain : 1.0;
        p.insert(s.name, nn::xavier_uniform(s.shape, s.fan_in, s.fan_out, rng, gain));
        break;
      }
      case LayerShape::kBias: p.insert(s.name, Tensor(s.shape)); break;
      case LayerShape::kOnes: p.insert(s.name, Tensor(s.shape, 1.0)); break;
      case LayerShape::kEmbedding: p.insert(s.name, nn::normal(s.shape, 0.02, rng)); break;
    }
  }
  return p;
}

ParamStore zero_params(const AgentDims& dims) {
  ParamStore p;
  for (const auto& s : layout(dims)) p.insert(s.name, Tensor(s.shape));
  return p;
}

PolicyInputs make_inputs(const AgentDims& dims, const Modalities& modalities,
                         std::span<const env::State* const> states) {
  const int n = static_cast<int>(states.size());
  const int h = dims.image_height, w = dims.image_width, c = dims.vision_channels();
  PolicyInputs in;
  in.tokens.reserve(states.size());
  in.images = Tensor({n, h, w, c});
  in.proprio_tactile = Tensor({n, dims.proprio_inputs()});
  for (int i = 0; i < n; ++i) {
    const env::State& s = *states[i];
    in.tokens.push_back(s.frames[0].instruction.tokens);
    for (int f = 0; f < dims.stack; ++f) {
      const env::Observation& o = s.frames[f];
      if (static_cast<int>(o.images.size()) != dims.cameras || static_cast<int>(o.proprio.size()) != dims.dof ||
          static_cast<int>(o.tactile.size()) != dims.tactile) {
        throw ContractViolation(fmt::format(
            "observation has {} images, {} joints, {} tactile bits; network expects {}, {}, {}",
            o.images.size(), o.proprio.size(), o.tactile.size(), dims.cameras, dims.dof, dims.tactile));
      }
      if (modalities.vision) {
        for (int cam = 0; cam < dims.cameras; ++cam) {
          const auto& img = o.images[cam];
          if (img.height() != h || img.width() != w) {
            throw ContractViolation(fmt::format("image {}x{} does not match network input {}x{}",
                                                img.height(), img.width(), h, w));
          }
          const auto px = img.data();
          const int ch0 = (f * dims.cameras + cam) * 3;
          double* dst = in.images.ptr() + static_cast<std::size_t>(i) * h * w * c;
          for (int p = 0; p < h * w; ++p) {
            for (int k = 0; k < 3; ++k) dst[static_cast<std::size_t>(p) * c + ch0 + k] = px[static_cast<std::size_t>(p) * 3 + k];
          }
        }
      }
      double* pt = in.proprio_tactile.ptr() + static_cast<std::size_t>(i) * dims.proprio_inputs() +
                   static_cast<std::size_t>(f) * (dims.dof + dims.tactile);
      if (modalities.proprio) std::copy(o.proprio.begin(), o.proprio.end(), pt);
      if (modalities.tactile) {
        for (int k = 0; k < dims.tactile; ++k) pt[dims.dof + k] = o.tactile[k] ? 1.0 : 0.0;
      }
    }
  }
  return in;
}

PolicyInputs slice_inputs(const PolicyInputs& all, int first, int count) {
  if (first < 0 || count < 0 || first + count > all.rows()) {
    throw ContractViolation(fmt::format("slice [{}, {}) outside {} rows", first, first + count, all.rows()));
  }
  PolicyInputs out;
  out.tokens.assign(all.tokens.begin() + first, all.tokens.begin() + first + count);
  auto slice = [&](const Tensor& t) {
    std::vector<int> shape = t.shape();
    const std::size_t row = t.size() / static_cast<std::size_t>(shape[0]);
    shape[0] = count;
    std::vector<double> data(t.data().begin() + static_cast<std::ptrdiff_t>(row * first),
                             t.data().begin() + static_cast<std::ptrdiff_t>(row * (first + count)));
    return Tensor(shape, std::move(data));
  };
  out.images = slice(all.images);
  out.proprio_tactile = slice(all.proprio_tactile);
  return out;
}

Tensor positional_encoding(int len, int width) {
  Tensor pe({len, width});
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / width);
      pe[static_cast<std::size_t>(pos) * width + i] = i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return pe;
}

Var encode_tokens(Graph& g, const ParamStore& params, const LangEncoderConfig& cfg,
                  const std::vector<std::vector<int>>& sequences, std::vector<Tensor>* attention_maps) {
  cfg.validate();
  const int n = static_cast<int>(sequences.size());
  const int len = cfg.max_len, h = cfg.hidden;
  std::vector<int> ids;
  std::vector<bool> valid;
  ids.reserve(static_cast<std::size_t>(n) * len);
  for (const auto& seq : sequences) {
    if (static_cast<int>(seq.size()) > len) {
      throw ContractViolation(fmt::format("instruction of {} tokens exceeds max length {}", seq.size(), len));
    }
    for (int j = 0; j < len; ++j) {
      const int t = j < static_cast<int>(seq.size()) ? seq[j] : env::kPad;
      if (t < 0 || t >= cfg.vocab) throw ContractViolation(fmt::format("token id {} outside vocabulary", t));
      ids.push_back(t);
      valid.push_back(t != env::kPad);
    }
  }
  const Tensor pe = positional_encoding(len, h);
  Tensor pos({n * len, h});
  for (int s = 0; s < n; ++s) {
    std::copy(pe.data().begin(), pe.data().end(), pos.data().begin() + static_cast<std::ptrdiff_t>(s) * len * h);
  }
  Var x = nn::add(g, nn::embedding(g, g.param(params, "lang.embed"), ids), g.constant(std::move(pos)));
  if (attention_maps != nullptr) attention_maps->clear();
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = fmt::format("lang.l{}", l);
    const Var q = nn::linear(g, x, g.param(params, p + ".wq"));
    const Var k = nn::linear(g, x, g.param(params, p + ".wk"));
    const Var v = nn::linear(g, x, g.param(params, p + ".wv"));
    Tensor maps;
    const Var attn = nn::self_attention(g, q, k, v, len, cfg.heads, valid, attention_maps ? &maps : nullptr);
    if (attention_maps != nullptr) attention_maps->push_back(std::move(maps));
    x = nn::layer_norm(g, nn::add(g, x, attn), g.param(params, p + ".ln1.g"), g.param(params, p + ".ln1.b"));
    Var ff = nn::tanh(g, nn::linear(g, x, g.param(params, p + ".ff1.w"), g.param(params, p + ".ff1.b")));
    ff = nn::linear(g, ff, g.param(params, p + ".ff2.w"), g.param(params, p + ".ff2.b"));
    x = nn::layer_norm(g, nn::add(g, x, ff), g.param(params, p + ".ln2.g"), g.param(params, p + ".ln2.b"));
  }
  return x;
}

Var encode_instruction(Graph& g, const ParamStore& params, const LangEncoderConfig& cfg,
                       const std::vector<std::vector<int>>& sequences, std::vector<Tensor>* attention_maps) {
  const Var tokens = encode_tokens(g, params, cfg, sequences, attention_maps);
  std::vector<bool> valid;
  for (const auto& seq : sequences) {
    for (int j = 0; j < cfg.max_len; ++j) valid.push_back(j < static_cast<int>(seq.size()) && seq[j] != env::kPad);
  }
  return nn::masked_mean_rows(g, tokens, cfg.max_len, valid);
}

Var encode_vision(Graph& g, const ParamStore& params, Var images) {
  Var x = nn::conv2d(g, images, g.param(params, "vision.conv1.w"), g.param(params, "vision.conv1.b"));
  x = nn::maxpool2x2(g, nn::tanh(g, x));
  x = nn::conv2d(g, x, g.param(params, "vision.conv2.w"), g.param(params, "vision.conv2.b"));
  x = nn::maxpool2x2(g, nn::tanh(g, x));
  const auto& s = g.shape(x);
  x = nn::reshape(g, x, {s[0], s[1] * s[2] * s[3]});
  x = nn::tanh(g, nn::linear(g, x, g.param(params, "vision.fc1.w"), g.param(params, "vision.fc1.b")));
  return nn::linear(g, x, g.param(params, "vision.fc2.w"), g.param(params, "vision.fc2.b"));
}

Var encode_proprio_tactile(Graph& g, const ParamStore& params, Var inputs) {
  return nn::tanh(g, nn::linear(g, inputs, g.param(params, "proprio.fc.w"), g.param(params, "proprio.fc.b")));
}

Var fuse(Graph& g, Var language, Var vision, Var proprio) { return nn::concat_cols(g, {language, vision, proprio}); }

namespace {

Var trunk(Graph& g, const ParamStore& params, const std::string& head, Var x) {
  for (int k = 1; k <= 3; ++k) {
    x = nn::tanh(g, nn::linear(g, x, g.param(params, fmt::format("{}.fc{}.w", head, k)),
                               g.param(params, fmt::format("{}.fc{}.b", head, k))));
  }
  return nn::linear(g, x, g.param(params, head + ".fc4.w"), g.param(params, head + ".fc4.b"));
}

}  // namespace

Var actor_forward(Graph& g, const ParamStore& params, Var fused, const JointLimits& limits) {
  const Var squashed = nn::tanh(g, trunk(g, params, "actor", fused));
  std::vector<double> half(limits.lower.size()), mid(limits.lower.size());
  for (std::size_t i = 0; i < half.size(); ++i) {
    half[i] = 0.5 * (limits.upper[i] - limits.lower[i]);
    mid[i] = 0.5 * (limits.upper[i] + limits.lower[i]);
  }
  return nn::affine_cols(g, squashed, half, mid);
}

Var critic_forward(Graph& g, const ParamStore& params, Var fused) { return trunk(g, params, "critic", fused); }

PolicyVars forward_policy(Graph& g, const ParamStore& params, const AgentDims& dims, const JointLimits& limits,
                          const PolicyInputs& inputs) {
  // Encode each distinct instruction once and scatter the result to its rows.
  std::map<std::vector<int>, int> unique;
  std::vector<std::vector<int>> sequences;
  std::vector<int> row_to_seq;
  row_to_seq.reserve(inputs.tokens.size());
  for (const auto& t : inputs.tokens) {
    auto [it, inserted] = unique.emplace(t, static_cast<int>(sequences.size()));
    if (inserted) sequences.push_back(t);
    row_to_seq.push_back(it->second);
  }
  const Var lang = nn::gather_rows(g, encode_instruction(g, params, dims.lang, sequences), row_to_seq);
  const Var vision = encode_vision(g, params, g.constant(inputs.images));
  const Var proprio = encode_proprio_tactile(g, params, g.constant(inputs.proprio_tactile));
  const Var fused = fuse(g, lang, vision, proprio);
  return {actor_forward(g, params, fused, limits), critic_forward(g, params, fused)};
}

std::vector<PolicyOutput> evaluate(const ParamStore& params, const AgentDims& dims, const JointLimits& limits,
                                   const PolicyInputs& inputs) {
  Graph g(false);
  const auto vars = forward_policy(g, params, dims, limits, inputs);
  const Tensor& mean = g.value(vars.mean);
  const Tensor& value = g.value(vars.value);
  std::vector<PolicyOutput> out(static_cast<std::size_t>(inputs.rows()));
  for (int i = 0; i < inputs.rows(); ++i) {
    out[i].mean_action.assign(mean.data().begin() + static_cast<std::ptrdiff_t>(i) * dims.dof,
                              mean.data().begin() + static_cast<std::ptrdiff_t>(i + 1) * dims.dof);
    out[i].value = value[static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace deskbot::agent
