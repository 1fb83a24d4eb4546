#include "deskbot/env/instruction.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::env {

namespace {

constexpr std::array<std::string_view, kVocabSize> kWords = {
    "<pad>", "touch", "the", "blue", "red", "green", "cube", ".", "<unk>", "<bos>"};

int lookup(std::string_view word) {
  for (int id : {kTouch, kThe, kBlue, kRed, kGreen, kCube, kPeriod}) {
    if (kWords[id] == word) return id;
  }
  return kUnk;
}

}  // namespace

std::vector<int> tokenize(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::vector<int> tokens{kBos};
  std::istringstream in(lower);
  std::string word;
  while (in >> word) {
    const bool period = word.size() > 1 && word.back() == '.';
    if (period) word.pop_back();
    tokens.push_back(lookup(word));
    if (period) tokens.push_back(kPeriod);
  }
  if (tokens.size() > static_cast<std::size_t>(kMaxTokens)) {
    throw ContractViolation(fmt::format("instruction '{}' needs {} tokens, limit is {}", text,
                                        tokens.size(), kMaxTokens));
  }
  tokens.resize(kMaxTokens, kPad);
  return tokens;
}

std::string detokenize(std::span<const int> tokens) {
  std::string out;
  for (int t : tokens) {
    if (t == kBos || t == kPad) continue;
    if (t < 0 || t >= kVocabSize) throw ContractViolation(fmt::format("token id {} out of range", t));
    if (!out.empty() && t != kPeriod) out += ' ';
    out += kWords[t];
  }
  return out;
}

std::string_view reward_kind_name(RewardKind k) {
  return k == RewardKind::kTouchBinary ? "touch_binary" : "per_finger";
}

RewardKind parse_reward_kind(std::string_view name) {
  if (name == "touch_binary") return RewardKind::kTouchBinary;
  if (name == "per_finger") return RewardKind::kPerFinger;
  throw ConfigError(fmt::format("unknown reward kind '{}'", name));
}

void InstructionSet::add(std::string_view text, const RewardSpec& spec) {
  instructions.push_back({std::string(text), tokenize(text), static_cast<int>(instructions.size())});
  reward_specs.push_back(spec);
}

void InstructionSet::validate(std::span<const sim::SceneObject> scene) const {
  if (instructions.empty()) throw ConfigError("instruction set is empty");
  if (instructions.size() != reward_specs.size()) {
    throw ConfigError("instruction and reward tables differ in length");
  }
  std::set<int> ids;
  for (const auto& ins : instructions) {
    if (!ids.insert(ins.id).second) throw ConfigError(fmt::format("duplicate instruction id {}", ins.id));
    for (int t : ins.tokens) {
      if (t < 0 || t >= kVocabSize) throw ConfigError(fmt::format("instruction '{}' has bad token", ins.text));
    }
  }
  for (const auto& spec : reward_specs) {
    const bool present = std::any_of(scene.begin(), scene.end(), [&](const sim::SceneObject& o) {
      return o.color == spec.target_color;
    });
    if (!present) {
      throw ConfigError(fmt::format("reward target '{}' is not in the scene",
                                    sim::color_name(spec.target_color)));
    }
  }
}

bool touches_target(const RewardSpec& spec, const sim::ContactReport& report,
                    std::span<const sim::SceneObject> objects) {
  for (const auto& row : report.touches) {
    for (std::size_t o = 0; o < objects.size(); ++o) {
      if (row[o] && objects[o].color == spec.target_color) return true;
    }
  }
  return false;
}

int wrong_contacts(const RewardSpec& spec, const sim::ContactReport& report,
                   std::span<const sim::SceneObject> objects) {
  int n = 0;
  for (const auto& row : report.touches) {
    for (std::size_t o = 0; o < objects.size(); ++o) {
      if (row[o] && objects[o].color != spec.target_color) ++n;
    }
  }
  return n;
}

double compute_reward(const RewardSpec& spec, const sim::ContactReport& report,
                      std::span<const sim::SceneObject> objects) {
  for (const auto& row : report.touches) {
    if (row.size() != objects.size()) throw ContractViolation("contact report does not match scene");
  }
  if (spec.kind == RewardKind::kTouchBinary) {
    return touches_target(spec, report, objects) ? spec.correct_gain : 0.0;
  }
  int on_target = 0;
  for (const auto& row : report.touches) {
    for (std::size_t o = 0; o < objects.size(); ++o) {
      if (row[o] && objects[o].color == spec.target_color) {
        ++on_target;
        break;
      }
    }
  }
  return on_target * spec.correct_gain + wrong_contacts(spec, report, objects) * spec.wrong_penalty;
}

}  // namespace deskbot::env
