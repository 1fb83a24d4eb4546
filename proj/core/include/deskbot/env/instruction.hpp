#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deskbot/sim/kinematics.hpp"

namespace deskbot::env {

// Closed word-level vocabulary.
enum Token : int {
  kPad = 0,
  kTouch = 1,
  kThe = 2,
  kBlue = 3,
  kRed = 4,
  kGreen = 5,
  kCube = 6,
  kPeriod = 7,
  kUnk = 8,
  kBos = 9,
};

inline constexpr int kVocabSize = 10;
inline constexpr int kMaxTokens = 8;

// Lower-cases, splits on whitespace and a trailing '.', prepends bos and pads to
// kMaxTokens. Unknown words map to unk. Throws ContractViolation when the sentence
// needs more than kMaxTokens tokens.
std::vector<int> tokenize(std::string_view text);

// Inverse of tokenize up to letter case and unknown words (rendered as "<unk>").
std::string detokenize(std::span<const int> tokens);

struct Instruction {
  std::string text;
  std::vector<int> tokens;
  int id = 0;

  bool operator==(const Instruction&) const = default;
};

enum class RewardKind { kTouchBinary, kPerFinger };

std::string_view reward_kind_name(RewardKind k);
RewardKind parse_reward_kind(std::string_view name);

struct RewardSpec {
  RewardKind kind = RewardKind::kTouchBinary;
  sim::Color target_color = sim::Color::kBlue;
  double correct_gain = 1.0;
  double wrong_penalty = 0.0;

  bool operator==(const RewardSpec&) const = default;
};

struct InstructionSet {
  std::vector<Instruction> instructions;
  std::vector<RewardSpec> reward_specs;  // parallel to instructions

  void add(std::string_view text, const RewardSpec& spec);
  std::size_t size() const { return instructions.size(); }
  // Throws ConfigError on empty sets, length mismatch, duplicate ids or targets
  // absent from the scene.
  void validate(std::span<const sim::SceneObject> scene) const;
};

// Unscaled per-step reward. touch_binary: correct_gain when any fingertip touches a
// target-colored object, else 0. per_finger: correct_gain per fingertip on the target
// plus wrong_penalty per (fingertip, other object) contact pair.
double compute_reward(const RewardSpec& spec, const sim::ContactReport& report,
                      std::span<const sim::SceneObject> objects);

// Number of (fingertip, non-target object) contact pairs.
int wrong_contacts(const RewardSpec& spec, const sim::ContactReport& report,
                   std::span<const sim::SceneObject> objects);

bool touches_target(const RewardSpec& spec, const sim::ContactReport& report,
                    std::span<const sim::SceneObject> objects);

}  // namespace deskbot::env
