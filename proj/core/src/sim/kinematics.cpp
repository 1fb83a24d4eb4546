#include "deskbot/sim/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::sim {

namespace {

constexpr int kTactileBits = 6;

Eigen::Quaterniond yaw(double angle) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, Vec3::UnitZ()));
}

void check_state(const RobotModel& model, std::span<const double> v, const char* what) {
  if (static_cast<int>(v.size()) != model.dof()) {
    throw ContractViolation(fmt::format("{}: length {} does not match dof {} of '{}'", what,
                                        v.size(), model.dof(), model.name));
  }
}

}  // namespace

int RobotModel::fingertip_count() const {
  int n = 0;
  for (const auto& g : fingertip_groups) n += static_cast<int>(g.size());
  return n;
}

std::vector<double> RobotModel::home_pose() const {
  std::vector<double> home;
  home.reserve(joints.size());
  for (const auto& j : joints) home.push_back(0.5 * (j.limit_min + j.limit_max));
  return home;
}

void RobotModel::validate() const {
  if (joints.empty()) throw ConfigError(fmt::format("robot '{}' has no joints", name));
  if (link_lengths.size() != joints.size()) {
    throw ConfigError(fmt::format("robot '{}': {} link lengths for {} joints", name,
                                  link_lengths.size(), joints.size()));
  }
  for (int i = 0; i < dof(); ++i) {
    const auto& j = joints[i];
    if (!(j.limit_min < j.limit_max)) {
      throw ConfigError(fmt::format("joint '{}': limit_min must be below limit_max", j.name));
    }
    if (std::abs(j.rotation_axis.norm() - 1.0) > 1e-9) {
      throw ConfigError(fmt::format("joint '{}': rotation axis is not unit length", j.name));
    }
    if (j.parent < -1 || j.parent >= i) {
      throw ConfigError(fmt::format("joint '{}': parent {} is not an earlier joint", j.name,
                                    j.parent));
    }
  }
  if (fingertip_groups.size() != 2) {
    throw ConfigError(fmt::format("robot '{}': expected 2 fingertip groups, got {}", name,
                                  fingertip_groups.size()));
  }
  if (fingertip_count() != kTactileBits) {
    throw ConfigError(fmt::format("robot '{}': {} fingertips, tactile dimension is {}", name,
                                  fingertip_count(), kTactileBits));
  }
  for (const auto& g : fingertip_groups) {
    for (const auto& a : g) {
      if (a.joint < 0 || a.joint >= dof()) {
        throw ConfigError(fmt::format("robot '{}': fingertip anchored to invalid joint {}",
                                      name, a.joint));
      }
    }
  }
}

std::string_view color_name(Color c) {
  switch (c) {
    case Color::kBlue: return "blue";
    case Color::kRed: return "red";
    case Color::kGreen: return "green";
  }
  return "?";
}

Color parse_color(std::string_view name) {
  if (name == "blue") return Color::kBlue;
  if (name == "red") return Color::kRed;
  if (name == "green") return Color::kGreen;
  throw ConfigError(fmt::format("unknown color '{}'", name));
}

void validate_scene(std::span<const SceneObject> objects) {
  for (std::size_t a = 0; a < objects.size(); ++a) {
    if (!(objects[a].half_extent > 0.0)) {
      throw ConfigError(fmt::format("object {}: half_extent must be positive", objects[a].id));
    }
    for (std::size_t b = 0; b < a; ++b) {
      const double reach = objects[a].half_extent + objects[b].half_extent;
      const Vec3 d = (objects[a].center - objects[b].center).cwiseAbs();
      if (d.x() < reach && d.y() < reach && d.z() < reach) {
        throw ConfigError(fmt::format("objects {} and {} interpenetrate", objects[b].id,
                                      objects[a].id));
      }
    }
  }
}

KinematicPose forward_kinematics(const RobotModel& model, const JointState& state) {
  check_state(model, state.angles, "forward_kinematics");
  KinematicPose pose;
  const int n = model.dof();
  pose.link_frames.resize(n);
  pose.link_tips.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& j = model.joints[i];
    const Eigen::Isometry3d parent =
        j.parent < 0 ? Eigen::Isometry3d::Identity() : pose.link_frames[j.parent];
    Eigen::Isometry3d local = Eigen::Isometry3d::Identity();
    local.translate(j.mount_offset);
    local.rotate(j.mount_rotation);
    local.rotate(Eigen::AngleAxisd(state.angles[i], j.rotation_axis));
    pose.link_frames[i] = parent * local;
    pose.link_tips[i] = pose.link_frames[i] * Vec3(model.link_lengths[i], 0.0, 0.0);
  }
  for (const auto& g : model.fingertip_groups) {
    for (const auto& a : g) pose.fingertips.push_back(pose.link_frames[a.joint] * a.offset);
  }
  return pose;
}

JointState apply_action(const RobotModel& model, const JointState& state,
                        std::span<const double> action) {
  check_state(model, state.angles, "apply_action(state)");
  check_state(model, action, "apply_action(action)");
  JointState next;
  next.angles.resize(action.size());
  for (std::size_t i = 0; i < action.size(); ++i) {
    if (!std::isfinite(action[i])) {
      throw InvalidAction(fmt::format("action[{}] is not finite", i));
    }
    next.angles[i] = std::clamp(action[i], model.joints[i].limit_min, model.joints[i].limit_max);
  }
  return next;
}

ContactReport detect_touches(std::span<const Vec3> fingertips,
                             std::span<const SceneObject> objects, double contact_radius) {
  if (!(contact_radius > 0.0)) throw ContractViolation("contact_radius must be positive");
  ContactReport report;
  report.touches.assign(fingertips.size(), std::vector<bool>(objects.size(), false));
  report.tactile_bits.assign(fingertips.size(), false);
  for (std::size_t f = 0; f < fingertips.size(); ++f) {
    for (std::size_t o = 0; o < objects.size(); ++o) {
      const double reach = objects[o].half_extent + contact_radius;
      bool inside = true;
      for (int axis = 0; axis < 3; ++axis) {
        const double c = objects[o].center[axis];
        const double p = fingertips[f][axis];
        // Closed box: a point exactly on the expanded face counts.
        inside = inside && p >= c - reach && p <= c + reach;
      }
      report.touches[f][o] = inside;
      if (inside) report.tactile_bits[f] = true;
    }
  }
  return report;
}

ContactReport detect_touches(const RobotModel& model, const JointState& state,
                             std::span<const SceneObject> objects, double contact_radius) {
  const auto pose = forward_kinematics(model, state);
  return detect_touches(pose.fingertips, objects, contact_radius);
}

RobotModel planar_2x3(double arm_height) {
  constexpr double kLengths[3] = {0.30, 0.25, 0.10};
  constexpr double kSpread = 0.02;
  RobotModel m;
  m.name = "planar-2x3";
  const std::pair<const char*, double> sides[2] = {{"r", 0.15}, {"l", -0.15}};
  const char* names[3] = {"shoulder", "elbow", "wrist"};
  for (const auto& [prefix, x] : sides) {
    const int base = m.dof();
    for (int k = 0; k < 3; ++k) {
      JointSpec j;
      j.name = fmt::format("{}_{}", prefix, names[k]);
      j.parent = k == 0 ? -1 : base + k - 1;
      j.rotation_axis = Vec3::UnitZ();
      if (k == 0) {
        j.mount_offset = Vec3(x, 0.30, arm_height);
        j.mount_rotation = yaw(std::numbers::pi / 2);
      } else {
        j.mount_offset = Vec3(kLengths[k - 1], 0.0, 0.0);
      }
      m.joints.push_back(j);
      m.link_lengths.push_back(kLengths[k]);
    }
    std::vector<FingertipAnchor> hand;
    for (double off : {kSpread, 0.0, -kSpread}) {
      hand.push_back({base + 2, Vec3(kLengths[2], off, 0.0)});
    }
    m.fingertip_groups.push_back(std::move(hand));
  }
  return m;
}

RobotModel nao26() {
  // Per side: 5 arm joints, then 8 finger joints split over three fingers (3/3/2).
  RobotModel m;
  m.name = "nao26";
  const Vec3 axes[3] = {Vec3::UnitY(), Vec3::UnitZ(), Vec3::UnitX()};
  for (int side = 0; side < 2; ++side) {
    const double sign = side == 0 ? 1.0 : -1.0;
    const char* prefix = side == 0 ? "r" : "l";
    const int base = m.dof();
    for (int k = 0; k < 5; ++k) {
      JointSpec j;
      j.name = fmt::format("{}_arm{}", prefix, k);
      j.parent = k == 0 ? -1 : base + k - 1;
      j.rotation_axis = axes[k % 3];
      j.mount_offset = k == 0 ? Vec3(0.0, sign * 0.098, 0.1) : Vec3(0.05, 0.0, 0.0);
      m.joints.push_back(j);
      m.link_lengths.push_back(0.05);
    }
    const int wrist = base + 4;
    const int finger_joints[3] = {3, 3, 2};
    const double finger_y[3] = {0.01, 0.0, -0.01};
    std::vector<FingertipAnchor> hand;
    for (int f = 0; f < 3; ++f) {
      int parent = wrist;
      for (int k = 0; k < finger_joints[f]; ++k) {
        JointSpec j;
        j.name = fmt::format("{}_finger{}_{}", prefix, f, k);
        j.parent = parent;
        j.rotation_axis = Vec3::UnitY();
        j.mount_offset = k == 0 ? Vec3(0.05, finger_y[f], 0.0) : Vec3(0.015, 0.0, 0.0);
        m.joints.push_back(j);
        m.link_lengths.push_back(0.015);
        parent = m.dof() - 1;
      }
      hand.push_back({parent, Vec3(0.015, 0.0, 0.0)});
    }
    m.fingertip_groups.push_back(std::move(hand));
  }
  return m;
}

RobotModel planar_chain(std::span<const double> lengths) {
  RobotModel m;
  m.name = fmt::format("planar-chain-{}", lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    JointSpec j;
    j.name = fmt::format("j{}", i);
    j.parent = static_cast<int>(i) - 1;
    j.mount_offset = i == 0 ? Vec3::Zero() : Vec3(lengths[i - 1], 0.0, 0.0);
    j.limit_min = -std::numbers::pi;
    j.limit_max = std::numbers::pi;
    m.joints.push_back(j);
    m.link_lengths.push_back(lengths[i]);
  }
  const int last = static_cast<int>(lengths.size()) - 1;
  const FingertipAnchor tip{last, Vec3(lengths.empty() ? 0.0 : lengths.back(), 0.0, 0.0)};
  m.fingertip_groups = {{tip, tip, tip}, {tip, tip, tip}};
  return m;
}

RobotModel robot_by_name(std::string_view name) {
  if (name == "planar-2x3") return planar_2x3();
  if (name == "nao26") return nao26();
  throw ConfigError(fmt::format("unknown robot config '{}'", name));
}

}  // namespace deskbot::sim
