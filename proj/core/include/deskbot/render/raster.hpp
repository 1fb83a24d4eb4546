#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "deskbot/sim/kinematics.hpp"

namespace deskbot::render {

enum class CameraPose { kFront, kTop };

// Orthographic camera. The top camera looks down -z and maps world (x, y) onto
// (column, row); the front camera looks along +y and maps world (x, z). Rows grow
// downward, so the upper window bound lands on row 0.
struct CameraSpec {
  CameraPose pose = CameraPose::kTop;
  int width = 32;
  int height = 64;
  std::array<double, 2> window_min{};  // (horizontal, vertical) in meters
  std::array<double, 2> window_max{};

  // Throws ConfigError for empty resolution or a degenerate window.
  void validate() const;
};

using Rgb = std::array<double, 3>;

inline constexpr Rgb kBackground{0.5, 0.5, 0.5};
inline constexpr Rgb kTableColor{0.8, 0.8, 0.8};
inline constexpr Rgb kLinkColor{0.1, 0.1, 0.1};
inline constexpr Rgb kFingertipColor{1.0, 1.0, 1.0};

Rgb palette(sim::Color c);

// Table top is the z = 0 plane restricted to this x/y rectangle.
struct TableSpec {
  double x_min = -0.6, x_max = 0.6;
  double y_min = 0.2, y_max = 1.3;
};

class Image {
 public:
  Image() = default;
  Image(int height, int width, const Rgb& fill);

  int height() const { return height_; }
  int width() const { return width_; }
  Rgb pixel(int row, int col) const;
  void set(int row, int col, const Rgb& c);
  // Row-major H x W x 3.
  std::span<const double> data() const { return pixels_; }

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

// Continuous image-plane coordinates (column, row) of a world point.
std::array<double, 2> project(const CameraSpec& camera, const sim::Vec3& p);

Image render_scene(std::span<const sim::SceneObject> objects, const CameraSpec& camera,
                   const TableSpec& table = {});

Image render_scene(const sim::RobotModel& model, const sim::JointState& state,
                   std::span<const sim::SceneObject> objects, const CameraSpec& camera,
                   const TableSpec& table = {});

// Binary PPM (P6), 8 bits per channel.
void write_ppm(const Image& image, const std::filesystem::path& path);

}  // namespace deskbot::render
