#include "deskbot/render/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::render {

namespace {

// (horizontal, vertical, depth) with depth growing toward the camera.
std::array<double, 3> camera_axes(const CameraSpec& camera, const sim::Vec3& p) {
  if (camera.pose == CameraPose::kTop) return {p.x(), p.y(), p.z()};
  return {p.x(), p.z(), -p.y()};
}

struct PixelRect {
  int col0, col1, row0, row1;  // half-open
};

// Pixels whose centers fall inside the closed world rectangle.
PixelRect covered_pixels(const CameraSpec& cam, double h0, double h1, double v0, double v1) {
  const double sx = cam.width / (cam.window_max[0] - cam.window_min[0]);
  const double sy = cam.height / (cam.window_max[1] - cam.window_min[1]);
  const double c_lo = (h0 - cam.window_min[0]) * sx - 0.5;
  const double c_hi = (h1 - cam.window_min[0]) * sx - 0.5;
  const double r_lo = (cam.window_max[1] - v1) * sy - 0.5;
  const double r_hi = (cam.window_max[1] - v0) * sy - 0.5;
  PixelRect r;
  r.col0 = std::max(0, static_cast<int>(std::ceil(c_lo)));
  r.col1 = std::min(cam.width, static_cast<int>(std::floor(c_hi)) + 1);
  r.row0 = std::max(0, static_cast<int>(std::ceil(r_lo)));
  r.row1 = std::min(cam.height, static_cast<int>(std::floor(r_hi)) + 1);
  return r;
}

void fill(Image& img, const PixelRect& r, const Rgb& c) {
  for (int row = r.row0; row < r.row1; ++row) {
    for (int col = r.col0; col < r.col1; ++col) img.set(row, col, c);
  }
}

void paint_if_inside(Image& img, int row, int col, const Rgb& c) {
  if (row >= 0 && row < img.height() && col >= 0 && col < img.width()) img.set(row, col, c);
}

void draw_segment(Image& img, const CameraSpec& cam, const sim::Vec3& a, const sim::Vec3& b) {
  const auto pa = project(cam, a);
  const auto pb = project(cam, b);
  const double len = std::hypot(pb[0] - pa[0], pb[1] - pa[1]);
  const int samples = std::max(1, static_cast<int>(std::ceil(len * 4.0)));
  for (int s = 0; s <= samples; ++s) {
    const double t = static_cast<double>(s) / samples;
    const double u = pa[0] + t * (pb[0] - pa[0]);
    const double v = pa[1] + t * (pb[1] - pa[1]);
    // 2x2 block centred on the sample.
    const int col = static_cast<int>(std::floor(u - 0.5));
    const int row = static_cast<int>(std::floor(v - 0.5));
    for (int dr = 0; dr < 2; ++dr) {
      for (int dc = 0; dc < 2; ++dc) paint_if_inside(img, row + dr, col + dc, kLinkColor);
    }
  }
}

}  // namespace

void CameraSpec::validate() const {
  if (width <= 0 || height <= 0) {
    throw ConfigError(fmt::format("camera resolution {}x{} must be positive", height, width));
  }
  if (!(window_max[0] > window_min[0]) || !(window_max[1] > window_min[1])) {
    throw ConfigError("camera world window is degenerate");
  }
}

Rgb palette(sim::Color c) {
  switch (c) {
    case sim::Color::kBlue: return {0.0, 0.0, 1.0};
    case sim::Color::kRed: return {1.0, 0.0, 0.0};
    case sim::Color::kGreen: return {0.0, 1.0, 0.0};
  }
  return kBackground;
}

Image::Image(int height, int width, const Rgb& fill)
    : height_(height), width_(width), pixels_(static_cast<std::size_t>(height) * width * 3) {
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    std::copy(fill.begin(), fill.end(), pixels_.begin() + static_cast<std::ptrdiff_t>(i));
  }
}

Rgb Image::pixel(int row, int col) const {
  const std::size_t i = (static_cast<std::size_t>(row) * width_ + col) * 3;
  return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
}

void Image::set(int row, int col, const Rgb& c) {
  const std::size_t i = (static_cast<std::size_t>(row) * width_ + col) * 3;
  std::copy(c.begin(), c.end(), pixels_.begin() + static_cast<std::ptrdiff_t>(i));
}

std::array<double, 2> project(const CameraSpec& camera, const sim::Vec3& p) {
  const auto a = camera_axes(camera, p);
  const double u = (a[0] - camera.window_min[0]) / (camera.window_max[0] - camera.window_min[0]);
  const double v = (camera.window_max[1] - a[1]) / (camera.window_max[1] - camera.window_min[1]);
  return {u * camera.width, v * camera.height};
}

Image render_scene(std::span<const sim::SceneObject> objects, const CameraSpec& camera,
                   const TableSpec& table) {
  Image img(camera.height, camera.width, kBackground);
  if (camera.pose == CameraPose::kTop) {
    fill(img, covered_pixels(camera, table.x_min, table.x_max, table.y_min, table.y_max),
         kTableColor);
  } else {
    // Seen edge-on from the front: everything at or below the table top.
    fill(img, covered_pixels(camera, table.x_min, table.x_max, camera.window_min[1], 0.0),
         kTableColor);
  }

  std::vector<std::size_t> order(objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return camera_axes(camera, objects[a].center)[2] < camera_axes(camera, objects[b].center)[2];
  });
  for (std::size_t idx : order) {
    const auto& o = objects[idx];
    const auto c = camera_axes(camera, o.center);
    fill(img,
         covered_pixels(camera, c[0] - o.half_extent, c[0] + o.half_extent, c[1] - o.half_extent,
                        c[1] + o.half_extent),
         palette(o.color));
  }
  return img;
}

Image render_scene(const sim::RobotModel& model, const sim::JointState& state,
                   std::span<const sim::SceneObject> objects, const CameraSpec& camera,
                   const TableSpec& table) {
  Image img = render_scene(objects, camera, table);
  const auto pose = sim::forward_kinematics(model, state);
  for (int i = 0; i < model.dof(); ++i) {
    draw_segment(img, camera, pose.link_frames[i].translation(), pose.link_tips[i]);
  }
  for (const auto& tip : pose.fingertips) {
    const auto p = project(camera, tip);
    paint_if_inside(img, static_cast<int>(std::floor(p[1])), static_cast<int>(std::floor(p[0])),
                    kFingertipColor);
  }
  return img;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path.string()));
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::vector<unsigned char> bytes(image.data().size());
  std::transform(image.data().begin(), image.data().end(), bytes.begin(), [](double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace deskbot::render
