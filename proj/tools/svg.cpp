#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace deskbot::tools {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

// Round step for about five ticks across [lo, hi].
double tick_step(double lo, double hi) {
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

}  // namespace

void write_learning_curve(const std::filesystem::path& metrics_csv, const std::filesystem::path& svg,
                          const std::string& title) {
  std::ifstream in(metrics_csv);
  if (!in) throw std::runtime_error(fmt::format("cannot read '{}'", metrics_csv.string()));
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error(fmt::format("metrics file lacks column '{}'", name));
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cx = col("env_steps"), cy = col("mean_return");
  std::vector<std::pair<double, double>> pts;
  while (std::getline(in, line)) {
    const auto cells = split(line);
    if (cells.size() <= std::max(cx, cy)) continue;
    pts.emplace_back(std::stod(cells[cx]), std::stod(cells[cy]));
  }

  constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 55;
  double x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
  for (const auto& [x, y] : pts) {
    x_hi = std::max(x_hi, x);
    y_lo = std::min(y_lo, y);
    y_hi = std::max(y_hi, y);
  }
  const auto px = [&](double x) { return kLeft + x / x_hi * (kW - kLeft - kRight); };
  const auto py = [&](double y) { return kH - kBottom - (y - y_lo) / (y_hi - y_lo) * (kH - kTop - kBottom); };

  std::ofstream out(svg);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", svg.string()));
  fmt::print(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n", kW, kH);
  fmt::print(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
  fmt::print(out, "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", kW / 2, title);
  fmt::print(out, "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", kLeft, kH - kBottom, kW - kRight);
  fmt::print(out, "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", kLeft, kTop, kH - kBottom);
  const double xs = tick_step(0.0, x_hi);
  for (double x = 0.0; x <= x_hi + 1e-9; x += xs) {
    fmt::print(out, "<line x1=\"{0:.1f}\" y1=\"{1}\" x2=\"{0:.1f}\" y2=\"{2}\" stroke=\"black\"/>\n", px(x), kH - kBottom, kH - kBottom + 5);
    fmt::print(out, "<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px(x), kH - kBottom + 18, x);
  }
  const double ys = tick_step(y_lo, y_hi);
  for (double y = std::ceil(y_lo / ys) * ys; y <= y_hi + 1e-9; y += ys) {
    fmt::print(out, "<line x1=\"{0}\" y1=\"{1:.1f}\" x2=\"{2}\" y2=\"{1:.1f}\" stroke=\"#ddd\"/>\n", kLeft, py(y), kW - kRight);
    fmt::print(out, "<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.2f}</text>\n", kLeft - 6, py(y) + 4, y);
  }
  fmt::print(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">env steps</text>\n", (kLeft + kW - kRight) / 2, kH - 12);
  fmt::print(out, "<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">mean episodic return</text>\n", (kTop + kH - kBottom) / 2);
  if (!pts.empty()) {
    fmt::print(out, "<polyline fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.5\" points=\"");
    for (const auto& [x, y] : pts) fmt::print(out, "{:.1f},{:.1f} ", px(x), py(y));
    fmt::print(out, "\"/>\n");
  }
  fmt::print(out, "</svg>\n");
}

}  // namespace deskbot::tools
