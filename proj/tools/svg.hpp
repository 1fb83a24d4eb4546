#pragma once

#include <filesystem>
#include <string>

namespace deskbot::tools {

// Plots mean_return against env_steps from a metrics CSV.
void write_learning_curve(const std::filesystem::path& metrics_csv, const std::filesystem::path& svg,
                          const std::string& title);

}  // namespace deskbot::tools
