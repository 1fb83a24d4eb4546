#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "deskbot/nn/adam.hpp"
#include "deskbot/nn/params.hpp"

namespace deskbot::nn {

// Binary layout, all integers and floats little-endian:
//   magic "DSKB", u32 version (1)
//   u32 count, then `count` parameter records
//   u8 has_optimizer; when 1: u64 step, u32 count + first-moment records,
//                               u32 count + second-moment records
// Record: u32 name length, name bytes, u32 rank, rank x u64 dims, raw f64 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerState {
  std::uint64_t step = 0;
  TensorMap first_moment;
  TensorMap second_moment;
};

struct Checkpoint {
  ParamStore params;
  std::optional<OptimizerState> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const Adam* optimizer = nullptr);

// Throws std::runtime_error on I/O failure or a malformed file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws ShapeMismatch naming the first tensor that is missing, unexpected or
// differently shaped.
void check_compatible(const TensorMap& expected, const TensorMap& loaded);

}  // namespace deskbot::nn
