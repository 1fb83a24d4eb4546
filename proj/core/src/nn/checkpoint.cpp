#include "deskbot/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O writes native words and assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'S', 'K', 'B'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

void put_records(std::ostream& out, const TensorMap& map) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(map.size()));
  for (const auto& [name, t] : map) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

TensorMap get_records(std::istream& in) {
  constexpr std::uint32_t kMaxName = 4096;
  constexpr std::uint32_t kMaxRank = 8;
  TensorMap map;
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    if (len > kMaxName) throw std::runtime_error("checkpoint record name too long");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rank = get<std::uint32_t>(in);
    if (rank > kMaxRank) throw std::runtime_error(fmt::format("checkpoint tensor '{}' has rank {}", name, rank));
    std::vector<int> shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = get<std::uint64_t>(in);
      if (d > (1u << 30)) throw std::runtime_error(fmt::format("checkpoint tensor '{}' too large", name));
      shape.push_back(static_cast<int>(d));
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated");
    map.insert(name, std::move(t));
  }
  return map;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const Adam* optimizer) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write checkpoint '{}'", path.string()));
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_records(out, params);
  const bool has_opt = optimizer != nullptr && optimizer->first_moment().size() > 0;
  put<std::uint8_t>(out, has_opt ? 1 : 0);
  if (has_opt) {
    put<std::uint64_t>(out, optimizer->steps());
    put_records(out, optimizer->first_moment());
    put_records(out, optimizer->second_moment());
  }
  if (!out) throw std::runtime_error(fmt::format("failed writing checkpoint '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open checkpoint '{}'", path.string()));
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(fmt::format("'{}' is not a checkpoint", path.string()));
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(fmt::format("unsupported checkpoint version {}", version));
  }
  Checkpoint ckpt;
  TensorMap params = get_records(in);
  for (auto& [name, t] : params) ckpt.params.insert(name, std::move(t));
  if (get<std::uint8_t>(in) == 1) {
    OptimizerState opt;
    opt.step = get<std::uint64_t>(in);
    opt.first_moment = get_records(in);
    opt.second_moment = get_records(in);
    ckpt.optimizer = std::move(opt);
  }
  return ckpt;
}

void check_compatible(const TensorMap& expected, const TensorMap& loaded) {
  for (const auto& [name, t] : expected) {
    if (!loaded.contains(name)) throw ShapeMismatch(fmt::format("checkpoint is missing tensor '{}'", name));
    const auto& other = loaded.at(name);
    if (other.shape() != t.shape()) {
      throw ShapeMismatch(fmt::format("tensor '{}' has shape {} in checkpoint, expected {}", name,
                                      other.shape_str(), t.shape_str()));
    }
  }
  for (const auto& [name, _] : loaded) {
    if (!expected.contains(name)) throw ShapeMismatch(fmt::format("unexpected tensor '{}' in checkpoint", name));
  }
}

}  // namespace deskbot::nn
