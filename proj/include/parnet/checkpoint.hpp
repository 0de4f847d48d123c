#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "parnet/run_config.hpp"
#include "parnet/tensor.hpp"

namespace parnet {

inline constexpr char kCheckpointMagic[4] = {'P', 'A', 'R', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk layout, all integers little-endian u32:
///   "PARN" | version | config length | config key=value text
///   | epochs completed | data mean (f32)
///   | tensor count | per tensor: name length, name, rank, extents, f32 data
///   | rng length | rng state text (std::mt19937_64 stream form)
struct Checkpoint {
  RunConfig config;
  std::uint32_t epochs_completed = 0;
  float data_mean = 0.0f;
  std::vector<std::pair<std::string, Tensorf>> tensors;
  std::string rng_state;

  const Tensorf* find(const std::string& name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace parnet
