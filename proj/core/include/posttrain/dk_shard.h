#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posttrain/corpus.h"

namespace posttrain {

// Shard layout: 16-byte header {"DKSH", u32 version, u32 seed, u32 count}
// followed by `count` records, each a u32 byte length and the serialized
// example. All integers little-endian.
inline constexpr std::string_view kDkShardMagic = "DKSH";
inline constexpr std::uint32_t kDkShardVersion = 1;

struct DkShard {
  std::uint32_t seed = 0;
  std::vector<DkExample> examples;
};

std::string serialize_dk_shard(std::span<const DkExample> examples,
                               std::uint32_t seed);
DkShard parse_dk_shard(std::string_view bytes);

void write_dk_shard(const std::string& path,
                    std::span<const DkExample> examples, std::uint32_t seed);
DkShard read_dk_shard(const std::string& path);

}  // namespace posttrain
