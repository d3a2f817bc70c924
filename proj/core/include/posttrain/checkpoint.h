#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "posttrain/adam.h"
#include "posttrain/encoder.h"
#include "posttrain/tokenizer.h"

namespace posttrain {

// File layout, little-endian:
//   "PTCK" | u32 version | u32 len + config JSON | 32-byte vocab digest |
//   u64 step | u32 blob count | blobs
// Blob: u32 len + name | u8 dtype (0 f32, 1 f64) | u32 rank | u64 dims... |
//   payload.
// Optimizer moments, when saved, are blobs named "adam.m.<param>" and
// "adam.v.<param>".
inline constexpr std::string_view kCheckpointMagic = "PTCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelConfig config;
  std::uint64_t seed = 0;
  Digest vocab_digest{};
  std::uint64_t step = 0;
  // "f32" or "f64"; the precision the blobs were written in.
  std::string dtype = "f32";
  std::optional<std::int64_t> adam_step;
};

template <typename T>
struct Checkpoint {
  CheckpointMeta meta;
  ModelParameters<T> params;
  std::optional<AdamState<T>> adam;
};

template <typename T>
std::string serialize_checkpoint(const CheckpointMeta& meta,
                                 const ModelParameters<T>& params,
                                 const AdamState<T>* adam = nullptr);

// Blobs stored in the other precision are converted. Throws DataError
// "vocabulary digest mismatch" when `expected_digest` is given and differs.
template <typename T>
Checkpoint<T> parse_checkpoint(std::string_view bytes,
                               const std::optional<Digest>& expected_digest);

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ModelParameters<T>& params,
                     const AdamState<T>* adam = nullptr);

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path,
                              const std::optional<Digest>& expected_digest);

// Header only; blobs are not decoded.
CheckpointMeta read_checkpoint_meta(const std::string& path);

}  // namespace posttrain
