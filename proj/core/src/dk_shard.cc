#include "posttrain/dk_shard.h"

#include <fstream>

#include "binary_io.h"
#include "posttrain/error.h"
#include "posttrain/text_util.h"

namespace posttrain {
namespace {

std::string serialize_example(const DkExample& ex) {
  binary::Writer w;
  const auto& in = ex.input;
  w.put(static_cast<std::uint32_t>(in.length()));
  for (auto id : in.ids) w.put(static_cast<std::int32_t>(id));
  for (auto s : in.segments) w.put(static_cast<std::int8_t>(s));
  for (auto v : in.valid) w.put(static_cast<std::uint8_t>(v));
  for (auto s : in.sides) w.put(static_cast<std::int8_t>(s));
  w.put(in.sep_index);
  w.put(in.final_sep_index);
  w.put(static_cast<std::uint32_t>(ex.targets.size()));
  for (const auto& t : ex.targets) {
    w.put(t.position);
    w.put(static_cast<std::int32_t>(t.original));
  }
  w.put(static_cast<std::uint8_t>(ex.label));
  w.put(ex.first_review);
  w.put(ex.second_review);
  return w.take();
}

DkExample parse_example(binary::Reader& r) {
  DkExample ex;
  auto& in = ex.input;
  const auto len = r.get<std::uint32_t>();
  in.ids.resize(len);
  in.segments.resize(len);
  in.valid.resize(len);
  in.sides.resize(len);
  in.offsets.assign(len, {});
  in.words.assign(len, -1);
  for (auto& id : in.ids) id = r.get<std::int32_t>();
  for (auto& s : in.segments) s = r.get<std::int8_t>();
  for (auto& v : in.valid) v = r.get<std::uint8_t>();
  for (auto& s : in.sides) {
    const auto raw = r.get<std::int8_t>();
    if (raw < -1 || raw > 1) throw DataError("DK shard: bad side tag");
    s = static_cast<Side>(raw);
  }
  in.sep_index = r.get<std::int32_t>();
  in.final_sep_index = r.get<std::int32_t>();
  const auto n_targets = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_targets; ++i) {
    MlmTarget t;
    t.position = r.get<std::int32_t>();
    t.original = r.get<std::int32_t>();
    if (t.position < 0 || static_cast<std::uint32_t>(t.position) >= len) {
      throw DataError("DK shard: masked position out of range");
    }
    ex.targets.push_back(t);
  }
  const auto label = r.get<std::uint8_t>();
  if (label > 1) throw DataError("DK shard: bad pair label");
  ex.label = static_cast<PairLabel>(label);
  ex.first_review = r.get<std::uint32_t>();
  ex.second_review = r.get<std::uint32_t>();
  return ex;
}

}  // namespace

std::string serialize_dk_shard(std::span<const DkExample> examples,
                               std::uint32_t seed) {
  binary::Writer w;
  w.put_bytes(kDkShardMagic);
  w.put(kDkShardVersion);
  w.put(seed);
  w.put(static_cast<std::uint32_t>(examples.size()));
  for (const auto& ex : examples) w.put_string(serialize_example(ex));
  return w.take();
}

DkShard parse_dk_shard(std::string_view bytes) {
  binary::Reader r(bytes, "DK shard");
  if (r.get_bytes(4) != kDkShardMagic) throw DataError("DK shard: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kDkShardVersion) {
    throw DataError("DK shard: unsupported version " + std::to_string(version));
  }
  DkShard shard;
  shard.seed = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  shard.examples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    binary::Reader record(r.get_bytes(len), "DK shard record");
    shard.examples.push_back(parse_example(record));
    if (!record.done()) throw DataError("DK shard: trailing bytes in record");
  }
  if (!r.done()) throw DataError("DK shard: trailing bytes after records");
  return shard;
}

void write_dk_shard(const std::string& path,
                    std::span<const DkExample> examples, std::uint32_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  const std::string bytes = serialize_dk_shard(examples, seed);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

DkShard read_dk_shard(const std::string& path) {
  return parse_dk_shard(text::read_file(path));
}

}  // namespace posttrain
