#include "posttrain/checkpoint.h"

#include <fstream>
#include <map>
#include <type_traits>

#include "binary_io.h"
#include "json.hpp"
#include "posttrain/error.h"
#include "posttrain/text_util.h"

namespace posttrain {
namespace {

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

template <typename T>
void put_blob(binary::Writer& w, const std::string& name, const Shape& shape,
              std::span<const T> values) {
  w.put_string(name);
  w.put(dtype_tag<T>());
  w.put(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.put(static_cast<std::uint64_t>(d));
  for (T v : values) w.put(v);
}

struct RawBlob {
  std::uint8_t dtype = 0;
  Shape shape;
  std::string_view payload;
};

template <typename T>
void copy_blob(const std::string& name, const RawBlob& blob,
               const Shape& expected, std::span<T> dest) {
  if (blob.shape != expected) {
    throw DataError("checkpoint: blob '" + name + "' has shape " +
                    shape_to_string(blob.shape) + ", expected " +
                    shape_to_string(expected));
  }
  binary::Reader r(blob.payload, "checkpoint blob '" + name + "'");
  for (auto& v : dest) {
    v = blob.dtype == 0 ? static_cast<T>(r.get<float>())
                        : static_cast<T>(r.get<double>());
  }
}

CheckpointMeta parse_header(binary::Reader& r) {
  if (r.get_bytes(4) != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " +
                    std::to_string(version));
  }
  CheckpointMeta meta;
  const std::string config_text = r.get_string();
  try {
    const auto j = nlohmann::json::parse(config_text);
    meta.config = ModelConfig::from_json(j.at("model").dump());
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.dtype = j.at("dtype").get<std::string>();
    if (j.contains("adam_step")) {
      meta.adam_step = j.at("adam_step").get<std::int64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad config: ") + e.what());
  }
  const auto digest = r.get_bytes(meta.vocab_digest.size());
  std::copy(digest.begin(), digest.end(), meta.vocab_digest.begin());
  meta.step = r.get<std::uint64_t>();
  return meta;
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const CheckpointMeta& meta,
                                 const ModelParameters<T>& params,
                                 const AdamState<T>* adam) {
  nlohmann::json config;
  config["model"] = nlohmann::json::parse(meta.config.to_json());
  config["seed"] = meta.seed;
  config["dtype"] = dtype_name<T>();
  if (adam) config["adam_step"] = adam->step;

  binary::Writer w;
  w.put_bytes(kCheckpointMagic);
  w.put(kCheckpointVersion);
  w.put_string(config.dump());
  w.put_bytes(std::string_view(
      reinterpret_cast<const char*>(meta.vocab_digest.data()),
      meta.vocab_digest.size()));
  w.put(meta.step);

  const auto named = params.named();
  const std::size_t blobs = named.size() * (adam ? 3 : 1);
  w.put(static_cast<std::uint32_t>(blobs));
  for (const auto& [name, t] : named) put_blob<T>(w, name, t.shape(), t.data());
  if (adam) {
    if (adam->first_moment.size() != named.size() ||
        adam->second_moment.size() != named.size()) {
      throw InvalidArgument("checkpoint: optimizer state does not match model");
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      put_blob<T>(w, "adam.m." + named[i].first, named[i].second.shape(),
                  adam->first_moment[i]);
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      put_blob<T>(w, "adam.v." + named[i].first, named[i].second.shape(),
                  adam->second_moment[i]);
    }
  }
  return w.take();
}

template <typename T>
Checkpoint<T> parse_checkpoint(std::string_view bytes,
                               const std::optional<Digest>& expected_digest) {
  binary::Reader r(bytes, "checkpoint");
  Checkpoint<T> ck;
  ck.meta = parse_header(r);
  if (expected_digest && *expected_digest != ck.meta.vocab_digest) {
    throw DataError("vocabulary digest mismatch");
  }
  try {
    ck.meta.config.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }

  std::map<std::string, RawBlob> blobs;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    RawBlob blob;
    blob.dtype = r.get<std::uint8_t>();
    if (blob.dtype > 1) {
      throw DataError("checkpoint: blob '" + name + "' has unknown dtype");
    }
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) {
      blob.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    }
    const std::size_t width = blob.dtype == 0 ? 4 : 8;
    blob.payload = r.get_bytes(shape_numel(blob.shape) * width);
    if (!blobs.emplace(name, std::move(blob)).second) {
      throw DataError("checkpoint: duplicate blob '" + name + "'");
    }
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");

  ck.params = ModelParameters<T>::init(ck.meta.config, 0);
  std::size_t used = 0;
  auto take = [&](const std::string& name, const Shape& shape,
                  std::span<T> dest) {
    auto it = blobs.find(name);
    if (it == blobs.end()) {
      throw DataError("checkpoint: missing blob '" + name + "'");
    }
    copy_blob<T>(name, it->second, shape, dest);
    ++used;
  };
  const auto named = ck.params.named();
  for (const auto& [name, t] : named) {
    Tensor<T> handle = t;
    take(name, t.shape(), handle.data());
  }
  if (ck.meta.adam_step) {
    AdamState<T> state;
    state.step = *ck.meta.adam_step;
    for (const auto& [name, t] : named) {
      state.first_moment.emplace_back(t.numel());
      take("adam.m." + name, t.shape(), state.first_moment.back());
    }
    for (const auto& [name, t] : named) {
      state.second_moment.emplace_back(t.numel());
      take("adam.v." + name, t.shape(), state.second_moment.back());
    }
    ck.adam = std::move(state);
  }
  if (used != blobs.size()) {
    for (const auto& [name, blob] : blobs) {
      bool known = false;
      for (const auto& [n, t] : named) {
        if (name == n || name == "adam.m." + n || name == "adam.v." + n) {
          known = true;
        }
      }
      if (!known) throw DataError("checkpoint: unexpected blob '" + name + "'");
    }
    throw DataError("checkpoint: unexpected optimizer blobs");
  }
  return ck;
}

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ModelParameters<T>& params,
                     const AdamState<T>* adam) {
  const std::string bytes = serialize_checkpoint(meta, params, adam);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write file: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot write file: " + path);
  }
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path,
                              const std::optional<Digest>& expected_digest) {
  return parse_checkpoint<T>(text::read_file(path), expected_digest);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  const std::string bytes = text::read_file(path);
  binary::Reader r(bytes, "checkpoint");
  return parse_header(r);
}

#define POSTTRAIN_INSTANTIATE_CHECKPOINT(T)                                 \
  template std::string serialize_checkpoint(                                \
      const CheckpointMeta&, const ModelParameters<T>&, const AdamState<T>*); \
  template Checkpoint<T> parse_checkpoint<T>(std::string_view,              \
                                             const std::optional<Digest>&); \
  template void save_checkpoint(const std::string&, const CheckpointMeta&,  \
                                const ModelParameters<T>&,                  \
                                const AdamState<T>*);                       \
  template Checkpoint<T> load_checkpoint<T>(const std::string&,             \
                                            const std::optional<Digest>&);

POSTTRAIN_INSTANTIATE_CHECKPOINT(float)
POSTTRAIN_INSTANTIATE_CHECKPOINT(double)

#undef POSTTRAIN_INSTANTIATE_CHECKPOINT

}  // namespace posttrain
