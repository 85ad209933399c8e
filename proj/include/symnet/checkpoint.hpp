#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "symnet/binary_io.hpp"
#include "symnet/config.hpp"
#include "symnet/error.hpp"
#include "symnet/model.hpp"

namespace symnet {

inline constexpr std::string_view kCheckpointMagic = "SYMC";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  SymNetModel<float> model;
  TrainConfig config;
  std::uint64_t epoch = 0;
  std::string rng_state;  // textual std::mt19937_64 state
};

// Layout (little-endian):
//   "SYMC" u32 version u32 entry_count
//   entry_count x { u16 name_len, name, u32 rank, rank x u32 dim, f32 payload }
//   u32 blob_len, JSON blob {"epoch", "model", "rng", "train"}
inline io::Bytes encode_checkpoint(const Checkpoint& ck) {
  io::Bytes out;
  io::put_bytes(out, kCheckpointMagic);
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(ck.model.params.size()));
  for (const auto& [name, e] : ck.model.params) {
    io::put_u16(out, static_cast<std::uint16_t>(name.size()));
    io::put_bytes(out, name);
    io::put_u32(out, e.rank);
    if (e.rank == 1) {
      io::put_u32(out, static_cast<std::uint32_t>(e.value.cols()));
    } else {
      io::put_u32(out, static_cast<std::uint32_t>(e.value.rows()));
      io::put_u32(out, static_cast<std::uint32_t>(e.value.cols()));
    }
    for (float v : e.value.values()) io::put_f32(out, v);
  }
  const nlohmann::json blob = {{"model", to_json(ck.model.config)},
                               {"train", to_json(ck.config)},
                               {"epoch", ck.epoch},
                               {"rng", ck.rng_state}};
  const std::string text = blob.dump();
  io::put_u32(out, static_cast<std::uint32_t>(text.size()));
  io::put_bytes(out, text);
  return out;
}

inline Checkpoint decode_checkpoint(const io::Bytes& bytes, const std::string& context = "checkpoint") {
  io::Reader r(bytes, context);
  if (bytes.size() < 4 || r.bytes(4, "magic") != kCheckpointMagic)
    fail(ErrorCode::BadMagic, context + ": expected magic SYMC");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    fail(ErrorCode::VersionMismatch, context + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32("entry count");
  ParameterStore<float> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16("name length");
    std::string name = r.bytes(len, "name");
    const std::uint32_t rank = r.u32("rank");
    if (rank != 1 && rank != 2) fail(ErrorCode::ParseError, context + ": tensor " + name + " has rank " + std::to_string(rank));
    std::size_t rows = 1, cols = 0;
    if (rank == 2) rows = r.u32("dim");
    cols = r.u32("dim");
    r.need(rows * cols * 4, "payload");
    Matrix<float> m(rows, cols);
    for (auto& v : m.values()) v = r.f32("payload");
    const bool buffer = name.ends_with(".running_mean") || name.ends_with(".running_var");
    if (loaded.contains(name)) fail(ErrorCode::ParseError, context + ": duplicate tensor " + name);
    loaded.add(name, std::move(m), rank, !buffer);
  }
  const std::uint32_t blob_len = r.u32("config length");
  const std::string text = r.bytes(blob_len, "config blob");
  if (!r.at_end()) fail(ErrorCode::ParseError, context + ": trailing bytes after config blob");

  nlohmann::json blob;
  try {
    blob = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, context + ": config blob: " + e.what());
  }
  if (!blob.is_object() || !blob.contains("model") || !blob.contains("train"))
    fail(ErrorCode::ParseError, context + ": config blob lacks model/train sections");
  Checkpoint ck;
  const ModelConfig mc = model_config_from_json(blob["model"]);
  ck.config = train_config_from_json(blob["train"]);
  detail::read_opt(blob, "epoch", ck.epoch);
  detail::read_opt(blob, "rng", ck.rng_state);

  // The tensor set must be exactly the one the architecture implies.
  const auto reference = SymNetModel<float>::init(mc, 0);
  for (const auto& [name, e] : reference.params) {
    if (!loaded.contains(name)) fail(ErrorCode::MissingParameter, context + ": missing tensor " + name);
    const auto& got = loaded.entry(name);
    if (!got.value.same_shape(e.value) || got.rank != e.rank) {
      fail(ErrorCode::ShapeMismatch, context + ": tensor " + name + " is " + shape_string(got.value) +
                                         ", expected " + shape_string(e.value));
    }
  }
  if (loaded.size() != reference.params.size()) {
    for (const auto& [name, e] : loaded)
      if (!reference.params.contains(name))
        fail(ErrorCode::MissingParameter, context + ": unexpected tensor " + name);
  }
  ck.model = SymNetModel<float>(mc, std::move(loaded));
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace symnet
