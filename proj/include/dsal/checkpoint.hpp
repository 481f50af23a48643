#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsal/error.hpp"
#include "dsal/io.hpp"
#include "dsal/surrogate.hpp"

namespace dsal {

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout:
//   "SSCK" | u32 version | u32 header_len | header JSON (spec, counts, layout)
//   | params as LE float32 | buffers as LE float32
inline std::string encode_checkpoint(const Surrogate& model) {
  nlohmann::json header;
  header["spec"] = nn::to_json(model.spec());
  header["params"] = model.store().values.size();
  header["buffers"] = model.store().buffers.size();
  auto& layout = header["layout"] = nlohmann::json::array();
  for (const auto& e : model.store().layout)
    layout.push_back({{"name", e.name}, {"offset", e.offset}, {"size", e.size}, {"buffer", e.buffer}});
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 4);
  io::put_le<std::uint32_t>(out, kCheckpointVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  for (float v : model.store().values) io::put_le<float>(out, v);
  for (float v : model.store().buffers) io::put_le<float>(out, v);
  return out;
}

inline Surrogate decode_checkpoint(const std::string& bytes, const std::string& name = "checkpoint") {
  using K = FormatError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError(K::malformed, name + ": not a checkpoint (bad magic)");
  }
  io::ByteReader rd(bytes, name);
  rd.bytes(4);
  const auto version = rd.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError(K::version, name + ": unsupported checkpoint version " + std::to_string(version));
  const auto hlen = rd.get<std::uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(rd.bytes(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(K::malformed, name + ": bad header: " + e.what());
  }
  nn::ModelSpec spec;
  try {
    spec = nn::model_spec_from_json(header.at("spec"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(K::malformed, name + ": bad spec: " + e.what());
  }
  Surrogate model(spec, 0);
  const auto np = header.value("params", std::size_t{0}), nb = header.value("buffers", std::size_t{0});
  if (np != model.store().values.size() || nb != model.store().buffers.size()) {
    throw FormatError(K::malformed, name + ": payload sizes do not match the spec");
  }
  for (auto& v : model.store().values) v = rd.get<float>();
  for (auto& v : model.store().buffers) v = rd.get<float>();
  if (rd.remaining() != 0) throw FormatError(K::malformed, name + ": trailing bytes after payload");
  return model;
}

inline void save_checkpoint(const Surrogate& model, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(model));
}

inline Surrogate load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

/// `epoch,train_loss,val_loss,wall_s`; wall time left empty when
/// `with_wall` is off so that logs compare byte for byte.
inline std::string training_log_csv(std::span<const EpochLog> log, bool with_wall) {
  std::string out = "epoch,train_loss,val_loss,wall_s\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + ',' + io::fmt_double(r.train_loss) + ',';
    if (std::isfinite(r.val_loss)) out += io::fmt_double(r.val_loss);
    out += ',';
    if (with_wall) out += io::fmt_double(r.wall_s);
    out += '\n';
  }
  return out;
}

}  // namespace dsal
