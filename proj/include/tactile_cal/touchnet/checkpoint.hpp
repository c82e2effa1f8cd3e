#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/grid_file.hpp"
#include "tactile_cal/core/text.hpp"
#include "tactile_cal/touchnet/model.hpp"

namespace tactile_cal::net {

inline constexpr std::array<char, 7> kCheckpointMagic = {'3', 'D', 'C', 'N', 'E', 'T', '1'};

inline std::string config_text(const TouchNetConfig& c) {
  text::KeyValues kv;
  std::string widths;
  for (std::size_t i = 0; i < c.module_channels.size(); ++i) {
    if (i) widths += ',';
    widths += std::to_string(c.module_channels[i]);
  }
  kv["module_channels"] = widths;
  kv["kernel_size"] = std::to_string(c.kernel_size);
  kv["dropout_p"] = text::format_double(c.dropout_p);
  kv["input_channels"] = std::to_string(c.input_channels);
  return text::write_key_values(kv);
}

inline TouchNetConfig config_from_text(std::string_view doc) {
  const auto kv = text::parse_key_values(doc);
  TouchNetConfig c;
  c.module_channels.clear();
  for (auto f : text::split(text::require_key(kv, "module_channels"), ',')) {
    std::uint64_t w = 0;
    if (!text::parse_u64(f, w)) throw FormatError("bad module width '" + std::string(f) + "'");
    c.module_channels.push_back(w);
  }
  c.kernel_size = text::require_u64(kv, "kernel_size");
  c.dropout_p = text::require_double(kv, "dropout_p");
  c.input_channels = text::require_u64(kv, "input_channels");
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ValidationError(std::string("checkpoint config: ") + e.what());
  }
  return c;
}

/// "3DCNET1" | u32 len | config text | u32 count | count x (u32 len | name) |
/// count grid records | u32 CRC32 of everything before it.
inline std::vector<std::uint8_t> encode_checkpoint(const TouchNetModel& model) {
  validate_network(model);
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  const auto cfg = config_text(model.config);
  bytes::put(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  std::vector<std::pair<std::string, const std::vector<float>*>> tensors;
  for_each_tensor(model, [&](const std::string& name, const std::vector<float>& v) { tensors.emplace_back(name, &v); });
  bytes::put(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, v] : tensors) {
    bytes::put(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& v = *tensors[i].second;
    // conv weights as out x (in*k*k), everything else as one row
    const std::size_t m = i / 6;
    const bool weight = i % 6 == 0;
    const auto rows = static_cast<std::uint32_t>(weight ? model.modules[m].conv.out : 1);
    GridFile g{rows, static_cast<std::uint32_t>(v.size() / rows), 1, Units::dimensionless, v};
    const auto rec = encode_grid(g);
    out.insert(out.end(), rec.begin(), rec.end());
  }
  bytes::put(out, crc32_of(out));
  return out;
}

inline TouchNetModel decode_checkpoint(std::span<const std::uint8_t> data) {
  if (data.size() < kCheckpointMagic.size() + 8) throw FormatError("checkpoint too short");
  if (std::memcmp(data.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    if (std::memcmp(data.data(), "3DCNET", 6) == 0) {
      throw VersionError("unsupported checkpoint version '" + std::string(1, static_cast<char>(data[6])) + "'");
    }
    throw FormatError("not a touchnet checkpoint");
  }
  std::uint32_t stored = 0;
  std::memcpy(&stored, data.data() + data.size() - 4, 4);
  const auto body = data.first(data.size() - 4);
  if (stored != crc32_of(body)) throw ChecksumError("checkpoint CRC32 mismatch");

  bytes::Reader rd(body.subspan(kCheckpointMagic.size()));
  const auto cfg_len = rd.get<std::uint32_t>();
  const auto cfg_bytes = rd.take(cfg_len);
  TouchNetModel model = make_model(config_from_text({reinterpret_cast<const char*>(cfg_bytes.data()), cfg_len}), 0);

  const auto count = rd.get<std::uint32_t>();
  std::vector<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = rd.get<std::uint32_t>();
    const auto nb = rd.take(len);
    names.emplace_back(reinterpret_cast<const char*>(nb.data()), len);
  }
  std::size_t idx = 0;
  for_each_tensor(model, [&](const std::string& name, std::vector<float>& v) {
    if (idx >= names.size() || names[idx] != name) throw FormatError("checkpoint tensor index does not match '" + name + "'");
    std::size_t used = 0;
    const auto rest = body.subspan(kCheckpointMagic.size() + rd.position());
    const auto g = decode_grid(rest, &used);
    rd.take(used);
    if (g.data.size() != v.size()) throw FormatError("tensor '" + name + "' has the wrong size");
    v = g.data;
    ++idx;
  });
  if (idx != names.size()) throw FormatError("checkpoint holds extra tensors");
  if (rd.remaining() != 0) throw FormatError("trailing bytes in checkpoint");
  validate_network(model);
  return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const TouchNetModel& model) {
  write_file_bytes(path, encode_checkpoint(model));
}

inline TouchNetModel load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace tactile_cal::net
