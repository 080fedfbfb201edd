#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reviewlens/error.hpp"

namespace reviewlens::nn {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

struct TensorData {
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

namespace detail {

inline float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3ffu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace detail

/// Reads every tensor of a .safetensors file, widening F16/BF16 to float.
inline std::map<std::string, TensorData> read_safetensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len > (1ull << 30)) fail(ErrorKind::MalformedRecord, "bad safetensors header in " + path.string());
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  const auto meta = nlohmann::json::parse(header, nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) fail(ErrorKind::MalformedRecord, "unparseable safetensors header");
  const std::vector<char> buffer((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::map<std::string, TensorData> out;
  for (const auto& [name, entry] : meta.items()) {
    if (name == "__metadata__") continue;
    TensorData t;
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (offsets.size() != 2 || offsets[1] > buffer.size() || offsets[0] > offsets[1]) {
      fail(ErrorKind::MalformedRecord, "tensor " + name + " has invalid offsets");
    }
    std::size_t count = 1;
    for (auto d : t.shape) count *= static_cast<std::size_t>(d);
    const char* src = buffer.data() + offsets[0];
    const std::size_t bytes = offsets[1] - offsets[0];
    t.values.resize(count);
    if (dtype == "F32" && bytes == count * 4) {
      std::memcpy(t.values.data(), src, bytes);
    } else if ((dtype == "F16" || dtype == "BF16") && bytes == count * 2) {
      for (std::size_t i = 0; i < count; ++i) {
        std::uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        t.values[i] = dtype == "F16" ? detail::half_to_float(h)
                                     : std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
      }
    } else {
      fail(ErrorKind::MalformedRecord, "tensor " + name + " has unsupported dtype " + dtype);
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

/// Writes F32 tensors in name order (std::map), so output bytes are deterministic.
inline void write_safetensors(const std::filesystem::path& path, const std::map<std::string, TensorData>& tensors) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  header["__metadata__"] = {{"format", "pt"}};
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t bytes = t.values.size() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

}  // namespace reviewlens::nn
