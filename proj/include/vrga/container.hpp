#pragma once

// Little-endian raw payload files and JSON manifests shared by the dump and
// checkpoint containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "vrga/error.hpp"

namespace vrga::container {

using Json = nlohmann::ordered_json;

template <class T>
  requires std::is_floating_point_v<T>
void write_payload(const std::filesystem::path& path, const std::vector<T>& values) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<unsigned char> bytes(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    Bits b;
    std::memcpy(&b, &values[i], sizeof(T));
    for (std::size_t k = 0; k < sizeof(T); ++k) {
      bytes[i * sizeof(T) + k] = static_cast<unsigned char>((b >> (8 * k)) & 0xffu);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// Reads exactly `count` values starting at `offset_bytes`. A short file is a
// truncated payload; trailing bytes are a size mismatch.
template <class T>
  requires std::is_floating_point_v<T>
std::vector<T> read_payload(const std::filesystem::path& path, std::uint64_t offset_bytes,
                            std::size_t count) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open payload '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t want = offset_bytes + static_cast<std::uint64_t>(count) * sizeof(T);
  if (size < want) {
    throw ValidationError("truncated payload '" + path.string() + "': expected " +
                          std::to_string(want) + " bytes, found " + std::to_string(size));
  }
  if (size > want) {
    throw ValidationError("payload size mismatch '" + path.string() + "': expected " +
                          std::to_string(want) + " bytes, found " + std::to_string(size));
  }
  in.seekg(static_cast<std::streamoff>(offset_bytes));
  std::vector<unsigned char> bytes(count * sizeof(T));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError("read failed for '" + path.string() + "'");
  std::vector<T> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    Bits b = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) {
      b |= static_cast<Bits>(bytes[i * sizeof(T) + k]) << (8 * k);
    }
    std::memcpy(&values[i], &b, sizeof(T));
  }
  return values;
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// Typed field access with validation errors that name the field.
template <class T>
T field(const Json& j, const char* name) {
  if (!j.contains(name)) throw ValidationError(std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("field '") + name + "' has the wrong type");
  }
}

}  // namespace vrga::container
