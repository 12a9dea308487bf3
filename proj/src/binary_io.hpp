#pragma once

#include "cmo/types.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace cmo::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError("truncated file while reading " + what);
  return value;
}

inline void read_bytes(std::istream& in, char* dst, std::size_t n, const std::string& what) {
  if (!in.read(dst, static_cast<std::streamsize>(n))) throw FormatError("truncated file while reading " + what);
}

}  // namespace cmo::detail
