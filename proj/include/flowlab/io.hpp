#pragma once
// Little-endian binary primitives for the checkpoint/dataset file formats.
// Explicit byte shuffling keeps the formats identical across hosts.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "flowlab/errors.hpp"

namespace flowlab::io {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), std::streamsize(n));
  if (!os) throw io_error("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), std::streamsize(n));
  if (std::size_t(is.gcount()) != n) throw io_error(std::string("truncated file: ") + what);
}

inline void write_u8(std::ostream& os, std::uint8_t v) { write_bytes(os, &v, 1); }

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, std::uint32_t(v));
  write_u32(os, std::uint32_t(v >> 32));
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline std::uint8_t read_u8(std::istream& is, const char* what) {
  std::uint8_t v;
  read_bytes(is, &v, 1, what);
  return v;
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_bytes(is, b, 4, what);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t lo = read_u32(is, what);
  std::uint64_t hi = read_u32(is, what);
  return lo | hi << 32;
}

inline float read_f32(std::istream& is, const char* what) {
  std::uint32_t bits = read_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_magic(std::ostream& os, const char tag[4]) { write_bytes(os, tag, 4); }

inline void expect_magic(std::istream& is, const char tag[4]) {
  char got[4];
  read_bytes(is, got, 4, "magic");
  if (std::memcmp(got, tag, 4) != 0)
    throw io_error("bad magic: expected " + std::string(tag, 4) + ", got " + std::string(got, 4));
}

inline void expect_version(std::istream& is, std::uint32_t want) {
  std::uint32_t got = read_u32(is, "version");
  if (got != want)
    throw io_error("unsupported version " + std::to_string(got) + ", expected " +
                   std::to_string(want));
}

}  // namespace flowlab::io
