#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "windgrid/error.hpp"

// Byte-level little-endian encoding, independent of host byte order, so the
// file formats are bit-exact everywhere.
namespace windgrid::binio {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("unexpected end of file reading u32");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline float get_f32(std::istream& in) {
  const std::uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void put_f32_array(std::ostream& out, const float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) put_f32(out, data[i]);
}

inline void get_f32_array(std::istream& in, float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) data[i] = get_f32(in);
}

inline void put_magic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

inline void check_magic(std::istream& in, const char magic[4], const std::string& what) {
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0)
    throw FormatError(what + ": bad magic (not a " + std::string(magic, 4) + " file)");
}

inline void put_blob(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_blob(std::istream& in, const std::string& what) {
  const std::uint32_t n = get_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw FormatError(what + ": truncated header block");
  return s;
}

}  // namespace windgrid::binio
