#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "mira/error.hpp"

namespace mira {

// Little-endian binary readers/writers used by all on-disk formats
// (micg.bin, vectors.bin, model checkpoints).

inline void write_bytes(std::ostream& os, const void* data, size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  write_bytes(os, buf, sizeof(T));
}

inline void write_string(std::ostream& os, std::string_view s) {
  write_le<uint32_t>(os, static_cast<uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw Error("truncated-file");
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline std::string read_string(std::istream& is) {
  uint32_t n = read_le<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw Error("truncated-file");
  return s;
}

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot-write(" + p.string() + ")");
  return os;
}

inline std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("missing-file(" + p.string() + ")");
  return is;
}

// Write-temp-then-rename so readers never observe a partial file.
template <typename Fn>
void atomic_write(const std::filesystem::path& p, Fn&& write_fn) {
  std::filesystem::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream os = open_output(tmp);
    write_fn(os);
    os.flush();
    if (!os) throw Error("cannot-write(" + p.string() + ")");
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace mira
