#ifndef BACON_BINIO_HPP
#define BACON_BINIO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bacon/common.hpp"

namespace bacon {

// Little-endian primitives for the BCNN/BSYN file formats.
// Assumes an LE host, which every supported target is.

template <typename T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw TruncatedFile("unexpected end of file");
  return v;
}

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(reinterpret_cast<char*>(p), std::streamsize(n));
  if (!is) throw TruncatedFile("unexpected end of file");
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_le<std::uint32_t>(os, std::uint32_t(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is) {
  auto n = read_le<std::uint32_t>(is);
  std::string s(n, '\0');
  read_bytes(is, s.data(), n);
  return s;
}

inline void write_f64_array(std::ostream& os, const std::vector<real>& v) {
  for (real x : v) write_le<double>(os, double(x));
}

inline std::vector<real> read_f64_array(std::istream& is, std::size_t n) {
  std::vector<real> v(n);
  for (auto& x : v) x = real(read_le<double>(is));
  return v;
}

// FNV-1a content digest, used for manifests and determinism checks.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a(buf, std::size_t(is.gcount()), h);
  }
  return h;
}

}  // namespace bacon

#endif
