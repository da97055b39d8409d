#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "psdf/common.hpp"

namespace psdf {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace binio {

template <class T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  require(in.good(), Errc::parse_error, std::string("truncated file while reading ") + what);
  return value;
}

inline void write_magic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char magic[4], const std::string& path) {
  char buf[4] = {};
  in.read(buf, 4);
  require(in.good() && std::memcmp(buf, magic, 4) == 0, Errc::parse_error,
          path + ": bad magic, expected " + std::string(magic, 4));
}

inline std::ofstream open_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::io_error, "cannot write " + path.string());
  return out;
}

inline std::ifstream open_read(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), Errc::file_not_found, "no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_error, "cannot open " + path.string());
  return in;
}

}  // namespace binio
}  // namespace psdf
