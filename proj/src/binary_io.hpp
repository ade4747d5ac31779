#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>

#include "dmc/error.hpp"

namespace dmc::detail {

// Little-endian u64 / f64 streams used by every binary format in the project.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  }

  void magic(std::string_view tag) { out_.write(tag.data(), static_cast<std::streamsize>(tag.size())); }

  void u64(std::uint64_t v) {
    std::array<char, 8> bytes{};
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    out_.write(bytes.data(), 8);
  }

  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }

  void finish() {
    out_.flush();
    if (!out_) throw Error(ErrorKind::IoError, "write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  }

  void expect_magic(std::string_view tag) {
    std::string buf(tag.size(), '\0');
    in_.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!in_ || buf != tag) {
      throw Error(ErrorKind::ParseError, path_.string() + ": bad magic, expected " + std::string(tag));
    }
  }

  std::uint64_t u64() {
    std::array<unsigned char, 8> bytes{};
    in_.read(reinterpret_cast<char*>(bytes.data()), 8);
    if (!in_) throw Error(ErrorKind::ParseError, path_.string() + ": truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  void f64s(std::span<double> out) {
    for (double& v : out) v = f64();
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace dmc::detail
