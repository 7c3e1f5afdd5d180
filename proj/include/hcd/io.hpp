#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "hcd/error.hpp"

namespace hcd {

// 64-bit FNV-1a over a byte range.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Little-endian binary writer. The build targets little-endian hosts, so
// writes are raw memcpy; the static_asserts below keep that honest.
static_assert(sizeof(float) == 4 && sizeof(double) == 8, "IEEE-754 host required");

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) fail(ErrorKind::kIo, "cannot open for write: " + path);
  }

  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), std::streamsize(n));
    if (!out_) fail(ErrorKind::kIo, "write failed: " + path_);
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  void magic(const char m[4]) { bytes(m, 4); }

  void close() {
    out_.close();
    if (!out_) fail(ErrorKind::kIo, "close failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) fail(ErrorKind::kIo, "cannot open for read: " + path);
    auto n = in.tellg();
    in.seekg(0);
    buf_.resize(size_t(n));
    in.read(reinterpret_cast<char*>(buf_.data()), n);
    if (!in) fail(ErrorKind::kIo, "read failed: " + path);
  }

  size_t size() const { return buf_.size(); }
  size_t remaining() const { return buf_.size() - pos_; }
  const unsigned char* cursor() const { return buf_.data() + pos_; }

  void bytes(void* p, size_t n) {
    if (remaining() < n)
      fail(ErrorKind::kShape, "file truncated: " + path_ + " (needs " +
                                  std::to_string(n) + " more bytes, has " +
                                  std::to_string(remaining()) + ")");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
  uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
  float f32() { float v; bytes(&v, 4); return v; }

  void expect_magic(const char m[4], const std::string& what) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0)
      fail(ErrorKind::kFormat, "bad magic in " + path_ + ": expected " + what);
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<unsigned char> buf_;
  size_t pos_ = 0;
};

}  // namespace hcd
