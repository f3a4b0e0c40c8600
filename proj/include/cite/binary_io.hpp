#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cite/error.hpp"

// Little-endian primitives shared by the feature and checkpoint formats.
namespace cite::binio {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <typename T>
void write(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void write_bytes(std::ostream& out, const std::string& s) {
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Reader that tracks its offset and reports truncation precisely.
class Reader {
 public:
  Reader(std::istream& in, std::string what, std::uint64_t total_bytes)
      : in_(in), what_(std::move(what)), total_(total_bytes) {}

  template <typename T>
  T read() {
    T v{};
    need(sizeof(T));
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    offset_ += sizeof(T);
    return to_little(v);
  }

  std::string read_string(std::size_t n) {
    need(n);
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    offset_ += n;
    return s;
  }

  void need(std::uint64_t n) const {
    if (offset_ + n > total_) {
      throw CorruptionError(what_ + ": truncated, expected at least " + std::to_string(offset_ + n) +
                            " bytes, file has " + std::to_string(total_));
    }
  }

  std::uint64_t offset() const { return offset_; }
  std::uint64_t total() const { return total_; }

 private:
  std::istream& in_;
  std::string what_;
  std::uint64_t total_;
  std::uint64_t offset_ = 0;
};

}  // namespace cite::binio
