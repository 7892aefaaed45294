#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ltlab {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Label value marking a synthetic background sample (never a category id).
inline constexpr std::size_t kBackground = std::numeric_limits<std::size_t>::max();

/// Malformed input file; `where` carries a line number or byte offset.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::string where)
      : std::runtime_error(what + " (" + where + ")"), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

/// Invalid experiment configuration; `key_path` is a JSON pointer-like path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key_path, const std::string& what)
      : std::runtime_error(key_path + ": " + what), key_path_(std::move(key_path)), detail_(what) {}
  const std::string& key_path() const noexcept { return key_path_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string key_path_;
  std::string detail_;
};

/// Non-finite loss or gradient during training or evaluation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a, used for config and artifact fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) {
  Fnv1a h;
  h.update(s);
  return h.digest();
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

namespace io {

// Little-endian scalar I/O for the binary artifact formats.

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f32(std::ostream& os, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  write_u32(os, bits);
}

inline std::uint32_t read_u32(std::istream& is, std::string_view what) {
  const auto offset = static_cast<long long>(is.tellg());
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("truncated file while reading " + std::string(what),
                      "offset " + std::to_string(offset));
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float read_f32(std::istream& is, std::string_view what) {
  const std::uint32_t bits = read_u32(is, what);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

inline void write_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), 4); }

inline void expect_magic(std::istream& is, std::string_view magic) {
  char m[4] = {};
  if (!is.read(m, 4) || std::string_view(m, 4) != magic) {
    throw FormatError("malformed header: expected magic " + std::string(magic), "offset 0");
  }
}

inline void expect_version(std::istream& is, std::uint32_t expected) {
  const std::uint32_t v = read_u32(is, "version");
  if (v != expected) {
    throw FormatError("unsupported version " + std::to_string(v), "offset 4");
  }
}

}  // namespace io
}  // namespace ltlab
