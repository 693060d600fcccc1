#pragma once

#include "stair/common.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stair::io {

// Little-endian encoding helpers. Values are assembled byte by byte so files
// are identical on any host.

class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <class UInt>
  void uint(UInt v) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void string(std::string_view s) {
    u64(s.size());
    bytes(s);
  }

  const std::vector<char>& buffer() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw RuntimeError("write failed for '" + path + "'");
  }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  static Reader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw InputError("cannot open '" + path + "'");
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<char> data(size);
    in.seekg(0);
    in.read(data.data(), static_cast<std::streamsize>(size));
    if (!in) throw InputError("read failed for '" + path + "'");
    return Reader(std::move(data), path);
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t size() const { return data_.size(); }
  const std::string& origin() const { return origin_; }

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::string_view(data_.data() + pos_, magic.size()) != magic)
      throw InputError("'" + origin_ + "': bad magic, expected '" + std::string(magic) + "'");
    pos_ += magic.size();
  }

  template <class UInt>
  UInt uint() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
      v |= static_cast<UInt>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(UInt);
    return v;
  }
  std::uint32_t u32() { return uint<std::uint32_t>(); }
  std::uint64_t u64() { return uint<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string string() {
    const auto n = u64();
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void expect_end() const {
    if (pos_ != data_.size())
      throw InputError("'" + origin_ + "': " + std::to_string(data_.size() - pos_) + " trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw InputError("'" + origin_ + "': truncated file");
  }

  std::vector<char> data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

/// 64-bit FNV-1a, used for content hashes of datasets, configs and caches.
class Fnv1a {
 public:
  void update(std::span<const char> bytes) {
    for (char c : bytes) {
      h_ ^= static_cast<unsigned char>(c);
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(std::span<const char>(s.data(), s.size())); }
  void update(const std::string& s) { update(std::string_view(s)); }
  void update_u64(std::uint64_t v) {
    std::array<char, 8> b{};
    for (std::size_t i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    update(std::span<const char>(b));
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  Fnv1a h;
  std::array<char, 1 << 16> chunk{};
  while (in) {
    in.read(chunk.data(), chunk.size());
    h.update(std::span<const char>(chunk.data(), static_cast<std::size_t>(in.gcount())));
  }
  return h.digest();
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

// FMAT: "FMAT", u32 rows, u32 cols, rows*cols f32, row-major, little-endian.

inline void write_fmat(const std::string& path, const MatrixF& m) {
  Writer w;
  w.bytes("FMAT");
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.f32(m(i, j));
  w.save(path);
}

inline void write_fmat(const std::string& path, const Matrix& m) { write_fmat(path, MatrixF(m.cast<float>())); }

inline MatrixF read_fmat(const std::string& path) {
  auto r = Reader::from_file(path);
  r.expect_magic("FMAT");
  const auto rows = r.u32();
  const auto cols = r.u32();
  const std::uint64_t expected = 12 + 4ULL * rows * cols;
  if (r.size() != expected)
    throw InputError("'" + path + "': FMAT length " + std::to_string(r.size()) + " bytes, header implies " +
                     std::to_string(expected));
  MatrixF m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.f32();
  return m;
}

}  // namespace stair::io
