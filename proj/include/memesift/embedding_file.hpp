#pragma once

// MME1 embedding files: magic "MME1", u32 rows, u32 cols (little-endian),
// then rows*cols IEEE-754 binary64 values, little-endian, row-major.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memesift/errors.hpp"
#include "memesift/matrix.hpp"

namespace memesift {

inline constexpr std::string_view kEmbeddingMagic = "MME1";

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }

  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
  }

  const std::vector<char>& buffer() const noexcept { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> data) : data_(data) {}

  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
  }

  std::span<const char> data_;
  std::size_t pos_ = 0;
};

inline void write_matrix_block(ByteWriter& w, const Matrix& m) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
      m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw DimensionError("matrix too large for embedding file");
  }
  w.bytes(kEmbeddingMagic);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) w.f64(v);
}

inline Matrix read_matrix_block(ByteReader& r) {
  const std::size_t start = r.offset();
  if (r.bytes(4, "magic") != kEmbeddingMagic) throw FormatError("bad embedding magic", start);
  const std::uint32_t rows = r.u32("row count");
  const std::uint32_t cols = r.u32("column count");
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    if (r.at_end()) {
      throw FormatError("payload holds " + std::to_string(i) + " of " + std::to_string(count) +
                            " values declared by header " + std::to_string(rows) + "x" +
                            std::to_string(cols),
                        at);
    }
    const double v = r.f64("value");
    if (!std::isfinite(v)) throw FormatError("non-finite value", at);
    values.push_back(v);
  }
  return Matrix(rows, cols, std::move(values));
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

/// Decodes a single MME1 block that must span the whole buffer.
inline Matrix decode_embedding(std::span<const char> bytes) {
  ByteReader r(bytes);
  Matrix m = read_matrix_block(r);
  if (!r.at_end()) throw FormatError("trailing bytes after payload", r.offset());
  if (m.rows() == 0 || m.cols() == 0) throw FormatError("empty embedding", 4);
  return m;
}

inline std::vector<char> encode_embedding(const Matrix& m) {
  ByteWriter w;
  write_matrix_block(w, m);
  return w.buffer();
}

}  // namespace memesift
