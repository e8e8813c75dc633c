#pragma once

// Little-endian byte buffers for the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mhal/tensor.hpp"

namespace mhal::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  template <class T>
  void values(std::span<const T> v) {
    bytes(v.data(), v.size_bytes());
  }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }

  void write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }

 private:
  std::vector<std::uint8_t> buf_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Reader {
 public:
  Reader(std::vector<std::uint8_t> data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { return scalar<std::uint8_t>(); }
  std::uint16_t u16() { return scalar<std::uint16_t>(); }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }

  template <class Stored, class Out>
  std::vector<Out> values_as(std::size_t n) {
    need(n * sizeof(Stored));
    std::vector<Out> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      Stored s;
      std::memcpy(&s, data_.data() + pos_ + i * sizeof(Stored), sizeof(Stored));
      out[i] = static_cast<Out>(s);
    }
    pos_ += n * sizeof(Stored);
    return out;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const {
    if (pos_ != data_.size()) {
      throw FormatError(what_ + ": " + std::to_string(data_.size() - pos_) + " trailing bytes");
    }
  }

 private:
  template <class S>
  S scalar() {
    S v;
    bytes(&v, sizeof(S));
    return v;
  }
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(what_ + ": truncated file");
  }

  std::vector<std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace mhal::io
