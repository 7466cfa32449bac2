#pragma once

#include "wr2l/common.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace wr2l::io {

// Corrupted, truncated or mismatched cache/checkpoint file.
class FormatError : public Error {
 public:
  using Error::Error;
};

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size);

// Little-endian-as-host payload builder. Files are
//   magic[8] | u32 version | u64 payload_size | payload | u64 fnv1a(payload)
class Writer {
 public:
  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void put(const T& value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_string(std::string_view s);
  void put_vec(const Vec& v);
  void put_mat(const Mat& m);

  void write_file(const std::filesystem::path& path, std::string_view magic,
                  std::uint32_t version) const;
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  // Validates magic, version and checksum.
  static Reader open(const std::filesystem::path& path,
                     std::string_view magic, std::uint32_t version);
  explicit Reader(std::vector<std::uint8_t> payload)
      : bytes_(std::move(payload)) {}

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string();
  Vec get_vec();
  Mat get_mat();
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const;
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace wr2l::io
