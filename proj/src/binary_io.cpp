#include "wr2l/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace wr2l::io {

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Writer::put_string(std::string_view s) {
  put<std::uint64_t>(s.size());
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void Writer::put_vec(const Vec& v) {
  put<std::uint64_t>(static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) put<double>(v[i]);
}

void Writer::put_mat(const Mat& m) {
  put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) put<double>(m(r, c));
  }
}

void Writer::write_file(const std::filesystem::path& path,
                        std::string_view magic, std::uint32_t version) const {
  if (magic.size() != 8) throw InvalidArgument("magic must be 8 bytes");
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  const std::uint64_t size = bytes_.size();
  const std::uint64_t sum = fnv1a(bytes_.data(), bytes_.size());
  out.write(magic.data(), 8);
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&size), sizeof(size));
  out.write(reinterpret_cast<const char*>(bytes_.data()),
            static_cast<std::streamsize>(bytes_.size()));
  out.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

Reader Reader::open(const std::filesystem::path& path, std::string_view magic,
                    std::uint32_t version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  constexpr std::size_t header = 8 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (raw.size() < header + sizeof(std::uint64_t)) {
    throw FormatError("'" + path.string() + "' is truncated");
  }
  if (std::string_view(reinterpret_cast<const char*>(raw.data()), 8) != magic) {
    throw FormatError("'" + path.string() + "' has the wrong file type");
  }
  std::uint32_t file_version;
  std::memcpy(&file_version, raw.data() + 8, sizeof(file_version));
  if (file_version != version) {
    throw FormatError("'" + path.string() + "' has unsupported version " +
                      std::to_string(file_version));
  }
  std::uint64_t size;
  std::memcpy(&size, raw.data() + 12, sizeof(size));
  if (raw.size() != header + size + sizeof(std::uint64_t)) {
    throw FormatError("'" + path.string() + "' has a bad payload size");
  }
  std::uint64_t sum;
  std::memcpy(&sum, raw.data() + header + size, sizeof(sum));
  if (fnv1a(raw.data() + header, size) != sum) {
    throw FormatError("checksum mismatch in '" + path.string() + "'");
  }
  return Reader(std::vector<std::uint8_t>(
      raw.begin() + header, raw.begin() + static_cast<long>(header + size)));
}

void Reader::need(std::size_t n) const {
  if (pos_ + n > bytes_.size()) throw FormatError("unexpected end of payload");
}

std::string Reader::get_string() {
  const auto n = get<std::uint64_t>();
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

Vec Reader::get_vec() {
  const auto n = get<std::uint64_t>();
  need(n * sizeof(double));
  Vec v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = get<double>();
  return v;
}

Mat Reader::get_mat() {
  const auto rows = get<std::uint64_t>();
  const auto cols = get<std::uint64_t>();
  need(rows * cols * sizeof(double));
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = get<double>();
  }
  return m;
}

}  // namespace wr2l::io
