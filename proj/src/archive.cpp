// SPDX-License-Identifier: Apache-2.0
#include "iclvc/archive.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace iclvc {

static_assert(std::endian::native == std::endian::little,
              "archive encoding assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'I', 'C', 'L', 'V', 'C', 'A', 'R', 'C'};

template <typename T>
void write_pod(std::vector<char>& out, T value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

void write_str(std::vector<char>& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("archive truncated");
  }

  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Archive::put(const std::string& name, Matrix value) {
  for (auto& [n, m] : arrays) {
    if (n == name) {
      m = std::move(value);
      return;
    }
  }
  arrays.emplace_back(name, std::move(value));
}

bool Archive::has(const std::string& name) const {
  return std::any_of(arrays.begin(), arrays.end(),
                     [&](const auto& a) { return a.first == name; });
}

const Matrix& Archive::get(const std::string& name) const {
  for (const auto& [n, m] : arrays) {
    if (n == name) return m;
  }
  throw FormatError("archive of kind '" + kind + "' has no array '" + name + "'");
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& a : arrays) out.push_back(a.first);
  return out;
}

std::vector<char> encode_archive(const Archive& archive) {
  std::vector<char> out(std::begin(kMagic), std::end(kMagic));
  write_pod<std::uint32_t>(out, kContainerVersion);
  write_str(out, archive.kind);
  write_pod<std::uint32_t>(out, archive.schema_version);
  write_str(out, archive.meta.dump());
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(archive.arrays.size()));
  for (const auto& [name, m] : archive.arrays) {
    write_str(out, name);
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    const auto* p = reinterpret_cast<const char*>(m.data());
    out.insert(out.end(), p, p + m.size() * sizeof(double));
  }
  return out;
}

Archive decode_archive(const std::vector<char>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not an iclvc archive (bad magic)");
  }
  std::vector<char> body(bytes.begin() + sizeof(kMagic), bytes.end());
  Reader in(body);
  const auto container = in.pod<std::uint32_t>();
  if (container != kContainerVersion) {
    throw FormatError("container version mismatch: found " + std::to_string(container) +
                      ", expected " + std::to_string(kContainerVersion));
  }
  Archive a;
  a.kind = in.str();
  a.schema_version = in.pod<std::uint32_t>();
  a.meta = nlohmann::json::parse(in.str());
  const auto count = in.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.str();
    const auto rows = in.pod<std::uint64_t>();
    const auto cols = in.pod<std::uint64_t>();
    if (rows > (1u << 28) || cols > (1u << 28)) throw FormatError("implausible array shape");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.raw(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    a.arrays.emplace_back(std::move(name), std::move(m));
  }
  if (!in.done()) throw FormatError("trailing bytes after archive");
  return a;
}

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_archive(archive);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::filesystem::path& path, const std::string& kind,
                     std::uint32_t schema_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Archive a = decode_archive(bytes);
  if (a.kind != kind) {
    throw FormatError(path.string() + ": kind mismatch: found '" + a.kind + "', expected '" +
                      kind + "'");
  }
  if (a.schema_version != schema_version) {
    throw FormatError(path.string() + ": " + kind + " version mismatch: found " +
                      std::to_string(a.schema_version) + ", expected " +
                      std::to_string(schema_version));
  }
  return a;
}

Matrix column_from(const std::vector<double>& values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = values[i];
  return m;
}

Matrix column_from(const std::vector<int>& values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = values[i];
  return m;
}

std::vector<double> to_doubles(const Matrix& column) {
  return std::vector<double>(column.data(), column.data() + column.size());
}

std::vector<int> to_ints(const Matrix& column) {
  std::vector<int> out(static_cast<std::size_t>(column.size()));
  for (Eigen::Index i = 0; i < column.size(); ++i) {
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(column.data()[i]));
  }
  return out;
}

}  // namespace iclvc
