// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "iclvc/tensor.hpp"
#include "json.hpp"

namespace iclvc {

// Versioned binary container of named float64 arrays plus JSON metadata.
// Every on-disk artifact (corpus utterances, codebooks, checkpoints,
// converted mels, prosody-embedding files) is one of these.
//
// Layout (little-endian):
//   "ICLVCARC" | u32 container_version | str kind | u32 schema_version |
//   str metadata_json | u32 count | count x (str name | u64 rows | u64 cols |
//   rows*cols f64 row-major)
// where str = u32 byte length followed by the bytes.
inline constexpr std::uint32_t kContainerVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Archive {
  std::string kind;
  std::uint32_t schema_version = 1;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> arrays;

  void put(const std::string& name, Matrix value);
  bool has(const std::string& name) const;
  const Matrix& get(const std::string& name) const;
  std::vector<std::string> names() const;
};

std::vector<char> encode_archive(const Archive& archive);
Archive decode_archive(const std::vector<char>& bytes);

// Writes to a sibling temp file and renames, so an interrupted write never
// clobbers the previous file.
void save_archive(const std::filesystem::path& path, const Archive& archive);

// Rejects wrong kind or schema version with an explicit
// "found X, expected Y" message.
Archive load_archive(const std::filesystem::path& path, const std::string& kind,
                     std::uint32_t schema_version);

Matrix column_from(const std::vector<double>& values);
Matrix column_from(const std::vector<int>& values);
std::vector<double> to_doubles(const Matrix& column);
std::vector<int> to_ints(const Matrix& column);

}  // namespace iclvc
