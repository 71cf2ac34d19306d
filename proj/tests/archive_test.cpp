// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "iclvc/archive.hpp"
#include "test_util.hpp"

using namespace iclvc;

namespace {

Archive sample() {
  Rng rng(1);
  Archive a;
  a.kind = "thing";
  a.schema_version = 3;
  a.meta = {{"label", "x"}, {"n", 4}};
  a.put("alpha", standard_normal(3, 2, rng));
  a.put("beta", Matrix::Zero(0, 5));
  a.put("gamma", column_from(std::vector<int>{1, -2, 7}));
  return a;
}

}  // namespace

TEST_CASE("encode and decode are inverse") {
  const Archive a = sample();
  const auto bytes = encode_archive(a);
  CHECK(std::memcmp(bytes.data(), "ICLVCARC", 8) == 0);
  const Archive b = decode_archive(bytes);
  CHECK(b.kind == "thing");
  CHECK(b.schema_version == 3);
  CHECK(b.meta == a.meta);
  CHECK(b.names() == std::vector<std::string>{"alpha", "beta", "gamma"});
  CHECK(b.get("alpha") == a.get("alpha"));
  CHECK(b.get("beta").cols() == 5);
  CHECK(to_ints(b.get("gamma")) == std::vector<int>{1, -2, 7});
  CHECK(encode_archive(b) == bytes);
}

TEST_CASE("malformed bytes are rejected") {
  auto bytes = encode_archive(sample());
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_archive(bytes), FormatError);
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_archive(bytes), FormatError);
  }
  SUBCASE("trailing garbage") {
    bytes.push_back('\0');
    CHECK_THROWS_AS(decode_archive(bytes), FormatError);
  }
  SUBCASE("container version") {
    bytes[8] = static_cast<char>(kContainerVersion + 1);
    CHECK_THROWS_WITH_AS(decode_archive(bytes), doctest::Contains("found 2, expected 1"), FormatError);
  }
}

TEST_CASE("files carry kind and schema checks") {
  const auto dir = iclvc::testing::temp_dir("archive");
  save_archive(dir / "a.bin", sample());
  CHECK_FALSE(std::filesystem::exists(dir / "a.bin.tmp"));
  CHECK(load_archive(dir / "a.bin", "thing", 3).get("alpha").rows() == 3);
  CHECK_THROWS_WITH_AS(load_archive(dir / "a.bin", "other", 3), doctest::Contains("kind mismatch"), FormatError);
  CHECK_THROWS_WITH_AS(load_archive(dir / "a.bin", "thing", 2), doctest::Contains("found 3, expected 2"), FormatError);
  CHECK_THROWS(load_archive(dir / "missing.bin", "thing", 3));
  CHECK_THROWS_AS(sample().get("delta"), FormatError);

  // A failed overwrite leaves the previous file readable.
  std::filesystem::create_directory(dir / "a.bin.tmp");
  CHECK_THROWS(save_archive(dir / "a.bin", sample()));
  CHECK(load_archive(dir / "a.bin", "thing", 3).names().size() == 3);
  std::filesystem::remove_all(dir);
}

TEST_CASE("column helpers") {
  const std::vector<double> v = {0.5, -1.25};
  const Matrix c = column_from(v);
  CHECK(c.rows() == 2);
  CHECK(c.cols() == 1);
  CHECK(to_doubles(c) == v);
}
