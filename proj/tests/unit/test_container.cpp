#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "fixtures.hpp"
#include "modaldx/container.hpp"

using namespace modaldx;

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint64_t le_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double le_f64(const unsigned char* b) {
  const std::uint64_t bits = le_u64(b);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::vector<NamedArray> sample_arrays() {
  return {{"a", {2, 3}, {1.0, -2.5, 3.25, 0.0, 1e-300, -1e300}},
          {"empty", {0}, {}},
          {"b", {3}, {std::numeric_limits<double>::infinity(), -0.0, 42.0}}};
}

}  // namespace

TEST_CASE("container round trip") {
  fixtures::TempDir dir;
  write_container(dir / "c.bin", "TEST-1", {{"note", "hello"}, {"k", 7}}, sample_arrays());
  const Container c = read_container(dir / "c.bin", "TEST-1");
  CHECK(c.format == "TEST-1");
  CHECK(c.header.at("note") == "hello");
  CHECK(c.header.at("k") == 7);
  REQUIRE(c.arrays.size() == 3);
  const auto want = sample_arrays();
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(c.arrays[i].name == want[i].name);
    CHECK(c.arrays[i].shape == want[i].shape);
    REQUIRE(c.arrays[i].values.size() == want[i].values.size());
    for (std::size_t j = 0; j < want[i].values.size(); ++j)
      CHECK(std::memcmp(&c.arrays[i].values[j], &want[i].values[j], sizeof(double)) == 0);
  }
  CHECK(c.array("b").values[2] == 42.0);
  CHECK_THROWS_AS(c.array("nope"), DataError);
}

TEST_CASE("byte layout: u64 header length, JSON header, little-endian float64 payload") {
  fixtures::TempDir dir;
  write_container(dir / "c.bin", "TEST-1", nlohmann::json::object(), sample_arrays());
  const auto bytes = read_bytes(dir / "c.bin");
  REQUIRE(bytes.size() > 8);
  const std::uint64_t h = le_u64(bytes.data());
  REQUIRE(8 + h <= bytes.size());
  const auto header = nlohmann::json::parse(std::string(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(h)));
  CHECK(header.at("format") == "TEST-1");
  CHECK(header.at("dtype") == "float64");
  CHECK(header.at("endianness") == "little");
  const auto& arrays = header.at("arrays");
  REQUIRE(arrays.size() == 3);
  CHECK(arrays[0].at("offset") == 0);
  CHECK(arrays[1].at("offset") == 6);
  CHECK(arrays[2].at("offset") == 6);
  CHECK(bytes.size() == 8 + h + 9 * 8);
  const unsigned char* payload = bytes.data() + 8 + h;
  CHECK(le_f64(payload + 8 * 1) == -2.5);
  CHECK(le_f64(payload + 8 * 2) == 3.25);
  CHECK(le_f64(payload + 8 * 8) == 42.0);
}

TEST_CASE("container errors") {
  fixtures::TempDir dir;
  write_container(dir / "c.bin", "TEST-1", nlohmann::json::object(), sample_arrays());
  const auto bytes = read_bytes(dir / "c.bin");

  CHECK_THROWS_AS(read_container(dir / "missing.bin", "TEST-1"), DataError);
  CHECK_THROWS_AS(read_container(dir / "c.bin", "OTHER-1"), DataError);

  write_bytes(dir / "short.bin", {bytes.begin(), bytes.begin() + 4});
  CHECK_THROWS_AS(read_container(dir / "short.bin", "TEST-1"), DataError);

  write_bytes(dir / "cut_header.bin", {bytes.begin(), bytes.begin() + 20});
  CHECK_THROWS_AS(read_container(dir / "cut_header.bin", "TEST-1"), DataError);

  write_bytes(dir / "cut_payload.bin", {bytes.begin(), bytes.end() - 8});
  CHECK_THROWS_AS(read_container(dir / "cut_payload.bin", "TEST-1"), DataError);

  auto garbled = bytes;
  garbled[8] = '#';
  write_bytes(dir / "garbled.bin", garbled);
  CHECK_THROWS_AS(read_container(dir / "garbled.bin", "TEST-1"), DataError);

  auto huge = bytes;
  huge[7] = 0x7f;
  write_bytes(dir / "huge.bin", huge);
  CHECK_THROWS_AS(read_container(dir / "huge.bin", "TEST-1"), DataError);

  CHECK_THROWS_AS(write_container(dir / "bad.bin", "TEST-1", nlohmann::json::object(), {{"x", {2, 2}, {1.0}}}),
                  ConfigError);
  CHECK_THROWS_AS(write_container(dir / "no_such_dir" / "x.bin", "TEST-1", nlohmann::json::object(), {}), DataError);
}
