#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace modaldx {

// Layout of every MODALDX-* file:
//   u64 little-endian  header byte length H
//   H bytes            UTF-8 JSON header
//   payload            little-endian float64 arrays, back to back, in header "arrays" order
//
// The header always carries "format", "dtype" ("float64"), "endianness" ("little") and
// "arrays": [{"name", "shape", "offset"}], offsets counted in elements from payload start.

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> values;
};

struct Container {
  std::string format;
  nlohmann::json header;
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const std::string& format, nlohmann::json header,
                     const std::vector<NamedArray>& arrays);

/// Reads and checks the format tag; throws DataError on mismatch or corruption.
Container read_container(const std::filesystem::path& path, const std::string& expected_format);

}  // namespace modaldx
