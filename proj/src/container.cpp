#include "modaldx/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "modaldx/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace modaldx {

namespace {

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      bits = to_little(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
}

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

}  // namespace

const NamedArray& Container::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw DataError(format + ": missing array '" + name + "'");
}

void write_container(const fs::path& path, const std::string& format, json header, const std::vector<NamedArray>& arrays) {
  header["format"] = format;
  header["dtype"] = "float64";
  header["endianness"] = "little";
  json manifest = json::array();
  std::int64_t offset = 0;
  for (const auto& a : arrays) {
    if (element_count(a.shape) != static_cast<std::int64_t>(a.values.size()))
      throw ConfigError("array '" + a.name + "' shape does not match its size");
    manifest.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += static_cast<std::int64_t>(a.values.size());
  }
  header["arrays"] = manifest;

  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::uint64_t len = to_little(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : arrays) write_doubles(out, a.values);
  if (!out) throw DataError("cannot write " + path.string());
}

Container read_container(const fs::path& path, const std::string& expected_format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  len = to_little(len);
  if (!in || len == 0 || len > (1u << 28)) throw DataError("corrupt container header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated container header in " + path.string());

  Container c;
  try {
    c.header = json::parse(text);
    c.format = c.header.at("format").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError("corrupt container header in " + path.string() + ": " + e.what());
  }
  if (c.format != expected_format)
    throw DataError(path.string() + ": expected format " + expected_format + ", found " + c.format);
  if (c.header.value("dtype", "") != "float64" || c.header.value("endianness", "") != "little")
    throw DataError(path.string() + ": unsupported dtype or endianness");

  for (const auto& entry : c.header.at("arrays")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const std::int64_t count = element_count(a.shape);
    if (count < 0) throw DataError("negative array size in " + path.string());
    a.values.resize(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in && count > 0) throw DataError("truncated payload in " + path.string());
    if constexpr (std::endian::native == std::endian::big) {
      for (double& v : a.values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        bits = to_little(bits);
        std::memcpy(&v, &bits, sizeof bits);
      }
    }
    c.arrays.push_back(std::move(a));
  }
  return c;
}

}  // namespace modaldx
