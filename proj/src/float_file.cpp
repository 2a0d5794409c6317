// SPDX-License-Identifier: Apache-2.0
#include "float_file.hpp"

#include "latcert/errors.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

namespace latcert::detail {

namespace {

std::uint32_t to_little(std::uint32_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) |
           (bits >> 24);
  }
  return bits;
}

}  // namespace

std::vector<double> read_f32(const std::filesystem::path& file, std::size_t count) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  std::vector<std::uint32_t> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));
  if (static_cast<std::size_t>(in.gcount()) != raw.size() * sizeof(std::uint32_t)) {
    throw FormatError(file.string() + " holds fewer than " + std::to_string(count) + " floats");
  }
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = static_cast<double>(std::bit_cast<float>(to_little(raw[i])));
  }
  return out;
}

void write_f32(const std::filesystem::path& file, const std::vector<double>& values) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + file.string());
  std::vector<std::uint32_t> raw(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    raw[i] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));
  if (!out) throw FormatError("short write to " + file.string());
}

}  // namespace latcert::detail
