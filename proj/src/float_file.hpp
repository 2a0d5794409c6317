// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace latcert::detail {

/// Little-endian float32 files, independent of host byte order.
std::vector<double> read_f32(const std::filesystem::path& file, std::size_t count);
void write_f32(const std::filesystem::path& file, const std::vector<double>& values);

}  // namespace latcert::detail
