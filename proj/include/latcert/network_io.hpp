// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "latcert/network.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>

namespace latcert {

struct NetworkSaveOptions {
  /// Affine layers with at least this many weights go to a float32 sidecar
  /// file next to the JSON. Zero keeps everything inline.
  std::size_t sidecar_min_elements = 0;
};

/// Clamp layers are written as their relu decomposition; the sign-flip
/// affine uses the compact {"diagonal": [...]} form.
nlohmann::json network_to_json(const Network& net);

/// Accepts inline "weights", "diagonal", or "weights_file" affines plus the
/// literal "clamp01"/"clamp11" kinds. Relative weight files resolve against
/// base_dir. Relu decompositions of the clamps are fused back.
Network network_from_json(const nlohmann::json& doc,
                          const std::filesystem::path& base_dir = {});

Network load_network(const std::filesystem::path& path);
void save_network(const Network& net, const std::filesystem::path& path,
                  const NetworkSaveOptions& options = {});

/// Replaces relu, affine(-I, 1), relu with clamp01 and the four-layer
/// clamp11 pattern with clamp11.
Network fuse_clamps(const Network& net);

}  // namespace latcert
