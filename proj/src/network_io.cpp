// SPDX-License-Identifier: Apache-2.0
#include "latcert/network_io.hpp"

#include "float_file.hpp"
#include "latcert/errors.hpp"

#include <fstream>

namespace latcert {

using nlohmann::json;

namespace {

json affine_dense(const Matrix& w, const Vector& b) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < w.cols(); ++c) row.push_back(w(r, c));
    rows.push_back(std::move(row));
  }
  return {{"kind", "affine"}, {"weights", std::move(rows)},
          {"bias", std::vector<double>(b.data(), b.data() + b.size())}};
}

json affine_diagonal(std::size_t n, double diag, double bias) {
  return {{"kind", "affine"},
          {"diagonal", std::vector<double>(n, diag)},
          {"bias", std::vector<double>(n, bias)}};
}

void append_layer_json(json& layers, const Layer& layer, std::size_t dim) {
  switch (layer.kind) {
    case LayerKind::affine:
      layers.push_back(affine_dense(layer.weights, layer.bias));
      break;
    case LayerKind::relu:
      layers.push_back({{"kind", "relu"}});
      break;
    case LayerKind::clamp01:
      layers.push_back({{"kind", "relu"}});
      layers.push_back(affine_diagonal(dim, -1.0, 1.0));
      layers.push_back({{"kind", "relu"}});
      break;
    case LayerKind::clamp11:
      layers.push_back({{"kind", "relu"}});
      layers.push_back(affine_diagonal(dim, -1.0, 2.0));
      layers.push_back({{"kind", "relu"}});
      layers.push_back(affine_diagonal(dim, 1.0, -1.0));
      break;
  }
}

Vector to_vector(const json& arr, const char* what) {
  if (!arr.is_array()) throw FormatError(std::string("network: '") + what + "' must be an array");
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

Matrix read_sidecar(const std::filesystem::path& file, std::size_t rows, std::size_t cols) {
  const std::vector<double> flat = detail::read_f32(file, rows * cols);
  Matrix w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      w(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = flat[r * cols + c];
    }
  }
  return w;
}

void write_sidecar(const std::filesystem::path& file, const Matrix& w) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(w.size()));
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
  }
  detail::write_f32(file, flat);
}

Layer layer_from_json(const json& spec, std::size_t in_dim, const std::filesystem::path& base) {
  if (!spec.contains("kind")) throw FormatError("network: layer without 'kind'");
  const std::string kind = spec.at("kind").get<std::string>();
  if (kind == "relu") return Layer::relu();
  if (kind == "clamp01") return Layer::clamp01();
  if (kind == "clamp11") return Layer::clamp11();
  if (kind != "affine") throw FormatError("network: unknown layer kind '" + kind + "'");

  Vector bias = to_vector(spec.at("bias"), "bias");
  Matrix w;
  if (spec.contains("weights")) {
    const json& rows = spec.at("weights");
    if (!rows.is_array()) throw FormatError("network: 'weights' must be an array of rows");
    std::size_t ncols = rows.empty() ? in_dim : rows.front().size();
    w.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ncols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != ncols) throw ShapeError("network: ragged weight matrix");
      for (std::size_t c = 0; c < ncols; ++c) {
        w(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
      }
    }
  } else if (spec.contains("diagonal")) {
    w = to_vector(spec.at("diagonal"), "diagonal").asDiagonal();
  } else if (spec.contains("weights_file")) {
    std::filesystem::path file = spec.at("weights_file").get<std::string>();
    if (file.is_relative()) file = base / file;
    w = read_sidecar(file, spec.at("rows").get<std::size_t>(), spec.at("cols").get<std::size_t>());
  } else {
    throw FormatError("network: affine layer needs 'weights', 'diagonal' or 'weights_file'");
  }
  if (!w.allFinite() || !bias.allFinite()) throw DomainError("network: non-finite parameters");
  return Layer::affine(std::move(w), std::move(bias));
}

bool is_scaled_identity(const Layer& layer, double diag, double bias) {
  if (layer.kind != LayerKind::affine || layer.weights.rows() != layer.weights.cols()) return false;
  const Eigen::Index n = layer.weights.rows();
  for (Eigen::Index r = 0; r < n; ++r) {
    if (layer.bias[r] != bias) return false;
    for (Eigen::Index c = 0; c < n; ++c) {
      if (layer.weights(r, c) != (r == c ? diag : 0.0)) return false;
    }
  }
  return true;
}

}  // namespace

json network_to_json(const Network& net) {
  json layers = json::array();
  for (std::size_t k = 0; k < net.size(); ++k) {
    append_layer_json(layers, net.layers()[k], net.dim_before(k));
  }
  return {{"name", net.name()},
          {"input_dim", net.input_dim()},
          {"output_dim", net.output_dim()},
          {"layers", std::move(layers)}};
}

Network fuse_clamps(const Network& net) {
  const auto& in = net.layers();
  std::vector<Layer> out;
  for (std::size_t k = 0; k < in.size();) {
    auto is_relu = [&](std::size_t i) { return i < in.size() && in[i].kind == LayerKind::relu; };
    if (is_relu(k) && is_relu(k + 2)) {
      if (k + 3 < in.size() && is_scaled_identity(in[k + 1], -1.0, 2.0) &&
          is_scaled_identity(in[k + 3], 1.0, -1.0)) {
        out.push_back(Layer::clamp11());
        k += 4;
        continue;
      }
      if (is_scaled_identity(in[k + 1], -1.0, 1.0)) {
        out.push_back(Layer::clamp01());
        k += 3;
        continue;
      }
    }
    out.push_back(in[k]);
    ++k;
  }
  return Network(net.name(), net.input_dim(), std::move(out));
}

Network network_from_json(const json& doc, const std::filesystem::path& base_dir) {
  try {
    const std::size_t input_dim = doc.at("input_dim").get<std::size_t>();
    std::vector<Layer> layers;
    std::size_t dim = input_dim;
    for (const json& spec : doc.at("layers")) {
      layers.push_back(layer_from_json(spec, dim, base_dir));
      if (layers.back().kind == LayerKind::affine) {
        dim = static_cast<std::size_t>(layers.back().weights.rows());
      }
    }
    Network net(doc.value("name", std::string("network")), input_dim, std::move(layers));
    if (doc.contains("output_dim") && doc.at("output_dim").get<std::size_t>() != net.output_dim()) {
      throw ShapeError("network: declared output_dim " + doc.at("output_dim").dump() +
                       " does not match layers (" + std::to_string(net.output_dim()) + ")");
    }
    return fuse_clamps(net);
  } catch (const json::exception& e) {
    throw FormatError(std::string("network: ") + e.what());
  }
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open network file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw FormatError("network file " + path.string() + ": " + e.what());
  }
  return network_from_json(doc, path.parent_path());
}

void save_network(const Network& net, const std::filesystem::path& path,
                  const NetworkSaveOptions& options) {
  json doc = network_to_json(net);
  if (options.sidecar_min_elements > 0) {
    // Dense affines are emitted 1:1 for affine layers, so walk both lists.
    std::size_t json_index = 0;
    for (std::size_t k = 0; k < net.size(); ++k) {
      const Layer& layer = net.layers()[k];
      if (layer.kind == LayerKind::affine &&
          static_cast<std::size_t>(layer.weights.size()) >= options.sidecar_min_elements) {
        std::string file = path.stem().string() + ".layer" + std::to_string(k) + ".f32";
        write_sidecar(path.parent_path() / file, layer.weights);
        json& spec = doc["layers"][json_index];
        spec.erase("weights");
        spec["weights_file"] = file;
        spec["rows"] = layer.weights.rows();
        spec["cols"] = layer.weights.cols();
      }
      json_index += layer.kind == LayerKind::clamp01   ? 3
                    : layer.kind == LayerKind::clamp11 ? 4
                                                       : 1;
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write network file " + path.string());
  out << doc.dump() << '\n';
}

}  // namespace latcert
