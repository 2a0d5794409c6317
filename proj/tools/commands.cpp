// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include "latcert/certify.hpp"
#include "latcert/directions.hpp"
#include "latcert/errors.hpp"
#include "latcert/metrics.hpp"
#include "latcert/network_io.hpp"
#include "latcert/regulate.hpp"
#include "latcert/synthetic.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>
#include <vector>

namespace latcert::cli {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig load_run_config(const std::string& config_path) {
  RunConfig cfg;
  if (config_path.empty()) return cfg;
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open config " + config_path);
  try {
    cfg.doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + config_path + " is not valid JSON: " + e.what());
  }
  if (!cfg.doc.is_object()) throw ConfigError("config " + config_path + " must be a JSON object");
  cfg.base_dir = fs::path(config_path).parent_path();
  return cfg;
}

std::uint64_t config_hash(const json& doc, std::optional<std::uint64_t> seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  feed(doc.dump());
  feed(seed ? std::to_string(*seed) : std::string("-"));
  return h;
}

namespace {

std::optional<std::uint64_t> effective_seed(const RunConfig& cfg) {
  if (cfg.seed) return cfg.seed;
  if (cfg.doc.contains("seed")) return cfg.doc.at("seed").get<std::uint64_t>();
  return std::nullopt;
}

std::uint64_t required_seed(const RunConfig& cfg) {
  const auto seed = effective_seed(cfg);
  if (!seed) throw ConfigError("this subcommand is stochastic: pass --seed or set \"seed\" in the config");
  return *seed;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

json provenance(const RunConfig& cfg) {
  const auto seed = effective_seed(cfg);
  return {{"config_hash", hex(config_hash(cfg.doc, seed))},
          {"seed", seed ? json(*seed) : json(nullptr)},
          {"version", kVersion}};
}

namespace {

fs::path input_path(const RunConfig& cfg, const std::string& key) {
  if (!cfg.doc.contains(key)) throw ConfigError("config is missing \"" + key + "\"");
  fs::path p = cfg.doc.at(key).get<std::string>();
  if (p.is_relative()) p = cfg.base_dir / p;
  if (!fs::exists(p)) throw ConfigError("\"" + key + "\" refers to a missing file: " + p.string());
  return p;
}

std::optional<fs::path> optional_input(const RunConfig& cfg, const std::string& key) {
  if (!cfg.doc.contains(key) || cfg.doc.at(key).is_null()) return std::nullopt;
  return input_path(cfg, key);
}

json section(const RunConfig& cfg, const std::string& key) {
  if (!cfg.doc.contains(key)) return json::object();
  const json& s = cfg.doc.at(key);
  if (!s.is_object()) throw ConfigError("\"" + key + "\" must be an object");
  return s;
}

void prepare_out(const RunConfig& cfg) { fs::create_directories(cfg.out); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

void write_csv(const fs::path& path, const RunConfig& cfg, const std::string& body) {
  write_text(path, "# " + provenance(cfg).dump() + "\n" + body);
}

/// Adds the provenance block to a JSON file written by a library call.
void stamp(const fs::path& path, const RunConfig& cfg) {
  std::ifstream in(path);
  json doc = json::parse(in);
  in.close();
  doc["provenance"] = provenance(cfg);
  write_json(path, doc);
}

Vector to_vector(const json& arr) {
  auto v = arr.get<std::vector<double>>();
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json from_vector(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(10);
  s << x;
  return s.str();
}

/// Runs body(i) for i in [0, n) on up to `jobs` threads. Results must be
/// written to per-index slots so the output does not depend on scheduling.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& body) {
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

Canvas canvas_from(const json& doc) {
  Canvas c;
  c.height = doc.value("height", c.height);
  c.width = doc.value("width", c.width);
  c.side = doc.value("side", c.side);
  c.validate();
  return c;
}

LatentCode code_from(const json& factors) {
  std::vector<FactorRange> ranges;
  for (const json& f : factors) {
    ranges.push_back({factor_from_string(f.at("factor").get<std::string>()), f.at("lo").get<double>(),
                      f.at("hi").get<double>()});
  }
  return LatentCode(std::move(ranges));
}

/// Canvas and latent code from a dataset manifest or inline entries.
std::pair<Canvas, LatentCode> geometry_of(const RunConfig& cfg) {
  if (auto manifest = optional_input(cfg, "dataset")) {
    std::ifstream in(*manifest);
    const json doc = json::parse(in);
    return {canvas_from(doc), code_from(doc.at("factors"))};
  }
  const Canvas canvas = canvas_from(section(cfg, "canvas"));
  return {canvas, cfg.doc.contains("factors") ? code_from(cfg.doc.at("factors")) : LatentCode::standard()};
}

}  // namespace

int cmd_gen_synthetic(const RunConfig& cfg) {
  const std::uint64_t seed = required_seed(cfg);
  const auto n = cfg.doc.value("n", std::size_t{1000});
  const Canvas canvas = canvas_from(section(cfg, "canvas"));
  const LatentCode code = cfg.doc.contains("factors") ? code_from(cfg.doc.at("factors")) : LatentCode::standard();
  const Dataset ds = gen_dataset(n, code, seed, canvas);
  prepare_out(cfg);
  save_dataset(ds, (cfg.out / "dataset").string());
  stamp(cfg.out / "dataset.json", cfg);
  std::cout << "wrote " << ds.size() << " images to " << (cfg.out / "dataset.json").string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  const Dataset ds = load_dataset(input_path(cfg, "dataset").string());
  TrainConfig tc = train_config_from_json(section(cfg, "train"));
  if (cfg.seed) {
    tc.seed = *cfg.seed;
  } else if (!section(cfg, "train").contains("seed")) {
    tc.seed = required_seed(cfg);
  }
  std::vector<std::size_t> widths{ds.factors.size()};
  for (const json& h : cfg.doc.value("hidden", json::array({128, 256}))) widths.push_back(h.get<std::size_t>());
  widths.push_back(ds.canvas.pixels());
  const auto init_seed = cfg.doc.value("init_seed", tc.seed);
  const Network g0 = make_mlp("generator", widths, init_seed, LayerKind::clamp01, 0.5);

  const TrainingSet data = ds.training_set();
  const TrainResult result = regulate_train(g0, data, tc);
  prepare_out(cfg);
  save_network(result.network, cfg.out / "generator.json", NetworkSaveOptions{4096});
  stamp(cfg.out / "generator.json", cfg);
  write_csv(cfg.out / "history.csv", cfg, loss_history_csv(result.history));

  const json est = section(cfg, "estimate");
  const ContinuityEstimate c =
      estimate_C(result.network, tc.prior, est.value("samples", std::size_t{200}), tc.seed + 1,
                 est.value("steps", std::size_t{64}));
  json summary = {{"reconstruction", reconstruction_loss(result.network, data)},
                  {"continuity", to_json(c)},
                  {"train", to_json(tc)},
                  {"provenance", provenance(cfg)}};
  write_json(cfg.out / "summary.json", summary);
  std::cout << "L1 " << summary["reconstruction"].get<double>() << "  C " << c.C << "\n";
  return 0;
}

int cmd_directions(const RunConfig& cfg) {
  const Network g = load_network(input_path(cfg, "generator"));
  const Vector z = cfg.doc.contains("z") ? to_vector(cfg.doc.at("z"))
                                         : Vector::Zero(static_cast<Eigen::Index>(g.input_dim()));
  const RankPolicy policy{cfg.doc.value("rank_threshold", RankPolicy{}.relative_threshold)};
  const double delta_max = cfg.doc.value("delta_max", 1.0);
  json specs = json::array();
  prepare_out(cfg);
  if (cfg.doc.contains("mask")) {
    const RegionMask mask{cfg.doc.at("mask").get<std::vector<std::size_t>>()};
    for (const MutationSpec& s : local_directions(g, z, mask, policy, delta_max)) specs.push_back(to_json(s));
  } else {
    const DirectionBasis basis = mutation_directions(g, z, policy);
    json b = to_json(basis);
    b["z"] = from_vector(z);
    b["provenance"] = provenance(cfg);
    write_json(cfg.out / "basis.json", b);
    for (const MutationSpec& s : global_specs(basis, delta_max)) specs.push_back(to_json(s));
  }
  write_json(cfg.out / "specs.json", {{"specs", specs}, {"provenance", provenance(cfg)}});
  std::cout << specs.size() << " mutation directions\n";
  return 0;
}

namespace {

std::vector<MutationSpec> load_specs(const fs::path& path) {
  std::ifstream in(path);
  const json doc = json::parse(in);
  const json& arr = doc.is_array() ? doc : doc.at("specs");
  std::vector<MutationSpec> specs;
  for (const json& s : arr) specs.push_back(spec_from_json(s));
  return specs;
}

std::vector<Vector> load_points(const RunConfig& cfg, std::size_t dim) {
  std::vector<Vector> points;
  if (cfg.doc.contains("points")) {
    for (const json& p : cfg.doc.at("points")) points.push_back(to_vector(p));
  } else if (auto manifest = optional_input(cfg, "dataset")) {
    const TrainingSet data = load_dataset(manifest->string()).training_set();
    const auto limit = std::min<std::size_t>(cfg.doc.value("limit", data.size()), data.size());
    for (std::size_t i = 0; i < limit; ++i) points.push_back(data.latents.col(static_cast<Eigen::Index>(i)));
  } else {
    throw ConfigError("config needs \"points\" or \"dataset\"");
  }
  for (const Vector& p : points) {
    if (static_cast<std::size_t>(p.size()) != dim) {
      throw ConfigError("latent points must have dimension " + std::to_string(dim));
    }
  }
  return points;
}

std::size_t final_pieces(const PropagationStats& s) {
  return s.pieces_per_layer.empty() ? 0 : s.pieces_per_layer.back();
}

}  // namespace

int cmd_certify(const RunConfig& cfg) {
  const Network f = load_network(input_path(cfg, "classifier"));
  const auto gpath = optional_input(cfg, "generator");
  const Network net = gpath ? compose(load_network(*gpath), f) : f;
  const std::vector<MutationSpec> specs = load_specs(input_path(cfg, "specs"));
  const std::vector<Vector> points = load_points(cfg, net.input_dim());
  const std::string mode = cfg.doc.value("mode", std::string("complete"));
  if (mode != "complete" && mode != "incomplete" && mode != "quant") {
    throw ConfigError("mode must be complete, incomplete, or quant");
  }
  const double threshold = cfg.doc.value("threshold", 0.5);
  const auto splits = cfg.doc.value("splits", std::size_t{1});

  struct Item {
    std::optional<CertificateReport> report;
    std::string error;
  };
  const std::size_t n = points.size() * specs.size();
  std::vector<Item> items(n);
  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    const Vector& z = points[i / specs.size()];
    const MutationSpec& spec = specs[i % specs.size()];
    try {
      if (mode == "complete") {
        items[i].report = certify_complete(net, spec, z);
      } else if (mode == "incomplete") {
        items[i].report = certify_incomplete(net, spec, z, splits);
      } else {
        items[i].report = certify_quant(net, spec, z, threshold);
      }
    } catch (const Error& e) {
      items[i].error = e.what();
    }
  });

  bool falsified = false, failed = false;
  json out = json::array();
  std::string csv = std::string("input,label,verdict,max_tolerance,lower,upper,pieces") +
                    (cfg.timing ? ",ms\n" : "\n");
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t input = i / specs.size();
    const MutationSpec& spec = specs[i % specs.size()];
    const std::string label = spec.label.empty() ? "direction-" + std::to_string(i % specs.size()) : spec.label;
    json entry = {{"input", input}, {"label", label}};
    if (!items[i].report) {
      failed = true;
      entry["error"] = items[i].error;
      csv += std::to_string(input) + "," + label + ",error,,,,\n";
      out.push_back(entry);
      continue;
    }
    const CertificateReport& r = *items[i].report;
    falsified = falsified || r.verdict == Verdict::falsified;
    json report = to_json(r);
    if (!cfg.timing) report["instrumentation"].erase("wall_ms");
    entry["report"] = report;
    out.push_back(entry);
    csv += std::to_string(input) + "," + label + "," + to_string(r.verdict) + "," + fmt(r.max_tolerance) + ",";
    csv += r.quant ? fmt(r.quant->lower) + "," + fmt(r.quant->upper) : std::string(",");
    csv += "," + std::to_string(final_pieces(r.stats));
    if (cfg.timing) csv += "," + fmt(r.stats.wall_ms);
    csv += "\n";
  }
  prepare_out(cfg);
  write_json(cfg.out / "certificates.json", {{"mode", mode}, {"items", out}, {"provenance", provenance(cfg)}});
  write_csv(cfg.out / "certificates.csv", cfg, csv);
  std::cout << n << " certificates (" << mode << ")" << (falsified ? ", some falsified" : "") << "\n";
  if (failed) return 3;
  return falsified ? 1 : 0;
}

int cmd_protocols(const RunConfig& cfg) {
  const std::uint64_t seed = required_seed(cfg);
  const Network g = load_network(input_path(cfg, "generator"));
  const auto [canvas, code] = geometry_of(cfg);
  if (g.input_dim() != code.dim() || g.output_dim() != canvas.pixels()) {
    throw ConfigError("generator shape does not match the latent code and canvas");
  }
  prepare_out(cfg);

  const json ind = section(cfg, "independence");
  IndependenceConfig ic;
  ic.delta_max = ind.value("delta_max", ic.delta_max);
  ic.steps = ind.value("steps", ic.steps);
  ic.threshold = ind.value("threshold", ic.threshold);
  ic.reference = ind.contains("reference") ? to_vector(ind.at("reference"))
                                           : Vector::Zero(static_cast<Eigen::Index>(code.dim()));
  const RankPolicy policy{ind.value("rank_threshold", RankPolicy{}.relative_threshold)};
  std::vector<std::optional<Property>> labels;
  for (const json& l : ind.value("labels", json::array())) {
    labels.push_back(l.is_null() ? std::nullopt : std::optional(property_from_string(l.get<std::string>())));
  }
  const DirectionBasis basis = mutation_directions(g, ic.reference, policy);
  const IndependenceReport rep = check_independence(g, basis, canvas, ic, labels);
  write_csv(cfg.out / "independence.csv", cfg, independence_csv(rep));
  json sweeps = json::array();
  for (const DirectionSweep& s : rep.sweeps) {
    sweeps.push_back({{"direction", from_vector(s.direction)},
                      {"label", s.label ? json(to_string(*s.label)) : json(nullptr)},
                      {"max_change", s.max_change},
                      {"correlation", s.correlation}});
  }
  write_json(cfg.out / "independence.json",
             {{"sweeps", sweeps}, {"all_pass", rep.all_pass()}, {"provenance", provenance(cfg)}});

  const json con = section(cfg, "continuity");
  ContinuityConfig cc;
  cc.pairs = con.value("pairs", cc.pairs);
  cc.points_per_pair = con.value("points_per_pair", cc.points_per_pair);
  cc.threshold = con.value("threshold", cc.threshold);
  cc.seed = seed;
  const json scales = con.value("deltas", json{{"delta1", {10.0, 30.0, 0.5, 10.0}}, {"delta2", {4.0, 10.0, 0.2, 4.0}}});
  std::vector<std::pair<std::string, ContinuityResult>> rows;
  for (const auto& [name, values] : scales.items()) {
    cc.delta = values.get<std::array<double, 4>>();
    rows.emplace_back(name, check_continuity(g, code, canvas, cc));
  }
  write_csv(cfg.out / "continuity.csv", cfg, continuity_csv(rows));
  std::cout << "independence " << (rep.all_pass() ? "pass" : "fail");
  for (const auto& [name, r] : rows) std::cout << ", continuity " << name << " " << r.overall();
  std::cout << "\n";
  return 0;
}

int cmd_report(const RunConfig& cfg) {
  const Network g = load_network(input_path(cfg, "generator"));
  if (!cfg.doc.contains("segments")) throw ConfigError("config is missing \"segments\"");
  std::vector<Segment> segments;
  for (const json& s : cfg.doc.at("segments")) {
    segments.push_back({to_vector(s.at("start")), to_vector(s.at("end"))});
    if (static_cast<std::size_t>(segments.back().start.size()) != g.input_dim() ||
        segments.back().end.size() != segments.back().start.size()) {
      throw ConfigError("segment endpoints must match the generator input");
    }
  }
  struct Row {
    PixelBounds bounds;
    ApdResult apd;
    PropagationStats stats;
  };
  std::vector<Row> rows(segments.size());
  parallel_for(segments.size(), cfg.jobs, [&](std::size_t i) {
    const Propagation p = propagate_segment(g, segments[i]);
    rows[i].bounds = pixel_bounds(p.chain);
    rows[i].apd = apd(p.chain.vertex(0), p.chain.vertex(p.chain.breakpoints() - 1));
    rows[i].stats = p.stats;
  });
  json segs = json::array();
  std::string csv = "segment,avg_distance,median_distance,apd,changed,pieces\n";
  std::vector<PropagationStats> stats;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    segs.push_back({{"avg_distance", r.bounds.avg_distance},
                    {"median_distance", r.bounds.median_distance},
                    {"apd", r.apd.value},
                    {"changed_pixels", r.apd.changed},
                    {"pieces", final_pieces(r.stats)}});
    csv += std::to_string(i) + "," + fmt(r.bounds.avg_distance) + "," + fmt(r.bounds.median_distance) + "," +
           fmt(r.apd.value) + "," + std::to_string(r.apd.changed) + "," + std::to_string(final_pieces(r.stats)) +
           "\n";
    stats.push_back(r.stats);
  }
  json cost = to_json(cost_report(stats, growth_limits(g)));
  if (!cfg.timing) {
    cost.erase("total_wall_ms");
    cost.erase("mean_wall_ms");
  }
  prepare_out(cfg);
  write_json(cfg.out / "report.json", {{"segments", segs}, {"cost", cost}, {"provenance", provenance(cfg)}});
  write_csv(cfg.out / "bounds.csv", cfg, csv);
  std::cout << segments.size() << " segments, growth bound "
            << (cost.at("growth_bound_holds").get<bool>() ? "holds" : "violated") << "\n";
  return 0;
}

}  // namespace latcert::cli
