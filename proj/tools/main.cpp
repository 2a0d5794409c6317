// SPDX-License-Identifier: Apache-2.0
// Exit codes: 0 success, 1 a certificate was falsified, 2 configuration
// error, 3 runtime error.
#include "commands.hpp"

#include "latcert/errors.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  unsigned jobs = 1;
  bool timing = false;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON config file");
  sub->add_option("--seed", o.seed, "Master seed (overrides the config)");
  sub->add_option("--out", o.out, "Output directory");
  sub->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_flag("--timing", o.timing, "Record wall-clock times in the outputs");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace latcert::cli;
  CLI::App app{"Latent-space robustness certification toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Options opts;
  const std::map<std::string, std::pair<std::string, std::function<int(const RunConfig&)>>> commands{
      {"gen-synthetic", {"Render the synthetic square dataset", cmd_gen_synthetic}},
      {"train", {"Train a (regulated) generator", cmd_train}},
      {"directions", {"Mutating latent directions of a generator", cmd_directions}},
      {"certify", {"Certify a classifier along latent mutations", cmd_certify}},
      {"protocols", {"Independence and continuity protocols", cmd_protocols}},
      {"report", {"Pixel bounds, APD, and cost accounting", cmd_report}},
  };
  for (const auto& [name, entry] : commands) add_common(app.add_subcommand(name, entry.first), opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = load_run_config(opts.config);
    cfg.seed = opts.seed;
    cfg.out = opts.out;
    cfg.jobs = opts.jobs;
    cfg.timing = opts.timing;
    const std::string name = app.get_subcommands().front()->get_name();
    return commands.at(name).second(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const latcert::FormatError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const latcert::RangeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
