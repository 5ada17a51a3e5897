// ecable: command-line front end for the stochastic cell-energetics library.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ecable/io/cli.hpp"

namespace {

constexpr int kUsageExit = 2;

int run(int argc, char** argv) {
  CLI::App app{"Stochastic electron-transfer and ATP kinetics of bacterial cells and cables"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ecable::io::kToolVersion);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "YAML run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override a config key, e.g. --set params.rho=0.003");
    sub->add_option("--seed", seed, "override the RNG master seed");
    sub->add_option("-o,--out", out_dir, "output directory")->capture_default_str();
  };

  const std::vector<std::pair<std::string, std::string>> commands{
      {"transient", "transient distribution pi0' P_t at transient.t"},
      {"simulate", "exact trajectory simulation (event log + ensemble statistics)"},
      {"lifetime", "expected lifetime and lifetime pdf"},
      {"fit", "maximum-likelihood fit of x and pi0 to a NADH/ATP time series"},
      {"predict", "expected levels and rates over time"},
      {"panels", "plot-ready CSVs: NADH, ATP, ATP rates, NADH rates"},
  };
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help));

  CLI::App* echo = app.add_subcommand("config", "print the normalized configuration");
  echo->add_option("-c,--config", config_path, "YAML run configuration")->required()->check(CLI::ExistingFile);
  echo->add_option("--set", overrides, "override a config key");
  echo->add_option("--seed", seed, "override the RNG master seed");

  std::string manifest_path;
  CLI::App* replay = app.add_subcommand("replay", "rerun a manifest and verify its outputs byte-for-byte");
  replay->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
  replay->add_option("-o,--out", out_dir, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageExit;
  }

  try {
    if (replay->parsed()) {
      const auto bad = ecable::io::replay(manifest_path, out_dir, std::cout);
      if (!bad.empty()) {
        for (const auto& f : bad) std::cerr << "replay mismatch: " << f << "\n";
        return static_cast<int>(ecable::ErrorKind::data);
      }
      std::cout << "replay reproduced all outputs\n";
      return 0;
    }
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    const ecable::io::RunConfig cfg = ecable::io::load_config(config_path, overrides);
    if (echo->parsed()) {
      for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << ecable::io::normalized_yaml(cfg);
      return 0;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    const auto bundle = ecable::io::run_subcommand(cmd, cfg, out_dir, std::cout);
    std::cout << "wrote " << bundle.files.size() << " files to " << out_dir << "\n";
    return 0;
  } catch (const ecable::Error& e) {
    std::cerr << "error (" << ecable::to_string(e.kind()) << "): " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const YAML::Exception& e) {
    std::cerr << "error (config error): " << e.what() << "\n";
    return static_cast<int>(ecable::ErrorKind::config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
