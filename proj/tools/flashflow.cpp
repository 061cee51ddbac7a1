#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flashflow/commands.hpp"
#include "flashflow/errors.hpp"
#include "json.hpp"

using flashflow::ConfigError;
using nlohmann::json;

namespace {

// Flags are typed by the default value of the key they override: strings pass
// through untouched, everything else must parse as JSON (true/false, numbers,
// arrays).
json coerce_flag(const json& default_value, const std::string& key, const std::string& raw) {
  if (default_value.is_string()) return raw;
  json v = json::parse(raw, nullptr, false);
  if (v.is_discarded()) throw ConfigError("cannot parse value for --" + key + ": " + raw);
  return v;
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flashflow: conditional flow-matching image-to-video on synthetic clips"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "generate the synthetic moving-shape dataset"},
      {"train", "train a denoiser under one conditioning paradigm"},
      {"sample", "generate a clip from a checkpoint and a condition image"},
      {"eval", "chunk-wise distribution distances for generated clips"},
      {"compare", "run every paradigm over both splits and classify the pattern"},
      {"fourier-inspect", "dump high-frequency maps and energies for one frame"},
  };
  std::map<std::string, std::string> config_files;
  std::map<std::string, std::map<std::string, std::string>> raw;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_files[name], "JSON config file (flags win over it)");
    const json defaults = flashflow::config_defaults(name);
    for (const auto& [key, dv] : defaults.items())
      sub->add_option("--" + key, raw[name][key], "override (default " + dv.dump() + ")");
    subs[name] = sub;
  }
  std::string replay_path;
  CLI::App* replay = app.add_subcommand("replay", "re-run a recorded run manifest");
  replay->add_option("manifest", replay_path, "run manifest JSON written by a previous run")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (replay->parsed()) {
      flashflow::cmd_replay(replay_path);
      return 0;
    }
    for (const auto& [name, help] : commands) {
      (void)help;
      if (!subs[name]->parsed()) continue;
      json file_cfg;
      if (subs[name]->count("--config")) file_cfg = load_config_file(config_files[name]);
      json overrides = json::object();
      const json defaults = flashflow::config_defaults(name);
      for (const auto& [key, dv] : defaults.items())
        if (subs[name]->count("--" + key)) overrides[key] = coerce_flag(dv, key, raw[name][key]);
      flashflow::run_command(name, flashflow::resolve_config(name, file_cfg, overrides));
      return 0;
    }
    throw ConfigError("no command selected");
  } catch (const flashflow::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const flashflow::ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
