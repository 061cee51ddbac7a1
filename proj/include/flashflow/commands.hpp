#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace flashflow {

// Built-in defaults for one subcommand; also the schema for key validation.
nlohmann::json config_defaults(const std::string& command);

// defaults <- config file <- flag overrides, then unknown-key rejection.
nlohmann::json resolve_config(const std::string& command, const nlohmann::json& file_cfg,
                              const nlohmann::json& overrides);

// Dispatch with a fully resolved config.  Every command echoes
// {command, config} into a run manifest JSON before doing work; replaying
// that manifest reproduces the outputs.
void run_command(const std::string& command, const nlohmann::json& cfg);

void cmd_synth(const nlohmann::json& cfg);
void cmd_train(const nlohmann::json& cfg);
void cmd_sample(const nlohmann::json& cfg);
void cmd_eval(const nlohmann::json& cfg);
void cmd_compare(const nlohmann::json& cfg);
void cmd_fourier_inspect(const nlohmann::json& cfg);
void cmd_replay(const std::filesystem::path& manifest_path);

}  // namespace flashflow
