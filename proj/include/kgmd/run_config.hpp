#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "kgmd/eval.hpp"
#include "kgmd/model.hpp"
#include "kgmd/synthgen.hpp"
#include "kgmd/training.hpp"

namespace kgmd {

/// Everything a command needs besides its input directories. Serialized as flat
/// `key = value` lines with dotted keys (`synth.seed`, `model.dim`, ...).
struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
};

/// Throws ConfigError for unknown keys and unparsable values.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// Applies every `key = value` line of `text`; `#` starts a comment.
void parse_run_config(std::string_view text, RunConfig& config, std::string_view source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its current value, one per line, in a fixed order. Parsing
/// the output reproduces `config` exactly.
std::string resolved_config(const RunConfig& config);

std::vector<std::string> run_config_keys();

}  // namespace kgmd
