#pragma once

#include <filesystem>
#include <string>

#include "twins/dsp.hpp"
#include "twins/pipeline.hpp"

namespace twins {

// Full run configuration as read from a TOML file. Every field has the
// standard default, so an empty document is a valid config.
struct RunConfig {
  DspConfig dsp;
  TrainConfig train;        // includes arch, optimizer, augmentation knobs
  FinetuneOptions finetune;

  void validate() const;
};

// Parses the supported TOML subset: [section] headers, key = value lines
// with string / bool / integer / float / flat-array values, # comments.
// Unknown sections or keys, duplicate keys, and malformed values raise
// ConfigError with a line number. dump_run_config emits every field
// explicitly and is a fixed point: parse(dump(c)) == c and
// dump(parse(dump(c))) == dump(c).
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& config);

// Applies a TWIN_SEED environment override (decimal u64) to the train seed.
// Returns true when an override was applied; bad values raise ConfigError.
bool apply_seed_override(RunConfig& config);

}  // namespace twins
