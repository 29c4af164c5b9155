#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "clasp/model.hpp"
#include "clasp/synth.hpp"
#include "clasp/training.hpp"

namespace clasp {

// Ordered key=value pairs. Later entries override earlier ones on apply.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

// One "key = value" per line; blank lines and '#' comments are skipped.
// Throws ParseError with the line number.
KeyValues parse_key_values(std::string_view text, const std::string& source = "<config>");
KeyValues read_config_file(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

// Everything a run can be configured with. Keys are namespaced:
// "model.*", "train.*", "synth.*", plus "seed" which sets both seeds.
struct RunConfig {
  HyperParams model;
  TrainConfig train;
  SynthConfig synth;
};

// Throws ConfigError on unknown keys or unparsable values.
void apply_key_values(RunConfig& cfg, const KeyValues& kv);
void apply_key_values(HyperParams& hp, const KeyValues& kv);  // unprefixed keys

KeyValues to_key_values(const HyperParams& hp);  // unprefixed
KeyValues to_key_values(const TrainConfig& cfg);
KeyValues to_key_values(const SynthConfig& cfg);
KeyValues to_key_values(const RunConfig& cfg);  // prefixed

// Exact text round trip for doubles.
std::string format_double(double v);

}  // namespace clasp
