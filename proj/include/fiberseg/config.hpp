#pragma once

#include <map>
#include <string>

#include "fiberseg/harness.hpp"
#include "fiberseg/synth.hpp"

namespace fiberseg {

// Everything a CLI run can be configured with. Loaded from a flat
// key = value file; command-line --set overrides win over file values.
struct RunConfig {
    TrainConfig train;
    SynthConfig synth;
    double keep_fraction = kDefaultKeepFraction;
    std::size_t n_brains = 3;
    std::size_t inter_train_index = 1;  // 0-based; default mirrors "train on brain 2"
};

// Applies one key/value pair; throws ConfigError on an unknown key or an
// unparsable value, naming the key.
void apply_key_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses a config file, collecting every problem (unknown keys, bad values,
// syntax) into a single ConfigError so failures are reported exhaustively.
RunConfig load_config_file(const std::string& path);

// The fully resolved key/value view, as recorded in run manifests.
std::map<std::string, std::string> config_to_map(const RunConfig& cfg);

}  // namespace fiberseg
