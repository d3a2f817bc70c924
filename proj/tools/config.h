#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "posttrain/corpus.h"
#include "posttrain/encoder.h"
#include "posttrain/training.h"

namespace posttrain::cli {

// Bad config text or an unknown key. Reported as a usage error.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataPaths {
  std::string vocab;
  std::string reviews;
  std::string dk_shard;
  std::string mrc;
  std::string train;
  std::string valid;
  std::string test;
};

// Everything a command needs, merged from built-in defaults, the config file
// and command-line overrides (in that order, last wins).
struct RunConfig {
  std::string preset = "tiny";
  // Per-field model overrides applied on top of the preset.
  std::map<std::string, double> model_overrides;
  std::optional<bool> tie_mlm_weights;

  DataPaths data;
  bool line_per_document = false;
  std::size_t vocab_size = 8000;
  DkOptions dk;
  PostTrainConfig posttrain;
  FineTuneConfig finetune;

  std::string out = "run";
  std::string init;
  std::size_t runs = kDefaultSeedRuns;

  RunConfig();

  // Preset plus overrides; vocab_size is left for the caller.
  ModelConfig model() const;
};

using ConfigValue = std::variant<bool, std::int64_t, double, std::string>;

// Parses one literal: "quoted string", true/false, integer or float.
ConfigValue parse_value(std::string_view text);

// Sets "section.key". Throws ConfigError on unknown keys and type mismatch.
void set_key(RunConfig& config, std::string_view key, const ConfigValue& value);

// "[section]" headers, "key = value" lines and '#' comments. A key may
// appear more than once; the last assignment wins.
void apply_config_text(RunConfig& config, std::string_view text);
void apply_config_file(RunConfig& config, const std::string& path);

// "section.key=value" from --set.
void apply_assignment(RunConfig& config, std::string_view assignment);

// Every accepted key; config_defaults pairs each with its built-in default
// written as a config literal.
std::vector<std::string> config_keys();
std::vector<std::pair<std::string, std::string>> config_defaults();

}  // namespace posttrain::cli
