#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slomo/engine.hpp"
#include "slomo/metrics.hpp"
#include "slomo/streams.hpp"

namespace slomo {

enum class Variant { SloMoFast, SloMoFastStar, FrozenSource };

const char* to_string(Variant variant);

struct RunConfig {
  Variant variant = Variant::SloMoFast;
  TaskOptions task;
  std::vector<std::size_t> hidden{64, 32};
  std::size_t feature_layer = 1;
  double bn_momentum = 0.1;
  SourceTraining source;
  std::size_t groups = 5;
  std::size_t variants_per_group = 3;
  int severity = 5;
  AdaptationConfig adaptation;
  ScheduleOptions schedule;
  std::uint64_t seed_task = 0;
  std::uint64_t seed_schedule = 0;
  std::uint64_t seed_adapt = 0;
  std::size_t ma_window = 10;
  double lambda_stab = 1.0;
  ScoreScope score_scope = ScoreScope::PerSegment;
  bool forgetting = true;
  std::string output_dir = "out";

  // Cross-field checks; throws ConfigError naming a key.
  void validate() const;
  NetworkSpec network() const;
};

// Documented keys in file order, with required ones flagged.
struct ConfigKey {
  const char* name;
  bool required;
  const char* help;
};
const std::vector<ConfigKey>& config_keys();

// Flat `key = value` lines; `#` starts a comment. Unknown, duplicate,
// malformed and missing required keys raise ConfigError naming the key.
RunConfig parse_config(std::istream& in);
RunConfig parse_config_string(const std::string& text);
RunConfig load_config(const std::string& path);

// Every key with its resolved value; feeding the output back through
// `config_from_json` reproduces the configuration.
nlohmann::ordered_json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::ordered_json& j);
std::string config_to_text(const RunConfig& config);

// Applies "seed_task=1,seed_adapt=4" style overrides.
void apply_seed_overrides(RunConfig& config, const std::string& overrides);

}  // namespace slomo
