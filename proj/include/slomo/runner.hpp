#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slomo/config.hpp"
#include "slomo/metrics.hpp"
#include "slomo/network.hpp"
#include "slomo/trio.hpp"

namespace slomo {

inline constexpr const char* kVersion = "0.1.0";

struct RunFailure {
  std::size_t last_good_step = 0;  // 1-based; 0 when the first step failed
  std::string message;
};

struct RunArtifacts {
  std::string steps_csv;
  std::string summary_json;
  std::string forgetting_csv;  // empty when the probe is disabled
  RunReport report;
  std::optional<RunFailure> failure;
  NetworkParams source;
  std::optional<ModelTrio> models;  // final state of the adaptive variants
};

// Fixed column order of the per-step CSV.
const std::vector<std::string>& step_csv_columns();

// %.9g
std::string format_real(double value);

// Builds the task, trains the source model, plans the stream and runs it.
// Numeric blow-ups end the run early and are reported in `failure`.
RunArtifacts execute(const RunConfig& config);

// steps.csv, summary.json and (optionally) forgetting.csv under `dir`.
void write_artifacts(const RunArtifacts& artifacts, const std::filesystem::path& dir);

// Per-domain and overall error deltas (b - a) as CSV. Throws ConfigError
// naming both inputs when their schedules differ.
std::string compare_summaries(const nlohmann::ordered_json& a, const nlohmann::ordered_json& b,
                              const std::string& name_a, const std::string& name_b);

// Domains ranked by frozen-source error, as CSV.
std::string rank_csv(const RunConfig& config);

}  // namespace slomo
