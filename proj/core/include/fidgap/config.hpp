#pragma once

// Run configuration: one JSON document, validated with defaults applied.
// The resolved configuration can be echoed back and re-parsed to an equal value.

#include <stdexcept>
#include <string>
#include <vector>

#include "fidgap/attack_pipeline.hpp"
#include "fidgap/types.hpp"

namespace fidgap::io {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct RunConfig {
  attack::PipelineConfig pipeline;
  std::vector<AttackLevel> levels{AttackLevel::low()};
  std::string output_dir = "fidgap-out";

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses JSON text (comments allowed). Throws ConfigError naming the offending field.
RunConfig parse_config_text(const std::string& text);

/// Reads `path`, parses it and, when `write_echo` is set, writes the fully resolved
/// configuration to `<output_dir>/config.resolved.json`.
RunConfig parse_config(const std::string& path, bool write_echo = true);

/// Fully resolved configuration as JSON text without comments.
std::string to_json_text(const RunConfig& config);

/// Parses a comma separated list such as "low,medium,high".
std::vector<AttackLevel> parse_level_list(const std::string& list);

}  // namespace fidgap::io
