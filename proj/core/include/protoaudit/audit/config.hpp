#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoaudit/sourcebench/generator.hpp"
#include "protoaudit/trainer/trainer.hpp"

namespace protoaudit::audit {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a sweep needs, driven by one root seed.
struct AuditConfig {
  std::uint64_t root_seed = 42;
  sourcebench::GeneratorConfig generator;
  trainer::TrainConfig train;
  std::vector<int> points;             // defaults to 0, 10, ..., 100
  std::size_t heatmaps_per_model = 4;  // test images exported per model
  bool faithfulness = true;

  AuditConfig();
  /// Propagates root_seed into the generator and the trainer.
  void set_root_seed(std::uint64_t seed);
  void validate() const;
  /// Ordered key/value echo, the same keys `apply_config` accepts.
  std::map<std::string, std::string> to_map() const;
};

/// Flat `key = value` text: '#' starts a comment, blank lines are skipped,
/// keys may not repeat. Throws ConfigError with the line number.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Applies known keys; an unknown key or a malformed value throws ConfigError.
void apply_config(AuditConfig& config, const std::map<std::string, std::string>& values);
AuditConfig load_config(const std::filesystem::path& path);

/// Comma separated integers, e.g. "0,50,100".
std::vector<int> parse_points(const std::string& text);

}  // namespace protoaudit::audit
