#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mtcl/data.hpp"
#include "mtcl/train.hpp"

namespace mtcl {

// INI-style configuration ([section] headers, key = value lines, '#'
// comments) flattened to "section.key" entries, plus command-line overrides.
// Typed getters record everything they resolve, so after resolution the store
// can reject unknown keys (typos, stale overrides) and render a snapshot of
// the complete effective configuration.
class ConfigStore {
 public:
  ConfigStore() = default;
  static ConfigStore parse_file(const std::filesystem::path& path);
  static ConfigStore parse_text(const std::string& text, const std::string& origin);

  // "section.key=value"; wins over file values.
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& def) const;
  long get_long(const std::string& key, long def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::array<long, 3> get_shape(const std::string& key, const std::array<long, 3>& def) const;
  std::array<double, 3> get_triple(const std::string& key,
                                   const std::array<double, 3>& def) const;
  std::vector<uint64_t> get_seeds(const std::string& key,
                                  const std::vector<uint64_t>& def) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& def) const;

  // Throws ConfigError listing any key that no getter consumed.
  void reject_unknown() const;

  // Every resolved key with its effective value, rendered as a reparsable
  // INI document.
  std::string resolved_text() const;

 private:
  std::string name() const { return origin_.empty() ? "config" : origin_; }
  void note(const std::string& key, const std::string& value) const;

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> resolved_;
  mutable std::set<std::string> consumed_;
  std::string origin_;
};

struct DataConfig {
  std::string manifest;  // empty when not configured
  std::array<double, 3> train_fractions{0.7, 0.7, 0.7};
  uint64_t split_seed = 17;
};

// The complete effective run configuration across all sections.
struct ResolvedRun {
  TrainConfig train;
  DataConfig data;
  SyntheticSpec synth;
  std::vector<std::string> ablation_rows;
};

// Resolves every section with its defaults, applies validation, and rejects
// unknown keys.
ResolvedRun resolve_run(const ConfigStore& store);

}  // namespace mtcl
