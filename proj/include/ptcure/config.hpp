#pragma once

#include "ptcure/fit.hpp"
#include "ptcure/simulate.hpp"
#include "ptcure/study.hpp"

#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ptcure {

/// Flat settings read from `key = value` lines (with # comments) or from a JSON
/// object. Keys are consumed by the apply_* functions; whatever is left over is
/// reported by require_consumed, so a misspelled key fails loudly.
class ConfigMap {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;  // 0 for JSON input
  };

  /// JSON when the first non-blank character is '{', key=value otherwise.
  static ConfigMap parse(std::istream& in);
  static ConfigMap load(const std::string& path);

  void set(const std::string& key, std::string value, std::size_t line = 0);
  bool contains(const std::string& key) const { return entries_.count(key) > 0; }
  bool empty() const { return entries_.empty(); }

  /// Removes and returns the entry if present.
  std::optional<Entry> take(const std::string& key);

  /// Throws InputError naming the first unconsumed key.
  void require_consumed() const;

  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
};

void apply_fit_config(ConfigMap& map, FitConfig& config);
/// Also understands `censoring`, a target fraction that calibrates nu.
void apply_sim_config(ConfigMap& map, SimConfig& config);
/// Study keys plus every simulation key and `fit.`-prefixed fit keys.
void apply_study_config(ConfigMap& map, StudyDesign& design);

/// Canonical key=value rendering; parse(to_key_values(c)) rebuilds c exactly.
std::string to_key_values(const SimConfig& config);
std::string to_json(const SimConfig& config, int indent = 2);

/// "npm,gee-exchangeable,qif-ar1" style lists.
std::vector<MethodSpec> parse_method_list(const std::string& text);

}  // namespace ptcure
