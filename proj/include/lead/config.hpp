#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lead/common.hpp"

namespace lead {

/// Every experiment knob, settable as `key = value` lines. Unknown keys throw
/// "unknown-config-key" naming the key.
class ExperimentConfig {
 public:
  ExperimentConfig();

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key) const { return get(key); }
  std::int64_t integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::int64_t> int_list(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;

  /// Canonical text (sorted keys); parse(snapshot()) reproduces the config.
  std::string snapshot() const;
  /// Hex content hash of the snapshot.
  std::string run_id() const;

  static const std::vector<std::string>& keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace lead
