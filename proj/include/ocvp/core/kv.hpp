// SPDX-License-Identifier: Apache-2.0
//
// Flat key-value config text with dotted keys. Canonical form (sorted keys,
// normalized values, "key = value\n") is what gets hashed, so key order and
// whitespace never change a config's identity.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ocvp::core {

class KvMap {
 public:
  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  void set_int(const std::string& key, int64_t v);
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::optional<std::string> get(const std::string& key) const;

  /// Typed getters; on parse failure append to `errors` and return fallback.
  std::string get_string(const std::string& key, const std::string& fallback,
                         std::vector<std::string>* errors = nullptr) const;
  int64_t get_int(const std::string& key, int64_t fallback, std::vector<std::string>* errors = nullptr) const;
  double get_double(const std::string& key, double fallback, std::vector<std::string>* errors = nullptr) const;
  bool get_bool(const std::string& key, bool fallback, std::vector<std::string>* errors = nullptr) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  void erase(const std::string& key) { entries_.erase(key); }

  /// Sorted "key = value" lines; doubles re-serialized shortest-round-trip.
  std::string canonical_text() const;

 private:
  std::map<std::string, std::string> entries_;
};

/// Parse "key = value" lines; '#' starts a comment, blank lines are skipped.
/// Throws std::runtime_error naming the offending line on malformed input.
KvMap parse_kv(const std::string& text);

/// parse_kv over a file's contents.
KvMap parse_kv_file(const std::string& path);

std::string format_double(double v);

}  // namespace ocvp::core
