#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace sci {

// Flat "key = value" text; '#' starts a comment. Keys are consumed by typed
// getters, and `finish()` rejects anything left unconsumed.
class KvConfig {
 public:
  KvConfig() = default;
  static KvConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KvConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  std::int64_t get_int(const std::string& key, std::int64_t fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  // Required variants throw ConfigError when the key is absent.
  std::string require_string(const std::string& key);
  std::uint64_t require_u64(const std::string& key);

  // Throws ConfigError naming the first key no getter asked for.
  void finish() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
  std::string origin_;
};

}  // namespace sci
