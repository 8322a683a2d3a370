#pragma once

// Human-readable key-value configuration files:
//   # comment
//   key = value
// Keys are dotted paths (e.g. "train.lr"). Order is preserved; later sets of
// an existing key overwrite in place. `config_version = 1` is reserved.

#include <string>
#include <utility>
#include <vector>

#include "dass/common.hpp"

namespace dass {

class KvConfig {
 public:
  static KvConfig from_file(const std::string& path);
  static KvConfig from_string(const std::string& text);

  std::string to_string() const;

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);
  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

}  // namespace dass
