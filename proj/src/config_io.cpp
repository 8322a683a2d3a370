#include "dass/config_io.hpp"

#include <fstream>
#include <sstream>

namespace dass {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return from_string(ss.str());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(std::string(e.what()) + " (in " + path + ")");
  }
}

KvConfig KvConfig::from_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config: missing '=' on line " + std::to_string(lineno));
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw InvalidArgument("config: empty key on line " + std::to_string(lineno));
    cfg.set(key, value);
  }
  return cfg;
}

std::string KvConfig::to_string() const {
  std::ostringstream os;
  for (const auto& [k, v] : items_) os << k << " = " << v << '\n';
  return os.str();
}

bool KvConfig::has(const std::string& key) const {
  for (const auto& [k, v] : items_)
    if (k == key) return true;
  return false;
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
  for (const auto& [k, v] : items_)
    if (k == key) return v;
  return fallback;
}

std::string KvConfig::require_str(const std::string& key) const {
  for (const auto& [k, v] : items_)
    if (k == key) return v;
  throw InvalidArgument("config: missing required key '" + key + "'");
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string s = get_str(key, "");
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("config: key '" + key + "' is not a number: " + s);
  }
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string s = get_str(key, "");
  try {
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("config: key '" + key + "' is not an integer: " + s);
  }
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string s = get_str(key, "");
  try {
    std::size_t used = 0;
    unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("config: key '" + key + "' is not an unsigned integer: " + s);
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string s = get_str(key, "");
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InvalidArgument("config: key '" + key + "' is not a boolean: " + s);
}

void KvConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : items_)
    if (k == key) {
      v = value;
      return;
    }
  items_.emplace_back(key, value);
}

}  // namespace dass
