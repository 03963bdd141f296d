#pragma once

// Flat key=value text configuration. '#' starts a comment; keys may carry a
// dotted section prefix ("tokenizer.hidden").

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "codebrain/errors.hpp"

namespace codebrain {

class KeyValueConfig {
 public:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static KeyValueConfig parse(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      if (cfg.values_.count(key)) throw ConfigError("duplicate key '" + key + "'");
      cfg.values_[key] = trim(line.substr(eq + 1));
      cfg.order_.push_back(key);
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::vector<std::string>& keys() const { return order_; }
  const std::string& raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
  }
  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? raw(key) : fallback;
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return to_double(key, raw(key));
  }

  long long get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("key '" + key + "': not an integer: " + v);
    return out;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("key '" + key + "': not a boolean: " + v);
  }

  // Throws on any key that is neither listed nor under an allowed prefix.
  void reject_unknown(const std::set<std::string>& allowed, const std::vector<std::string>& prefixes = {}) const {
    for (const auto& k : order_) {
      if (allowed.count(k)) continue;
      const bool prefixed = std::any_of(prefixes.begin(), prefixes.end(),
                                        [&](const std::string& p) { return k.rfind(p, 0) == 0; });
      if (!prefixed) throw ConfigError("unknown configuration key '" + k + "'");
    }
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw ConfigError("key '" + key + "': not a number: " + v);
      return d;
    } catch (const std::logic_error&) {
      throw ConfigError("key '" + key + "': not a number: " + v);
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace codebrain
