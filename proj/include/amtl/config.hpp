#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "amtl/error.hpp"

namespace amtl {

// Flat key=value configuration. Lines starting with '#' and blank lines
// are ignored; keys are single tokens, values are everything after '='.
class Config {
 public:
  Config() = default;

  static Config parse_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::config, "cannot read config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  static Config parse(const std::string& text, const std::string& origin = "<string>") {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string stripped = strip(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      const std::size_t eq = stripped.find('=');
      require(eq != std::string::npos && eq > 0, ErrorKind::config,
              origin + ":" + std::to_string(lineno) + ": expected key=value");
      cfg.values_[strip(stripped.substr(0, eq))] = strip(stripped.substr(eq + 1));
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  long long get_int(const std::string& key, long long dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(it->second, &used);
      require(used == it->second.size(), ErrorKind::config, "");
      return v;
    } catch (const std::exception&) {
      fail(ErrorKind::config, "config key '" + key + "' is not an integer: " + it->second);
    }
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      require(used == it->second.size(), ErrorKind::config, "");
      return v;
    } catch (const std::exception&) {
      fail(ErrorKind::config, "config key '" + key + "' is not a number: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(ErrorKind::config, "config key '" + key + "' is not a boolean: " + v);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  // Resolved configuration in canonical serialized form (sorted keys).
  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  static std::string strip(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
    return s.substr(b, e - b);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace amtl
