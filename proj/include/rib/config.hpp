#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"

namespace rib::cli {

/// Flat `key = value` text with `#` comments. Lists are comma separated,
/// matrix rows are separated by ';' ("1, 0; 0, 1").
class Config {
 public:
  static Config parse(const std::string& text) {
    Config c;
    std::istringstream is(text);
    std::string line;
    int no = 0;
    while (std::getline(is, line)) {
      ++no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const auto where = "line " + std::to_string(no) + ": ";
      require(eq != std::string::npos, ErrorCode::Config, where + "expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      require(!key.empty() && std::all_of(key.begin(), key.end(),
                                          [](char ch) { return std::islower(static_cast<unsigned char>(ch)) ||
                                                               std::isdigit(static_cast<unsigned char>(ch)) || ch == '_'; }),
              ErrorCode::Config, where + "bad key '" + key + "'");
      require(!value.empty(), ErrorCode::Config, where + "empty value for '" + key + "'");
      require(!c.values_.count(key), ErrorCode::Config, where + "duplicate key '" + key + "'");
      c.values_[key] = value;
    }
    return c;
  }

  /// Throws Config on the first key not in `allowed`.
  void reject_unknown(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : values_)
      require(allowed.count(k) > 0, ErrorCode::Config, "unknown key '" + k + "'");
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& def) const { return has(key) ? values_.at(key) : def; }

  double real(const std::string& key, double def) const { return has(key) ? to_real(key, values_.at(key)) : def; }

  std::int64_t integer(const std::string& key, std::int64_t def) const {
    return has(key) ? to_int(key, values_.at(key)) : def;
  }

  bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const auto& v = values_.at(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorCode::Config, "'" + key + "' must be true or false");
  }

  std::vector<double> reals(const std::string& key, const std::vector<double>& def) const {
    if (!has(key)) return def;
    std::vector<double> out;
    for (const auto& s : split(values_.at(key), ',')) out.push_back(to_real(key, s));
    return out;
  }

  /// An empty list is written as "none".
  std::vector<std::int64_t> integers(const std::string& key, const std::vector<std::int64_t>& def) const {
    if (!has(key)) return def;
    if (values_.at(key) == "none") return {};
    std::vector<std::int64_t> out;
    for (const auto& s : split(values_.at(key), ',')) out.push_back(to_int(key, s));
    return out;
  }

  Matrix matrix(const std::string& key, const Matrix& def) const {
    if (!has(key)) return def;
    std::vector<std::vector<double>> rows;
    for (const auto& r : split(values_.at(key), ';')) {
      rows.emplace_back();
      for (const auto& s : split(r, ',')) rows.back().push_back(to_real(key, s));
    }
    const auto cols = rows.front().size();
    for (const auto& r : rows) require(r.size() == cols, ErrorCode::Config, "'" + key + "' has ragged rows");
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(cols));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols; ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return m;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
  }

  static double to_real(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && p == s.data() + s.size() && std::isfinite(v), ErrorCode::Config,
            "'" + key + "': not a finite number: '" + s + "'");
    return v;
  }

  static std::int64_t to_int(const std::string& key, const std::string& s) {
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && p == s.data() + s.size(), ErrorCode::Config,
            "'" + key + "': not an integer: '" + s + "'");
    return v;
  }
};

}  // namespace rib::cli
