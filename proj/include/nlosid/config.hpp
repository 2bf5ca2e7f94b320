#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nlosid/error.hpp"
#include "nlosid/geometry.hpp"

namespace nlosid {

/// Flat `section.key = value` configuration.
///
/// Lines are trimmed; `#` starts a comment; blank lines are ignored. Every key
/// must contain a dot. Values keep their source line so that errors raised
/// while interpreting them can point at the offending line. Consumers read
/// keys through the typed getters, which mark them as used; `check_all_used`
/// then rejects anything left over (typos, unknown settings).
class KeyValueConfig {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, std::string source = "<string>") {
    KeyValueConfig cfg;
    cfg.source_ = std::move(source);
    int line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      auto body = trim(line);
      if (body.empty()) continue;
      auto eq = body.find('=');
      if (eq == std::string_view::npos) cfg.fail(line_no, "expected 'section.key = value'");
      auto key = trim(body.substr(0, eq));
      auto value = trim(body.substr(eq + 1));
      if (key.empty() || value.empty()) cfg.fail(line_no, "empty key or value");
      auto dot = key.find('.');
      if (dot == std::string_view::npos || dot == 0 || dot + 1 == key.size())
        cfg.fail(line_no, "key '" + std::string(key) + "' must have the form section.key");
      std::string k(key);
      if (cfg.entries_.count(k)) cfg.fail(line_no, "duplicate key '" + k + "'");
      cfg.entries_[k] = Entry{std::string(value), line_no};
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  void set(const std::string& key, std::string value) {
    entries_[key] = Entry{std::move(value), 0};
  }

  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, e] : entries_)
      if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto* e = find(key);
    return e ? e->value : fallback;
  }

  double get_double(const std::string& key, double fallback) const {
    auto* e = find(key);
    return e ? to_double(*e, key) : fallback;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto* e = find(key);
    if (!e) return fallback;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
    if (ec != std::errc() || ptr != e->value.data() + e->value.size())
      fail(e->line, "'" + key + "' expects an integer, got '" + e->value + "'");
    return v;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto* e = find(key);
    if (!e) return fallback;
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
    if (ec != std::errc() || ptr != e->value.data() + e->value.size())
      fail(e->line, "'" + key + "' expects an unsigned integer, got '" + e->value + "'");
    return v;
  }

  Vec3 get_vec3(const std::string& key, const Vec3& fallback) const {
    auto* e = find(key);
    if (!e) return fallback;
    std::istringstream in(e->value);
    std::string a, b, c, extra;
    if (!(in >> a >> b >> c) || (in >> extra))
      fail(e->line, "'" + key + "' expects three numbers 'x y z', got '" + e->value + "'");
    return {to_double({a, e->line}, key), to_double({b, e->line}, key),
            to_double({c, e->line}, key)};
  }

  int line_of(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.line;
  }

  [[noreturn]] void fail(int line, const std::string& what) const {
    if (line > 0) throw ConfigError(source_ + ":" + std::to_string(line) + ": " + what);
    throw ConfigError(source_ + ": " + what);
  }

  void check_all_used() const {
    for (const auto& [k, e] : entries_)
      if (!used_.count(k)) fail(e.line, "unknown key '" + k + "'");
  }

 private:
  static std::string_view trim(std::string_view s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
  }

  const Entry* find(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  double to_double(const Entry& e, const std::string& key) const {
    try {
      std::size_t pos = 0;
      double v = std::stod(e.value, &pos);
      if (pos == e.value.size()) return v;
    } catch (const std::exception&) {
    }
    fail(e.line, "'" + key + "' expects a number, got '" + e.value + "'");
  }

  std::string source_ = "<string>";
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
};

}  // namespace nlosid
