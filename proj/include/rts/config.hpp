#pragma once

// Experiment manifests: a small INI dialect.
//
//   # comment            ; comment
//   [section]
//   key = value          # trailing comments allowed
//   list = a, b, c
//
// Keys are case-sensitive; values are trimmed. Unknown sections and keys are
// rejected so that typos fail loudly with their line number.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rts {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, std::string section, std::string key, const std::string& msg)
      : std::runtime_error(format(line, section, key, msg)),
        line_(line),
        section_(std::move(section)),
        key_(std::move(key)) {}

  std::size_t line() const { return line_; }
  const std::string& section() const { return section_; }
  const std::string& key() const { return key_; }

 private:
  static std::string format(std::size_t line, const std::string& section, const std::string& key,
                            const std::string& msg) {
    std::ostringstream os;
    os << "config error";
    if (line > 0) os << " at line " << line;
    if (!key.empty()) os << ", field [" << section << "] " << key;
    else if (!section.empty()) os << ", section [" << section << "]";
    os << ": " << msg;
    return os.str();
  }

  std::size_t line_;
  std::string section_;
  std::string key_;
};

class Config {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static Config parse(std::string_view text) {
    Config cfg;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t nl = text.find('\n', pos);
      std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++line_no;
      std::string line = strip_comment(raw);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(line_no, "", "", "unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) throw ConfigError(line_no, "", "", "empty section name");
        cfg.sections_.try_emplace(section);
        cfg.section_lines_.try_emplace(section, line_no);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(line_no, section, "", "expected key = value");
      if (section.empty()) throw ConfigError(line_no, "", "", "key outside of any section");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(line_no, section, "", "missing key before '='");
      auto& sec = cfg.sections_[section];
      if (sec.count(key)) throw ConfigError(line_no, section, key, "duplicate key");
      sec[key] = {value, line_no};
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(0, "", "", "cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool has_section(const std::string& s) const { return sections_.count(s) > 0; }
  bool has(const std::string& s, const std::string& k) const {
    const auto it = sections_.find(s);
    return it != sections_.end() && it->second.count(k) > 0;
  }

  // Rejects sections and keys outside the allowed sets.
  void check_allowed(const std::map<std::string, std::set<std::string>>& allowed) const {
    for (const auto& [name, keys] : sections_) {
      const auto a = allowed.find(name);
      if (a == allowed.end()) throw ConfigError(section_lines_.at(name), name, "", "unknown section");
      for (const auto& [k, e] : keys)
        if (!a->second.count(k)) throw ConfigError(e.line, name, k, "unknown key");
    }
  }

  std::string get_string(const std::string& s, const std::string& k, const std::string& def) const {
    const Entry* e = find(s, k);
    return e ? e->value : def;
  }

  std::string require_string(const std::string& s, const std::string& k) const {
    const Entry* e = find(s, k);
    if (!e) throw ConfigError(section_line(s), s, k, "required field is missing");
    if (e->value.empty()) throw ConfigError(e->line, s, k, "value is empty");
    return e->value;
  }

  double get_double(const std::string& s, const std::string& k, double def) const {
    const Entry* e = find(s, k);
    return e ? to_double(*e, s, k) : def;
  }

  std::int64_t get_int(const std::string& s, const std::string& k, std::int64_t def) const {
    const Entry* e = find(s, k);
    return e ? to_int(*e, s, k) : def;
  }

  // Non-negative integer field.
  std::size_t get_count(const std::string& s, const std::string& k, std::size_t def) const {
    const Entry* e = find(s, k);
    if (!e) return def;
    const auto v = to_int(*e, s, k);
    if (v < 0) throw ConfigError(e->line, s, k, "must be non-negative");
    return static_cast<std::size_t>(v);
  }

  std::uint64_t get_u64(const std::string& s, const std::string& k, std::uint64_t def) const {
    const Entry* e = find(s, k);
    if (!e) return def;
    std::uint64_t v = 0;
    const auto* b = e->value.data();
    const auto [p, ec] = std::from_chars(b, b + e->value.size(), v);
    if (ec != std::errc() || p != b + e->value.size())
      throw ConfigError(e->line, s, k, "expected an unsigned integer, got '" + e->value + "'");
    return v;
  }

  bool get_bool(const std::string& s, const std::string& k, bool def) const {
    const Entry* e = find(s, k);
    if (!e) return def;
    const std::string v = lower(e->value);
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    throw ConfigError(e->line, s, k, "expected a boolean, got '" + e->value + "'");
  }

  std::vector<std::string> get_list(const std::string& s, const std::string& k,
                                    const std::vector<std::string>& def) const {
    const Entry* e = find(s, k);
    if (!e) return def;
    std::vector<std::string> out;
    std::stringstream ss(e->value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) throw ConfigError(e->line, s, k, "empty list item");
      out.push_back(item);
    }
    return out;
  }

  std::vector<std::size_t> get_count_list(const std::string& s, const std::string& k,
                                          const std::vector<std::size_t>& def) const {
    const Entry* e = find(s, k);
    if (!e) return def;
    std::vector<std::size_t> out;
    for (const auto& item : get_list(s, k, {})) {
      Entry tmp{item, e->line};
      const auto v = to_int(tmp, s, k);
      if (v < 0) throw ConfigError(e->line, s, k, "list items must be non-negative");
      out.push_back(static_cast<std::size_t>(v));
    }
    return out;
  }

  std::size_t line_of(const std::string& s, const std::string& k) const {
    const Entry* e = find(s, k);
    return e ? e->line : section_line(s);
  }

  static std::string lower(std::string v) {
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return v;
  }

 private:
  const Entry* find(const std::string& s, const std::string& k) const {
    const auto it = sections_.find(s);
    if (it == sections_.end()) return nullptr;
    const auto jt = it->second.find(k);
    return jt == it->second.end() ? nullptr : &jt->second;
  }

  std::size_t section_line(const std::string& s) const {
    const auto it = section_lines_.find(s);
    return it == section_lines_.end() ? 0 : it->second;
  }

  static double to_double(const Entry& e, const std::string& s, const std::string& k) {
    double v = 0.0;
    const auto* b = e.value.data();
    const auto [p, ec] = std::from_chars(b, b + e.value.size(), v);
    if (ec != std::errc() || p != b + e.value.size())
      throw ConfigError(e.line, s, k, "expected a number, got '" + e.value + "'");
    return v;
  }

  static std::int64_t to_int(const Entry& e, const std::string& s, const std::string& k) {
    std::int64_t v = 0;
    const auto* b = e.value.data();
    const auto [p, ec] = std::from_chars(b, b + e.value.size(), v);
    if (ec != std::errc() || p != b + e.value.size())
      throw ConfigError(e.line, s, k, "expected an integer, got '" + e.value + "'");
    return v;
  }

  static std::string strip_comment(std::string_view raw) {
    const auto c = raw.find_first_of("#;");
    return std::string(raw.substr(0, c));
  }

  static std::string trim(std::string_view v) {
    const auto b = v.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = v.find_last_not_of(" \t\r");
    return std::string(v.substr(b, e - b + 1));
  }

  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::map<std::string, std::size_t> section_lines_;
};

}  // namespace rts
