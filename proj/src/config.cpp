#include "merinda/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "merinda/errors.hpp"

namespace merinda {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(const std::string& text, const std::string& source, std::size_t line,
                    const std::string& field) {
  const std::string t = trim(text);
  double value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ParseError(source, line, field, "expected a number, got '" + t + "'");
  return value;
}

std::int64_t parse_int(const std::string& text, const std::string& source, std::size_t line,
                       const std::string& field) {
  const std::string t = trim(text);
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ParseError(source, line, field, "expected an integer, got '" + t + "'");
  return value;
}

std::string format_decimal(double value) {
  char buf[512];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
  if (ec != std::errc()) throw ContractError("format_decimal: value out of range");
  std::string out(buf, ptr);
  return out == "-0" ? "0" : out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContractError("cannot write '" + path + "'");
  out << contents;
  if (!out) throw ContractError("failed writing '" + path + "'");
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source) {
  KeyValueConfig cfg;
  cfg.source_ = source;
  std::istringstream is(text);
  std::string raw;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(source, lineno, "", "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ParseError(source, lineno, "", "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (section.empty()) throw ParseError(source, lineno, "", "expected 'key = value'");
      cfg.tables_[section].push_back({line, lineno});
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(source, lineno, "", "missing key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.entries_.count(full)) throw ParseError(source, lineno, full, "duplicate key");
    cfg.entries_[full] = {trim(line.substr(eq + 1)), lineno};
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) { return parse(read_file(path), path); }

const std::vector<KeyValueConfig::Row>& KeyValueConfig::table(const std::string& section) const {
  static const std::vector<Row> empty;
  const auto it = tables_.find(section);
  return it == tables_.end() ? empty : it->second;
}

const KeyValueConfig::Entry& KeyValueConfig::require(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ParseError(source_, 0, key, "missing required key");
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key) const { return require(key).value; }

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}

std::int64_t KeyValueConfig::get_int(const std::string& key) const {
  const Entry& e = require(key);
  return parse_int(e.value, source_, e.line, key);
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const Entry& e = require(key);
  return parse_double(e.value, source_, e.line, key);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const Entry& e = require(key);
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ParseError(source_, e.line, key, "expected a boolean, got '" + e.value + "'");
}

std::vector<std::int64_t> KeyValueConfig::get_int_list(
    const std::string& key, const std::vector<std::int64_t>& fallback) const {
  if (!has(key)) return fallback;
  const Entry& e = require(key);
  std::vector<std::int64_t> out;
  std::istringstream ss(e.value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_int(item, source_, e.line, key));
  }
  return out;
}

void KeyValueConfig::reject_unknown(const std::vector<std::string>& known) const {
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, entry] : entries_)
    if (!allowed.count(key)) throw ParseError(source_, entry.line, key, "unknown key");
}

}  // namespace merinda
