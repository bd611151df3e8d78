#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace merinda {

// Declarative text config: `key = value` lines grouped under optional
// `[section]` headers, `#` comments. Lines without `=` inside a section are
// kept verbatim as table rows of that section. Keys are addressed as
// "section.key" (or just "key" before the first header).
class KeyValueConfig {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  struct Row {
    std::string text;
    std::size_t line = 0;
  };

  static KeyValueConfig parse(const std::string& text, const std::string& source);
  static KeyValueConfig load(const std::string& path);

  const std::string& source() const { return source_; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  const std::vector<Row>& table(const std::string& section) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::int64_t> get_int_list(const std::string& key,
                                         const std::vector<std::int64_t>& fallback) const;

  // Throws ParseError naming the first key not in `known`.
  void reject_unknown(const std::vector<std::string>& known) const;

 private:
  const Entry& require(const std::string& key) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, std::vector<Row>> tables_;
};

// Whitespace trim.
std::string trim(const std::string& s);

// Strict numeric conversions; throw ParseError with the given context.
double parse_double(const std::string& text, const std::string& source, std::size_t line,
                    const std::string& field);
std::int64_t parse_int(const std::string& text, const std::string& source, std::size_t line,
                       const std::string& field);

// Shortest round-trip fixed-point decimal text for a double.
std::string format_decimal(double value);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace merinda
