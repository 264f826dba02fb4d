#pragma once

// Line-oriented "[section name]" / "key = value" documents. Every value keeps
// its line number so downstream validation can cite it.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace impsym {

struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

class KvSection {
public:
  std::string kind;   // first word of the header, e.g. "subsystem"
  std::string name;   // optional second word, e.g. "a"
  std::size_t line = 0;
  std::vector<KvEntry> entries;
  std::string origin;  // file name used in messages

  const KvEntry* find(std::string_view key) const;
  bool has(std::string_view key) const { return find(key) != nullptr; }
  const KvEntry& require(std::string_view key) const;

  std::string get_string(std::string_view key) const;
  std::optional<std::string> get_string_opt(std::string_view key) const;
  double get_number(std::string_view key) const;
  std::optional<double> get_number_opt(std::string_view key) const;
  std::int64_t get_int(std::string_view key) const;
  std::optional<std::int64_t> get_int_opt(std::string_view key) const;
  std::vector<double> get_numbers(std::string_view key) const;
  std::optional<std::vector<double>> get_numbers_opt(std::string_view key) const;

  /// "file:line: message" for an entry of this section.
  std::string where(const KvEntry& e) const;
  std::string where() const;
};

class KvDocument {
public:
  std::string origin;
  std::vector<KvSection> sections;

  static KvDocument parse(std::string_view text, std::string origin = "<input>");
  static KvDocument load(const std::string& path);

  std::vector<const KvSection*> all(std::string_view kind) const;
  const KvSection* first(std::string_view kind) const;
  const KvSection* find(std::string_view kind, std::string_view name) const;
};

/// Parses "1, 2 3; 4" or "[1, 2, 3]" into numbers. Throws InputError.
std::vector<double> parse_number_list(std::string_view text);
double parse_number(std::string_view text);

}  // namespace impsym
