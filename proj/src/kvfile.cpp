#include "impsym/kvfile.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "impsym/error.hpp"

namespace impsym {

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

double parse_number(std::string_view text) {
  const std::string_view t = trim(text);
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (!t.empty() && t.front() == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (t.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v))
    throw InputError("expected a number, got '" + std::string(t) + "'");
  return v;
}

std::vector<double> parse_number_list(std::string_view text) {
  std::string_view t = trim(text);
  if (!t.empty() && t.front() == '[') {
    if (t.back() != ']') throw InputError("unbalanced '[' in number list");
    t = t.substr(1, t.size() - 2);
  }
  std::vector<double> out;
  std::string token;
  auto flush = [&] {
    if (!token.empty()) {
      out.push_back(parse_number(token));
      token.clear();
    }
  };
  for (char c : t) {
    if (c == ',' || c == ';' || c == ' ' || c == '\t')
      flush();
    else
      token += c;
  }
  flush();
  return out;
}

const KvEntry* KvSection::find(std::string_view key) const {
  for (const auto& e : entries)
    if (e.key == key) return &e;
  return nullptr;
}

std::string KvSection::where(const KvEntry& e) const {
  return origin + ":" + std::to_string(e.line);
}

std::string KvSection::where() const { return origin + ":" + std::to_string(line); }

const KvEntry& KvSection::require(std::string_view key) const {
  const KvEntry* e = find(key);
  if (!e)
    throw InputError(where() + ": section [" + kind + (name.empty() ? "" : " " + name) +
                     "] is missing key '" + std::string(key) + "'");
  return *e;
}

std::string KvSection::get_string(std::string_view key) const { return require(key).value; }

std::optional<std::string> KvSection::get_string_opt(std::string_view key) const {
  const KvEntry* e = find(key);
  if (!e) return std::nullopt;
  return e->value;
}

double KvSection::get_number(std::string_view key) const {
  const KvEntry& e = require(key);
  try {
    return parse_number(e.value);
  } catch (const InputError& err) {
    throw InputError(where(e) + ": " + e.key + ": " + err.what());
  }
}

std::optional<double> KvSection::get_number_opt(std::string_view key) const {
  if (!has(key)) return std::nullopt;
  return get_number(key);
}

std::int64_t KvSection::get_int(std::string_view key) const {
  const KvEntry& e = require(key);
  const std::string_view t = trim(e.value);
  std::int64_t v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw InputError(where(e) + ": " + e.key + ": expected an integer, got '" +
                     std::string(t) + "'");
  return v;
}

std::optional<std::int64_t> KvSection::get_int_opt(std::string_view key) const {
  if (!has(key)) return std::nullopt;
  return get_int(key);
}

std::vector<double> KvSection::get_numbers(std::string_view key) const {
  const KvEntry& e = require(key);
  try {
    return parse_number_list(e.value);
  } catch (const InputError& err) {
    throw InputError(where(e) + ": " + e.key + ": " + err.what());
  }
}

std::optional<std::vector<double>> KvSection::get_numbers_opt(std::string_view key) const {
  if (!has(key)) return std::nullopt;
  return get_numbers(key);
}

KvDocument KvDocument::parse(std::string_view text, std::string origin) {
  KvDocument doc;
  doc.origin = origin;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    start = end + 1;

    const std::size_t hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::string here = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw InputError(here + ": unterminated section header");
      std::string_view header = trim(line.substr(1, line.size() - 2));
      if (header.empty()) throw InputError(here + ": empty section header");
      KvSection s;
      s.origin = origin;
      s.line = line_no;
      const std::size_t sp = header.find_first_of(" \t");
      if (sp == std::string_view::npos) {
        s.kind = std::string(header);
      } else {
        s.kind = std::string(header.substr(0, sp));
        s.name = std::string(trim(header.substr(sp)));
      }
      doc.sections.push_back(std::move(s));
    } else {
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos)
        throw InputError(here + ": expected 'key = value' or '[section]'");
      if (doc.sections.empty()) throw InputError(here + ": key outside of any section");
      const std::string key(trim(line.substr(0, eq)));
      if (key.empty()) throw InputError(here + ": empty key");
      KvSection& s = doc.sections.back();
      if (s.has(key))
        throw InputError(here + ": duplicate key '" + key + "' (first defined at line " +
                         std::to_string(s.find(key)->line) + ")");
      s.entries.push_back({key, std::string(trim(line.substr(eq + 1))), line_no});
    }
    if (end == text.size()) break;
  }
  return doc;
}

KvDocument KvDocument::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::vector<const KvSection*> KvDocument::all(std::string_view kind) const {
  std::vector<const KvSection*> out;
  for (const auto& s : sections)
    if (s.kind == kind) out.push_back(&s);
  return out;
}

const KvSection* KvDocument::first(std::string_view kind) const {
  for (const auto& s : sections)
    if (s.kind == kind) return &s;
  return nullptr;
}

const KvSection* KvDocument::find(std::string_view kind, std::string_view name) const {
  for (const auto& s : sections)
    if (s.kind == kind && s.name == name) return &s;
  return nullptr;
}

}  // namespace impsym
