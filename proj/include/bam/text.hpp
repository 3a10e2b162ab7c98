#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "bam/errors.hpp"

namespace bam {

// Locale-independent number <-> text helpers. Doubles use the shortest
// round-trip decimal form (std::to_chars), so writing and re-reading a value
// is exact and identical inputs always serialize to identical bytes.

inline std::string format_double(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

inline std::string format_int(long long x) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

inline std::string format_u64(std::uint64_t x) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
  double v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ParseError(context + ": bad number '" + std::string(s) + "'");
  return v;
}

inline long long parse_int(std::string_view s, const std::string& context) {
  long long v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ParseError(context + ": bad integer '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_u64(std::string_view s, const std::string& context) {
  std::uint64_t v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ParseError(context + ": bad unsigned integer '" + std::string(s) + "'");
  return v;
}

inline std::string_view trim(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

// A key = value line from a structured text file, with its source line for
// error messages.
struct KvEntry {
  std::string key;
  std::string value;
  int line = 0;
};

// Parses "key = value" lines; '#' starts a comment, blank lines are skipped.
inline std::vector<KvEntry> parse_kv_text(const std::string& text, const std::string& context) {
  std::vector<KvEntry> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = line;
    std::size_t hash = sv.find('#');
    if (hash != std::string_view::npos) sv = sv.substr(0, hash);
    sv = trim(sv);
    if (sv.empty()) continue;
    std::size_t eq = sv.find('=');
    if (eq == std::string_view::npos)
      throw ParseError(context + ":" + std::to_string(line_no) + ": expected 'key = value'");
    KvEntry e;
    e.key = std::string(trim(sv.substr(0, eq)));
    e.value = std::string(trim(sv.substr(eq + 1)));
    e.line = line_no;
    if (e.key.empty())
      throw ParseError(context + ":" + std::to_string(line_no) + ": empty key");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path + "'");
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace bam
