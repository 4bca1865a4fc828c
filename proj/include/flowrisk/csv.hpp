#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "flowrisk/error.hpp"

namespace flowrisk {

// Shortest decimal representation that round-trips to the same double.
inline std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

// Strict double parse: the whole field must be consumed.
inline bool parse_double(std::string_view text, double& out) {
  // Tolerate surrounding spaces, which show up in hand-edited CSVs.
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
  if (text.empty()) return false;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

// Streaming CSV reader. Fields are returned as views into an internal line
// buffer, valid until the next call. Handles quoted fields with doubled
// quotes and CRLF line endings; does not support embedded newlines (none of
// the files this library reads or writes contain them).
class CsvReader {
 public:
  explicit CsvReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) fail("input-missing", "cannot open file: " + path);
    if (!read_record(header_)) fail("ingest-error", path + ": empty file (no header row)");
    header_names_.assign(header_.begin(), header_.end());
  }

  const std::vector<std::string>& header() const { return header_names_; }
  const std::string& path() const { return path_; }
  std::size_t line_number() const { return line_; }

  // Reads the next data row; returns false at end of input. Blank lines are
  // skipped. Throws if a row's field count differs from the header's.
  bool next_row(std::vector<std::string_view>& fields) {
    if (!read_record(fields)) return false;
    if (fields.size() != header_names_.size()) {
      fail("ingest-error", path_ + ":" + std::to_string(line_) + ": expected " +
                               std::to_string(header_names_.size()) + " fields, found " +
                               std::to_string(fields.size()));
    }
    return true;
  }

 private:
  bool read_record(std::vector<std::string_view>& fields) {
    while (std::getline(in_, linebuf_)) {
      ++line_;
      if (!linebuf_.empty() && linebuf_.back() == '\r') linebuf_.pop_back();
      if (linebuf_.empty()) continue;
      split_line(fields);
      return true;
    }
    return false;
  }

  void split_line(std::vector<std::string_view>& fields) {
    fields.clear();
    scratch_.clear();
    const char* s = linebuf_.data();
    const std::size_t n = linebuf_.size();
    std::size_t i = 0;
    while (true) {
      if (i < n && s[i] == '"') {
        // Quoted field: unescape doubled quotes into scratch storage.
        scratch_.emplace_back();
        std::string& out = scratch_.back();
        ++i;
        while (i < n) {
          if (s[i] == '"') {
            if (i + 1 < n && s[i + 1] == '"') {
              out.push_back('"');
              i += 2;
            } else {
              ++i;
              break;
            }
          } else {
            out.push_back(s[i]);
            ++i;
          }
        }
        fields.emplace_back(out);
      } else {
        const std::size_t start = i;
        while (i < n && s[i] != ',') ++i;
        fields.emplace_back(s + start, i - start);
      }
      if (i >= n) break;
      if (s[i] == ',') {
        ++i;
        if (i == n) {  // trailing comma: final empty field
          fields.emplace_back();
          break;
        }
      } else {
        fail("ingest-error",
             path_ + ":" + std::to_string(line_) + ": malformed quoting");
      }
    }
  }

  std::string path_;
  std::ifstream in_;
  std::string linebuf_;
  std::vector<std::string> scratch_;  // backing for unescaped quoted fields
  std::vector<std::string_view> header_;
  std::vector<std::string> header_names_;
  std::size_t line_ = 1;  // header consumed in constructor
};

// Writes a file atomically: content goes to "<path>.tmp", which is renamed
// over the destination only after a successful close. Readers never observe
// a partially written file.
inline void atomic_write(const std::string& path,
                         const std::function<void(std::ostream&)>& writer) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("io-error", "cannot open for writing: " + tmp);
    writer(out);
    out.flush();
    if (!out) fail("io-error", "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail("io-error", "rename failed: " + tmp + " -> " + path + ": " + ec.message());
}

inline void atomic_write_text(const std::string& path, const std::string& content) {
  atomic_write(path, [&](std::ostream& out) { out << content; });
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("input-missing", "cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace flowrisk
