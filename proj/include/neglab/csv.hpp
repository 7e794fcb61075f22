/*
 * Copyright 2026 The neglab Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "neglab/core.hpp"

namespace neglab::csv {

/// Shortest round-trip representation; identical bits give identical text.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

inline std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

using Field = std::variant<std::string, double, long long>;

inline std::string to_text(const Field& f) {
  if (const auto* s = std::get_if<std::string>(&f)) return quote(*s);
  if (const auto* d = std::get_if<double>(&f)) return format_real(*d);
  return std::to_string(std::get<long long>(f));
}

/// RFC-4180 writer (CRLF line endings).
class Writer {
 public:
  Writer(const std::string& path, const std::vector<std::string>& header) : path_(path), os_(path, std::ios::binary) {
    if (!os_) throw FormatError("cannot open " + path + " for writing");
    std::vector<Field> h(header.begin(), header.end());
    row(h);
    width_ = header.size();
  }

  void row(const std::vector<Field>& fields) {
    if (width_ != 0 && fields.size() != width_) throw InputError(path_ + ": row width mismatch");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) os_ << ',';
      os_ << to_text(fields[i]);
    }
    os_ << "\r\n";
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream os_;
  std::size_t width_ = 0;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline Table parse(std::istream& is) {
  Table t;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false, any = false;
  char c;
  auto end_row = [&] {
    row.push_back(field);
    field.clear();
    if (t.header.empty()) t.header = row;
    else t.rows.push_back(row);
    row.clear();
    any = false;
  };
  while (is.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (is.peek() == '"') {
          is.get(c);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
      any = true;
    } else if (c == ',') {
      row.push_back(field);
      field.clear();
      any = true;
    } else if (c == '\r') {
      continue;
    } else if (c == '\n') {
      end_row();
    } else {
      field += c;
      any = true;
    }
  }
  if (in_quotes) throw FormatError("csv: unterminated quote");
  if (any || !field.empty() || !row.empty()) end_row();
  return t;
}

inline Table read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return parse(is);
}

}  // namespace neglab::csv
