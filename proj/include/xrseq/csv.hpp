#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "xrseq/error.hpp"

namespace xrseq {

// Minimal CSV support: comma-delimited, UTF-8, double-quote escaping.
// Handles quoted fields containing commas, quotes, and newlines; strips
// a UTF-8 BOM and tolerates CRLF line endings.

/// Reads one CSV record (may span lines inside quotes). Returns false at EOF.
inline bool csv_read_row(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  int c = in.get();
  if (c == std::char_traits<char>::eof()) return false;

  std::string field;
  bool in_quotes = false;
  bool any = false;
  while (true) {
    if (c == std::char_traits<char>::eof()) {
      fields.push_back(field);
      return true;
    }
    const char ch = static_cast<char>(c);
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"' && field.empty() && !any) {
      in_quotes = true;
    } else if (ch == ',') {
      fields.push_back(field);
      field.clear();
      any = false;
      c = in.get();
      continue;
    } else if (ch == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      fields.push_back(field);
      return true;
    } else {
      field.push_back(ch);
      any = true;
    }
    c = in.get();
  }
}

inline std::string csv_escape(const std::string& s) {
  bool needs = false;
  for (char ch : s) {
    if (ch == ',' || ch == '"' || ch == '\n' || ch == '\r') {
      needs = true;
      break;
    }
  }
  if (!needs) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += "\"\"";
    else out.push_back(ch);
  }
  out += "\"";
  return out;
}

inline void csv_write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_escape(fields[i]);
  }
  out << '\n';
}

inline void strip_bom(std::istream& in) {
  if (in.peek() == 0xEF) {
    char bom[3];
    in.read(bom, 3);
  }
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace xrseq
