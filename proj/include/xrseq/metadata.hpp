#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "xrseq/csv.hpp"
#include "xrseq/error.hpp"
#include "xrseq/labels.hpp"

namespace xrseq {

enum class ViewPosition { PA, AP };

inline std::string_view view_name(ViewPosition v) { return v == ViewPosition::PA ? "PA" : "AP"; }

inline ViewPosition parse_view(const std::string& token) {
  if (token == "PA") return ViewPosition::PA;
  if (token == "AP") return ViewPosition::AP;
  raise(ErrorKind::malformed_row, "unknown view position '" + token + "'");
}

/// One metadata row. `labels` holds vocabulary indices, sorted ascending
/// (vocabulary order), unique, nonempty. Extra CSV columns are retained
/// as opaque strings and excluded from equality.
struct XrayRecord {
  std::string image_index;
  int patient_id = 0;
  int followup_num = 0;
  std::vector<int> labels;
  ViewPosition view = ViewPosition::PA;
  int age = 0;
  char gender = 'M';
  std::string image_path;            // resolved lazily; empty until attached
  std::vector<std::string> extras;   // unparsed extra columns, in stream order

  bool operator==(const XrayRecord& o) const {
    return image_index == o.image_index && patient_id == o.patient_id &&
           followup_num == o.followup_num && labels == o.labels && view == o.view &&
           age == o.age && gender == o.gender;
  }
};

struct PatientGroup {
  int patient_id = 0;
  std::vector<XrayRecord> records;  // sorted ascending by followup_num
};

namespace detail {

inline int parse_int_strict(const std::string& s, const char* what) {
  const std::string t = trim(s);
  if (t.empty()) raise(ErrorKind::malformed_row, std::string("empty ") + what);
  size_t pos = 0;
  int value = 0;
  try {
    value = std::stoi(t, &pos);
  } catch (const std::exception&) {
    raise(ErrorKind::malformed_row, std::string("non-integer ") + what + " '" + t + "'");
  }
  if (pos != t.size()) raise(ErrorKind::malformed_row, std::string("non-integer ") + what + " '" + t + "'");
  return value;
}

// Ages occasionally carry a unit suffix ("058Y"); take the leading integer.
inline int parse_age(const std::string& s) {
  const std::string t = trim(s);
  size_t i = 0;
  while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
  if (i == 0) raise(ErrorKind::malformed_row, "unparsable age '" + t + "'");
  return std::stoi(t.substr(0, i));
}

inline std::vector<int> parse_label_field(const std::string& field) {
  std::vector<int> labels;
  size_t start = 0;
  const std::string f = field;
  while (start <= f.size()) {
    size_t bar = f.find('|', start);
    std::string token = trim(f.substr(start, bar == std::string::npos ? std::string::npos : bar - start));
    if (!token.empty()) labels.push_back(require_label(token));
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  if (labels.empty()) raise(ErrorKind::malformed_row, "empty Finding Labels field");
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (labels.size() > 1 &&
      std::find(labels.begin(), labels.end(), kNoFindingIndex) != labels.end()) {
    raise(ErrorKind::malformed_row, "'No Finding' combined with disease labels");
  }
  return labels;
}

}  // namespace detail

inline constexpr std::array<std::string_view, 7> kRequiredColumns = {
    "Image Index", "Finding Labels", "Follow-up #", "Patient ID",
    "Patient Age", "Patient Gender", "View Position"};

/// Parses an NIH-schema metadata CSV. Header must contain the seven
/// required columns (any order); extra columns are kept as opaque
/// strings. Row order is preserved.
inline std::vector<XrayRecord> parse_metadata(std::istream& in) {
  strip_bom(in);
  std::vector<std::string> header;
  if (!csv_read_row(in, header)) raise(ErrorKind::missing_column, "empty stream, no header row");
  for (auto& h : header) h = trim(h);

  std::array<int, 7> col{};
  for (size_t r = 0; r < kRequiredColumns.size(); ++r) {
    auto it = std::find(header.begin(), header.end(), kRequiredColumns[r]);
    if (it == header.end()) {
      raise(ErrorKind::missing_column, "header lacks required column '" + std::string(kRequiredColumns[r]) + "'");
    }
    col[r] = static_cast<int>(it - header.begin());
  }
  std::vector<int> extra_cols;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    if (std::find(col.begin(), col.end(), i) == col.end()) extra_cols.push_back(i);
  }

  std::vector<XrayRecord> records;
  std::vector<std::string> row;
  size_t line = 1;
  while (csv_read_row(in, row)) {
    ++line;
    if (row.size() == 1 && trim(row[0]).empty()) continue;  // blank trailing line
    if (row.size() < header.size()) {
      raise(ErrorKind::malformed_row, "line " + std::to_string(line) + ": expected " +
                                          std::to_string(header.size()) + " fields, got " +
                                          std::to_string(row.size()));
    }
    XrayRecord rec;
    rec.image_index = trim(row[static_cast<size_t>(col[0])]);
    rec.labels = detail::parse_label_field(row[static_cast<size_t>(col[1])]);
    rec.followup_num = detail::parse_int_strict(row[static_cast<size_t>(col[2])], "follow-up number");
    rec.patient_id = detail::parse_int_strict(row[static_cast<size_t>(col[3])], "patient id");
    rec.age = detail::parse_age(row[static_cast<size_t>(col[4])]);
    const std::string gender = trim(row[static_cast<size_t>(col[5])]);
    if (gender != "M" && gender != "F") {
      raise(ErrorKind::malformed_row, "line " + std::to_string(line) + ": unknown gender '" + gender + "'");
    }
    rec.gender = gender[0];
    rec.view = parse_view(trim(row[static_cast<size_t>(col[6])]));
    if (rec.followup_num < 0) raise(ErrorKind::malformed_row, "negative follow-up number");
    if (rec.patient_id <= 0) raise(ErrorKind::malformed_row, "non-positive patient id");
    for (int e : extra_cols) {
      if (e < static_cast<int>(row.size())) rec.extras.push_back(row[static_cast<size_t>(e)]);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::string format_label_field(const std::vector<int>& labels) {
  std::string out;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (i) out += '|';
    out += std::string(label_name(labels[i]));
  }
  return out;
}

/// Writes records back in the NIH schema (seven canonical columns;
/// extras re-emitted as "Extra N"). parse(serialize(x)) == x.
inline void serialize_metadata(const std::vector<XrayRecord>& records, std::ostream& out) {
  size_t n_extras = 0;
  for (const auto& r : records) n_extras = std::max(n_extras, r.extras.size());
  std::vector<std::string> header(kRequiredColumns.begin(), kRequiredColumns.end());
  for (size_t i = 0; i < n_extras; ++i) header.push_back("Extra " + std::to_string(i + 1));
  csv_write_row(out, header);
  for (const auto& r : records) {
    std::vector<std::string> row = {
        r.image_index,
        format_label_field(r.labels),
        std::to_string(r.followup_num),
        std::to_string(r.patient_id),
        std::to_string(r.age),
        std::string(1, r.gender),
        std::string(view_name(r.view)),
    };
    for (size_t i = 0; i < n_extras; ++i) row.push_back(i < r.extras.size() ? r.extras[i] : "");
    csv_write_row(out, row);
  }
}

/// Groups records per patient, sorted by follow-up number. Groups are
/// ordered by ascending patient id. Duplicate follow-up numbers within
/// a patient are an error.
inline std::vector<PatientGroup> group_patients(const std::vector<XrayRecord>& records) {
  std::map<int, PatientGroup> by_patient;
  for (const auto& rec : records) {
    auto& group = by_patient[rec.patient_id];
    group.patient_id = rec.patient_id;
    group.records.push_back(rec);
  }
  std::vector<PatientGroup> groups;
  groups.reserve(by_patient.size());
  for (auto& [pid, group] : by_patient) {
    std::sort(group.records.begin(), group.records.end(),
              [](const XrayRecord& a, const XrayRecord& b) { return a.followup_num < b.followup_num; });
    for (size_t i = 1; i < group.records.size(); ++i) {
      if (group.records[i].followup_num == group.records[i - 1].followup_num) {
        raise(ErrorKind::duplicate_followup,
              "patient " + std::to_string(pid) + " has two records with follow-up " +
                  std::to_string(group.records[i].followup_num));
      }
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

/// Filter 1: keep patients with at least three X-ray records
/// (follow-up numbering starts at 0; downstream windows need three).
inline std::vector<PatientGroup> filter_min_followups(const std::vector<PatientGroup>& groups) {
  std::vector<PatientGroup> kept;
  for (const auto& g : groups) {
    if (g.records.size() >= 3) kept.push_back(g);
  }
  return kept;
}

/// Filter 2: keep patients whose records all share one view position.
inline std::vector<PatientGroup> filter_consistent_view(const std::vector<PatientGroup>& groups) {
  std::vector<PatientGroup> kept;
  for (const auto& g : groups) {
    bool consistent = true;
    for (const auto& r : g.records) {
      if (r.view != g.records.front().view) {
        consistent = false;
        break;
      }
    }
    if (consistent) kept.push_back(g);
  }
  return kept;
}

}  // namespace xrseq
