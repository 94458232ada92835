#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "xrseq/csv.hpp"
#include "xrseq/error.hpp"
#include "xrseq/labels.hpp"
#include "xrseq/metadata.hpp"
#include "xrseq/rng.hpp"

namespace xrseq {

/// One training sample: an ordered triplet of a patient's consecutive
/// follow-up X-rays plus a single target label taken from the third.
struct SampleSet {
  int64_t sample_id = 0;
  int patient_id = 0;
  ViewPosition view = ViewPosition::PA;
  std::array<std::string, 3> images;          // refs, follow-up ascending
  std::array<int, 3> source_followups{};      // strictly increasing, adjacent
  int target_label = 0;                       // vocabulary index
  std::vector<int> original_third_labels;     // third image's labels pre-explosion
};

using RecordWindow = std::array<XrayRecord, 3>;

enum class SplitMode { by_sample, by_patient };

inline std::string_view split_mode_name(SplitMode m) {
  return m == SplitMode::by_sample ? "by_sample" : "by_patient";
}

struct DatasetSplit {
  std::vector<SampleSet> train, test, validation;
  uint64_t seed = 0;
  SplitMode mode = SplitMode::by_sample;
  std::array<double, 3> ratios = {0.7, 0.2, 0.1};
};

inline void validate_sample(const SampleSet& s) {
  if (!(s.source_followups[0] < s.source_followups[1] && s.source_followups[1] < s.source_followups[2])) {
    raise(ErrorKind::schema_mismatch,
          "sample " + std::to_string(s.sample_id) + ": follow-ups not strictly increasing");
  }
  if (s.target_label < 0 || s.target_label >= kNumLabels) {
    raise(ErrorKind::unknown_label, "sample " + std::to_string(s.sample_id) + ": target label out of range");
  }
  if (std::find(s.original_third_labels.begin(), s.original_third_labels.end(), s.target_label) ==
      s.original_third_labels.end()) {
    raise(ErrorKind::schema_mismatch,
          "sample " + std::to_string(s.sample_id) + ": target_label not among the third image's labels");
  }
}

/// Sliding windows of width 3, stride 1 over a patient's sorted record
/// sequence. n records yield n-2 windows.
inline std::vector<RecordWindow> build_windows(const PatientGroup& group) {
  if (group.records.size() < 3) {
    raise(ErrorKind::too_few_records, "patient " + std::to_string(group.patient_id) + " has only " +
                                          std::to_string(group.records.size()) + " records");
  }
  std::vector<RecordWindow> windows;
  windows.reserve(group.records.size() - 2);
  for (size_t i = 0; i + 2 < group.records.size(); ++i) {
    windows.push_back({group.records[i], group.records[i + 1], group.records[i + 2]});
  }
  return windows;
}

inline std::string image_ref(const XrayRecord& r) {
  return r.image_path.empty() ? r.image_index : r.image_path;
}

/// Multi-label explosion: one sample per label of the window's third
/// record, iterated in vocabulary order. Ids run from `first_id`.
inline std::vector<SampleSet> explode_multilabel(const RecordWindow& window, int64_t first_id = 0) {
  std::vector<SampleSet> samples;
  samples.reserve(window[2].labels.size());
  for (int label : window[2].labels) {
    SampleSet s;
    s.sample_id = first_id++;
    s.patient_id = window[0].patient_id;
    s.view = window[2].view;
    s.images = {image_ref(window[0]), image_ref(window[1]), image_ref(window[2])};
    s.source_followups = {window[0].followup_num, window[1].followup_num, window[2].followup_num};
    s.target_label = label;
    s.original_third_labels = window[2].labels;
    samples.push_back(std::move(s));
  }
  return samples;
}

/// Windows + explosion over all groups with deterministic id assignment:
/// (patient id, first follow-up, vocabulary order).
inline std::vector<SampleSet> build_sample_sets(const std::vector<PatientGroup>& groups) {
  std::vector<SampleSet> all;
  int64_t next_id = 0;
  for (const auto& group : groups) {
    for (const auto& window : build_windows(group)) {
      auto burst = explode_multilabel(window, next_id);
      next_id += static_cast<int64_t>(burst.size());
      for (auto& s : burst) all.push_back(std::move(s));
    }
  }
  return all;
}

/// Partitions by view position, order preserved within each output.
inline std::pair<std::vector<SampleSet>, std::vector<SampleSet>> split_by_view(
    const std::vector<SampleSet>& samples) {
  std::pair<std::vector<SampleSet>, std::vector<SampleSet>> out;
  for (const auto& s : samples) {
    (s.view == ViewPosition::PA ? out.first : out.second).push_back(s);
  }
  return out;
}

/// Deterministic 70/20/10 split: seeded Fisher-Yates shuffle, then a
/// contiguous cut (train = floor(r0*n), test = floor(r1*n), validation
/// = remainder). In by_patient mode patients are shuffled and assigned
/// whole, cut by patient count.
inline DatasetSplit split_train_test_val(const std::vector<SampleSet>& samples, uint64_t seed,
                                         SplitMode mode = SplitMode::by_sample,
                                         std::array<double, 3> ratios = {0.7, 0.2, 0.1}) {
  if (samples.empty()) raise(ErrorKind::empty_input, "no samples to split");
  DatasetSplit split;
  split.seed = seed;
  split.mode = mode;
  split.ratios = ratios;
  DeterministicRng rng(seed);

  if (mode == SplitMode::by_sample) {
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const size_t n = samples.size();
    const size_t n_train = static_cast<size_t>(ratios[0] * static_cast<double>(n));
    const size_t n_test = static_cast<size_t>(ratios[1] * static_cast<double>(n));
    for (size_t i = 0; i < n; ++i) {
      const SampleSet& s = samples[order[i]];
      if (i < n_train) split.train.push_back(s);
      else if (i < n_train + n_test) split.test.push_back(s);
      else split.validation.push_back(s);
    }
  } else {
    std::vector<int> patients;
    for (const auto& s : samples) patients.push_back(s.patient_id);
    std::sort(patients.begin(), patients.end());
    patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    rng.shuffle(patients);
    const size_t p = patients.size();
    const size_t p_train = static_cast<size_t>(ratios[0] * static_cast<double>(p));
    const size_t p_test = static_cast<size_t>(ratios[1] * static_cast<double>(p));
    std::map<int, int> assignment;  // patient -> partition 0/1/2
    for (size_t i = 0; i < p; ++i) {
      assignment[patients[i]] = i < p_train ? 0 : (i < p_train + p_test ? 1 : 2);
    }
    for (const auto& s : samples) {
      switch (assignment[s.patient_id]) {
        case 0: split.train.push_back(s); break;
        case 1: split.test.push_back(s); break;
        default: split.validation.push_back(s); break;
      }
    }
  }
  return split;
}

struct CohortStats {
  size_t n_samples = 0;
  size_t n_patients = 0;
  std::array<size_t, kNumLabels> per_label{};
  size_t n_pa = 0, n_ap = 0;
};

inline CohortStats cohort_stats(const std::vector<SampleSet>& samples) {
  CohortStats st;
  std::set<int> patients;
  for (const auto& s : samples) {
    ++st.n_samples;
    patients.insert(s.patient_id);
    st.per_label[static_cast<size_t>(s.target_label)]++;
    (s.view == ViewPosition::PA ? st.n_pa : st.n_ap)++;
  }
  st.n_patients = patients.size();
  return st;
}

// ---------------------------------------------------------------------------
// Manifest CSV: fixed schema, one row per sample, all three partitions in
// one file distinguished by split_partition.
// ---------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 11> kManifestColumns = {
    "sample_id", "patient_id", "view", "followup_1", "followup_2", "followup_3",
    "image_1",   "image_2",    "image_3", "target_label", "split_partition"};

inline void write_manifest(const DatasetSplit& split, std::ostream& out) {
  csv_write_row(out, std::vector<std::string>(kManifestColumns.begin(), kManifestColumns.end()));
  auto emit = [&](const std::vector<SampleSet>& part, const char* name) {
    for (const auto& s : part) {
      validate_sample(s);
      csv_write_row(out, {std::to_string(s.sample_id), std::to_string(s.patient_id),
                          std::string(view_name(s.view)), std::to_string(s.source_followups[0]),
                          std::to_string(s.source_followups[1]), std::to_string(s.source_followups[2]),
                          s.images[0], s.images[1], s.images[2],
                          std::string(label_name(s.target_label)), name});
    }
  };
  emit(split.train, "train");
  emit(split.test, "test");
  emit(split.validation, "validation");
}

inline void write_manifest(const DatasetSplit& split, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::io_error, "cannot open '" + path + "' for writing");
  write_manifest(split, out);
}

inline DatasetSplit read_manifest(std::istream& in) {
  strip_bom(in);
  std::vector<std::string> header;
  if (!csv_read_row(in, header)) raise(ErrorKind::schema_mismatch, "empty manifest");
  if (header.size() != kManifestColumns.size()) {
    raise(ErrorKind::schema_mismatch, "manifest has " + std::to_string(header.size()) +
                                          " columns, expected " + std::to_string(kManifestColumns.size()));
  }
  for (size_t i = 0; i < header.size(); ++i) {
    if (trim(header[i]) != kManifestColumns[i]) {
      raise(ErrorKind::schema_mismatch, "manifest column " + std::to_string(i + 1) + " is '" +
                                            header[i] + "', expected '" +
                                            std::string(kManifestColumns[i]) + "'");
    }
  }
  DatasetSplit split;
  std::vector<std::string> row;
  while (csv_read_row(in, row)) {
    if (row.size() == 1 && trim(row[0]).empty()) continue;
    if (row.size() != kManifestColumns.size()) {
      raise(ErrorKind::schema_mismatch, "manifest row with " + std::to_string(row.size()) + " fields");
    }
    SampleSet s;
    s.sample_id = std::stoll(row[0]);
    s.patient_id = detail::parse_int_strict(row[1], "patient id");
    s.view = parse_view(trim(row[2]));
    s.source_followups = {detail::parse_int_strict(row[3], "follow-up"),
                          detail::parse_int_strict(row[4], "follow-up"),
                          detail::parse_int_strict(row[5], "follow-up")};
    s.images = {row[6], row[7], row[8]};
    s.target_label = require_label(trim(row[9]));
    s.original_third_labels = {s.target_label};  // manifest stores the exploded label only
    validate_sample(s);
    const std::string part = trim(row[10]);
    if (part == "train") split.train.push_back(std::move(s));
    else if (part == "test") split.test.push_back(std::move(s));
    else if (part == "validation") split.validation.push_back(std::move(s));
    else raise(ErrorKind::schema_mismatch, "unknown split partition '" + part + "'");
  }
  return split;
}

inline DatasetSplit read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::io_error, "cannot open manifest '" + path + "'");
  return read_manifest(in);
}

}  // namespace xrseq
