#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "xrseq/error.hpp"

namespace xrseq {

// Canonical finding-label vocabulary. The order is fixed and versioned:
// output vector positions, one-hot targets, and report rows all depend
// on these indices. Fourteen disease labels plus "No Finding".
inline constexpr int kNumLabels = 15;

inline constexpr std::array<std::string_view, kNumLabels> kLabelVocabulary = {
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Effusion",
    "Emphysema",
    "Fibrosis",
    "Hernia",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pleural_Thickening",
    "Pneumonia",
    "Pneumothorax",
    "No Finding",
};

inline constexpr int kNoFindingIndex = 14;

inline std::string_view label_name(int index) {
  return kLabelVocabulary.at(static_cast<size_t>(index));
}

/// Exact, case-sensitive lookup of a (pre-trimmed) label token.
inline std::optional<int> find_label(std::string_view token) {
  for (int i = 0; i < kNumLabels; ++i) {
    if (kLabelVocabulary[static_cast<size_t>(i)] == token) return i;
  }
  return std::nullopt;
}

inline int require_label(std::string_view token) {
  auto idx = find_label(token);
  if (!idx) raise(ErrorKind::unknown_label, "'" + std::string(token) + "' is not in the label vocabulary");
  return *idx;
}

}  // namespace xrseq
