#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "xrseq/error.hpp"

namespace xrseq {

/// ROC AUC as the Mann-Whitney statistic: the probability that a random
/// positive outscores a random negative, ties counted half. Computed via
/// average ranks in O(n log n). Undefined (nullopt) when either class is
/// absent.
inline std::optional<double> auc_score(const std::vector<double>& scores,
                                       const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    raise(ErrorKind::length_mismatch, "scores size " + std::to_string(scores.size()) +
                                          " != labels size " + std::to_string(labels.size()));
  }
  const size_t n = scores.size();
  size_t pos = 0;
  for (int y : labels) pos += y ? 1 : 0;
  const size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) {
      if (labels[idx[k]]) pos_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

/// ROC points from (0,0) to (1,1), thresholds swept over distinct scores
/// descending. The trapezoidal area under the returned polyline equals
/// auc_score exactly (tied scores form single segments, which is where
/// the half-credit for ties comes from).
inline std::vector<std::pair<double, double>> roc_curve(const std::vector<double>& scores,
                                                        const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    raise(ErrorKind::length_mismatch, "scores/labels size mismatch");
  }
  size_t pos = 0;
  for (int y : labels) pos += y ? 1 : 0;
  const size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) {
    raise(ErrorKind::degenerate_classes, "ROC needs both classes present");
  }

  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<std::pair<double, double>> points;
  points.emplace_back(0.0, 0.0);
  size_t tp = 0, fp = 0, i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    for (size_t k = i; k <= j; ++k) {
      if (labels[idx[k]]) ++tp;
      else ++fp;
    }
    points.emplace_back(static_cast<double>(fp) / static_cast<double>(neg),
                        static_cast<double>(tp) / static_cast<double>(pos));
    i = j + 1;
  }
  return points;
}

/// Trapezoidal area under an ROC polyline.
inline double trapezoid_area(const std::vector<std::pair<double, double>>& points) {
  double area = 0.0;
  for (size_t i = 1; i < points.size(); ++i) {
    area += (points[i].first - points[i - 1].first) * (points[i].second + points[i - 1].second) / 2.0;
  }
  return area;
}

}  // namespace xrseq
