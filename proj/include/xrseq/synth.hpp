#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xrseq/error.hpp"
#include "xrseq/image.hpp"
#include "xrseq/labels.hpp"
#include "xrseq/metadata.hpp"
#include "xrseq/metrics.hpp"
#include "xrseq/rng.hpp"
#include "xrseq/samples.hpp"

namespace xrseq {

// ---------------------------------------------------------------------------
// Synthetic cohort: Gaussian blob on a noisy background, class encoded
// purely in the temporal ordering of blob sizes (or positions) across
// follow-ups. grow/shrink patients draw the same size multiset in
// opposite orders, so pooled per-frame marginals match and a single
// frame is nearly uninformative while the frame3-frame1 difference
// separates the classes by sign.
// ---------------------------------------------------------------------------

enum class Motif { grow, shrink, drift, fixed };

inline std::string_view motif_name(Motif m) {
  switch (m) {
    case Motif::grow: return "grow";
    case Motif::shrink: return "shrink";
    case Motif::drift: return "drift";
    case Motif::fixed: return "static";
  }
  return "?";
}

inline Motif parse_motif(const std::string& s) {
  if (s == "grow") return Motif::grow;
  if (s == "shrink") return Motif::shrink;
  if (s == "drift") return Motif::drift;
  if (s == "static") return Motif::fixed;
  raise(ErrorKind::config_error, "unknown motif '" + s + "' (grow, shrink, drift, static)");
}

struct MotifClass {
  Motif motif = Motif::grow;
  int label = 0;  // vocabulary index
};

struct SynthSpec {
  int n_patients = 420;
  int followups_per_patient = 3;
  std::vector<MotifClass> classes = {{Motif::grow, require_label("Mass")},
                                     {Motif::shrink, require_label("Atelectasis")}};
  int image_size = 128;      // 128 (direct) or 1024 (exercises the resize path)
  double noise_level = 5.0;  // gaussian sigma, 8-bit pixel units
  uint64_t seed = 1;
  double view_mix = 1.0;     // fraction of patients in PA view

  // blob geometry in 128-scale pixels (scaled up for 1024 images)
  double sigma_lo = 6.0;
  double sigma_hi = 14.0;
  double sigma_step = 0.25;  // per-frame size change for grow/shrink
  double amplitude = 160.0;
  double drift_step = 4.0;  // per-frame center shift for drift
};

inline void validate_synth_spec(const SynthSpec& s) {
  if (s.n_patients < 1) raise(ErrorKind::config_error, "n_patients must be >= 1");
  if (s.followups_per_patient < 3) raise(ErrorKind::config_error, "followups_per_patient must be >= 3");
  if (s.classes.empty()) raise(ErrorKind::config_error, "at least one motif class required");
  if (s.image_size != 128 && s.image_size != 1024) {
    raise(ErrorKind::config_error, "image_size must be 128 or 1024");
  }
  if (s.noise_level < 0) raise(ErrorKind::config_error, "noise_level must be >= 0");
  if (s.view_mix < 0.0 || s.view_mix > 1.0) raise(ErrorKind::config_error, "view_mix must be in [0,1]");
  std::set<int> labels;
  for (const auto& c : s.classes) {
    if (c.label < 0 || c.label >= kNumLabels) raise(ErrorKind::config_error, "motif label out of range");
    if (!labels.insert(c.label).second) {
      raise(ErrorKind::config_error, "motif classes must map to distinct labels");
    }
  }
}

struct CohortPaths {
  std::filesystem::path dir;
  std::filesystem::path metadata_csv;
  std::filesystem::path image_dir;
  std::filesystem::path tally_csv;
};

namespace detail {

inline std::string synth_image_name(int patient_id, int followup) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%08d_%03d.png", patient_id, followup);
  return buf;
}

inline std::vector<uint8_t> render_blob_frame(int size, double cx, double cy, double sigma,
                                              double amplitude, double noise_level,
                                              DeterministicRng& rng) {
  std::vector<uint8_t> px(static_cast<size_t>(size) * size);
  const double background = 30.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double blob = amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      double v = background + blob;
      if (noise_level > 0) v += noise_level * rng.next_gaussian();
      px[static_cast<size_t>(y) * size + x] =
          static_cast<uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
    }
  }
  return px;
}

}  // namespace detail

/// Emits PNG frames plus a metadata CSV in the exact NIH schema and a
/// tally of expected per-label sample counts. (spec, seed) determines
/// every output byte; patients use independent sub-streams so
/// generation could run in parallel without changing results.
inline CohortPaths generate_cohort(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  validate_synth_spec(spec);

  CohortPaths paths;
  paths.dir = out_dir;
  paths.image_dir = out_dir / "images";
  paths.metadata_csv = out_dir / "metadata.csv";
  paths.tally_csv = out_dir / "tally.csv";
  std::error_code ec;
  fs::create_directories(paths.image_dir, ec);
  if (ec) raise(ErrorKind::io_error, "cannot create '" + paths.image_dir.string() + "': " + ec.message());

  const double scale = spec.image_size / 128.0;
  const int windows_per_patient = spec.followups_per_patient - 2;

  std::ofstream meta(paths.metadata_csv, std::ios::binary);
  if (!meta) raise(ErrorKind::io_error, "cannot open '" + paths.metadata_csv.string() + "'");
  // NIH header, bracket quirks included
  meta << "Image Index,Finding Labels,Follow-up #,Patient ID,Patient Age,Patient Gender,"
          "View Position,OriginalImage[Width,Height],OriginalImagePixelSpacing[x,y]\n";

  std::map<int, int64_t> tally;  // label -> expected samples
  for (int i = 0; i < spec.n_patients; ++i) {
    const int patient_id = i + 1;
    const MotifClass& cls = spec.classes[static_cast<size_t>(i) % spec.classes.size()];
    DeterministicRng rng(mix_seed(spec.seed, static_cast<uint64_t>(patient_id)));

    const ViewPosition view = rng.next_unit() < spec.view_mix ? ViewPosition::PA : ViewPosition::AP;
    const int age = 20 + static_cast<int>(rng.next_below(61));
    const char gender = rng.next_unit() < 0.5 ? 'M' : 'F';
    const double sigma0 = rng.next_range(spec.sigma_lo, spec.sigma_hi) * scale;
    const double step = spec.sigma_step * scale;
    const double cx0 = spec.image_size / 2.0 + rng.next_range(-10.0, 10.0) * scale;
    const double cy0 = spec.image_size / 2.0 + rng.next_range(-10.0, 10.0) * scale;
    const double drift_dx = (rng.next_unit() < 0.5 ? 1.0 : -1.0) * spec.drift_step * scale;
    const double drift_dy = (rng.next_unit() < 0.5 ? 1.0 : -1.0) * spec.drift_step * scale;

    for (int t = 0; t < spec.followups_per_patient; ++t) {
      double sigma = sigma0, cx = cx0, cy = cy0;
      switch (cls.motif) {
        case Motif::grow: sigma = sigma0 + t * step; break;
        case Motif::shrink: sigma = sigma0 + (spec.followups_per_patient - 1 - t) * step; break;
        case Motif::drift:
          cx = cx0 + t * drift_dx;
          cy = cy0 + t * drift_dy;
          break;
        case Motif::fixed: break;
      }
      const auto pixels = detail::render_blob_frame(spec.image_size, cx, cy, sigma, spec.amplitude,
                                                    spec.noise_level, rng);
      const std::string name = detail::synth_image_name(patient_id, t);
      write_png8((paths.image_dir / name).string(), pixels, spec.image_size, spec.image_size);

      meta << name << "," << label_name(cls.label) << "," << t << "," << patient_id << "," << age
           << "," << gender << "," << view_name(view) << "," << spec.image_size << ","
           << spec.image_size << ",0.143,0.143\n";
    }
    tally[cls.label] += windows_per_patient;
  }
  meta.close();

  std::ofstream tf(paths.tally_csv, std::ios::binary);
  if (!tf) raise(ErrorKind::io_error, "cannot open '" + paths.tally_csv.string() + "'");
  tf << "label,expected_samples\n";
  for (const auto& [label, count] : tally) {
    tf << label_name(label) << "," << count << "\n";
  }
  return paths;
}

inline std::map<std::string, int64_t> read_tally(const std::filesystem::path& tally_csv) {
  std::ifstream in(tally_csv, std::ios::binary);
  if (!in) raise(ErrorKind::io_error, "cannot open tally '" + tally_csv.string() + "'");
  std::vector<std::string> row;
  if (!csv_read_row(in, row) || row.size() != 2 || row[0] != "label") {
    raise(ErrorKind::schema_mismatch, "unexpected tally header");
  }
  std::map<std::string, int64_t> tally;
  while (csv_read_row(in, row)) {
    if (row.size() != 2) raise(ErrorKind::schema_mismatch, "short tally row");
    tally[row[0]] = std::stoll(row[1]);
  }
  return tally;
}

struct SeparabilityReport {
  std::optional<double> single_frame_auc;   // blob mass of frame 3 alone
  std::optional<double> delta_feature_auc;  // blob mass frame3 - frame1
  int n_windows = 0;
};

/// Integrated blob mass: total intensity above the background level,
/// with the background estimated from the border strip (the blob sits
/// near the center by construction, so the border is noise only).
inline double blob_mass(const RawImage& img) {
  const int strip = std::max(1, std::min(img.height, img.width) / 16);
  double border_sum = 0.0;
  int64_t border_n = 0;
  for (int y = 0; y < img.height; ++y) {
    const bool edge_row = y < strip || y >= img.height - strip;
    for (int x = 0; x < img.width; ++x) {
      if (edge_row || x < strip || x >= img.width - strip) {
        border_sum += img.at(y, x);
        ++border_n;
      }
    }
  }
  const double background = border_sum / static_cast<double>(border_n);
  double mass = 0.0;
  for (uint16_t p : img.pixels) mass += static_cast<double>(p) - background;
  return mass;
}

/// Handcrafted-score check that the cohort is temporally separable
/// before any model enters the picture: AUC of frame-3 blob mass alone
/// vs AUC of the frame3-frame1 mass difference, for the binary problem
/// positive_label vs negative_label over all windows.
inline SeparabilityReport oracle_separability(const std::filesystem::path& cohort_dir,
                                              int positive_label, int negative_label) {
  namespace fs = std::filesystem;
  std::ifstream meta(cohort_dir / "metadata.csv", std::ios::binary);
  if (!meta) raise(ErrorKind::io_error, "cannot open '" + (cohort_dir / "metadata.csv").string() + "'");
  const auto records = parse_metadata(meta);
  const auto groups = filter_consistent_view(filter_min_followups(group_patients(records)));

  std::vector<double> single_scores, delta_scores;
  std::vector<int> truth;
  for (const auto& group : groups) {
    for (const auto& window : build_windows(group)) {
      const auto& third_labels = window[2].labels;
      const bool is_pos = std::find(third_labels.begin(), third_labels.end(), positive_label) != third_labels.end();
      const bool is_neg = std::find(third_labels.begin(), third_labels.end(), negative_label) != third_labels.end();
      if (!is_pos && !is_neg) continue;
      const double m1 = blob_mass(load_grayscale((cohort_dir / "images" / window[0].image_index).string()));
      const double m3 = blob_mass(load_grayscale((cohort_dir / "images" / window[2].image_index).string()));
      single_scores.push_back(m3);
      delta_scores.push_back(m3 - m1);
      truth.push_back(is_pos ? 1 : 0);
    }
  }
  SeparabilityReport rep;
  rep.n_windows = static_cast<int>(truth.size());
  rep.single_frame_auc = truth.empty() ? std::nullopt : auc_score(single_scores, truth);
  rep.delta_feature_auc = truth.empty() ? std::nullopt : auc_score(delta_scores, truth);
  return rep;
}

/// Convenience overload: the two class labels come from the SynthSpec
/// that generated the cohort (first = positive, second = negative).
inline SeparabilityReport oracle_separability(const std::filesystem::path& cohort_dir,
                                              const SynthSpec& spec) {
  if (spec.classes.size() < 2) {
    SeparabilityReport rep;
    std::ifstream meta(cohort_dir / "metadata.csv", std::ios::binary);
    if (meta) {
      const auto records = parse_metadata(meta);
      for (const auto& group : group_patients(records)) {
        if (group.records.size() >= 3) rep.n_windows += static_cast<int>(group.records.size()) - 2;
      }
    }
    return rep;  // one class: both AUCs undefined
  }
  return oracle_separability(cohort_dir, spec.classes[0].label, spec.classes[1].label);
}

}  // namespace xrseq
