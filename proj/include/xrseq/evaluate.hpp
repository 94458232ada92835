#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xrseq/error.hpp"
#include "xrseq/image.hpp"
#include "xrseq/labels.hpp"
#include "xrseq/metrics.hpp"
#include "xrseq/model.hpp"
#include "xrseq/samples.hpp"
#include "xrseq/train.hpp"

namespace xrseq {

struct ModelDescriptor {
  std::string view;      // "PA" | "AP" | "synth" ...
  std::string backbone;
  bool use_lstm = false;
  int branches = 3;

  /// Deterministic file-name stem: {view}_{backbone}_{lstm|nolstm}_{branches}img
  std::string tag() const {
    return view + "_" + backbone + "_" + (use_lstm ? "lstm" : "nolstm") + "_" +
           std::to_string(branches) + "img";
  }
};

inline ModelDescriptor describe(const BuiltModel& m, const std::string& view) {
  ModelDescriptor d;
  d.view = view;
  d.backbone = std::string(backbone_name(m.config.backbone));
  d.use_lstm = m.config.use_lstm;
  d.branches = m.config.branches;
  return d;
}

struct EvalReport {
  ModelDescriptor desc;
  size_t n_samples = 0;
  std::array<std::optional<double>, kNumLabels> auc;
  std::array<std::vector<std::pair<double, double>>, kNumLabels> roc;
  std::array<int, kNumLabels> n_pos{};
  std::array<int, kNumLabels> n_neg{};
};

/// Per-label scores and one-vs-rest truth extracted from predictions on
/// a test split, evaluated in input order, chunked.
struct ScoreTable {
  std::array<std::vector<double>, kNumLabels> scores;
  std::array<std::vector<int>, kNumLabels> truth;
};

inline ScoreTable score_split(const BuiltModel& model, const std::vector<SampleSet>& test,
                              const ImageSource& source, int chunk = 64) {
  ScoreTable table;
  for (size_t start = 0; start < test.size(); start += static_cast<size_t>(chunk)) {
    const size_t end = std::min(test.size(), start + static_cast<size_t>(chunk));
    const std::vector<SampleSet> part(test.begin() + static_cast<std::ptrdiff_t>(start),
                                      test.begin() + static_cast<std::ptrdiff_t>(end));
    const TripletBatch batch = assemble_batch(part, source, model.config.channels, model.config.input_size);
    const Tensor probs = predict_batch(model, batch);
    for (int r = 0; r < probs.dim(0); ++r) {
      for (int label = 0; label < kNumLabels; ++label) {
        table.scores[static_cast<size_t>(label)].push_back(
            probs[static_cast<int64_t>(r) * kNumLabels + label]);
        table.truth[static_cast<size_t>(label)].push_back(
            part[static_cast<size_t>(r)].target_label == label ? 1 : 0);
      }
    }
  }
  return table;
}

/// Full per-label report. Labels missing a class in the split come out
/// undefined (rendered as a dash downstream).
inline EvalReport evaluate_model(const BuiltModel& model, const std::vector<SampleSet>& test,
                                 const ImageSource& source, const std::string& view) {
  if (test.empty()) raise(ErrorKind::empty_input, "empty test split");
  EvalReport report;
  report.desc = describe(model, view);
  report.n_samples = test.size();

  const ScoreTable table = score_split(model, test, source);
  for (int label = 0; label < kNumLabels; ++label) {
    const auto& scores = table.scores[static_cast<size_t>(label)];
    const auto& truth = table.truth[static_cast<size_t>(label)];
    int pos = 0;
    for (int y : truth) pos += y;
    report.n_pos[static_cast<size_t>(label)] = pos;
    report.n_neg[static_cast<size_t>(label)] = static_cast<int>(truth.size()) - pos;
    report.auc[static_cast<size_t>(label)] = auc_score(scores, truth);
    if (report.auc[static_cast<size_t>(label)]) {
      report.roc[static_cast<size_t>(label)] = roc_curve(scores, truth);
    }
  }
  return report;
}

/// Mean of the defined per-label AUCs; nullopt when none are defined.
inline std::optional<double> mean_defined_auc(const EvalReport& r) {
  double sum = 0.0;
  int n = 0;
  for (const auto& a : r.auc) {
    if (a) {
      sum += *a;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

namespace detail {

inline std::string fmt_auc(const std::optional<double>& a, int decimals = 3) {
  if (!a) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *a);
  return buf;
}

inline std::string fmt_full(const std::optional<double>& a) {
  if (!a) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", *a);
  return buf;
}

}  // namespace detail

/// Side-by-side per-label AUC matrix, one value column per report,
/// undefined cells as dashes. Display rounded to 3 decimals.
inline std::string compare_variants(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  size_t label_width = 0;
  for (int i = 0; i < kNumLabels; ++i) label_width = std::max(label_width, label_name(i).size());
  out << std::left << std::setw(static_cast<int>(label_width)) << "Finding Labels";
  for (const auto& r : reports) out << "  " << r.desc.tag();
  out << "\n";
  for (int label = 0; label < kNumLabels; ++label) {
    out << std::left << std::setw(static_cast<int>(label_width)) << label_name(label);
    for (const auto& r : reports) {
      out << "  " << std::right << std::setw(static_cast<int>(r.desc.tag().size()))
          << detail::fmt_auc(r.auc[static_cast<size_t>(label)]);
    }
    out << "\n";
  }
  return out.str();
}

inline void write_comparison_csv(const std::vector<EvalReport>& reports, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::io_error, "cannot open '" + path + "'");
  out << "label";
  for (const auto& r : reports) out << "," << r.desc.tag();
  out << "\n";
  for (int label = 0; label < kNumLabels; ++label) {
    out << csv_escape(std::string(label_name(label)));
    for (const auto& r : reports) out << "," << detail::fmt_full(r.auc[static_cast<size_t>(label)]);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Rendering: AUC tables (CSV + text), ROC and loss curves as SVG.
// ---------------------------------------------------------------------------

namespace detail {

inline const char* series_color(size_t i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
                                  "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5"};
  return palette[i % std::size(palette)];
}

struct SvgSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Minimal line chart: fixed 640x480 canvas, linear axes, legend.
inline void write_svg_chart(const std::string& path, const std::string& title,
                            const std::string& x_label, const std::string& y_label,
                            const std::vector<SvgSeries>& series, bool unit_box) {
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  if (!unit_box) {
    bool first = true;
    for (const auto& s : series) {
      for (const auto& [x, y] : s.points) {
        if (first) {
          xmin = xmax = x;
          ymin = ymax = y;
          first = false;
        }
        xmin = std::min(xmin, x); xmax = std::max(xmax, x);
        ymin = std::min(ymin, y); ymax = std::max(ymax, y);
      }
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    ymin = std::min(ymin, 0.0);
  }
  const double W = 640, H = 480, L = 70, R = 200, T = 40, B = 50;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::io_error, "cannot open '" + path + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";
  // axes
  out << "<line x1=\"" << L << "\" y1=\"" << py(ymin) << "\" x2=\"" << W - R << "\" y2=\""
      << py(ymin) << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << py(ymin) << "\" x2=\"" << L << "\" y2=\"" << T
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << (L + (W - R)) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
  out << "<text x=\"16\" y=\"" << (T + H - B) / 2
      << "\" font-size=\"12\" transform=\"rotate(-90 16 " << (T + H - B) / 2 << ")\">" << y_label
      << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    char bx[32], by[32];
    std::snprintf(bx, sizeof bx, "%.3g", fx);
    std::snprintf(by, sizeof by, "%.3g", fy);
    out << "<text x=\"" << px(fx) << "\" y=\"" << H - B + 16
        << "\" text-anchor=\"middle\" font-size=\"10\">" << bx << "</text>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(fy) + 3
        << "\" text-anchor=\"end\" font-size=\"10\">" << by << "</text>\n";
  }
  for (size_t i = 0; i < series.size(); ++i) {
    out << "<polyline fill=\"none\" stroke=\"" << series_color(i) << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[i].points) out << px(x) << "," << py(y) << " ";
    out << "\"/>\n";
    const double ly = T + 14 * static_cast<double>(i + 1);
    out << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - R + 30
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << series_color(i) << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << W - R + 34 << "\" y=\"" << ly << "\" font-size=\"10\">" << series[i].name
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace detail

/// Report CSV schema: label, auc (empty when undefined), n_pos, n_neg.
inline void write_report_csv(const EvalReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::io_error, "cannot open '" + path + "'");
  out << "label,auc,n_pos,n_neg\n";
  for (int label = 0; label < kNumLabels; ++label) {
    out << csv_escape(std::string(label_name(label))) << ","
        << detail::fmt_full(r.auc[static_cast<size_t>(label)]) << ","
        << r.n_pos[static_cast<size_t>(label)] << "," << r.n_neg[static_cast<size_t>(label)] << "\n";
  }
}

struct ParsedReportRow {
  std::string label;
  std::optional<double> auc;
  int n_pos = 0, n_neg = 0;
};

inline std::vector<ParsedReportRow> read_report_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::io_error, "cannot open '" + path + "'");
  std::vector<std::string> row;
  if (!csv_read_row(in, row) || row.size() != 4 || row[0] != "label") {
    raise(ErrorKind::schema_mismatch, "unexpected report CSV header in '" + path + "'");
  }
  std::vector<ParsedReportRow> rows;
  while (csv_read_row(in, row)) {
    if (row.size() != 4) raise(ErrorKind::schema_mismatch, "short report CSV row");
    ParsedReportRow r;
    r.label = row[0];
    if (!trim(row[1]).empty()) r.auc = std::stod(row[1]);
    r.n_pos = std::stoi(row[2]);
    r.n_neg = std::stoi(row[3]);
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Writes, per report: AUC table as CSV and text, one ROC SVG with all
/// defined labels overlaid; per history: a loss-vs-epoch SVG. File names
/// derive from the descriptor tag. Returns the created file paths.
inline std::vector<std::filesystem::path> render_report(
    const std::vector<EvalReport>& reports, const std::vector<TrainHistory>& histories,
    const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (reports.empty() && histories.empty()) return files;
  fs::create_directories(out_dir);

  for (size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    const std::string stem = r.desc.tag();

    const fs::path csv_path = out_dir / (stem + "_auc.csv");
    write_report_csv(r, csv_path.string());
    files.push_back(csv_path);

    const fs::path txt_path = out_dir / (stem + "_auc.txt");
    {
      std::ofstream out(txt_path, std::ios::binary);
      if (!out) raise(ErrorKind::io_error, "cannot open '" + txt_path.string() + "'");
      out << compare_variants({r});
    }
    files.push_back(txt_path);

    std::vector<detail::SvgSeries> series;
    for (int label = 0; label < kNumLabels; ++label) {
      if (!r.auc[static_cast<size_t>(label)]) continue;
      detail::SvgSeries s;
      s.name = std::string(label_name(label)) + " (" +
               detail::fmt_auc(r.auc[static_cast<size_t>(label)]) + ")";
      s.points = r.roc[static_cast<size_t>(label)];
      series.push_back(std::move(s));
    }
    const fs::path roc_path = out_dir / (stem + "_roc.svg");
    detail::write_svg_chart(roc_path.string(), "ROC " + stem, "False positive rate",
                            "True positive rate", series, true);
    files.push_back(roc_path);

    if (i < histories.size()) {
      const TrainHistory& h = histories[i];
      detail::SvgSeries train_s, val_s;
      train_s.name = "train loss";
      val_s.name = "validation loss";
      for (size_t e = 0; e < h.epochs.size(); ++e) {
        train_s.points.emplace_back(static_cast<double>(e + 1), h.epochs[e].train_loss);
        val_s.points.emplace_back(static_cast<double>(e + 1), h.epochs[e].val_loss);
      }
      const fs::path loss_path = out_dir / (stem + "_loss.svg");
      detail::write_svg_chart(loss_path.string(), "Loss vs epochs " + stem, "epoch", "loss",
                              {train_s, val_s}, false);
      files.push_back(loss_path);
    }
  }

  if (reports.size() > 1) {
    const fs::path cmp_csv = out_dir / "comparison.csv";
    write_comparison_csv(reports, cmp_csv.string());
    files.push_back(cmp_csv);
    const fs::path cmp_txt = out_dir / "comparison.txt";
    std::ofstream out(cmp_txt, std::ios::binary);
    out << compare_variants(reports);
    files.push_back(cmp_txt);
  }
  return files;
}

}  // namespace xrseq
