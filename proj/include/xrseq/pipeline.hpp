#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xrseq/error.hpp"
#include "xrseq/evaluate.hpp"
#include "xrseq/metadata.hpp"
#include "xrseq/model.hpp"
#include "xrseq/samples.hpp"
#include "xrseq/synth.hpp"
#include "xrseq/train.hpp"

namespace xrseq {

struct PipelineConfig {
  std::string metadata_csv;
  std::string image_root;
  std::string work_dir = "work";
  uint64_t split_seed = 1;
  SplitMode split_mode = SplitMode::by_sample;
  std::array<double, 3> ratios = {0.7, 0.2, 0.1};
  ModelConfig model;
  TrainConfig train;
  std::string eval_dir;  // defaults to work_dir/reports

  std::filesystem::path work() const { return work_dir; }
  std::filesystem::path filtered_records_path() const { return work() / "filtered_records.csv"; }
  std::filesystem::path manifest_path(ViewPosition v) const {
    return work() / ("manifest_" + std::string(view_name(v)) + ".csv");
  }
  std::filesystem::path reports_dir() const {
    return eval_dir.empty() ? work() / "reports" : std::filesystem::path(eval_dir);
  }
};

inline void validate_pipeline_config(const PipelineConfig& c) {
  const double sum = c.ratios[0] + c.ratios[1] + c.ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    raise(ErrorKind::config_error, "split ratios must sum to 1.0, got " + std::to_string(sum));
  }
  for (double r : c.ratios) {
    if (r < 0.0) raise(ErrorKind::config_error, "split ratios must be non-negative");
  }
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  c.metadata_csv = j.value("metadata_csv", "");
  c.image_root = j.value("image_root", "");
  c.work_dir = j.value("work_dir", "work");
  c.eval_dir = j.value("eval_dir", "");
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split_seed = s.value("seed", uint64_t{1});
    if (s.contains("mode")) {
      const std::string mode = s.at("mode").get<std::string>();
      if (mode == "by_sample") c.split_mode = SplitMode::by_sample;
      else if (mode == "by_patient") c.split_mode = SplitMode::by_patient;
      else raise(ErrorKind::config_error, "unknown split mode '" + mode + "'");
    }
    if (s.contains("ratios")) {
      const auto r = s.at("ratios").get<std::vector<double>>();
      if (r.size() != 3) raise(ErrorKind::config_error, "split ratios must have 3 entries");
      c.ratios = {r[0], r[1], r[2]};
    }
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("backbone")) c.model.backbone = parse_backbone(m.at("backbone").get<std::string>());
    c.model.use_lstm = m.value("use_lstm", c.model.use_lstm);
    c.model.lstm_units = m.value("lstm_units", c.model.lstm_units);
    if (m.contains("lstm_sequence_mode")) {
      c.model.lstm_sequence_mode = parse_lstm_sequence_mode(m.at("lstm_sequence_mode").get<std::string>());
    }
    c.model.dropout_rate = m.value("dropout_rate", c.model.dropout_rate);
    c.model.input_size = m.value("input_size", c.model.input_size);
    c.model.channels = m.value("channels", c.model.channels);
    c.model.branches = m.value("branches", c.model.branches);
    c.model.init_seed = m.value("init_seed", c.model.init_seed);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.seed = t.value("seed", c.train.seed);
    c.train.shuffle_each_epoch = t.value("shuffle_each_epoch", c.train.shuffle_each_epoch);
  }
  validate_pipeline_config(c);
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::io_error, "cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::config_error, "config '" + path + "': " + e.what());
  }
  return pipeline_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Pipeline stages. Each stage reads files written by the previous one,
// so every stage is resumable and independently testable.
// ---------------------------------------------------------------------------

/// parse -> group -> Filter 1 -> Filter 2; persists surviving records.
inline int cmd_preprocess(const PipelineConfig& config, std::ostream& out) {
  std::ifstream in(config.metadata_csv, std::ios::binary);
  if (!in) raise(ErrorKind::io_error, "cannot open metadata CSV '" + config.metadata_csv + "'");
  const auto records = parse_metadata(in);
  out << "parsed records: " << records.size() << "\n";

  const auto groups = group_patients(records);
  out << "patients total: " << groups.size() << "\n";

  const auto after1 = filter_min_followups(groups);
  out << "after filter 1: " << after1.size() << "\n";

  const auto after2 = filter_consistent_view(after1);
  out << "after filter 2: " << after2.size() << "\n";

  std::filesystem::create_directories(config.work());
  std::vector<XrayRecord> surviving;
  for (const auto& g : after2) {
    for (const auto& r : g.records) surviving.push_back(r);
  }
  std::ofstream fout(config.filtered_records_path(), std::ios::binary);
  if (!fout) raise(ErrorKind::io_error, "cannot write '" + config.filtered_records_path().string() + "'");
  serialize_metadata(surviving, fout);
  out << "wrote " << config.filtered_records_path().string() << "\n";
  return 0;
}

/// windows -> explosion -> view split -> train/test/validation manifests.
inline int cmd_build_samples(const PipelineConfig& config, std::ostream& out) {
  const auto path = config.filtered_records_path();
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorKind::io_error, "cannot open '" + path.string() + "' (run the preprocess stage first)");
  }
  const auto records = parse_metadata(in);
  const auto groups = group_patients(records);
  const auto samples = build_sample_sets(groups);
  const auto [pa, ap] = split_by_view(samples);

  const CohortStats pa_stats = cohort_stats(pa);
  const CohortStats ap_stats = cohort_stats(ap);
  out << "PA: " << pa_stats.n_patients << " patients, " << pa_stats.n_samples << " samples; AP: "
      << ap_stats.n_patients << " patients, " << ap_stats.n_samples << " samples\n";

  auto write_view = [&](const std::vector<SampleSet>& view_samples, ViewPosition v) {
    DatasetSplit split;
    if (!view_samples.empty()) {
      split = split_train_test_val(view_samples, config.split_seed, config.split_mode, config.ratios);
    }
    write_manifest(split, config.manifest_path(v).string());
    out << "wrote " << config.manifest_path(v).string() << " (train " << split.train.size()
        << ", test " << split.test.size() << ", validation " << split.validation.size() << ")\n";
  };
  write_view(pa, ViewPosition::PA);
  write_view(ap, ViewPosition::AP);
  return 0;
}

inline ViewPosition parse_view_flag(const std::string& v) {
  if (v == "PA") return ViewPosition::PA;
  if (v == "AP") return ViewPosition::AP;
  raise(ErrorKind::config_error, "view must be PA or AP, got '" + v + "'");
}

inline std::filesystem::path checkpoint_path(const PipelineConfig& config, const ModelDescriptor& d) {
  return config.work() / (d.tag() + ".ckpt");
}
inline std::filesystem::path history_path(const PipelineConfig& config, const ModelDescriptor& d) {
  return config.work() / (d.tag() + "_history.jsonl");
}

inline void write_history_jsonl(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::io_error, "cannot write history '" + path + "'");
  for (size_t e = 0; e < history.epochs.size(); ++e) {
    const auto& s = history.epochs[e];
    out << nlohmann::json{{"epoch", e + 1}, {"split", "train"}, {"loss", s.train_loss}}.dump() << "\n";
    out << nlohmann::json{{"epoch", e + 1},
                          {"split", "validation"},
                          {"loss", s.val_loss},
                          {"accuracy", s.val_accuracy}}
               .dump()
        << "\n";
  }
}

inline TrainHistory read_history_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::io_error, "cannot open history '" + path + "'");
  TrainHistory h;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const size_t epoch = j.at("epoch").get<size_t>();
    if (h.epochs.size() < epoch) h.epochs.resize(epoch);
    auto& stats = h.epochs[epoch - 1];
    const std::string split = j.at("split").get<std::string>();
    if (split == "train") stats.train_loss = j.at("loss").get<double>();
    else {
      stats.val_loss = j.at("loss").get<double>();
      stats.val_accuracy = j.value("accuracy", 0.0);
    }
  }
  return h;
}

/// Trains one variant from a view manifest; writes checkpoint + history.
inline int cmd_train(const PipelineConfig& config, ViewPosition view, std::ostream& out) {
  validate_config(config.model);
  if (config.train.learning_rate <= 0.0f) {
    raise(ErrorKind::config_error, "learning_rate must be positive");
  }
  const DatasetSplit split = read_manifest(config.manifest_path(view).string());
  if (split.train.empty()) raise(ErrorKind::empty_input, "manifest has an empty training partition");

  BuiltModel model = build_model(config.model);
  const ModelDescriptor desc = describe(model, std::string(view_name(view)));
  const ParamCounts counts = count_parameters(model);
  out << "model " << desc.tag() << ": frozen " << counts.frozen << ", trainable " << counts.trainable
      << ", total " << counts.total << " parameters\n";

  const ImageSource source{config.image_root.empty() ? "." : config.image_root};
  const TrainHistory history = train(model, split.train, split.validation, source, config.train);
  for (size_t e = 0; e < history.epochs.size(); ++e) {
    const auto& s = history.epochs[e];
    out << "epoch " << e + 1 << ": train loss " << s.train_loss << ", validation loss " << s.val_loss
        << ", validation accuracy " << s.val_accuracy << "\n";
  }
  out << "final: train loss " << history.epochs.back().train_loss << ", validation loss "
      << history.epochs.back().val_loss << "\n";

  std::filesystem::create_directories(config.work());
  save_checkpoint(model, checkpoint_path(config, desc).string(), desc.view);
  write_history_jsonl(history, history_path(config, desc).string());
  out << "wrote " << checkpoint_path(config, desc).string() << "\n";
  out << "wrote " << history_path(config, desc).string() << "\n";
  return 0;
}

/// Evaluates checkpoints on their view's test partition; renders AUC
/// tables, ROC/loss plots, and a comparison table when several
/// checkpoints are given.
inline int cmd_evaluate(const PipelineConfig& config, const std::vector<std::string>& checkpoints,
                        const std::string& expect_view, std::ostream& out) {
  if (checkpoints.empty()) raise(ErrorKind::empty_input, "no checkpoints given");
  std::vector<EvalReport> reports;
  std::vector<TrainHistory> histories;
  const ImageSource source{config.image_root.empty() ? "." : config.image_root};

  for (const auto& ckpt_path : checkpoints) {
    LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
    if (!expect_view.empty() && loaded.view != expect_view) {
      raise(ErrorKind::config_error, "checkpoint '" + ckpt_path + "' was trained on view '" +
                                         loaded.view + "' but --view requested '" + expect_view + "'");
    }
    if (loaded.view.empty()) {
      raise(ErrorKind::config_error, "checkpoint '" + ckpt_path + "' carries no view descriptor");
    }
    const ViewPosition view = parse_view_flag(loaded.view);
    const DatasetSplit split = read_manifest(config.manifest_path(view).string());
    if (split.test.empty()) raise(ErrorKind::empty_input, "manifest test partition is empty");

    EvalReport report = evaluate_model(loaded.model, split.test, source, loaded.view);
    const auto hist_file = history_path(config, report.desc);
    if (std::filesystem::exists(hist_file)) {
      histories.push_back(read_history_jsonl(hist_file.string()));
    }
    const auto mean = mean_defined_auc(report);
    out << report.desc.tag() << ": mean defined AUC "
        << (mean ? detail::fmt_auc(mean) : std::string("-")) << " over " << report.n_samples
        << " test samples\n";
    reports.push_back(std::move(report));
  }

  const auto files = render_report(reports, histories, config.reports_dir());
  for (const auto& f : files) out << "wrote " << f.string() << "\n";
  return 0;
}

/// Generates a synthetic cohort and prints its oracle separability.
inline int cmd_synth(const SynthSpec& spec, const std::filesystem::path& out_dir, std::ostream& out) {
  const CohortPaths paths = generate_cohort(spec, out_dir);
  out << "wrote " << paths.metadata_csv.string() << "\n";
  out << "wrote " << paths.tally_csv.string() << "\n";
  out << "images under " << paths.image_dir.string() << "\n";

  const SeparabilityReport rep = oracle_separability(out_dir, spec);
  out << "oracle windows: " << rep.n_windows << "\n";
  out << "oracle single-frame AUC: "
      << (rep.single_frame_auc ? std::to_string(*rep.single_frame_auc) : "-") << "\n";
  out << "oracle delta-feature AUC: "
      << (rep.delta_feature_auc ? std::to_string(*rep.delta_feature_auc) : "-") << "\n";
  return 0;
}

}  // namespace xrseq
