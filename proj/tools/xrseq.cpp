// xrseq command-line entry point: preprocess, build-samples, train,
// evaluate, synth. Flags override config-file values; all outputs land
// under --work-dir with deterministic names.

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "xrseq/pipeline.hpp"

namespace {

int exit_code_for(const xrseq::Error& e) {
  return e.kind() == xrseq::ErrorKind::io_error ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chest X-ray follow-up sequence classification pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<uint64_t> seed;
  std::string work_dir;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "override every seed (split, model init, training)");
  app.add_option("--work-dir", work_dir, "working directory for stage outputs");

  // preprocess
  auto* preprocess = app.add_subcommand("preprocess", "parse metadata CSV and apply the cohort filters");
  std::string metadata_csv;
  preprocess->add_option("--metadata", metadata_csv, "NIH-schema metadata CSV");

  // build-samples
  auto* build = app.add_subcommand("build-samples", "build triplet samples and split manifests");
  std::string split_mode;
  build->add_option("--mode", split_mode, "split mode: by_sample (default) or by_patient")
      ->check(CLI::IsMember({"by_sample", "by_patient"}));

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model variant from a view manifest");
  std::string view = "PA", backbone, image_root, lstm_mode;
  int branches = 0, epochs = 0, batch_size = 0;
  double learning_rate = 0.0;
  bool lstm_on = false, lstm_off = false;
  train_cmd->add_option("--view", view, "view position manifest to train on (PA or AP)")
      ->check(CLI::IsMember({"PA", "AP"}));
  train_cmd->add_option("--backbone", backbone, "densenet169, resnet50v2, mobilenetv2, or tiny");
  train_cmd->add_flag("--lstm", lstm_on, "use the LSTM head");
  train_cmd->add_flag("--no-lstm", lstm_off, "use the direct dense head");
  train_cmd->add_option("--branches", branches, "3 (triplet) or 1 (single-image baseline)")
      ->check(CLI::IsMember({1, 3}));
  train_cmd->add_option("--lstm-sequence-mode", lstm_mode, "per_image or concat_first")
      ->check(CLI::IsMember({"per_image", "concat_first"}));
  train_cmd->add_option("--image-root", image_root, "directory image references resolve against");
  train_cmd->add_option("--epochs", epochs, "training epochs");
  train_cmd->add_option("--batch-size", batch_size, "minibatch size");
  train_cmd->add_option("--learning-rate", learning_rate, "Adam learning rate");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate checkpoints and render reports");
  std::vector<std::string> checkpoints;
  std::string eval_view, eval_dir, eval_image_root;
  eval_cmd->add_option("checkpoints", checkpoints, "checkpoint files")->required();
  eval_cmd->add_option("--view", eval_view, "require checkpoints trained on this view");
  eval_cmd->add_option("--out", eval_dir, "report output directory");
  eval_cmd->add_option("--image-root", eval_image_root, "directory image references resolve against");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a deterministic synthetic cohort");
  std::string synth_out = "synth_cohort", classes_arg;
  int patients = 420, followups = 3, image_size = 128;
  double noise = 6.0, view_mix = 1.0;
  synth_cmd->add_option("--out", synth_out, "output directory");
  synth_cmd->add_option("--patients", patients, "number of patients");
  synth_cmd->add_option("--followups", followups, "follow-ups per patient (>= 3)");
  synth_cmd->add_option("--size", image_size, "image size: 128 or 1024")
      ->check(CLI::IsMember({128, 1024}));
  synth_cmd->add_option("--noise", noise, "background noise sigma");
  synth_cmd->add_option("--view-mix", view_mix, "fraction of patients in PA view");
  synth_cmd->add_option("--classes", classes_arg,
                        "motif:Label pairs, e.g. grow:Mass,shrink:Atelectasis");

  CLI11_PARSE(app, argc, argv);

  try {
    xrseq::PipelineConfig config;
    if (!config_path.empty()) config = xrseq::load_pipeline_config(config_path);
    if (!work_dir.empty()) config.work_dir = work_dir;
    if (seed) {
      config.split_seed = *seed;
      config.model.init_seed = *seed;
      config.train.seed = *seed;
    }

    if (preprocess->parsed()) {
      if (!metadata_csv.empty()) config.metadata_csv = metadata_csv;
      if (config.metadata_csv.empty()) {
        xrseq::raise(xrseq::ErrorKind::config_error, "no metadata CSV given (--metadata or config)");
      }
      return xrseq::cmd_preprocess(config, std::cout);
    }

    if (build->parsed()) {
      if (split_mode == "by_patient") config.split_mode = xrseq::SplitMode::by_patient;
      if (split_mode == "by_sample") config.split_mode = xrseq::SplitMode::by_sample;
      return xrseq::cmd_build_samples(config, std::cout);
    }

    if (train_cmd->parsed()) {
      if (!backbone.empty()) config.model.backbone = xrseq::parse_backbone(backbone);
      if (lstm_on && lstm_off) {
        xrseq::raise(xrseq::ErrorKind::config_error, "--lstm and --no-lstm are mutually exclusive");
      }
      if (lstm_on) config.model.use_lstm = true;
      if (lstm_off) config.model.use_lstm = false;
      if (branches) config.model.branches = branches;
      if (!lstm_mode.empty()) {
        config.model.lstm_sequence_mode = xrseq::parse_lstm_sequence_mode(lstm_mode);
      }
      if (!image_root.empty()) config.image_root = image_root;
      if (epochs) config.train.epochs = epochs;
      if (batch_size) config.train.batch_size = batch_size;
      if (learning_rate > 0) config.train.learning_rate = static_cast<float>(learning_rate);
      return xrseq::cmd_train(config, xrseq::parse_view_flag(view), std::cout);
    }

    if (eval_cmd->parsed()) {
      if (!eval_dir.empty()) config.eval_dir = eval_dir;
      if (!eval_image_root.empty()) config.image_root = eval_image_root;
      return xrseq::cmd_evaluate(config, checkpoints, eval_view, std::cout);
    }

    if (synth_cmd->parsed()) {
      xrseq::SynthSpec spec;
      spec.n_patients = patients;
      spec.followups_per_patient = followups;
      spec.image_size = image_size;
      spec.noise_level = noise;
      spec.view_mix = view_mix;
      spec.seed = seed.value_or(1);
      if (!classes_arg.empty()) {
        spec.classes.clear();
        std::stringstream ss(classes_arg);
        std::string item;
        while (std::getline(ss, item, ',')) {
          const auto colon = item.find(':');
          if (colon == std::string::npos) {
            xrseq::raise(xrseq::ErrorKind::config_error,
                         "bad --classes entry '" + item + "', expected motif:Label");
          }
          xrseq::MotifClass mc;
          mc.motif = xrseq::parse_motif(item.substr(0, colon));
          mc.label = xrseq::require_label(item.substr(colon + 1));
          spec.classes.push_back(mc);
        }
      }
      return xrseq::cmd_synth(spec, synth_out, std::cout);
    }
  } catch (const xrseq::Error& e) {
    std::cerr << "xrseq: error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "xrseq: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
