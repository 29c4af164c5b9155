// clasp command-line tool: gen, train, predict, eval.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "clasp/binary_io.hpp"
#include "clasp/checkpoint.hpp"
#include "clasp/config.hpp"
#include "clasp/csv_io.hpp"
#include "clasp/errors.hpp"
#include "clasp/evaluation.hpp"
#include "clasp/logging.hpp"
#include "clasp/synth.hpp"
#include "clasp/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace clasp {
namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json kv_object(const KeyValues& kv) {
  json out = json::object();
  for (const auto& [k, v] : kv) out[k] = v;
  return out;
}

// Describes one invocation; written next to its outputs.
struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::string started_at = utc_now();

  void write(const fs::path& path) const {
    json j;
    j["tool"] = "clasp";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["started_at"] = started_at;
    j["finished_at"] = utc_now();
    write_text_file(path, j.dump(2) + "\n");
  }
};

fs::path sibling(const fs::path& file, const std::string& suffix) { return fs::path(file.string() + suffix); }

Manifest open_manifest(const fs::path& path) {
  // A missing manifest is a usage error, unlike a damaged one.
  if (!fs::exists(path)) throw ConfigError("manifest not found: " + path.string());
  return read_manifest(path);
}

// Options shared by every subcommand.
struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out;
  bool verbose = false;
};

// Model and training flags; each wins over the config file when given.
struct ModelFlags {
  std::optional<std::size_t> epochs, batch_size, channels, max_steps, workers, checkpoint_every;
  std::optional<std::size_t> global_anchors, local_anchors, windows;
  std::optional<double> learning_rate;
  std::optional<std::string> mil_pool, anchors, jsd, agreement_source;
  bool ablate_gai = false, ablate_lai = false, ablate_anchors = false;

  void add_to(CLI::App* app) {
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--batch-size", batch_size, "Videos per optimizer step");
    app->add_option("--lr", learning_rate, "Adam learning rate");
    app->add_option("--workers", workers, "Threads per batch");
    app->add_option("--checkpoint-every", checkpoint_every, "Write the checkpoint every N epochs");
    app->add_option("--channels", channels, "Shared feature width d");
    app->add_option("--max-steps", max_steps, "Timesteps T after padding or clipping");
    app->add_option("--global-anchors", global_anchors, "Global anchors K");
    app->add_option("--local-anchors", local_anchors, "Local anchors k per window");
    app->add_option("--windows", windows, "Local windows M");
    app->add_option("--mil-pool", mil_pool, "MIL pooling")->check(CLI::IsMember({"mean", "max"}));
    app->add_option("--jsd", jsd, "Divergence variant")->check(CLI::IsMember({"standard", "as_written"}));
    app->add_option("--agreement-source", agreement_source, "Features feeding agreement")
        ->check(CLI::IsMember({"projected", "encoded"}));
    app->add_option("--anchors", anchors, "Modalities contributing anchors")
        ->check(CLI::IsMember({"audio", "visual", "both"}));
    app->add_flag("--ablate-gai", ablate_gai, "Disable global anchor identification");
    app->add_flag("--ablate-lai", ablate_lai, "Disable local anchor identification");
    app->add_flag("--ablate-anchors", ablate_anchors, "Bypass anchor propagation");
  }

  KeyValues as_key_values() const {
    KeyValues kv;
    auto put = [&kv](const char* key, const auto& v) {
      if (!v) return;
      if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, double>) kv.emplace_back(key, format_double(*v));
      else if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, std::string>) kv.emplace_back(key, *v);
      else kv.emplace_back(key, std::to_string(*v));
    };
    put("train.epochs", epochs);
    put("train.batch_size", batch_size);
    put("train.learning_rate", learning_rate);
    put("train.workers", workers);
    put("train.checkpoint_every", checkpoint_every);
    put("model.channels", channels);
    put("model.max_steps", max_steps);
    put("model.global_anchors", global_anchors);
    put("model.local_anchors", local_anchors);
    put("model.windows", windows);
    put("model.mil_pool", mil_pool);
    put("model.jsd_variant", jsd);
    put("model.agreement_source", agreement_source);
    put("model.anchor_modality", anchors);
    if (ablate_gai) kv.emplace_back("model.use_global_anchors", "false");
    if (ablate_lai) kv.emplace_back("model.use_local_anchors", "false");
    if (ablate_anchors) kv.emplace_back("model.bypass_anchors", "true");
    return kv;
  }
};

RunConfig resolve_config(const CommonOptions& common, const KeyValues& flags) {
  RunConfig cfg;
  if (!common.config_path.empty()) apply_key_values(cfg, read_config_file(common.config_path));
  apply_key_values(cfg, flags);
  if (common.seed) apply_key_values(cfg, {{"seed", std::to_string(*common.seed)}});
  return cfg;
}

void require_out(const CommonOptions& common, const char* what) {
  if (common.out.empty()) throw ConfigError(std::string("--out is required (") + what + ")");
}

// ---------------------------------------------------------------------------

int cmd_gen(const CommonOptions& common) {
  require_out(common, "output directory");
  const RunConfig cfg = resolve_config(common, {});
  const SynthConfig& sc = cfg.synth;
  sc.validate();
  const fs::path out(common.out);
  fs::create_directories(out);

  RunManifest run;
  run.command = "gen";
  run.seed = sc.seed;
  run.config = kv_object(to_key_values(sc));
  if (!common.config_path.empty()) run.inputs["config"] = common.config_path;

  std::vector<std::string> categories;
  for (std::size_t c = 0; c < sc.categories; ++c) categories.push_back("event_" + std::to_string(c));

  const auto records = synthesize_dataset(sc);
  std::vector<std::string> files;
  for (const auto& rec : records) {
    files.push_back(rec.id + ".clsp");
    save_record(out / files.back(), rec);
  }
  const std::size_t n = files.size();
  const auto n_train = static_cast<std::size_t>(std::llround(3.0 * static_cast<double>(n) / 5.0));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(static_cast<double>(n) / 5.0)));
  const auto first = files.begin();
  write_manifest(out / "train.txt", {first, first + static_cast<std::ptrdiff_t>(n_train)}, categories);
  write_manifest(out / "val.txt", {first + static_cast<std::ptrdiff_t>(n_train),
                                   first + static_cast<std::ptrdiff_t>(n_train + n_val)}, categories);
  write_manifest(out / "test.txt", {first + static_cast<std::ptrdiff_t>(n_train + n_val), files.end()}, categories);
  write_manifest(out / "all.txt", files, categories);

  run.outputs["directory"] = out.string();
  run.outputs["splits"] = {{"train", n_train}, {"val", n_val}, {"test", n - n_train - n_val}};
  run.write(out / "run.json");
  std::cout << "wrote " << n << " videos to " << out.string() << " (train " << n_train << ", val " << n_val
            << ", test " << n - n_train - n_val << ")\n";
  return 0;
}

int cmd_train(const CommonOptions& common, const ModelFlags& flags, const std::string& manifest_path,
              const std::string& resume_path, std::string loss_csv) {
  require_out(common, "checkpoint path");
  RunConfig cfg = resolve_config(common, flags.as_key_values());
  const Manifest manifest = open_manifest(manifest_path);
  const auto records = load_manifest_records(manifest);
  if (records.empty()) throw FormatError("manifest lists no videos: " + manifest_path);

  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    // Architecture comes from the checkpoint; training settings from flags.
    cfg.model = resume->hp;
  } else {
    cfg.model.categories = manifest.categories.size();
    cfg.model.audio_dim = records.front().audio.cols();
    cfg.model.visual_dim = records.front().visual.cols();
  }
  cfg.model.validate();
  cfg.train.validate();
  for (const auto& rec : records) {
    if (rec.audio.cols() != cfg.model.audio_dim || rec.visual.cols() != cfg.model.visual_dim) {
      throw ShapeError("video " + rec.id + " has feature widths " + std::to_string(rec.audio.cols()) + "/" +
                       std::to_string(rec.visual.cols()) + ", model expects " + std::to_string(cfg.model.audio_dim) +
                       "/" + std::to_string(cfg.model.visual_dim));
    }
  }

  // Intervals are dropped here; training only sees features and labels.
  std::vector<TrainingExample> data;
  data.reserve(records.size());
  for (const auto& rec : records) data.push_back(make_training_example(rec, cfg.model.max_steps));

  const fs::path out(common.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (loss_csv.empty()) loss_csv = sibling(out, ".loss.csv").string();

  const KeyValues extra = {{"train.seed", std::to_string(cfg.train.seed)}};
  auto save = [&](const TrainState& state) {
    Checkpoint ckpt;
    ckpt.hp = cfg.model;
    ckpt.state = state;
    ckpt.metadata = extra;
    save_checkpoint(out, ckpt);
    write_text_file(loss_csv, format_loss_csv(state.loss_curve));
  };
  const std::size_t every = cfg.train.checkpoint_every;
  const TrainState state = train(data, cfg.model, cfg.train, resume ? &resume->state : nullptr,
                                 [&](const TrainState& s) {
                                   if (every != 0 && s.epochs_done % every == 0) save(s);
                                 });
  save(state);

  RunManifest run;
  run.command = "train";
  run.seed = cfg.train.seed;
  for (auto& [k, v] : to_key_values(cfg.model)) run.config["model." + k] = v;
  for (auto& [k, v] : to_key_values(cfg.train)) run.config["train." + k] = v;
  run.inputs["manifest"] = manifest_path;
  if (!common.config_path.empty()) run.inputs["config"] = common.config_path;
  if (!resume_path.empty()) run.inputs["resume"] = resume_path;
  run.outputs["checkpoint"] = out.string();
  run.outputs["loss_csv"] = loss_csv;
  run.outputs["steps"] = state.optimizer.step;
  run.write(sibling(out, ".run.json"));
  std::cout << "trained " << state.epochs_done << " epochs (" << state.optimizer.step << " steps), final loss "
            << format_double(state.loss_curve.back()) << "\n";
  return 0;
}

int cmd_predict(const CommonOptions& common, const std::string& checkpoint_path, const std::string& manifest_path,
                std::string anchors_csv, const std::string& probs_csv, double theta_class, double theta_seg) {
  require_out(common, "predictions CSV");
  if (!fs::exists(checkpoint_path)) throw ConfigError("checkpoint not found: " + checkpoint_path);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const HyperParams& hp = ckpt.hp;
  const Manifest manifest = open_manifest(manifest_path);
  if (manifest.categories.size() != hp.categories) {
    throw ShapeError("manifest has " + std::to_string(manifest.categories.size()) + " categories, checkpoint " +
                     std::to_string(hp.categories));
  }
  const auto records = load_manifest_records(manifest);

  std::vector<DetectedEvent> dets;
  std::vector<AnchorRow> anchors;
  std::string probs = "video_id,t,valid,s";
  for (std::size_t c = 0; c < hp.categories; ++c) probs += ",p" + std::to_string(c);
  probs += "\n";
  for (const auto& rec : records) {
    if (rec.audio.cols() != hp.audio_dim || rec.visual.cols() != hp.visual_dim) {
      throw ShapeError("video " + rec.id + " has feature widths " + std::to_string(rec.audio.cols()) + "/" +
                       std::to_string(rec.visual.cols()) + ", checkpoint expects " + std::to_string(hp.audio_dim) +
                       "/" + std::to_string(hp.visual_dim));
    }
    const PaddedVideo pv = pad_or_clip(rec, hp.max_steps);
    const Prediction p = predict(ckpt.state.params, pv.features, hp);
    const auto found = extract_intervals(p.event_probs, pv.features.valid, p.video_probs, theta_class, theta_seg, rec.id);
    dets.insert(dets.end(), found.begin(), found.end());
    for (std::size_t r = 0; r < p.anchors.global.size(); ++r) {
      const std::size_t t = p.anchors.global[r];
      anchors.push_back({rec.id, r, t, p.agreement.score[t]});
    }
    if (!probs_csv.empty()) {
      for (std::size_t t = 0; t < hp.max_steps; ++t) {
        const bool valid = pv.features.valid[t] != 0;
        probs += rec.id + "," + std::to_string(t) + "," + (valid ? "1," : "0,") +
                 (valid ? format_double(p.agreement.score[t]) : std::string("nan"));
        for (std::size_t c = 0; c < hp.categories; ++c) probs += "," + format_double(p.event_probs(t, c));
        probs += "\n";
      }
    }
  }

  const fs::path out(common.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (anchors_csv.empty()) anchors_csv = sibling(out, ".anchors.csv").string();
  write_text_file(out, format_predictions_csv(dets));
  write_text_file(anchors_csv, format_anchors_csv(anchors));
  if (!probs_csv.empty()) write_text_file(probs_csv, probs);

  RunManifest run;
  run.command = "predict";
  run.seed = 0;
  for (auto& [k, v] : to_key_values(hp)) run.config["model." + k] = v;
  run.config["theta_class"] = format_double(theta_class);
  run.config["theta_seg"] = format_double(theta_seg);
  run.inputs["checkpoint"] = checkpoint_path;
  run.inputs["manifest"] = manifest_path;
  run.outputs["predictions"] = out.string();
  run.outputs["anchors"] = anchors_csv;
  if (!probs_csv.empty()) run.outputs["probabilities"] = probs_csv;
  run.write(sibling(out, ".run.json"));
  std::cout << "wrote " << dets.size() << " detections for " << records.size() << " videos\n";
  return 0;
}

int cmd_eval(const CommonOptions& common, const std::string& predictions_path, const std::string& manifest_path,
             std::string categories_csv, std::optional<std::size_t> clip_steps) {
  require_out(common, "report CSV");
  if (!fs::exists(predictions_path)) throw ConfigError("predictions file not found: " + predictions_path);
  const Manifest manifest = open_manifest(manifest_path);
  const auto records = load_manifest_records(manifest);
  const auto dets = parse_predictions_csv(read_text_file(predictions_path), predictions_path);

  std::vector<VideoGroundTruth> gt;
  for (const auto& rec : records) {
    gt.push_back({rec.id, clip_steps ? pad_or_clip(rec, *clip_steps).events : rec.events});
  }
  const EvalReport report = mean_ap(dets, gt, manifest.categories.size());

  const fs::path out(common.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (categories_csv.empty()) categories_csv = sibling(out, ".categories.csv").string();
  write_text_file(out, format_report_csv(report));
  write_text_file(categories_csv, format_category_ap_csv(report, manifest.categories));

  RunManifest run;
  run.command = "eval";
  if (clip_steps) run.config["max_steps"] = *clip_steps;
  run.inputs["predictions"] = predictions_path;
  run.inputs["manifest"] = manifest_path;
  run.outputs["report"] = out.string();
  run.outputs["categories"] = categories_csv;
  run.write(sibling(out, ".run.json"));

  std::cout << "tIoU";
  for (double tau : report.thresholds) std::cout << "  " << tau;
  std::cout << "  Avg.\nmAP ";
  std::cout.setf(std::ios::fixed);
  std::cout.precision(4);
  for (double m : report.map) std::cout << "  " << m;
  std::cout << "  " << report.average << "\n";
  return 0;
}

}  // namespace
}  // namespace clasp

int main(int argc, char** argv) {
  using namespace clasp;
  CLI::App app{"Weakly-supervised audio-visual event localization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  CommonOptions common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "Seed for generation and training");
    sub->add_option("--config", common.config_path, "key=value configuration file; flags win");
    sub->add_option("--out", common.out, "Output path");
    sub->add_flag("-v,--verbose", common.verbose, "Log progress");
  };

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset with train/val/test manifests");
  add_common(gen);

  ModelFlags flags;
  std::string manifest, resume, loss_csv;
  auto* train_cmd = app.add_subcommand("train", "Train on a manifest using video-level labels only");
  add_common(train_cmd);
  train_cmd->add_option("--manifest", manifest, "Training manifest")->required();
  train_cmd->add_option("--resume", resume, "Continue from this checkpoint");
  train_cmd->add_option("--loss-csv", loss_csv, "Loss curve output (default <out>.loss.csv)");
  flags.add_to(train_cmd);

  std::string checkpoint, anchors_csv, probs_csv;
  double theta_class = kDefaultClassThreshold, theta_seg = kDefaultSegmentThreshold;
  auto* predict_cmd = app.add_subcommand("predict", "Detect events and report anchor positions");
  add_common(predict_cmd);
  predict_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  predict_cmd->add_option("--manifest", manifest, "Videos to predict")->required();
  predict_cmd->add_option("--anchors-out", anchors_csv, "Anchor CSV (default <out>.anchors.csv)");
  predict_cmd->add_option("--probs-out", probs_csv, "Optional per-timestep probability CSV");
  predict_cmd->add_option("--theta-class", theta_class, "Video-level activation threshold");
  predict_cmd->add_option("--theta-seg", theta_seg, "Per-timestep threshold");

  std::string predictions, categories_csv;
  std::optional<std::size_t> clip_steps;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions with mAP over tIoU 0.5:0.1:0.9");
  add_common(eval_cmd);
  eval_cmd->add_option("--predictions", predictions, "Predictions CSV")->required();
  eval_cmd->add_option("--manifest", manifest, "Manifest with ground-truth intervals")->required();
  eval_cmd->add_option("--categories-out", categories_csv, "Per-category AP CSV (default <out>.categories.csv)");
  eval_cmd->add_option("--max-steps", clip_steps, "Clip ground truth to this many timesteps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  set_log_level(common.verbose ? LogLevel::info : LogLevel::warning);
  try {
    if (gen->parsed()) return cmd_gen(common);
    if (train_cmd->parsed()) return cmd_train(common, flags, manifest, resume, loss_csv);
    if (predict_cmd->parsed()) {
      return cmd_predict(common, checkpoint, manifest, anchors_csv, probs_csv, theta_class, theta_seg);
    }
    if (eval_cmd->parsed()) return cmd_eval(common, predictions, manifest, categories_csv, clip_steps);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
