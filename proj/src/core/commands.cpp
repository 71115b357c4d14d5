// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <set>

#include "soilseg/coco_data.hpp"
#include "soilseg/evaluation.hpp"
#include "soilseg/maskrcnn.hpp"
#include "soilseg/plot.hpp"
#include "soilseg/postprocess.hpp"
#include "soilseg/training.hpp"

#ifndef SOILSEG_VERSION
#define SOILSEG_VERSION "0.0.0"
#endif

namespace soilseg::cmd {

namespace fs = std::filesystem;
using nlohmann::json;

const char* version() { return SOILSEG_VERSION; }

int exit_code_for(ErrorCode status) {
  switch (status) {
    case ErrorCode::kOk:
      return kExitOk;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kConfigError:
    case ErrorCode::kInvalidK:
    case ErrorCode::kEpochOutOfRange:
      return kExitUsage;
    case ErrorCode::kMissingFile:
    case ErrorCode::kSchemaError:
    case ErrorCode::kIoError:
    case ErrorCode::kWeightsUnavailable:
    case ErrorCode::kCorruptCheckpoint:
    case ErrorCode::kVersionMismatch:
      return kExitEnvironment;
    default:
      return kExitFailure;
  }
}

namespace {

// Collects the human-readable output of a command.
struct Output {
  json out = json::array();
  json err = json::array();
  const ProgressFn* progress = nullptr;

  void line(const std::string& s) {
    out.push_back(s);
    if (progress && *progress) (*progress)(s);
  }
  void warn(const std::string& s) { err.push_back("warning: " + s); }
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Typed option access; a wrong type is a usage error.
template <typename T>
T opt(const json& o, const char* key, T fallback) {
  auto it = o.find(key);
  if (it == o.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kInvalidArgument, std::string("option '") + key + "' has the wrong type");
  }
}

std::string required(const json& o, const char* key) {
  const auto v = opt<std::string>(o, key, "");
  if (v.empty()) fail(ErrorCode::kInvalidArgument, std::string("option '") + key + "' is required");
  return v;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorCode::kIoError, "cannot create directory " + dir.string());
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << "\n";
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

// ---------------------------------------------------------------------------

void cmd_validate(const json& o, Output& io, json& result) {
  const fs::path root = required(o, "root");
  bool clean = true;
  json splits = json::object();
  for (auto split : {coco::Split::kTrain, coco::Split::kVal}) {
    const auto ds = coco::load_coco_dataset(root, split);
    const auto report = coco::validate_dataset(ds);
    json violations = json::array();
    for (const auto& v : report.violations) {
      violations.push_back(
          {{"kind", v.kind}, {"image_id", v.image_id}, {"annotation_id", v.annotation_id}, {"message", v.message}});
      io.line(coco::split_name(split) + ": " + v.kind + " image=" + std::to_string(v.image_id) +
              " annotation=" + std::to_string(v.annotation_id) + ": " + v.message);
    }
    clean = clean && report.clean();
    splits[coco::split_name(split)] = {{"images", ds.images.size()},
                                       {"annotations", ds.annotations.size()},
                                       {"violations", violations}};
  }
  result["clean"] = clean;
  result["splits"] = splits;
  if (!clean) fail(ErrorCode::kValidationFailed, "dataset has invariant violations");
  io.line("OK: train " + std::to_string(splits["train"]["images"].get<std::size_t>()) + " images, val " +
          std::to_string(splits["val"]["images"].get<std::size_t>()) + " images");
}

void cmd_split(const json& o, Output& io, json& result) {
  const fs::path input = required(o, "input");
  const fs::path out = required(o, "out");
  const double ratio = opt(o, "ratio", 0.7);
  const auto seed = opt<std::uint64_t>(o, "seed", 0);
  if (!(ratio > 0 && ratio < 1)) fail(ErrorCode::kInvalidArgument, "ratio must lie in (0, 1)");

  const fs::path ann_path = input / "annotations.json";
  if (!fs::is_regular_file(ann_path)) fail(ErrorCode::kMissingFile, ann_path.string());
  json doc;
  {
    std::ifstream in(ann_path);
    try {
      in >> doc;
    } catch (const json::exception& e) {
      fail(ErrorCode::kSchemaError, ann_path.string() + ": " + e.what());
    }
  }
  const auto pool = coco::parse_coco_json(doc, {}, coco::Split::kTrain);
  for (const auto& img : pool.images) {
    if (!fs::is_regular_file(input / img.file_name)) fail(ErrorCode::kMissingFile, (input / img.file_name).string());
  }
  if (fs::exists(coco::annotation_path(out, coco::Split::kTrain)) && !opt(o, "force", false)) {
    fail(ErrorCode::kIoError, out.string() + " already holds a dataset (pass force to overwrite)");
  }

  std::vector<std::int64_t> ids;
  for (const auto& img : pool.images) ids.push_back(img.id);
  const auto [train_ids, val_ids] = coco::split_dataset(ids, {ratio, seed});

  ensure_dir(out);
  write_manifest(out, "split", o, {{"seed", seed}});
  json counts = json::object();
  for (auto split : {coco::Split::kTrain, coco::Split::kVal}) {
    const auto& chosen = split == coco::Split::kTrain ? train_ids : val_ids;
    const std::set<std::int64_t> keep(chosen.begin(), chosen.end());
    coco::CocoDataset part;
    part.split = split;
    part.categories = pool.categories;
    for (const auto& img : pool.images) {
      if (keep.contains(img.id)) part.images.push_back(img);
    }
    for (const auto& ann : pool.annotations) {
      if (keep.contains(ann.image_id)) part.annotations.push_back(ann);
    }
    const fs::path dir = coco::image_dir(out, split);
    std::error_code ec;
    fs::remove_all(dir, ec);
    ensure_dir(dir);
    for (const auto& img : part.images) {
      const fs::path dst = dir / img.file_name;
      if (dst.has_parent_path()) ensure_dir(dst.parent_path());
      fs::copy_file(input / img.file_name, dst, fs::copy_options::overwrite_existing, ec);
      if (ec) fail(ErrorCode::kIoError, "cannot copy " + img.file_name + ": " + ec.message());
    }
    coco::write_coco_annotations(part, out);
    counts[coco::split_name(split)] = part.images.size();
    io.line(coco::split_name(split) + "2017: " + std::to_string(part.images.size()) + " images");
  }
  result["counts"] = counts;
  result["train_ids"] = train_ids;
  result["val_ids"] = val_ids;
}

void cmd_synth(const json& o, Output& io, json& result) {
  coco::SyntheticOptions s;
  const fs::path out = required(o, "out");
  s.n_images = opt(o, "n_images", s.n_images);
  s.image_size = opt(o, "image_size", s.image_size);
  s.seed = opt(o, "seed", s.seed);
  s.n_val = opt(o, "n_val", s.n_val);
  if (s.n_images < 1) fail(ErrorCode::kInvalidArgument, "n_images must be >= 1");
  ensure_dir(out);
  write_manifest(out, "synth", o, {{"seed", s.seed}});
  coco::generate_synthetic_dataset(s, out);
  const auto train = coco::load_coco_dataset(out, coco::Split::kTrain);
  const auto val = coco::load_coco_dataset(out, coco::Split::kVal);
  result["train_images"] = train.images.size();
  result["val_images"] = val.images.size();
  io.line("wrote " + std::to_string(train.images.size()) + " train and " + std::to_string(val.images.size()) +
          " val images under " + out.string());
}

// Resolves the model configuration from a preset plus JSON overrides.
model::ModelConfig resolve_model_config(const json& o) {
  const auto preset = opt<std::string>(o, "preset", "paper");
  model::ModelConfig base;
  if (preset == "paper") {
    base = model::ModelConfig::resnet50_fpn();
  } else if (preset == "compact") {
    base = model::ModelConfig::compact();
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown preset '" + preset + "' (expected paper or compact)");
  }
  auto cfg = o.contains("model") ? model::model_config_from_json(o.at("model"), base) : base;
  cfg.validate();
  return cfg;
}

void cmd_train(const json& o, Output& io, json& result) {
  const fs::path root = required(o, "root");
  const fs::path out = required(o, "out");
  const auto model_cfg = resolve_model_config(o);
  json train_overrides = o.value("train", json::object());
  // "auto" mixed precision: on for accelerators, off on CPU.
  const torch::Device device = model::resolve_device(opt<std::string>(o, "device", ""));
  if (!train_overrides.contains("mixed_precision") || train_overrides["mixed_precision"] == "auto") {
    train_overrides["mixed_precision"] = device.is_cuda();
  }
  const auto train_cfg = train::train_config_from_json(train_overrides);
  train_cfg.validate();
  const auto eval_split = opt<std::string>(o, "eval_split", "val");
  if (eval_split != "val" && eval_split != "train" && eval_split != "none") {
    fail(ErrorCode::kInvalidArgument, "eval_split must be val, train or none");
  }

  ensure_dir(out);
  json resolved = o;
  resolved["model"] = model::to_json(model_cfg);
  resolved["train"] = train::to_json(train_cfg);
  write_manifest(out, "train", resolved, {{"seed", train_cfg.seed}, {"device", model::describe_device(device)}});
  write_json_file(out / "config.json", {{"model", resolved["model"]}, {"train", resolved["train"]}});

  const auto train_ds = coco::load_coco_dataset(root, coco::Split::kTrain);
  const auto report = coco::validate_dataset(train_ds);
  if (!report.clean()) {
    for (const auto& v : report.violations) io.line("train: " + v.kind + ": " + v.message);
    fail(ErrorCode::kValidationFailed, std::to_string(report.violations.size()) + " violations in the train split");
  }
  std::optional<coco::CocoDataset> eval_ds;
  if (eval_split == "val") eval_ds = coco::load_coco_dataset(root, coco::Split::kVal);
  if (eval_split == "train") eval_ds = train_ds;

  auto model = model::build_model(model_cfg, train_cfg.seed);
  model->to(device);
  train::TrainOptions topts;
  topts.out_dir = out;
  if (o.contains("resume") && !o["resume"].is_null()) topts.resume_from = fs::path(o["resume"].get<std::string>());
  topts.on_epoch = [&](const train::EpochLog& l) {
    std::string s = "epoch " + std::to_string(l.epoch + 1) + "/" + std::to_string(train_cfg.epochs) +
                    fmt(" lr=%g", l.lr) + fmt(" loss=%.4f", l.loss_total) + fmt(" (rpn %.4f", l.loss_rpn) +
                    fmt(" frcnn %.4f", l.loss_frcnn) + fmt(" mask %.4f)", l.loss_mask);
    if (l.eval_map50) s += fmt(" eval_map50=%.4f", *l.eval_map50);
    s += fmt(" %.1fs", l.wall_seconds);
    io.line(s);
  };
  const auto r = train::train(train_cfg, *model, train_ds, eval_ds ? &*eval_ds : nullptr, topts);
  json logs = json::array();
  for (const auto& l : r.logs) logs.push_back(train::to_json(l));
  result["logs"] = logs;
  result["final_checkpoint"] = r.final_checkpoint.string();
  result["best_checkpoint"] = r.best_checkpoint.string();
  io.line("final checkpoint: " + r.final_checkpoint.string());
}

// Detections rasterized from a predictions JSON: a list (or {"predictions": [...]})
// of {image_id, score, segmentation: [[x, y, ...], ...]}.
std::map<std::int64_t, std::vector<model::DetectionResult>> load_prediction_file(const fs::path& path,
                                                                                 const coco::CocoDataset& ds) {
  if (!fs::is_regular_file(path)) fail(ErrorCode::kMissingFile, path.string());
  json doc;
  try {
    std::ifstream in(path);
    in >> doc;
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaError, path.string() + ": " + e.what());
  }
  const json& list = doc.is_object() ? doc.value("predictions", json()) : doc;
  if (!list.is_array()) fail(ErrorCode::kSchemaError, path.string() + ": expected a list of predictions");
  std::map<std::int64_t, std::vector<model::DetectionResult>> out;
  for (const auto& p : list) {
    try {
      const auto id = p.at("image_id").get<std::int64_t>();
      const auto* rec = ds.find_image(id);
      if (rec == nullptr) fail(ErrorCode::kDanglingReference, "prediction for unknown image " + std::to_string(id));
      const auto polys = p.at("segmentation").get<std::vector<coco::Polygon>>();
      const auto mask = coco::polygons_to_mask(polys, rec->width, rec->height);
      model::DetectionResult d;
      d.score = p.at("score").get<double>();
      d.label = p.value("category_id", coco::kSoilCategoryId);
      d.mask_prob = ProbMap(rec->width, rec->height);
      for (std::size_t i = 0; i < mask.data.size(); ++i) d.mask_prob.data[i] = mask.data[i];
      const auto bb = coco::polygon_bbox(polys);
      d.box = {bb[0], bb[1], bb[0] + bb[2], bb[1] + bb[3]};
      out[id].push_back(std::move(d));
    } catch (const json::exception& e) {
      fail(ErrorCode::kSchemaError, path.string() + ": " + e.what());
    }
  }
  return out;
}

void cmd_eval(const json& o, Output& io, json& result) {
  const fs::path root = required(o, "root");
  const auto split = coco::parse_split(opt<std::string>(o, "split", "val"));
  const fs::path out = opt<std::string>(o, "out", "eval_out");
  const auto checkpoint = opt<std::string>(o, "checkpoint", "");
  const auto predictions = opt<std::string>(o, "predictions", "");
  if (checkpoint.empty() == predictions.empty()) {
    fail(ErrorCode::kInvalidArgument, "exactly one of checkpoint or predictions is required");
  }
  ensure_dir(out);
  json extra = json::object();
  const auto ds = coco::load_coco_dataset(root, split);
  eval::EvalConfig ecfg;
  eval::EvalReport report;
  if (!checkpoint.empty()) {
    const torch::Device device = model::resolve_device(opt<std::string>(o, "device", ""));
    extra["device"] = model::describe_device(device);
    write_manifest(out, "eval", o, extra);
    auto model = train::load_model(checkpoint, device);
    ecfg.mask_threshold = opt(o, "mask_threshold", model->config().mask_threshold);
    report = eval::eval_segm_map(
        [&](const RgbImage& image, const coco::ImageRecord&) { return model::predict(*model, image); }, ds, ecfg);
  } else {
    write_manifest(out, "eval", o, extra);
    ecfg.mask_threshold = opt(o, "mask_threshold", 0.5);
    auto by_image = load_prediction_file(predictions, ds);
    report = eval::eval_segm_map(
        [&](const RgbImage&, const coco::ImageRecord& rec) {
          auto it = by_image.find(rec.id);
          return it == by_image.end() ? std::vector<model::DetectionResult>{} : it->second;
        },
        ds, ecfg);
  }
  const json j = eval::to_json(report);
  write_json_file(out / "eval_report.json", j);
  result["report"] = j;
  result["report_path"] = (out / "eval_report.json").string();
  io.line(report.ap50 ? fmt("segm_mAP@0.5=%.4f", *report.ap50) : std::string("segm_mAP@0.5=nan"));
  io.line("split=" + report.split + " images=" + std::to_string(report.num_images) +
          " predictions=" + std::to_string(report.num_predictions) + " gts=" + std::to_string(report.num_gts));
}

std::vector<fs::path> expand_inputs(const json& o) {
  std::vector<fs::path> files;
  const auto inputs = opt<std::vector<std::string>>(o, "inputs", {});
  if (inputs.empty()) fail(ErrorCode::kInvalidArgument, "at least one input image or directory is required");
  for (const auto& s : inputs) {
    const fs::path p = s;
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && is_image_file(e.path())) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      fail(ErrorCode::kMissingFile, p.string());
    }
  }
  return files;
}

void cmd_segment(const json& o, Output& io, json& result) {
  const fs::path checkpoint = required(o, "checkpoint");
  const fs::path out = required(o, "out");
  const auto files = expand_inputs(o);
  const torch::Device device = model::resolve_device(opt<std::string>(o, "device", ""));
  ensure_dir(out);
  const json base_extra = {{"device", model::describe_device(device)}};
  write_manifest(out, "segment", o, base_extra);
  auto model = train::load_model(checkpoint, device);
  post::PostprocessConfig pcfg;
  pcfg.score_threshold = opt(o, "score_threshold", model->config().score_threshold);
  pcfg.mask_threshold = opt(o, "mask_threshold", model->config().mask_threshold);

  json succeeded = json::array(), no_detection = json::array(), failed = json::array();
  std::map<std::string, int> stem_uses;
  for (const auto& file : files) {
    std::string stem = file.stem().string();
    if (const int n = stem_uses[stem]++; n > 0) stem += "_" + std::to_string(n);
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const RgbImage image = read_image(file);
      const auto dets = model::predict(*model, image);
      const auto artifact = post::segment_detections(image, dets, pcfg);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      post::write_artifact(out, stem, artifact, {{"source", file.string()}, {"seconds", seconds}});
      succeeded.push_back({{"source", file.string()}, {"stem", stem}, {"score", artifact.score}});
      io.line(file.string() + fmt(": score=%.4f", artifact.score) + " crop=" + std::to_string(artifact.crop_rect.width()) +
              "x" + std::to_string(artifact.crop_rect.height()));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kNoSoilDetected || e.code() == ErrorCode::kEmptyIntersection) {
        no_detection.push_back({{"source", file.string()}, {"reason", e.what()}});
        io.warn(file.string() + ": " + e.what());
      } else {
        failed.push_back({{"source", file.string()}, {"reason", e.what()}});
        io.warn(file.string() + ": " + e.what());
      }
    }
  }
  json extra = base_extra;
  extra["succeeded"] = succeeded;
  extra["no_detection"] = no_detection;
  extra["failed"] = failed;
  write_manifest(out, "segment", o, extra);
  result["succeeded"] = succeeded;
  result["no_detection"] = no_detection;
  result["failed"] = failed;
  if (succeeded.empty()) fail(ErrorCode::kNoSoilDetected, "no input produced a segmentation");
}

void cmd_bench(const json& o, Output& io, json& result) {
  const fs::path checkpoint = required(o, "checkpoint");
  const fs::path image_path = required(o, "image");
  const int runs = opt(o, "runs", 30);
  const int warmup = opt(o, "warmup", 5);
  const fs::path out = opt<std::string>(o, "out", "bench_out");
  if (runs < 1) fail(ErrorCode::kInvalidArgument, "runs must be >= 1");
  if (warmup < 0) fail(ErrorCode::kInvalidArgument, "warmup must be >= 0");
  const torch::Device device = model::resolve_device(opt<std::string>(o, "device", ""));
  ensure_dir(out);
  write_manifest(out, "bench", o, {{"device", model::describe_device(device)}});
  auto model = train::load_model(checkpoint, device);
  const RgbImage image = read_image(image_path);
  post::PostprocessConfig pcfg;
  pcfg.score_threshold = model->config().score_threshold;
  pcfg.mask_threshold = model->config().mask_threshold;
  int detected = 0;
  auto once = [&] {
    const auto dets = model::predict(*model, image);
    try {
      post::segment_detections(image, dets, pcfg);
      ++detected;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoSoilDetected && e.code() != ErrorCode::kEmptyIntersection) throw;
    }
  };
  auto sync = [&] {
    if (device.is_cuda()) torch::cuda::synchronize();
  };
  const auto report = eval::benchmark(once, warmup, runs, model::describe_device(device), sync);
  json j = eval::to_json(report);
  j["image"] = image_path.string();
  j["reference_seconds"] = kPaperLatencySeconds;
  j["reference_note"] = "original GPU measurement; informational only";
  write_json_file(out / "timing.json", j);
  result["timing"] = j;
  result["timing_path"] = (out / "timing.json").string();
  io.line(fmt("median_seconds=%.4f", report.median_seconds) + fmt(" mean_seconds=%.4f", report.mean_seconds) +
          " runs=" + std::to_string(report.measured_runs) + " warmup=" + std::to_string(report.warmup_runs) +
          " device=" + report.device);
  io.line(fmt("reference: %.2f s per image on the original GPU (not asserted)", kPaperLatencySeconds));
  if (detected == 0) io.warn("no soil detected in the benchmark image; timing covers the full pipeline regardless");
}

void cmd_plot(const json& o, Output& io, json& result) {
  const fs::path csv = required(o, "log_csv");
  const fs::path out = required(o, "out");
  // Read the CSV before creating anything so a malformed file leaves no output.
  train::read_log_csv(csv);
  ensure_dir(out);
  write_manifest(out, "plot", o);
  const auto r = plot::plot_curves(csv, out);
  json written = json::array();
  for (const auto& p : r.written) {
    written.push_back(p.string());
    io.line("wrote " + p.string());
  }
  for (const auto& w : r.warnings) io.warn(w);
  result["written"] = written;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"validate", "split", "synth", "train",
                                                 "eval",     "segment", "bench", "plot"};
  return names;
}

void write_manifest(const fs::path& dir, const std::string& subcommand, const json& config, const json& extra) {
  json m = {{"subcommand", subcommand},
            {"config", config},
            {"tool_version", version()},
            {"timestamp", utc_timestamp()},
            {"seed", config.contains("seed") ? config["seed"] : json(nullptr)}};
  m.update(extra);
  write_json_file(dir / kManifestName, m);
}

CommandOutcome run_command(const std::string& name, const json& options, const ProgressFn& progress) {
  CommandOutcome outcome;
  Output io;
  io.progress = &progress;
  json result = json::object();
  try {
    if (!options.is_object()) fail(ErrorCode::kInvalidArgument, "options must be a JSON object");
    if (name == "validate") {
      cmd_validate(options, io, result);
    } else if (name == "split") {
      cmd_split(options, io, result);
    } else if (name == "synth") {
      cmd_synth(options, io, result);
    } else if (name == "train") {
      cmd_train(options, io, result);
    } else if (name == "eval") {
      cmd_eval(options, io, result);
    } else if (name == "segment") {
      cmd_segment(options, io, result);
    } else if (name == "bench") {
      cmd_bench(options, io, result);
    } else if (name == "plot") {
      cmd_plot(options, io, result);
    } else {
      fail(ErrorCode::kInvalidArgument, "unknown command '" + name + "'");
    }
  } catch (const Error& e) {
    outcome.status = e.code();
    result["error"] = e.what();
  } catch (const c10::Error& e) {
    outcome.status = ErrorCode::kInternal;
    result["error"] = std::string("Internal: ") + e.what_without_backtrace();
  } catch (const std::exception& e) {
    outcome.status = ErrorCode::kInternal;
    result["error"] = std::string("Internal: ") + e.what();
  }
  result["stdout"] = io.out;
  result["stderr"] = io.err;
  result["status"] = error_code_name(outcome.status);
  result["exit_code"] = exit_code_for(outcome.status);
  outcome.result = std::move(result);
  return outcome;
}

}  // namespace soilseg::cmd
