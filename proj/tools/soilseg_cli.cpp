// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

// `soilseg` command-line tool. Parses flags into a JSON options object and
// hands it to the C library; all work happens behind soilseg.h.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "soilseg/soilseg.h"

namespace {

using nlohmann::json;

constexpr int kExitUsage = 64;

void print_line(const char* line, void*) {
  std::fputs(line, stdout);
  std::fputc('\n', stdout);
  std::fflush(stdout);
}

int run(const std::string& name, const json& options) {
  char* raw = nullptr;
  const int status = soilseg_run_command(name.c_str(), options.dump().c_str(), print_line, nullptr, &raw);
  json result = json::object();
  if (raw != nullptr) {
    result = json::parse(raw, nullptr, /*allow_exceptions=*/false);
    soilseg_free_string(raw);
  }
  if (result.is_object()) {
    for (const auto& line : result.value("stderr", json::array())) std::cerr << line.get<std::string>() << "\n";
  }
  if (status != SOILSEG_OK) {
    std::cerr << "soilseg " << name << ": error: " << soilseg_last_error() << "\n";
  }
  return soilseg_exit_code(status);
}

// Adds `value` under `key` only when the flag was given, so library defaults apply otherwise.
template <typename T>
void put(json& j, const char* key, const std::optional<T>& value) {
  if (value) j[key] = *value;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CLI::ValidationError("--config", e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask R-CNN soil segmentation: dataset tools, training, evaluation, Eq. 2 post-processing"};
  app.set_version_flag("--version", std::string(soilseg_version()));
  app.require_subcommand(1);
  json options = json::object();
  std::string command;
  std::optional<std::string> device;

  // validate
  auto* validate = app.add_subcommand("validate", "Check both splits of a COCO2017 layout");
  std::string root;
  validate->add_option("root", root, "Dataset root")->required();

  // split
  auto* split = app.add_subcommand("split", "Materialize train2017/val2017 from a flat annotated pool");
  std::string input, out;
  std::optional<double> ratio;
  std::optional<std::uint64_t> seed;
  bool force = false;
  split->add_option("input", input, "Directory holding annotations.json and the images")->required();
  split->add_option("--out,-o", out, "Output dataset root")->required();
  split->add_option("--ratio", ratio, "Train fraction, in (0, 1) (default 0.7)");
  split->add_option("--seed", seed, "Shuffle seed (default 0)");
  split->add_flag("--force", force, "Overwrite an existing dataset at --out");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic soil dataset in COCO2017 layout");
  std::optional<int> n_images, image_size, n_val;
  synth->add_option("--out,-o", out, "Output dataset root")->required();
  synth->add_option("--n", n_images, "Train images (default 20)");
  synth->add_option("--size", image_size, "Image side in pixels (default 128)");
  synth->add_option("--n-val", n_val, "Val images (default round(3n/7))");
  synth->add_option("--seed", seed, "Generator seed (default 7)");

  // train
  auto* train = app.add_subcommand("train", "Train Mask R-CNN with the SGD step-decay recipe");
  std::optional<int> epochs, batch_size, min_size, max_size;
  std::optional<double> lr, momentum, weight_decay, decay_factor, hflip;
  std::optional<std::string> decay_epochs;
  std::optional<std::string> mixed_precision, preset, backbone, backbone_weights, resume, eval_split, config_path;
  bool no_pretrained = false;
  train->add_option("root", root, "Dataset root")->required();
  train->add_option("--out,-o", out, "Run directory (logs, checkpoints, config)")->required();
  train->add_option("--config", config_path, "JSON file with {preset, model: {...}, train: {...}} overrides");
  train->add_option("--preset", preset, "paper (ResNet-50-FPN, default) or compact")
      ->check(CLI::IsMember({"paper", "compact"}));
  train->add_option("--backbone", backbone, "resnet50-fpn or compact-fpn")
      ->check(CLI::IsMember({"resnet50-fpn", "compact-fpn"}));
  train->add_flag("--no-pretrained", no_pretrained, "Start the backbone from random weights");
  train->add_option("--backbone-weights", backbone_weights, "Pickled backbone state dict (torchvision names)");
  train->add_option("--min-size", min_size, "Resize: shorter side target");
  train->add_option("--max-size", max_size, "Resize: longer side cap");
  train->add_option("--epochs", epochs, "Epochs (default 25)");
  train->add_option("--lr", lr, "Base learning rate (default 0.004)");
  train->add_option("--momentum", momentum, "SGD momentum (default 0.9)");
  train->add_option("--weight-decay", weight_decay, "Weight decay (default 1e-4)");
  train->add_option("--decay-epochs", decay_epochs,
                    "Comma-separated 0-based epochs where lr decays (default 10,20; 'none' for no decay)");
  train->add_option("--decay-factor", decay_factor, "Multiplier per decay (default 0.1)");
  train->add_option("--batch-size", batch_size, "Images per step (default 3)");
  train->add_option("--mixed-precision", mixed_precision, "auto (on for CUDA), on or off")
      ->check(CLI::IsMember({"auto", "on", "off"}));
  train->add_option("--hflip", hflip, "Horizontal flip probability (default 0.5)");
  train->add_option("--seed", seed, "Seed for init, batching and augmentation (default 0)");
  train->add_option("--eval-split", eval_split, "Per-epoch evaluation split: val (default), train or none")
      ->check(CLI::IsMember({"val", "train", "none"}));
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_option("--device", device, "cpu, cuda or cuda:N (default: $SOILSEG_DEVICE, then auto)");

  // eval
  auto* eval = app.add_subcommand("eval", "Segmentation mAP@0.5 of a checkpoint or a predictions file");
  std::optional<std::string> checkpoint, predictions, split_name, eval_out;
  std::optional<double> mask_threshold, score_threshold;
  eval->add_option("root", root, "Dataset root")->required();
  auto* ck_opt = eval->add_option("--checkpoint,-c", checkpoint, "Model checkpoint");
  auto* pred_opt = eval->add_option("--predictions", predictions,
                                    "JSON list of {image_id, score, segmentation} instead of a model");
  ck_opt->excludes(pred_opt);
  eval->add_option("--split", split_name, "train or val (default val)")->check(CLI::IsMember({"train", "val"}));
  eval->add_option("--out,-o", eval_out, "Report directory (default eval_out)");
  eval->add_option("--mask-threshold", mask_threshold, "Mask binarization threshold");
  eval->add_option("--device", device, "cpu, cuda or cuda:N");

  // segment
  auto* segment = app.add_subcommand("segment", "Eq. 2 composite and minimum-rectangle crop per image");
  std::vector<std::string> inputs;
  segment->add_option("inputs", inputs, "Images or directories")->required();
  segment->add_option("--checkpoint,-c", checkpoint, "Model checkpoint")->required();
  segment->add_option("--out,-o", out, "Output directory")->required();
  segment->add_option("--score-threshold", score_threshold, "Minimum detection score (default 0.5)");
  segment->add_option("--mask-threshold", mask_threshold, "Mask binarization threshold (default 0.5)");
  segment->add_option("--device", device, "cpu, cuda or cuda:N");

  // bench
  auto* bench = app.add_subcommand("bench", "End-to-end latency of predict + Eq. 2 post-processing");
  std::string image;
  std::optional<int> runs, warmup;
  bench->add_option("image", image, "Input image")->required();
  bench->add_option("--checkpoint,-c", checkpoint, "Model checkpoint")->required();
  bench->add_option("--runs", runs, "Measured runs (default 30)");
  bench->add_option("--warmup", warmup, "Unmeasured warmup runs (default 5)");
  bench->add_option("--out,-o", eval_out, "Report directory (default bench_out)");
  bench->add_option("--device", device, "cpu, cuda or cuda:N");

  // plot
  auto* plot = app.add_subcommand("plot", "Loss, lr and eval mAP curves from a training log.csv");
  std::string log_csv;
  plot->add_option("log_csv", log_csv, "Training CSV")->required();
  plot->add_option("--out,-o", out, "Output directory for PNGs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  put(options, "device", device);
  put(options, "seed", seed);
  if (validate->parsed()) {
    command = "validate";
    options["root"] = root;
  } else if (split->parsed()) {
    command = "split";
    options["input"] = input;
    options["out"] = out;
    options["force"] = force;
    put(options, "ratio", ratio);
  } else if (synth->parsed()) {
    command = "synth";
    options["out"] = out;
    put(options, "n_images", n_images);
    put(options, "image_size", image_size);
    put(options, "n_val", n_val);
  } else if (train->parsed()) {
    command = "train";
    json model = json::object(), tcfg = json::object();
    if (config_path) {
      try {
        const json file = read_json_file(*config_path);
        if (file.contains("preset")) options["preset"] = file["preset"];
        if (file.contains("model")) model = file["model"];
        if (file.contains("train")) tcfg = file["train"];
      } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
      }
    }
    options["root"] = root;
    options["out"] = out;
    put(options, "preset", preset);
    put(options, "eval_split", eval_split);
    put(options, "resume", resume);
    put(model, "backbone", backbone);
    put(model, "backbone_weights", backbone_weights);
    put(model, "min_size", min_size);
    put(model, "max_size", max_size);
    if (no_pretrained) model["pretrained_backbone"] = false;
    put(tcfg, "epochs", epochs);
    put(tcfg, "base_lr", lr);
    put(tcfg, "momentum", momentum);
    put(tcfg, "weight_decay", weight_decay);
    if (decay_epochs) {
      json list = json::array();
      if (*decay_epochs != "none") {
        for (const auto& item : CLI::detail::split(*decay_epochs, ',')) {
          if (item.empty()) continue;
          int value = 0;
          if (!CLI::detail::lexical_cast(item, value)) {
            std::fprintf(stderr, "soilseg train: error: --decay-epochs: '%s' is not an integer\n", item.c_str());
            return 64;
          }
          list.push_back(value);
        }
      }
      tcfg["decay_epochs"] = list;
    }
    put(tcfg, "decay_factor", decay_factor);
    put(tcfg, "batch_size", batch_size);
    put(tcfg, "hflip_prob", hflip);
    put(tcfg, "seed", seed);
    if (mixed_precision) {
      tcfg["mixed_precision"] = *mixed_precision == "auto" ? json("auto") : json(*mixed_precision == "on");
    }
    options["model"] = model;
    options["train"] = tcfg;
  } else if (eval->parsed()) {
    command = "eval";
    options["root"] = root;
    put(options, "checkpoint", checkpoint);
    put(options, "predictions", predictions);
    put(options, "split", split_name);
    put(options, "out", eval_out);
    put(options, "mask_threshold", mask_threshold);
  } else if (segment->parsed()) {
    command = "segment";
    options["inputs"] = inputs;
    options["out"] = out;
    put(options, "checkpoint", checkpoint);
    put(options, "score_threshold", score_threshold);
    put(options, "mask_threshold", mask_threshold);
  } else if (bench->parsed()) {
    command = "bench";
    options["image"] = image;
    put(options, "checkpoint", checkpoint);
    put(options, "runs", runs);
    put(options, "warmup", warmup);
    put(options, "out", eval_out);
  } else if (plot->parsed()) {
    command = "plot";
    options["log_csv"] = log_csv;
    options["out"] = out;
  }
  return run(command, options);
}
