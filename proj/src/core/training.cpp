// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/training.hpp"

#include <ATen/autocast_mode.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "rng.hpp"
#include "soilseg/error.hpp"
#include "soilseg/evaluation.hpp"

namespace soilseg::train {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::kConfigError, what);
  };
  check(epochs > 0, "epochs must be > 0");
  check(base_lr > 0 && std::isfinite(base_lr), "base_lr must be > 0");
  check(momentum >= 0 && momentum < 1, "momentum must lie in [0, 1)");
  check(weight_decay >= 0, "weight_decay must be >= 0");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(decay_factor > 0 && decay_factor <= 1, "decay_factor must lie in (0, 1]");
  check(hflip_prob >= 0 && hflip_prob <= 1, "hflip_prob must lie in [0, 1]");
  for (int e : decay_epochs) {
    check(e >= 0 && e < epochs, "decay epoch " + std::to_string(e) + " outside [0, epochs)");
  }
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"base_lr", c.base_lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"decay_epochs", c.decay_epochs},
          {"decay_factor", c.decay_factor},
          {"batch_size", c.batch_size},
          {"mixed_precision", c.mixed_precision},
          {"seed", c.seed},
          {"hflip_prob", c.hflip_prob}};
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  TrainConfig c = base;
  if (!j.is_object()) fail(ErrorCode::kConfigError, "train config must be a JSON object");
  try {
    auto get = [&](const char* key, auto& field) {
      if (auto it = j.find(key); it != j.end()) it->get_to(field);
    };
    get("epochs", c.epochs);
    get("base_lr", c.base_lr);
    get("momentum", c.momentum);
    get("weight_decay", c.weight_decay);
    get("decay_epochs", c.decay_epochs);
    get("decay_factor", c.decay_factor);
    get("batch_size", c.batch_size);
    get("mixed_precision", c.mixed_precision);
    get("seed", c.seed);
    get("hflip_prob", c.hflip_prob);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfigError, std::string("train config: ") + e.what());
  }
  return c;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    fail(ErrorCode::kEpochOutOfRange,
         "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  }
  double lr = cfg.base_lr;
  for (int e : cfg.decay_epochs) {
    if (e <= epoch) lr *= cfg.decay_factor;
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Logs

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_double(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
  while (!s.empty() && s.front() == ' ') s.erase(s.begin());
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

std::string to_csv_row(const EpochLog& l) {
  return std::to_string(l.epoch) + "," + fmt(l.lr) + "," + fmt(l.loss_total) + "," + fmt(l.loss_rpn) + "," +
         fmt(l.loss_frcnn) + "," + fmt(l.loss_mask) + "," + (l.eval_map50 ? fmt(*l.eval_map50) : "") + "," +
         fmt(l.wall_seconds);
}

json to_json(const EpochLog& l) {
  return {{"epoch", l.epoch},
          {"lr", l.lr},
          {"loss_total", l.loss_total},
          {"loss_rpn", l.loss_rpn},
          {"loss_frcnn", l.loss_frcnn},
          {"loss_mask", l.loss_mask},
          {"eval_map50", optional_json(l.eval_map50)},
          {"wall_seconds", l.wall_seconds},
          {"steps", l.steps},
          {"last_step_loss_total", l.last_step.total},
          {"last_step_loss_rpn", l.last_step.rpn},
          {"last_step_loss_frcnn", l.last_step.frcnn},
          {"last_step_loss_mask", l.last_step.mask}};
}

LogTable read_log_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kSchemaError, path.string() + ": empty file");
  const auto header = split_fields(line);
  std::map<std::string, std::size_t> col;
  static const std::vector<std::string> known = {"epoch",     "lr",         "loss_total", "loss_rpn",
                                                 "loss_frcnn", "loss_mask", "eval_map50", "wall_seconds"};
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string name = header[i];
    while (!name.empty() && (name.back() == '\r' || name.back() == ' ')) name.pop_back();
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      fail(ErrorCode::kSchemaError, path.string() + ": unknown column '" + name + "'");
    }
    if (!col.emplace(name, i).second) fail(ErrorCode::kSchemaError, path.string() + ": duplicate column " + name);
  }
  for (const char* required : {"epoch", "lr", "loss_total"}) {
    if (!col.count(required)) fail(ErrorCode::kSchemaError, path.string() + ": missing column " + required);
  }
  LogTable table;
  table.has_eval_column = col.count("eval_map50") > 0;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) fail(ErrorCode::kSchemaError, where + ": expected " +
                                                                         std::to_string(header.size()) + " fields");
    EpochLog row;
    auto number = [&](const char* name, bool allow_empty) -> std::optional<double> {
      auto it = col.find(name);
      if (it == col.end()) return std::nullopt;
      const std::string& raw = fields[it->second];
      if (raw.empty() || raw == "\r") {
        if (allow_empty) return std::nullopt;
        fail(ErrorCode::kSchemaError, where + ": empty " + name);
      }
      auto v = parse_double(raw);
      if (!v) fail(ErrorCode::kSchemaError, where + ": non-numeric " + name + " '" + raw + "'");
      return v;
    };
    row.epoch = static_cast<int>(*number("epoch", false));
    row.lr = *number("lr", false);
    row.loss_total = *number("loss_total", false);
    row.loss_rpn = number("loss_rpn", false).value_or(0.0);
    row.loss_frcnn = number("loss_frcnn", false).value_or(0.0);
    row.loss_mask = number("loss_mask", false).value_or(0.0);
    row.eval_map50 = number("eval_map50", true);
    row.wall_seconds = number("wall_seconds", false).value_or(0.0);
    table.rows.push_back(row);
  }
  if (table.rows.empty()) fail(ErrorCode::kSchemaError, path.string() + ": no data rows");
  return table;
}

// ---------------------------------------------------------------------------
// Training loop

EpochPlan plan_epoch(const TrainConfig& cfg, int epoch, std::size_t n_images) {
  detail::Rng rng(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
  std::vector<std::size_t> order(n_images);
  for (std::size_t i = 0; i < n_images; ++i) order[i] = i;
  rng.shuffle(order);
  EpochPlan plan;
  plan.flip.resize(n_images);
  for (std::size_t i = 0; i < n_images; ++i) plan.flip[i] = rng.uniform() < cfg.hflip_prob;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < n_images; start += bs) {
    plan.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(std::min(start + bs, n_images)));
  }
  return plan;
}

namespace {

struct Sample {
  torch::Tensor image;  // float [3, H, W]
  model::TrainTarget target;
};

std::vector<Sample> preload(const coco::CocoDataset& ds, torch::Device device) {
  std::vector<Sample> out;
  for (const auto& rec : ds.images) {
    const auto anns = ds.annotations_for(rec.id);
    if (anns.empty()) continue;  // nothing to learn from; the validator flags these
    const RgbImage image = read_image(ds.image_path(rec));
    Sample s;
    s.image = model::image_to_tensor(image).to(device);
    std::vector<float> boxes;
    std::vector<torch::Tensor> masks;
    for (const auto* ann : anns) {
      const auto& b = ann->bbox;
      boxes.insert(boxes.end(), {static_cast<float>(b[0]), static_cast<float>(b[1]),
                                 static_cast<float>(b[0] + b[2]), static_cast<float>(b[1] + b[3])});
      auto m = coco::polygon_to_mask(*ann, image.width, image.height);
      masks.push_back(torch::from_blob(m.data.data(), {image.height, image.width}, torch::kUInt8).clone());
    }
    const auto n = static_cast<int64_t>(anns.size());
    s.target.boxes = torch::tensor(boxes).view({n, 4}).to(device);
    s.target.labels = torch::full({n}, coco::kSoilCategoryId, torch::kLong).to(device);
    s.target.masks = torch::stack(masks).to(device);
    out.push_back(std::move(s));
  }
  return out;
}

Sample hflip(const Sample& s) {
  Sample f;
  const double w = static_cast<double>(s.image.size(2));
  f.image = s.image.flip({2});
  auto b = s.target.boxes;
  f.target.boxes = torch::stack({w - b.select(1, 2), b.select(1, 1), w - b.select(1, 0), b.select(1, 3)}, 1);
  f.target.labels = s.target.labels;
  f.target.masks = s.target.masks.flip({2});
  return f;
}

// Enables autocast for the device for the lifetime of the guard.
class AutocastGuard {
 public:
  AutocastGuard(bool enabled, torch::Device device) : type_(device.type()), enabled_(enabled) {
    if (!enabled_) return;
    previous_ = at::autocast::is_autocast_enabled(type_);
    at::autocast::set_autocast_dtype(type_, at::kBFloat16);
    at::autocast::set_autocast_enabled(type_, true);
  }
  ~AutocastGuard() {
    if (!enabled_) return;
    at::autocast::set_autocast_enabled(type_, previous_);
    at::autocast::clear_cache();
  }
  AutocastGuard(const AutocastGuard&) = delete;
  AutocastGuard& operator=(const AutocastGuard&) = delete;

 private:
  at::DeviceType type_;
  bool enabled_;
  bool previous_ = false;
};

class LogWriter {
 public:
  LogWriter(const fs::path& dir, int keep_before_epoch) : csv_path_(dir / "log.csv"), jsonl_path_(dir / "log.jsonl") {
    // Keep rows of epochs that precede the resume point; drop anything later.
    std::vector<std::string> csv_rows, json_rows;
    if (keep_before_epoch > 0 && fs::exists(csv_path_)) {
      for (const auto& row : read_log_csv(csv_path_).rows) {
        if (row.epoch < keep_before_epoch) {
          kept_.push_back(row);
          csv_rows.push_back(to_csv_row(row));
        }
      }
      std::ifstream jin(jsonl_path_);
      std::string line;
      while (std::getline(jin, line)) {
        try {
          if (json::parse(line).at("epoch").get<int>() < keep_before_epoch) json_rows.push_back(line);
        } catch (const json::exception&) {
          // incomplete trailing line from an interrupted run
        }
      }
    }
    csv_.open(csv_path_, std::ios::trunc);
    jsonl_.open(jsonl_path_, std::ios::trunc);
    if (!csv_ || !jsonl_) fail(ErrorCode::kIoError, "cannot write logs under " + dir.string());
    csv_ << kLogCsvHeader << "\n";
    for (const auto& r : csv_rows) csv_ << r << "\n";
    for (const auto& r : json_rows) jsonl_ << r << "\n";
    csv_.flush();
    jsonl_.flush();
  }

  void append(const EpochLog& log) {
    csv_ << to_csv_row(log) << "\n";
    csv_.flush();
    jsonl_ << to_json(log).dump() << "\n";
    jsonl_.flush();
    if (!csv_ || !jsonl_) fail(ErrorCode::kIoError, "log write failed");
  }

  const std::vector<EpochLog>& kept() const { return kept_; }

 private:
  fs::path csv_path_, jsonl_path_;
  std::ofstream csv_, jsonl_;
  std::vector<EpochLog> kept_;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
}

bool better(const CheckpointMeta& candidate, const std::optional<CheckpointMeta>& best) {
  if (!best) return true;
  if (candidate.eval_map50 && best->eval_map50) return *candidate.eval_map50 > *best->eval_map50;
  if (candidate.eval_map50 != best->eval_map50) return candidate.eval_map50.has_value();
  return candidate.loss_total < best->loss_total;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, model::Model& model, const coco::CocoDataset& train_ds,
                  const coco::CocoDataset* eval_ds, const TrainOptions& opts) {
  cfg.validate();
  const torch::Device device = model.device();
  auto samples = preload(train_ds, device);
  if (samples.empty()) fail(ErrorCode::kDataError, "training set has no annotated images");

  std::error_code ec;
  const fs::path ckpt_dir = opts.out_dir / "checkpoints";
  fs::create_directories(ckpt_dir, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create " + ckpt_dir.string() + ": " + ec.message());

  std::vector<torch::Tensor> params;
  for (auto& p : model.net()->parameters()) {
    if (p.requires_grad()) params.push_back(p);
  }
  torch::optim::SGD optimizer(
      params, torch::optim::SGDOptions(cfg.base_lr).momentum(cfg.momentum).weight_decay(cfg.weight_decay));

  int start_epoch = 0;
  std::optional<CheckpointMeta> best;
  if (opts.resume_from) {
    const auto meta = load_checkpoint(*opts.resume_from, model, &optimizer);
    start_epoch = meta.epoch + 1;
    const fs::path best_path = ckpt_dir / kBestCheckpointName;
    if (fs::exists(best_path)) best = read_checkpoint_meta(best_path);
  }

  json snapshot = {{"model", model::to_json(model.config())},
                   {"train", to_json(cfg)},
                   {"device", model::describe_device(device)},
                   {"resize", {{"min_size", model.config().min_size}, {"max_size", model.config().max_size}}},
                   {"train_images", samples.size()},
                   {"eval_split", eval_ds ? json(coco::split_name(eval_ds->split)) : json(nullptr)},
                   {"start_epoch", start_epoch}};
  write_json(opts.out_dir / "config.json", snapshot);

  LogWriter logs(opts.out_dir, start_epoch);
  TrainResult result;
  result.logs = logs.kept();

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
    }
    torch::manual_seed(detail::mix_seed(cfg.seed ^ 0x5eed, static_cast<std::uint64_t>(epoch)));
    model.set_training(true);

    const EpochPlan plan = plan_epoch(cfg, epoch, samples.size());
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    for (std::size_t step = 0; step < plan.batches.size(); ++step) {
      std::vector<torch::Tensor> images;
      std::vector<model::TrainTarget> targets;
      for (std::size_t idx : plan.batches[step]) {
        const Sample s = plan.flip[idx] ? hflip(samples[idx]) : samples[idx];
        images.push_back(s.image);
        targets.push_back(s.target);
      }
      model::LossTensors losses;
      {
        AutocastGuard autocast(cfg.mixed_precision, device);
        losses = model.net()->forward_train(images, std::move(targets));
      }
      const model::LossBreakdown parts = losses.breakdown();
      try {
        model::total_loss(parts);
      } catch (const Error& e) {
        const json failure = {{"epoch", epoch},
                              {"step", step},
                              {"loss_rpn", parts.l_rpn},
                              {"loss_frcnn", parts.l_faster_rcnn},
                              {"loss_mask", parts.l_mask}};
        write_json(opts.out_dir / "failure.json", failure);
        fail(ErrorCode::kNonFiniteLoss,
             "training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      optimizer.zero_grad();
      losses.total().backward();
      optimizer.step();

      log.last_step = {parts.total, parts.l_rpn, parts.l_faster_rcnn, parts.l_mask};
      log.loss_total += parts.total;
      log.loss_rpn += parts.l_rpn;
      log.loss_frcnn += parts.l_faster_rcnn;
      log.loss_mask += parts.l_mask;
      ++log.steps;
    }
    const double steps = static_cast<double>(log.steps);
    log.loss_rpn /= steps;
    log.loss_frcnn /= steps;
    log.loss_mask /= steps;
    log.loss_total = log.loss_rpn + log.loss_frcnn + log.loss_mask;

    if (eval_ds != nullptr && !eval_ds->images.empty()) {
      const auto report = eval::eval_segm_map(
          [&](const RgbImage& image, const coco::ImageRecord&) { return model::predict(model, image); }, *eval_ds,
          {.mask_threshold = model.config().mask_threshold});
      log.eval_map50 = report.ap50;
    }
    model.set_training(true);
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    CheckpointMeta meta;
    meta.epoch = epoch;
    meta.model = model.config();
    meta.train = cfg;
    meta.eval_map50 = log.eval_map50;
    meta.loss_total = log.loss_total;
    const fs::path ckpt = ckpt_dir / checkpoint_name(epoch);
    save_checkpoint(ckpt, model, &optimizer, meta);
    if (better(meta, best)) {
      fs::copy_file(ckpt, ckpt_dir / kBestCheckpointName, fs::copy_options::overwrite_existing, ec);
      if (ec) fail(ErrorCode::kIoError, "cannot update best checkpoint: " + ec.message());
      best = meta;
    }
    logs.append(log);
    result.logs.push_back(log);
    result.final_checkpoint = ckpt;
    if (opts.on_epoch) opts.on_epoch(log);
  }
  result.best_checkpoint = ckpt_dir / kBestCheckpointName;
  if (result.final_checkpoint.empty() && start_epoch > 0) {
    result.final_checkpoint = ckpt_dir / checkpoint_name(start_epoch - 1);
  }
  return result;
}

}  // namespace soilseg::train
