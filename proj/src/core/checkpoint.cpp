// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <map>

#include "soilseg/error.hpp"
#include "soilseg/training.hpp"

namespace soilseg::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersionKey = "format_version";
constexpr const char* kMetaKey = "meta";
constexpr const char* kModelKey = "model";
constexpr const char* kOptimizerKey = "optimizer";

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  m.format_version = j.at("format_version").get<int>();
  m.epoch = j.at("epoch").get<int>();
  m.model = model::model_config_from_json(j.at("model"));
  m.train = train_config_from_json(j.at("train"));
  if (j.contains("eval_map50") && !j.at("eval_map50").is_null()) m.eval_map50 = j.at("eval_map50").get<double>();
  m.loss_total = j.value("loss_total", 0.0);
  return m;
}

struct OpenedCheckpoint {
  torch::serialize::InputArchive archive;
  CheckpointMeta meta;
};

OpenedCheckpoint open_checkpoint(const fs::path& path, torch::Device device) {
  if (!fs::is_regular_file(path)) fail(ErrorCode::kMissingFile, "checkpoint not found: " + path.string());
  OpenedCheckpoint ck;
  try {
    ck.archive.load_from(path.string(), device);
  } catch (const c10::Error& e) {
    fail(ErrorCode::kCorruptCheckpoint, path.string() + ": " + e.what_without_backtrace());
  }
  c10::IValue version, meta;
  if (!ck.archive.try_read(kVersionKey, version) || !version.isInt() || !ck.archive.try_read(kMetaKey, meta) ||
      !meta.isString()) {
    fail(ErrorCode::kCorruptCheckpoint, path.string() + ": missing version or metadata record");
  }
  if (version.toInt() != kCheckpointFormatVersion) {
    fail(ErrorCode::kVersionMismatch, path.string() + ": format version " + std::to_string(version.toInt()) +
                                          ", expected " + std::to_string(kCheckpointFormatVersion));
  }
  try {
    ck.meta = meta_from_json(json::parse(meta.toStringRef()));
  } catch (const json::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, path.string() + ": bad metadata: " + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::kCorruptCheckpoint, path.string() + ": bad metadata: " + e.what());
  }
  return ck;
}

// Parameters and buffers of a module tree, keyed by qualified name.
std::map<std::string, torch::Tensor> named_state(torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (auto& kv : m.named_parameters(true)) out[kv.key()] = kv.value();
  for (auto& kv : m.named_buffers(true)) out[kv.key()] = kv.value();
  return out;
}

}  // namespace

json to_json(const CheckpointMeta& meta) {
  return {{"format_version", meta.format_version},
          {"epoch", meta.epoch},
          {"model", model::to_json(meta.model)},
          {"train", to_json(meta.train)},
          {"eval_map50", meta.eval_map50 ? json(*meta.eval_map50) : json(nullptr)},
          {"loss_total", meta.loss_total}};
}

std::string checkpoint_name(int epoch) { return "ckpt_epoch" + std::to_string(epoch) + ".bin"; }

void save_checkpoint(const fs::path& path, model::Model& model, const torch::optim::Optimizer* optimizer,
                     const CheckpointMeta& meta) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  try {
    torch::serialize::OutputArchive archive;
    archive.write(kVersionKey, c10::IValue(static_cast<int64_t>(meta.format_version)));
    archive.write(kMetaKey, c10::IValue(to_json(meta).dump()));
    torch::serialize::OutputArchive model_archive;
    model.net()->save(model_archive);
    archive.write(kModelKey, model_archive);
    if (optimizer != nullptr) {
      torch::serialize::OutputArchive opt_archive;
      optimizer->save(opt_archive);
      archive.write(kOptimizerKey, opt_archive);
    }
    archive.save_to(tmp.string());
  } catch (const c10::Error& e) {
    fail(ErrorCode::kIoError, "cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot move checkpoint into place: " + ec.message());
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) { return open_checkpoint(path, torch::kCPU).meta; }

CheckpointMeta load_checkpoint(const fs::path& path, model::Model& model, torch::optim::Optimizer* optimizer) {
  auto ck = open_checkpoint(path, model.device());
  const auto& target_cfg = model.config();
  if (ck.meta.model.num_classes != target_cfg.num_classes) {
    fail(ErrorCode::kVersionMismatch, path.string() + ": checkpoint has num_classes=" +
                                          std::to_string(ck.meta.model.num_classes) + ", model has " +
                                          std::to_string(target_cfg.num_classes));
  }
  // Archive reads replace tensors wholesale, so load into a scratch model of
  // the checkpoint's own architecture and copy over after checking shapes.
  model::Model scratch(ck.meta.model);
  scratch.to(model.device());
  torch::serialize::InputArchive model_archive;
  try {
    ck.archive.read(kModelKey, model_archive);
    scratch.net()->load(model_archive);
  } catch (const c10::Error& e) {
    fail(ErrorCode::kCorruptCheckpoint, path.string() + ": " + e.what_without_backtrace());
  }
  auto src = named_state(*scratch.net());
  auto dst = named_state(*model.net());
  for (const auto& [name, tensor] : dst) {
    auto it = src.find(name);
    if (it == src.end()) fail(ErrorCode::kVersionMismatch, path.string() + ": missing tensor " + name);
    if (it->second.sizes() != tensor.sizes()) {
      fail(ErrorCode::kVersionMismatch, path.string() + ": shape mismatch for " + name);
    }
  }
  {
    torch::NoGradGuard no_grad;
    for (auto& [name, tensor] : dst) tensor.copy_(src.at(name));
  }
  if (optimizer != nullptr) {
    torch::serialize::InputArchive opt_archive;
    if (!ck.archive.try_read(kOptimizerKey, opt_archive)) {
      fail(ErrorCode::kCorruptCheckpoint, path.string() + ": no optimizer state");
    }
    try {
      optimizer->load(opt_archive);
    } catch (const c10::Error& e) {
      fail(ErrorCode::kVersionMismatch, path.string() + ": optimizer state: " + e.what_without_backtrace());
    }
  }
  return ck.meta;
}

std::unique_ptr<model::Model> load_model(const fs::path& path, torch::Device device) {
  const auto meta = read_checkpoint_meta(path);
  auto m = std::make_unique<model::Model>(meta.model);
  m->to(device);
  load_checkpoint(path, *m);
  if (meta.model.pretrained_backbone) m->net()->freeze_pretrained_stem();
  m->set_training(false);
  return m;
}

}  // namespace soilseg::train
