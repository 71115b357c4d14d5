// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

// SGD training recipe with step decay, per-epoch evaluation, crash-safe
// CSV / JSON-lines logs and versioned checkpoints.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "soilseg/coco_data.hpp"
#include "soilseg/maskrcnn.hpp"

namespace soilseg::train {

struct TrainConfig {
  int epochs = 25;
  double base_lr = 0.004;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> decay_epochs{10, 20};  // 0-based epoch index at which each decay takes effect
  double decay_factor = 0.1;
  int batch_size = 3;
  bool mixed_precision = false;  // bf16 autocast
  std::uint64_t seed = 0;
  double hflip_prob = 0.5;

  /// Throws Error(kConfigError) on any invariant violation.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep the defaults of `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

/// base_lr * decay_factor^(number of decay epochs <= epoch). Throws kEpochOutOfRange.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct LossValues {
  double total = 0;
  double rpn = 0;
  double frcnn = 0;
  double mask = 0;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double loss_total = 0;  // means over the epoch's steps
  double loss_rpn = 0;
  double loss_frcnn = 0;
  double loss_mask = 0;
  std::optional<double> eval_map50;
  double wall_seconds = 0;
  LossValues last_step;  // values of the epoch's final step
  int steps = 0;
};

inline constexpr const char* kLogCsvHeader =
    "epoch,lr,loss_total,loss_rpn,loss_frcnn,loss_mask,eval_map50,wall_seconds";

std::string to_csv_row(const EpochLog& log);
nlohmann::json to_json(const EpochLog& log);

struct LogTable {
  std::vector<EpochLog> rows;
  bool has_eval_column = false;
};

/// Parses a training CSV. The header must name epoch, lr and loss_total;
/// other known columns are optional. Throws kMissingFile, or kSchemaError when
/// malformed (unknown header, ragged or non-numeric rows, no rows).
LogTable read_log_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointMeta {
  int format_version = kCheckpointFormatVersion;
  int epoch = -1;  // last completed epoch
  model::ModelConfig model;
  TrainConfig train;
  std::optional<double> eval_map50;
  double loss_total = 0;
};

nlohmann::json to_json(const CheckpointMeta& meta);

/// Writes atomically (temporary file + rename). `optimizer` may be null.
void save_checkpoint(const std::filesystem::path& path, model::Model& model,
                     const torch::optim::Optimizer* optimizer, const CheckpointMeta& meta);

/// Reads only the metadata. Throws kCorruptCheckpoint or kVersionMismatch.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Restores weights (and optimizer state when given) into `model`.
/// Throws kCorruptCheckpoint (unreadable / truncated) or kVersionMismatch
/// (format version, num_classes or tensor shapes differ).
CheckpointMeta load_checkpoint(const std::filesystem::path& path, model::Model& model,
                               torch::optim::Optimizer* optimizer = nullptr);

/// Builds a model from the checkpoint's own config and loads its weights.
std::unique_ptr<model::Model> load_model(const std::filesystem::path& path, torch::Device device);

std::string checkpoint_name(int epoch);  // "ckpt_epoch{N}.bin"
inline constexpr const char* kBestCheckpointName = "best.bin";

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
  std::filesystem::path out_dir;
  /// Checkpoint to continue from; training resumes at its epoch + 1.
  std::optional<std::filesystem::path> resume_from;
  /// Called after every completed epoch.
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> logs;  // including epochs restored from the resumed log
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
};

/// Runs cfg.epochs epochs (fewer when resuming). `eval_ds` may be null, in
/// which case eval_map50 is absent and `best` tracks the lowest epoch loss.
/// Throws kDataError (empty training set) and kNonFiniteLoss (divergence; the
/// message names epoch and step).
TrainResult train(const TrainConfig& cfg, model::Model& model, const coco::CocoDataset& train_ds,
                  const coco::CocoDataset* eval_ds, const TrainOptions& opts);

/// Batch composition of one epoch: image indices per batch plus a flip flag
/// per image. Depends only on (seed, epoch, n, batch_size, hflip_prob).
struct EpochPlan {
  std::vector<std::vector<std::size_t>> batches;
  std::vector<bool> flip;  // indexed by image index
};
EpochPlan plan_epoch(const TrainConfig& cfg, int epoch, std::size_t n_images);

}  // namespace soilseg::train
