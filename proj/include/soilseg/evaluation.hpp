// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

// Mask IoU, COCO-style average precision, segm mAP@0.5 over a dataset, and
// the end-to-end inference latency benchmark.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "soilseg/coco_data.hpp"
#include "soilseg/image.hpp"
#include "soilseg/model_core.hpp"

namespace soilseg::eval {

/// |a ∩ b| / |a ∪ b|; 0 when both masks are empty. Throws kShapeMismatch.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

struct ScoredMask {
  double score = 0;
  BinaryMask mask;
};

/// Predictions and ground truths of one image for a single category.
struct ImageInstances {
  std::int64_t image_id = 0;
  std::vector<ScoredMask> predictions;
  std::vector<BinaryMask> ground_truths;
};

/// Greedy matching of one image: predictions visited by descending score
/// (ties in input order); each takes the unmatched ground truth of highest
/// IoU >= threshold.
struct MatchResult {
  std::vector<std::size_t> order;  // prediction indices in visiting order
  std::vector<bool> true_positive;  // aligned with `order`
  std::vector<double> scores;       // aligned with `order`
  std::vector<double> matched_iou;  // aligned with `order`; 0 for false positives
  int num_gt = 0;
  int unmatched_gt = 0;
};

MatchResult match_image(const ImageInstances& inst, double iou_threshold);

/// Precision/recall at each cut of the global score ranking, plus the
/// 101-point interpolated precision at recall 0, 0.01, ..., 1.
struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  std::vector<double> interpolated;  // 101 entries
};

/// Builds the curve from per-image matches (images concatenated in input
/// order, then a stable sort by descending score). Empty when num_gt == 0.
PrCurve pr_curve(const std::vector<MatchResult>& matches);

/// COCO 101-point interpolated AP. Absent when there are no ground truths;
/// 0 when there are ground truths but no predictions.
std::optional<double> average_precision(const std::vector<ImageInstances>& images,
                                        double iou_threshold = 0.5);

struct ImageEvalDetail {
  std::int64_t image_id = 0;
  std::string file_name;
  int num_predictions = 0;
  int num_gts = 0;
  int true_positives = 0;
  double best_iou = 0;  // highest IoU of any prediction with any ground truth
};

struct EvalReport {
  std::string split;
  double iou_threshold = 0.5;
  std::optional<double> ap50;
  int num_images = 0;
  int num_predictions = 0;
  int num_gts = 0;
  std::vector<ImageEvalDetail> per_image;
};

nlohmann::json to_json(const EvalReport& report);

/// Produces the detections for one dataset image.
using Predictor =
    std::function<std::vector<model::DetectionResult>(const RgbImage&, const coco::ImageRecord&)>;

struct EvalConfig {
  double mask_threshold = 0.5;
  double iou_threshold = 0.5;
  /// Per-image cap on predictions, highest scores kept.
  int max_detections = 100;
};

/// Binarizes each predicted mask at cfg.mask_threshold and computes AP over
/// the single soil category (so mAP equals AP). Ground truth comes from the
/// annotation polygons.
EvalReport eval_segm_map(const Predictor& predictor, const coco::CocoDataset& ds,
                         const EvalConfig& cfg = {});

struct TimingReport {
  int warmup_runs = 0;
  int measured_runs = 0;
  std::vector<double> per_run_seconds;
  double median_seconds = 0;
  double mean_seconds = 0;
  double min_seconds = 0;
  double max_seconds = 0;
  std::string device;
};

nlohmann::json to_json(const TimingReport& report);

/// Runs `fn` warmup times unmeasured, then `runs` timed calls. `sync` is
/// called before each timer stop to drain asynchronous device work.
/// Throws kInvalidArgument when runs < 1 or warmup < 0.
TimingReport benchmark(const std::function<void()>& fn, int warmup, int runs, const std::string& device,
                       const std::function<void()>& sync = {});

}  // namespace soilseg::eval
