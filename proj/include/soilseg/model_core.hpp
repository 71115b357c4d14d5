// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

// Framework-independent pieces of the Mask R-CNN contract: configuration,
// RPN head arithmetic, ROI Align on plain feature maps, and the loss terms.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "soilseg/image.hpp"

namespace soilseg::model {

inline constexpr const char* kBackboneResnet50Fpn = "resnet50-fpn";
inline constexpr const char* kBackboneCompactFpn = "compact-fpn";

/// Anchors per FPN level: one size per level, every aspect ratio at every level.
struct AnchorConfig {
  std::vector<double> sizes{32, 64, 128, 256, 512};
  std::vector<double> aspect_ratios{0.5, 1.0, 2.0};

  int anchors_per_location() const { return static_cast<int>(aspect_ratios.size()); }
};

struct ModelConfig {
  int num_classes = 2;  // background + soil
  std::string backbone = kBackboneResnet50Fpn;
  bool pretrained_backbone = true;
  /// Pickled tensor dict (torchvision key names); falls back to SOILSEG_BACKBONE_WEIGHTS.
  std::string backbone_weights;
  double mask_threshold = 0.5;
  double score_threshold = 0.5;

  // Input transform.
  int min_size = 800;
  int max_size = 1333;

  AnchorConfig anchors;
  int fpn_channels = 256;

  // RPN.
  int rpn_pre_nms_top_n_train = 2000;
  int rpn_pre_nms_top_n_test = 1000;
  int rpn_post_nms_top_n_train = 2000;
  int rpn_post_nms_top_n_test = 1000;
  double rpn_nms_thresh = 0.7;
  double rpn_fg_iou_thresh = 0.7;
  double rpn_bg_iou_thresh = 0.3;
  int rpn_batch_size_per_image = 256;
  double rpn_positive_fraction = 0.5;

  // Box branch.
  int box_batch_size_per_image = 512;
  double box_positive_fraction = 0.25;
  double box_fg_iou_thresh = 0.5;
  double box_bg_iou_thresh = 0.5;
  double box_score_thresh = 0.05;
  double box_nms_thresh = 0.5;
  int box_detections_per_img = 100;
  int box_representation = 1024;

  // Mask branch.
  int mask_head_channels = 256;
  int mask_head_layers = 4;

  // ROI Align.
  int roi_sampling_ratio = 2;

  /// Standard Mask R-CNN defaults for the full-scale ResNet-50-FPN model.
  static ModelConfig resnet50_fpn();
  /// Small backbone and heads sized for CPU-only training on ~128 px images.
  static ModelConfig compact();

  /// Throws Error(kConfigError) on any invariant violation.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep the defaults of `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base = {});

/// (objectness channels, regression channels) = (2k, 4k). Throws kInvalidK for k < 1.
std::pair<int, int> rpn_head_channels(int k);

/// channels x height x width feature array with its stride relative to the input image.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  int stride = 1;
  std::vector<float> data;  // channel-major: data[(c * height + y) * width + x]

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, int s = 1)
      : channels(c), height(h), width(w), stride(s), data(static_cast<std::size_t>(c) * h * w) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

/// ROI Align of one box given in continuous feature-map coordinates (cell i
/// spans [i, i + 1), its center is at i + 0.5). Each of the S x S bins is the
/// mean of n x n bilinear samples placed at ((j + 0.5) / n) offsets inside
/// the bin. Nothing is rounded. Samples further than one cell outside the map
/// contribute zero; samples within that margin are clamped to the border.
///
/// Returns S * S * channels values laid out [bin_y][bin_x][channel].
/// Throws kDegenerateBox for non-positive extent, kInvalidArgument for S < 1 or n < 1.
std::vector<float> roi_align(const FeatureMap& fm, const Box& box, int output_size,
                             int sampling_points = 2);

/// Bilinear sample at continuous (x, y) under the same boundary rule.
float bilinear_sample(const FeatureMap& fm, int channel, double x, double y);

struct LossBreakdown {
  double l_rpn = 0;
  double l_faster_rcnn = 0;  // classification + box regression
  double l_mask = 0;
  double total = 0;

  // Finer-grained terms, kept for logging.
  double rpn_objectness = 0;
  double rpn_box = 0;
  double classifier = 0;
  double box_reg = 0;
};

/// l_rpn + l_faster_rcnn + l_mask; throws kNonFiniteLoss if any term is not finite.
double total_loss(const LossBreakdown& parts);

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross entropy with probabilities clamped to [eps, 1 - eps].
/// Throws kShapeMismatch when sizes differ.
double mask_bce_loss(std::span<const float> pred_prob, std::span<const std::uint8_t> target);

struct DetectionResult {
  Box box;
  double score = 0;
  std::int64_t label = 0;
  ProbMap mask_prob;  // full image resolution, values in [0, 1]
};

}  // namespace soilseg::model
