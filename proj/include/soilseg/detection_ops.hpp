// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

// Tensor-level detection primitives shared by the RPN and the ROI heads.
// Boxes are float tensors [N, 4] in (x1, y1, x2, y2) image coordinates.

#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

namespace soilseg::ops {

torch::Tensor box_area(const torch::Tensor& boxes);

/// Pairwise IoU, [N, M].
torch::Tensor box_iou(const torch::Tensor& a, const torch::Tensor& b);

torch::Tensor clip_boxes(const torch::Tensor& boxes, int64_t height, int64_t width);

/// Indices of boxes whose sides are both >= min_size.
torch::Tensor remove_small_boxes(const torch::Tensor& boxes, double min_size);

/// Greedy NMS; returns kept indices (int64) ordered by decreasing score.
/// A box is suppressed when its IoU with a kept box exceeds `iou_threshold`.
torch::Tensor nms(const torch::Tensor& boxes, const torch::Tensor& scores, double iou_threshold);

/// NMS applied independently per value of `groups`.
torch::Tensor batched_nms(const torch::Tensor& boxes, const torch::Tensor& scores,
                          const torch::Tensor& groups, double iou_threshold);

/// Faster R-CNN box parameterization (dx, dy, dw, dh) with per-term weights.
class BoxCoder {
 public:
  explicit BoxCoder(std::array<double, 4> weights);

  torch::Tensor encode(const torch::Tensor& targets, const torch::Tensor& anchors) const;
  /// codes [N, 4 * K], anchors [N, 4] -> boxes [N, K, 4].
  torch::Tensor decode(const torch::Tensor& codes, const torch::Tensor& anchors) const;

 private:
  std::array<double, 4> weights_;
  double clip_;
};

/// Assigns each prediction column of an IoU matrix [G, P] to a ground truth.
/// Returns int64 [P]: gt index, kBelowLow, or kBetween.
class Matcher {
 public:
  static constexpr int64_t kBelowLow = -1;
  static constexpr int64_t kBetween = -2;

  Matcher(double high, double low, bool allow_low_quality);
  torch::Tensor operator()(const torch::Tensor& iou) const;

 private:
  double high_;
  double low_;
  bool allow_low_quality_;
};

/// Samples up to batch_size labels with at most positive_fraction positives.
/// labels: int64 [N] with 1+ = positive, 0 = negative, -1 = ignore.
/// Returns (positive indices, negative indices).
std::pair<torch::Tensor, torch::Tensor> sample_balanced(const torch::Tensor& labels,
                                                        int batch_size, double positive_fraction);

/// Differentiable ROI Align over a batched feature map.
/// features [B, C, H, W]; rois [K, 5] rows (batch_index, x1, y1, x2, y2) in
/// input coordinates, mapped to the map by `spatial_scale`. Sampling follows
/// soilseg::model::roi_align exactly. Returns [K, C, S, S].
torch::Tensor roi_align(const torch::Tensor& features, const torch::Tensor& rois,
                        double spatial_scale, int output_size, int sampling_ratio);

/// FPN level for each box: floor(4 + log2(sqrt(area) / 224)), clamped to
/// [min_level, max_level]; returned relative to min_level.
torch::Tensor map_levels(const torch::Tensor& boxes, int min_level, int max_level);

/// ROI Align over pyramid levels with strides 2^min_level ... ; each roi is
/// pooled from its assigned level.
torch::Tensor multiscale_roi_align(const std::vector<torch::Tensor>& levels,
                                   const std::vector<torch::Tensor>& boxes_per_image,
                                   int min_level, int output_size, int sampling_ratio);

/// Concatenates per-image boxes into [K, 5] rois with a leading batch index.
torch::Tensor to_rois(const std::vector<torch::Tensor>& boxes_per_image);

/// Clamped-probability binary cross entropy averaged over all elements.
torch::Tensor bce_with_clamp(const torch::Tensor& prob, const torch::Tensor& target);

}  // namespace soilseg::ops
