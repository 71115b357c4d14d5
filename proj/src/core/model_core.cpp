// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/model_core.hpp"

#include <algorithm>
#include <cmath>

#include "soilseg/error.hpp"

namespace soilseg::model {

using nlohmann::json;

ModelConfig ModelConfig::resnet50_fpn() { return ModelConfig{}; }

ModelConfig ModelConfig::compact() {
  ModelConfig cfg;
  cfg.backbone = kBackboneCompactFpn;
  cfg.pretrained_backbone = false;
  cfg.min_size = 128;
  cfg.max_size = 128;
  cfg.anchors.sizes = {16, 32, 64, 128, 256};
  cfg.fpn_channels = 64;
  cfg.rpn_pre_nms_top_n_train = 1000;
  cfg.rpn_pre_nms_top_n_test = 500;
  cfg.rpn_post_nms_top_n_train = 1000;
  cfg.rpn_post_nms_top_n_test = 500;
  cfg.box_batch_size_per_image = 64;
  cfg.box_positive_fraction = 0.5;
  cfg.box_representation = 256;
  cfg.mask_head_channels = 64;
  return cfg;
}

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::kConfigError, what);
  };
  check(num_classes >= 2, "num_classes must be >= 2");
  check(backbone == kBackboneResnet50Fpn || backbone == kBackboneCompactFpn,
        "unknown backbone '" + backbone + "'");
  check(mask_threshold > 0 && mask_threshold < 1, "mask_threshold must lie in (0, 1)");
  check(score_threshold > 0 && score_threshold < 1, "score_threshold must lie in (0, 1)");
  check(min_size >= 32 && max_size >= min_size, "need 32 <= min_size <= max_size");
  check(anchors.sizes.size() == 5, "anchor sizes: one per pyramid level (5)");
  check(!anchors.aspect_ratios.empty(), "anchor aspect ratios must be non-empty");
  for (double s : anchors.sizes) check(s > 0, "anchor sizes must be positive");
  for (double r : anchors.aspect_ratios) check(r > 0, "aspect ratios must be positive");
  check(fpn_channels > 0, "fpn_channels must be positive");
  check(rpn_batch_size_per_image > 0 && box_batch_size_per_image > 0, "batch sizes must be positive");
  check(rpn_positive_fraction > 0 && rpn_positive_fraction <= 1, "rpn_positive_fraction in (0, 1]");
  check(box_positive_fraction > 0 && box_positive_fraction <= 1, "box_positive_fraction in (0, 1]");
  check(box_detections_per_img > 0, "box_detections_per_img must be positive");
  check(box_representation > 0 && mask_head_channels > 0 && mask_head_layers >= 1,
        "head sizes must be positive");
  check(roi_sampling_ratio >= 1, "roi_sampling_ratio must be >= 1");
}

json to_json(const ModelConfig& c) {
  return {
      {"num_classes", c.num_classes},
      {"backbone", c.backbone},
      {"pretrained_backbone", c.pretrained_backbone},
      {"backbone_weights", c.backbone_weights},
      {"mask_threshold", c.mask_threshold},
      {"score_threshold", c.score_threshold},
      {"min_size", c.min_size},
      {"max_size", c.max_size},
      {"anchor_sizes", c.anchors.sizes},
      {"anchor_aspect_ratios", c.anchors.aspect_ratios},
      {"fpn_channels", c.fpn_channels},
      {"rpn_pre_nms_top_n_train", c.rpn_pre_nms_top_n_train},
      {"rpn_pre_nms_top_n_test", c.rpn_pre_nms_top_n_test},
      {"rpn_post_nms_top_n_train", c.rpn_post_nms_top_n_train},
      {"rpn_post_nms_top_n_test", c.rpn_post_nms_top_n_test},
      {"rpn_nms_thresh", c.rpn_nms_thresh},
      {"rpn_fg_iou_thresh", c.rpn_fg_iou_thresh},
      {"rpn_bg_iou_thresh", c.rpn_bg_iou_thresh},
      {"rpn_batch_size_per_image", c.rpn_batch_size_per_image},
      {"rpn_positive_fraction", c.rpn_positive_fraction},
      {"box_batch_size_per_image", c.box_batch_size_per_image},
      {"box_positive_fraction", c.box_positive_fraction},
      {"box_fg_iou_thresh", c.box_fg_iou_thresh},
      {"box_bg_iou_thresh", c.box_bg_iou_thresh},
      {"box_score_thresh", c.box_score_thresh},
      {"box_nms_thresh", c.box_nms_thresh},
      {"box_detections_per_img", c.box_detections_per_img},
      {"box_representation", c.box_representation},
      {"mask_head_channels", c.mask_head_channels},
      {"mask_head_layers", c.mask_head_layers},
      {"roi_sampling_ratio", c.roi_sampling_ratio},
  };
}

ModelConfig model_config_from_json(const json& j, const ModelConfig& base) {
  ModelConfig c = base;
  if (!j.is_object()) fail(ErrorCode::kConfigError, "model config must be a JSON object");
  try {
    auto get = [&](const char* key, auto& field) {
      if (auto it = j.find(key); it != j.end()) it->get_to(field);
    };
    get("num_classes", c.num_classes);
    get("backbone", c.backbone);
    get("pretrained_backbone", c.pretrained_backbone);
    get("backbone_weights", c.backbone_weights);
    get("mask_threshold", c.mask_threshold);
    get("score_threshold", c.score_threshold);
    get("min_size", c.min_size);
    get("max_size", c.max_size);
    get("anchor_sizes", c.anchors.sizes);
    get("anchor_aspect_ratios", c.anchors.aspect_ratios);
    get("fpn_channels", c.fpn_channels);
    get("rpn_pre_nms_top_n_train", c.rpn_pre_nms_top_n_train);
    get("rpn_pre_nms_top_n_test", c.rpn_pre_nms_top_n_test);
    get("rpn_post_nms_top_n_train", c.rpn_post_nms_top_n_train);
    get("rpn_post_nms_top_n_test", c.rpn_post_nms_top_n_test);
    get("rpn_nms_thresh", c.rpn_nms_thresh);
    get("rpn_fg_iou_thresh", c.rpn_fg_iou_thresh);
    get("rpn_bg_iou_thresh", c.rpn_bg_iou_thresh);
    get("rpn_batch_size_per_image", c.rpn_batch_size_per_image);
    get("rpn_positive_fraction", c.rpn_positive_fraction);
    get("box_batch_size_per_image", c.box_batch_size_per_image);
    get("box_positive_fraction", c.box_positive_fraction);
    get("box_fg_iou_thresh", c.box_fg_iou_thresh);
    get("box_bg_iou_thresh", c.box_bg_iou_thresh);
    get("box_score_thresh", c.box_score_thresh);
    get("box_nms_thresh", c.box_nms_thresh);
    get("box_detections_per_img", c.box_detections_per_img);
    get("box_representation", c.box_representation);
    get("mask_head_channels", c.mask_head_channels);
    get("mask_head_layers", c.mask_head_layers);
    get("roi_sampling_ratio", c.roi_sampling_ratio);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfigError, std::string("model config: ") + e.what());
  }
  return c;
}

std::pair<int, int> rpn_head_channels(int k) {
  if (k < 1) fail(ErrorCode::kInvalidK, "anchors per location must be >= 1, got " + std::to_string(k));
  return {2 * k, 4 * k};
}

float bilinear_sample(const FeatureMap& fm, int channel, double x, double y) {
  // Input coordinates are continuous; convert to cell-center index space.
  double yy = y - 0.5;
  double xx = x - 0.5;
  if (yy < -1.0 || yy > fm.height || xx < -1.0 || xx > fm.width) return 0.0f;
  yy = std::max(yy, 0.0);
  xx = std::max(xx, 0.0);

  int y0 = static_cast<int>(yy);
  int x0 = static_cast<int>(xx);
  int y1 = y0 + 1;
  int x1 = x0 + 1;
  if (y0 >= fm.height - 1) {
    y0 = y1 = fm.height - 1;
    yy = y0;
  }
  if (x0 >= fm.width - 1) {
    x0 = x1 = fm.width - 1;
    xx = x0;
  }
  const double ly = yy - y0, lx = xx - x0;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  return static_cast<float>(hy * hx * fm.at(channel, y0, x0) + hy * lx * fm.at(channel, y0, x1) +
                            ly * hx * fm.at(channel, y1, x0) + ly * lx * fm.at(channel, y1, x1));
}

std::vector<float> roi_align(const FeatureMap& fm, const Box& box, int output_size,
                             int sampling_points) {
  if (output_size < 1) fail(ErrorCode::kInvalidArgument, "output size must be >= 1");
  if (sampling_points < 1) fail(ErrorCode::kInvalidArgument, "sampling points must be >= 1");
  if (!(box.width() > 0) || !(box.height() > 0)) {
    fail(ErrorCode::kDegenerateBox, "box must have positive width and height");
  }
  if (fm.channels < 1 || fm.height < 1 || fm.width < 1) {
    fail(ErrorCode::kShapeMismatch, "empty feature map");
  }
  const int s = output_size;
  const int n = sampling_points;
  const double bin_w = box.width() / s;
  const double bin_h = box.height() / s;
  const double inv = 1.0 / (static_cast<double>(n) * n);

  std::vector<float> out(static_cast<std::size_t>(s) * s * fm.channels);
  for (int by = 0; by < s; ++by) {
    for (int bx = 0; bx < s; ++bx) {
      for (int c = 0; c < fm.channels; ++c) {
        double acc = 0.0;
        for (int iy = 0; iy < n; ++iy) {
          const double y = box.y1 + bin_h * (by + (iy + 0.5) / n);
          for (int ix = 0; ix < n; ++ix) {
            const double x = box.x1 + bin_w * (bx + (ix + 0.5) / n);
            acc += bilinear_sample(fm, c, x, y);
          }
        }
        out[(static_cast<std::size_t>(by) * s + bx) * fm.channels + c] = static_cast<float>(acc * inv);
      }
    }
  }
  return out;
}

double total_loss(const LossBreakdown& parts) {
  if (!std::isfinite(parts.l_rpn) || !std::isfinite(parts.l_faster_rcnn) ||
      !std::isfinite(parts.l_mask)) {
    fail(ErrorCode::kNonFiniteLoss, "non-finite loss component");
  }
  return parts.l_rpn + parts.l_faster_rcnn + parts.l_mask;
}

double mask_bce_loss(std::span<const float> pred_prob, std::span<const std::uint8_t> target) {
  if (pred_prob.size() != target.size()) {
    fail(ErrorCode::kShapeMismatch, "prediction and target sizes differ");
  }
  if (pred_prob.empty()) fail(ErrorCode::kShapeMismatch, "empty mask");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred_prob.size(); ++i) {
    const double p = std::clamp(static_cast<double>(pred_prob[i]), kBceEpsilon, 1.0 - kBceEpsilon);
    acc -= target[i] ? std::log(p) : std::log(1.0 - p);
  }
  return acc / static_cast<double>(pred_prob.size());
}

}  // namespace soilseg::model
