// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/maskrcnn.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>

#include "backbone.hpp"
#include "soilseg/detection_ops.hpp"
#include "soilseg/error.hpp"

namespace soilseg::model {

namespace nn = torch::nn;
namespace F = torch::nn::functional;
using torch::indexing::Slice;

namespace {

constexpr int kMinLevel = 2;          // P2 has stride 4
constexpr int kRoiLevels = 4;         // P2..P5 feed the ROI heads
constexpr int kBoxPool = 7;
constexpr int kMaskPool = 14;
constexpr int kSizeDivisible = 32;
constexpr double kBoxLossBeta = 1.0 / 9.0;

torch::Tensor smooth_l1_sum(const torch::Tensor& input, const torch::Tensor& target) {
  return F::smooth_l1_loss(input, target,
                           F::SmoothL1LossFuncOptions().reduction(torch::kSum).beta(kBoxLossBeta));
}

}  // namespace

LossBreakdown LossTensors::breakdown() const {
  LossBreakdown b;
  b.rpn_objectness = rpn_objectness.item<double>();
  b.rpn_box = rpn_box.item<double>();
  b.classifier = classifier.item<double>();
  b.box_reg = box_reg.item<double>();
  b.l_rpn = b.rpn_objectness + b.rpn_box;
  b.l_faster_rcnn = b.classifier + b.box_reg;
  b.l_mask = mask.item<double>();
  b.total = b.l_rpn + b.l_faster_rcnn + b.l_mask;
  return b;
}

// ---------------------------------------------------------------------------
// Region proposal network

class RpnImpl : public nn::Module {
 public:
  explicit RpnImpl(const ModelConfig& cfg)
      : cfg_(cfg),
        coder_({1.0, 1.0, 1.0, 1.0}),
        matcher_(cfg.rpn_fg_iou_thresh, cfg.rpn_bg_iou_thresh, /*allow_low_quality=*/true) {
    const int64_t c = cfg.fpn_channels;
    const int k = cfg.anchors.anchors_per_location();
    const auto [obj_ch, reg_ch] = rpn_head_channels(k);
    conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(c, c, 3).padding(1)));
    cls_logits_ = register_module("cls_logits", nn::Conv2d(nn::Conv2dOptions(c, obj_ch, 1)));
    bbox_pred_ = register_module("bbox_pred", nn::Conv2d(nn::Conv2dOptions(c, reg_ch, 1)));
    for (auto* m : {&conv_, &cls_logits_, &bbox_pred_}) {
      nn::init::normal_((*m)->weight, 0.0, 0.01);
      nn::init::zeros_((*m)->bias);
    }
  }

  std::vector<RpnHeadOutput> head(const std::vector<torch::Tensor>& features) {
    std::vector<RpnHeadOutput> out;
    for (const auto& f : features) {
      auto t = torch::relu(conv_(f));
      out.push_back({cls_logits_(t), bbox_pred_(t)});
    }
    return out;
  }

  struct Result {
    std::vector<torch::Tensor> proposals;  // per image [P, 4], detached
    torch::Tensor loss_objectness;
    torch::Tensor loss_box;
  };

  Result forward(const ImageBatch& batch, const std::vector<torch::Tensor>& features,
                 const std::vector<TrainTarget>* targets) {
    const int64_t num_images = batch.tensors.size(0);
    const int k = cfg_.anchors.anchors_per_location();
    auto outputs = head(features);

    std::vector<torch::Tensor> logits_levels, deltas_levels, anchors_levels;
    std::vector<int64_t> level_counts;
    for (std::size_t l = 0; l < outputs.size(); ++l) {
      const auto& o = outputs[l];
      const int64_t h = o.objectness.size(2), w = o.objectness.size(3);
      // [N, 2k, H, W] -> [N, H*W*k, 2]; anchor order is location-major.
      logits_levels.push_back(
          o.objectness.view({num_images, k, 2, h, w}).permute({0, 3, 4, 1, 2}).reshape({num_images, -1, 2}));
      deltas_levels.push_back(
          o.box_deltas.view({num_images, k, 4, h, w}).permute({0, 3, 4, 1, 2}).reshape({num_images, -1, 4}));
      anchors_levels.push_back(level_anchors(l, h, w, batch.tensors.size(2), batch.tensors.size(3),
                                             features[l].device()));
      level_counts.push_back(h * w * k);
    }
    auto logits = torch::cat(logits_levels, 1).to(torch::kFloat);  // [N, A, 2]
    auto deltas = torch::cat(deltas_levels, 1).to(torch::kFloat);  // [N, A, 4]
    auto anchors = torch::cat(anchors_levels, 0);                  // [A, 4]

    Result result;
    result.proposals = select_proposals(logits.detach(), deltas.detach(), anchors, level_counts, batch);
    if (targets != nullptr) compute_loss(logits, deltas, anchors, *targets, result);
    return result;
  }

 private:
  torch::Tensor level_anchors(std::size_t level, int64_t h, int64_t w, int64_t image_h,
                              int64_t image_w, torch::Device device) const {
    const double size = cfg_.anchors.sizes[level];
    std::vector<float> base;
    for (double ratio : cfg_.anchors.aspect_ratios) {
      const double hr = std::sqrt(ratio), wr = 1.0 / hr;
      const double ws = wr * size, hs = hr * size;
      base.insert(base.end(), {static_cast<float>(std::round(-ws / 2)), static_cast<float>(std::round(-hs / 2)),
                               static_cast<float>(std::round(ws / 2)), static_cast<float>(std::round(hs / 2))});
    }
    auto base_t = torch::tensor(base).view({-1, 4}).to(device);
    const int64_t stride_h = image_h / h, stride_w = image_w / w;
    auto opts = torch::TensorOptions().dtype(torch::kFloat).device(device);
    auto sx = torch::arange(w, opts) * static_cast<double>(stride_w);
    auto sy = torch::arange(h, opts) * static_cast<double>(stride_h);
    auto grid = torch::meshgrid({sy, sx}, "ij");
    auto yy = grid[1].reshape(-1), xx = grid[0].reshape(-1);
    auto shifts = torch::stack({yy, xx, yy, xx}, 1);  // x, y, x, y
    return (shifts.view({-1, 1, 4}) + base_t.view({1, -1, 4})).reshape({-1, 4});
  }

  std::vector<torch::Tensor> select_proposals(const torch::Tensor& logits, const torch::Tensor& deltas,
                                              const torch::Tensor& anchors,
                                              const std::vector<int64_t>& level_counts,
                                              const ImageBatch& batch) const {
    const bool training = is_training();
    const int pre_nms = training ? cfg_.rpn_pre_nms_top_n_train : cfg_.rpn_pre_nms_top_n_test;
    const int post_nms = training ? cfg_.rpn_post_nms_top_n_train : cfg_.rpn_post_nms_top_n_test;
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < logits.size(0); ++i) {
      auto score_logit = logits[i].select(1, 1) - logits[i].select(1, 0);
      std::vector<torch::Tensor> idx_parts, lvl_parts;
      int64_t offset = 0;
      for (std::size_t l = 0; l < level_counts.size(); ++l) {
        const int64_t count = level_counts[l];
        const int64_t top = std::min<int64_t>(pre_nms, count);
        auto top_idx = std::get<1>(score_logit.slice(0, offset, offset + count).topk(top)) + offset;
        idx_parts.push_back(top_idx);
        lvl_parts.push_back(torch::full({top}, static_cast<int64_t>(l), top_idx.options()));
        offset += count;
      }
      auto idx = torch::cat(idx_parts);
      auto lvl = torch::cat(lvl_parts);
      auto boxes = coder_.decode(deltas[i].index_select(0, idx), anchors.index_select(0, idx)).squeeze(1);
      auto scores = torch::sigmoid(score_logit.index_select(0, idx));
      boxes = ops::clip_boxes(boxes, batch.sizes[i].first, batch.sizes[i].second);
      auto keep = ops::remove_small_boxes(boxes, 1e-3);
      boxes = boxes.index_select(0, keep);
      scores = scores.index_select(0, keep);
      lvl = lvl.index_select(0, keep);
      keep = ops::batched_nms(boxes, scores, lvl, cfg_.rpn_nms_thresh).slice(0, 0, post_nms);
      out.push_back(boxes.index_select(0, keep));
    }
    return out;
  }

  void compute_loss(const torch::Tensor& logits, const torch::Tensor& deltas, const torch::Tensor& anchors,
                    const std::vector<TrainTarget>& targets, Result& result) const {
    std::vector<torch::Tensor> labels_all, reg_all;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto& gt = targets[i].boxes;
      torch::Tensor labels, matched_boxes;
      if (gt.size(0) == 0) {
        labels = torch::zeros({anchors.size(0)}, torch::TensorOptions().dtype(torch::kLong).device(anchors.device()));
        matched_boxes = torch::zeros_like(anchors);
      } else {
        auto matches = matcher_(ops::box_iou(gt, anchors));
        matched_boxes = gt.index_select(0, matches.clamp_min(0));
        labels = (matches >= 0).to(torch::kLong);
        labels.masked_fill_(matches == ops::Matcher::kBetween, -1);
      }
      labels_all.push_back(labels);
      reg_all.push_back(coder_.encode(matched_boxes, anchors));
    }
    std::vector<torch::Tensor> pos_idx, neg_idx;
    const int64_t per_image = anchors.size(0);
    for (std::size_t i = 0; i < labels_all.size(); ++i) {
      auto [pos, neg] = ops::sample_balanced(labels_all[i], cfg_.rpn_batch_size_per_image,
                                             cfg_.rpn_positive_fraction);
      pos_idx.push_back(pos + static_cast<int64_t>(i) * per_image);
      neg_idx.push_back(neg + static_cast<int64_t>(i) * per_image);
    }
    auto pos = torch::cat(pos_idx), neg = torch::cat(neg_idx);
    auto sampled = torch::cat({pos, neg});
    auto flat_logits = logits.reshape({-1, 2});
    auto flat_deltas = deltas.reshape({-1, 4});
    auto labels = torch::cat(labels_all);
    auto reg_targets = torch::cat(reg_all);

    result.loss_box = smooth_l1_sum(flat_deltas.index_select(0, pos), reg_targets.index_select(0, pos)) /
                      static_cast<double>(std::max<int64_t>(1, sampled.numel()));
    result.loss_objectness =
        F::cross_entropy(flat_logits.index_select(0, sampled), labels.index_select(0, sampled));
  }

  ModelConfig cfg_;
  ops::BoxCoder coder_;
  ops::Matcher matcher_;
  nn::Conv2d conv_{nullptr}, cls_logits_{nullptr}, bbox_pred_{nullptr};
};

// ---------------------------------------------------------------------------
// Box and mask branches

class RoiHeadsImpl : public nn::Module {
 public:
  explicit RoiHeadsImpl(const ModelConfig& cfg)
      : cfg_(cfg),
        coder_({10.0, 10.0, 5.0, 5.0}),
        matcher_(cfg.box_fg_iou_thresh, cfg.box_bg_iou_thresh, /*allow_low_quality=*/false) {
    const int64_t c = cfg.fpn_channels;
    const int64_t rep = cfg.box_representation;
    fc6_ = register_module("fc6", nn::Linear(c * kBoxPool * kBoxPool, rep));
    fc7_ = register_module("fc7", nn::Linear(rep, rep));
    cls_score_ = register_module("cls_score", nn::Linear(rep, cfg.num_classes));
    bbox_pred_ = register_module("bbox_pred", nn::Linear(rep, cfg.num_classes * 4));

    const int64_t mc = cfg.mask_head_channels;
    mask_head_ = register_module("mask_head", nn::Sequential());
    int64_t in = c;
    for (int i = 0; i < cfg.mask_head_layers; ++i) {
      mask_head_->push_back(nn::Conv2d(nn::Conv2dOptions(in, mc, 3).padding(1)));
      mask_head_->push_back(nn::ReLU());
      in = mc;
    }
    mask_deconv_ = register_module("mask_deconv",
                                   nn::ConvTranspose2d(nn::ConvTranspose2dOptions(mc, mc, 2).stride(2)));
    mask_logits_ = register_module("mask_logits", nn::Conv2d(nn::Conv2dOptions(mc, cfg.num_classes, 1)));
    for (auto& m : modules(false)) {
      if (auto* conv = m->as<nn::Conv2d>()) {
        nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
        nn::init::zeros_(conv->bias);
      }
    }
    nn::init::kaiming_normal_(mask_deconv_->weight, 0.0, torch::kFanOut, torch::kReLU);
    nn::init::zeros_(mask_deconv_->bias);
  }

  struct TrainLosses {
    torch::Tensor classifier, box_reg, mask;
  };

  TrainLosses forward_train(const std::vector<torch::Tensor>& levels, std::vector<torch::Tensor> proposals,
                            const std::vector<TrainTarget>& targets) {
    std::vector<torch::Tensor> sampled_boxes, sampled_labels, sampled_reg, sampled_gt_idx;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      const auto& gt = targets[i].boxes;
      auto props = torch::cat({proposals[i], gt.to(proposals[i].scalar_type())});
      torch::Tensor labels, matched;
      if (gt.size(0) == 0) {
        labels = torch::zeros({props.size(0)}, torch::TensorOptions().dtype(torch::kLong).device(props.device()));
        matched = torch::zeros_like(labels);
      } else {
        auto m = matcher_(ops::box_iou(gt, props));
        matched = m.clamp_min(0);
        labels = targets[i].labels.index_select(0, matched);
        labels.masked_fill_(m == ops::Matcher::kBelowLow, 0);
        labels.masked_fill_(m == ops::Matcher::kBetween, -1);
      }
      auto [pos, neg] = ops::sample_balanced(labels, cfg_.box_batch_size_per_image, cfg_.box_positive_fraction);
      auto keep = torch::cat({pos, neg});
      auto boxes = props.index_select(0, keep);
      auto gt_idx = matched.index_select(0, keep);
      sampled_boxes.push_back(boxes);
      sampled_labels.push_back(labels.index_select(0, keep));
      sampled_gt_idx.push_back(gt_idx);
      auto gt_boxes = gt.size(0) ? gt.index_select(0, gt_idx) : torch::zeros_like(boxes);
      sampled_reg.push_back(coder_.encode(gt_boxes, boxes));
    }

    auto [class_logits, box_regression] = box_branch(levels, sampled_boxes);
    auto labels = torch::cat(sampled_labels);
    auto reg_targets = torch::cat(sampled_reg);

    TrainLosses losses;
    losses.classifier = F::cross_entropy(class_logits, labels);
    auto pos = torch::nonzero(labels > 0).squeeze(1);
    auto reg = box_regression.view({box_regression.size(0), -1, 4});
    auto pos_reg = reg.index({pos, labels.index_select(0, pos)});
    losses.box_reg = smooth_l1_sum(pos_reg, reg_targets.index_select(0, pos)) /
                     static_cast<double>(std::max<int64_t>(1, labels.numel()));

    // Mask branch on positive samples only.
    std::vector<torch::Tensor> pos_boxes, mask_targets, pos_labels;
    for (std::size_t i = 0; i < sampled_boxes.size(); ++i) {
      auto p = torch::nonzero(sampled_labels[i] > 0).squeeze(1);
      auto boxes = sampled_boxes[i].index_select(0, p);
      pos_boxes.push_back(boxes);
      pos_labels.push_back(sampled_labels[i].index_select(0, p));
      if (p.numel() == 0) {
        mask_targets.push_back(torch::zeros({0, kMaskPool * 2, kMaskPool * 2}, boxes.options()));
        continue;
      }
      auto gt_idx = sampled_gt_idx[i].index_select(0, p).to(boxes.scalar_type());
      auto rois = torch::cat({gt_idx.unsqueeze(1), boxes}, 1);
      auto gt_masks = targets[i].masks.to(torch::kFloat).unsqueeze(1);
      auto projected = ops::roi_align(gt_masks, rois, 1.0, kMaskPool * 2, cfg_.roi_sampling_ratio);
      mask_targets.push_back((projected.squeeze(1) >= 0.5).to(torch::kFloat));
    }
    auto all_labels = torch::cat(pos_labels);
    if (all_labels.numel() == 0) {
      losses.mask = class_logits.sum() * 0.0;
      return losses;
    }
    auto mask_logits = mask_branch(levels, pos_boxes);
    auto selected = mask_logits.index({torch::arange(all_labels.size(0), all_labels.options()), all_labels});
    losses.mask = ops::bce_with_clamp(torch::sigmoid(selected.to(torch::kFloat)), torch::cat(mask_targets));
    return losses;
  }

  struct Detections {
    torch::Tensor boxes;   // [D, 4] in resized image coordinates
    torch::Tensor scores;  // [D]
    torch::Tensor labels;  // [D]
    torch::Tensor masks;   // [D, 28, 28] probabilities
  };

  std::vector<Detections> detect(const std::vector<torch::Tensor>& levels,
                                 const std::vector<torch::Tensor>& proposals, const ImageBatch& batch,
                                 double min_score) {
    auto [class_logits, box_regression] = box_branch(levels, proposals);
    auto probs = torch::softmax(class_logits.to(torch::kFloat), -1);
    auto all_props = torch::cat(proposals);
    auto decoded = all_props.size(0) ? coder_.decode(box_regression.to(torch::kFloat), all_props)
                                     : torch::zeros({0, cfg_.num_classes, 4}, probs.options());

    std::vector<Detections> out;
    int64_t offset = 0;
    const double score_floor = std::max(cfg_.box_score_thresh, min_score);
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      const int64_t n = proposals[i].size(0);
      auto boxes = ops::clip_boxes(decoded.slice(0, offset, offset + n), batch.sizes[i].first,
                                   batch.sizes[i].second);
      auto scores = probs.slice(0, offset, offset + n);
      offset += n;
      auto labels = torch::arange(cfg_.num_classes, torch::TensorOptions().dtype(torch::kLong).device(boxes.device()))
                        .view({1, -1})
                        .expand_as(scores);
      // Drop the background column and flatten (proposal, class) pairs.
      boxes = boxes.slice(1, 1).reshape({-1, 4});
      scores = scores.slice(1, 1).reshape(-1);
      labels = labels.slice(1, 1).reshape(-1);
      auto keep = torch::nonzero(scores >= score_floor).squeeze(1);
      boxes = boxes.index_select(0, keep);
      scores = scores.index_select(0, keep);
      labels = labels.index_select(0, keep);
      keep = ops::remove_small_boxes(boxes, 1e-2);
      boxes = boxes.index_select(0, keep);
      scores = scores.index_select(0, keep);
      labels = labels.index_select(0, keep);
      keep = ops::batched_nms(boxes, scores, labels, cfg_.box_nms_thresh).slice(0, 0, cfg_.box_detections_per_img);
      out.push_back({boxes.index_select(0, keep), scores.index_select(0, keep), labels.index_select(0, keep), {}});
    }

    std::vector<torch::Tensor> det_boxes;
    for (const auto& d : out) det_boxes.push_back(d.boxes);
    auto total = torch::cat(det_boxes).size(0);
    if (total > 0) {
      auto mask_logits = mask_branch(levels, det_boxes);
      std::vector<torch::Tensor> det_labels;
      for (const auto& d : out) det_labels.push_back(d.labels);
      auto labels = torch::cat(det_labels);
      auto probs_m = torch::sigmoid(
          mask_logits.index({torch::arange(total, labels.options()), labels}).to(torch::kFloat));
      int64_t o = 0;
      for (auto& d : out) {
        d.masks = probs_m.slice(0, o, o + d.boxes.size(0));
        o += d.boxes.size(0);
      }
    } else {
      for (auto& d : out) d.masks = torch::zeros({0, kMaskPool * 2, kMaskPool * 2});
    }
    return out;
  }

 private:
  std::pair<torch::Tensor, torch::Tensor> box_branch(const std::vector<torch::Tensor>& levels,
                                                     const std::vector<torch::Tensor>& boxes) {
    auto pooled = ops::multiscale_roi_align(levels, boxes, kMinLevel, kBoxPool, cfg_.roi_sampling_ratio);
    auto x = torch::relu(fc6_(pooled.flatten(1)));
    x = torch::relu(fc7_(x));
    return {cls_score_(x), bbox_pred_(x)};
  }

  torch::Tensor mask_branch(const std::vector<torch::Tensor>& levels, const std::vector<torch::Tensor>& boxes) {
    auto pooled = ops::multiscale_roi_align(levels, boxes, kMinLevel, kMaskPool, cfg_.roi_sampling_ratio);
    auto x = mask_head_->forward(pooled);
    x = torch::relu(mask_deconv_(x));
    return mask_logits_(x);
  }

  ModelConfig cfg_;
  ops::BoxCoder coder_;
  ops::Matcher matcher_;
  nn::Linear fc6_{nullptr}, fc7_{nullptr}, cls_score_{nullptr}, bbox_pred_{nullptr};
  nn::Sequential mask_head_{nullptr};
  nn::ConvTranspose2d mask_deconv_{nullptr};
  nn::Conv2d mask_logits_{nullptr};
};

// ---------------------------------------------------------------------------

MaskRcnnImpl::MaskRcnnImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  backbone_ = register_module("backbone", std::make_shared<BackboneImpl>(cfg_));
  rpn_ = register_module("rpn", std::make_shared<RpnImpl>(cfg_));
  roi_heads_ = register_module("roi_heads", std::make_shared<RoiHeadsImpl>(cfg_));
}

ImageBatch MaskRcnnImpl::transform(const std::vector<torch::Tensor>& images,
                                   std::vector<TrainTarget>* targets) const {
  static const std::array<float, 3> kMean{0.485f, 0.456f, 0.406f};
  static const std::array<float, 3> kStd{0.229f, 0.224f, 0.225f};
  ImageBatch batch;
  std::vector<torch::Tensor> resized;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    const int64_t h = img.size(1), w = img.size(2);
    batch.original.emplace_back(h, w);
    auto mean = torch::tensor(std::vector<float>(kMean.begin(), kMean.end()), img.options()).view({3, 1, 1});
    auto stdv = torch::tensor(std::vector<float>(kStd.begin(), kStd.end()), img.options()).view({3, 1, 1});
    auto x = (img - mean) / stdv;
    const double scale = std::min(static_cast<double>(cfg_.min_size) / std::min(h, w),
                                  static_cast<double>(cfg_.max_size) / std::max(h, w));
    const auto nh = static_cast<int64_t>(std::floor(h * scale));
    const auto nw = static_cast<int64_t>(std::floor(w * scale));
    if (nh != h || nw != w) {
      x = F::interpolate(x.unsqueeze(0), F::InterpolateFuncOptions()
                                             .size(std::vector<int64_t>{nh, nw})
                                             .mode(torch::kBilinear)
                                             .align_corners(false))
              .squeeze(0);
      if (targets != nullptr) {
        auto& t = (*targets)[i];
        const double rx = static_cast<double>(nw) / w, ry = static_cast<double>(nh) / h;
        auto ratios = torch::tensor({rx, ry, rx, ry}, t.boxes.options());
        t.boxes = t.boxes * ratios;
        if (t.masks.size(0) > 0) {
          t.masks = F::interpolate(t.masks.unsqueeze(1).to(torch::kFloat),
                                   F::InterpolateFuncOptions()
                                       .size(std::vector<int64_t>{nh, nw})
                                       .mode(torch::kNearest))
                        .squeeze(1)
                        .to(torch::kByte);
        } else {
          t.masks = torch::zeros({0, nh, nw}, t.masks.options());
        }
      }
    }
    batch.sizes.emplace_back(nh, nw);
    resized.push_back(x);
  }
  int64_t max_h = 0, max_w = 0;
  for (const auto& r : resized) {
    max_h = std::max(max_h, r.size(1));
    max_w = std::max(max_w, r.size(2));
  }
  max_h = (max_h + kSizeDivisible - 1) / kSizeDivisible * kSizeDivisible;
  max_w = (max_w + kSizeDivisible - 1) / kSizeDivisible * kSizeDivisible;
  batch.tensors = torch::zeros({static_cast<int64_t>(resized.size()), 3, max_h, max_w}, resized[0].options());
  for (std::size_t i = 0; i < resized.size(); ++i) {
    batch.tensors[static_cast<int64_t>(i)]
        .slice(1, 0, resized[i].size(1))
        .slice(2, 0, resized[i].size(2))
        .copy_(resized[i]);
  }
  return batch;
}

LossTensors MaskRcnnImpl::forward_train(const std::vector<torch::Tensor>& images,
                                        std::vector<TrainTarget> targets) {
  if (images.empty() || images.size() != targets.size()) {
    fail(ErrorCode::kInvalidArgument, "forward_train needs one target per image");
  }
  auto batch = transform(images, &targets);
  auto features = backbone_->forward(batch.tensors);
  auto rpn = rpn_->forward(batch, features, &targets);
  std::vector<torch::Tensor> roi_levels(features.begin(), features.begin() + kRoiLevels);
  auto heads = roi_heads_->forward_train(roi_levels, rpn.proposals, targets);
  LossTensors out;
  out.rpn_objectness = rpn.loss_objectness.to(torch::kFloat);
  out.rpn_box = rpn.loss_box.to(torch::kFloat);
  out.classifier = heads.classifier.to(torch::kFloat);
  out.box_reg = heads.box_reg.to(torch::kFloat);
  out.mask = heads.mask.to(torch::kFloat);
  return out;
}

std::vector<RpnHeadOutput> MaskRcnnImpl::rpn_head_outputs(const std::vector<torch::Tensor>& images) {
  auto batch = transform(images, nullptr);
  return rpn_->head(backbone_->forward(batch.tensors));
}

namespace {

// Bilinear paste of an M x M mask probability grid into its box at image resolution.
void paste_mask(const torch::Tensor& mask, const Box& box, ProbMap& out) {
  const int c0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  const int c1 = std::min(out.width, static_cast<int>(std::ceil(box.x2)));
  const int r0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  const int r1 = std::min(out.height, static_cast<int>(std::ceil(box.y2)));
  if (c1 <= c0 || r1 <= r0 || box.width() <= 0 || box.height() <= 0) return;
  auto opts = torch::TensorOptions().dtype(torch::kFloat);
  auto cols = torch::arange(c0, c1, opts) + 0.5;
  auto rows = torch::arange(r0, r1, opts) + 0.5;
  auto gx = (cols - box.x1) / box.width() * 2.0 - 1.0;
  auto gy = (rows - box.y1) / box.height() * 2.0 - 1.0;
  auto grid = torch::stack({gx.view({1, -1}).expand({r1 - r0, c1 - c0}),
                            gy.view({-1, 1}).expand({r1 - r0, c1 - c0})},
                           2)
                  .unsqueeze(0);
  auto sampled = F::grid_sample(mask.to(torch::kCPU, torch::kFloat).view({1, 1, mask.size(0), mask.size(1)}), grid,
                                F::GridSampleFuncOptions()
                                    .mode(torch::kBilinear)
                                    .padding_mode(torch::kZeros)
                                    .align_corners(false))
                     .view({r1 - r0, c1 - c0})
                     .contiguous();
  auto acc = sampled.accessor<float, 2>();
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) out.at(r, c) = std::clamp(acc[r - r0][c - c0], 0.0f, 1.0f);
  }
}

}  // namespace

std::vector<std::vector<DetectionResult>> MaskRcnnImpl::detect(const std::vector<torch::Tensor>& images,
                                                               double min_score) {
  torch::NoGradGuard no_grad;
  auto batch = transform(images, nullptr);
  auto features = backbone_->forward(batch.tensors);
  auto rpn = rpn_->forward(batch, features, nullptr);
  std::vector<torch::Tensor> roi_levels(features.begin(), features.begin() + kRoiLevels);
  auto dets = roi_heads_->detect(roi_levels, rpn.proposals, batch, min_score);

  std::vector<std::vector<DetectionResult>> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto [oh, ow] = batch.original[i];
    const auto [rh, rw] = batch.sizes[i];
    const double sx = static_cast<double>(ow) / rw, sy = static_cast<double>(oh) / rh;
    auto boxes = dets[i].boxes.to(torch::kCPU, torch::kDouble).contiguous();
    auto scores = dets[i].scores.to(torch::kCPU, torch::kDouble).contiguous();
    auto labels = dets[i].labels.to(torch::kCPU).contiguous();
    auto masks = dets[i].masks.to(torch::kCPU);
    for (int64_t d = 0; d < boxes.size(0); ++d) {
      DetectionResult r;
      r.box = {boxes[d][0].item<double>() * sx, boxes[d][1].item<double>() * sy,
               boxes[d][2].item<double>() * sx, boxes[d][3].item<double>() * sy};
      r.score = scores[d].item<double>();
      r.label = labels[d].item<int64_t>();
      r.mask_prob = ProbMap(static_cast<int>(ow), static_cast<int>(oh));
      paste_mask(masks[d], r.box, r.mask_prob);
      out[i].push_back(std::move(r));
    }
  }
  return out;
}

int MaskRcnnImpl::load_backbone_state(const c10::Dict<c10::IValue, c10::IValue>& state) {
  std::map<std::string, torch::Tensor> own;
  for (auto& kv : backbone_->named_parameters(true)) own.emplace("backbone." + kv.key(), kv.value());
  for (auto& kv : backbone_->named_buffers(true)) own.emplace("backbone." + kv.key(), kv.value());

  torch::NoGradGuard no_grad;
  int loaded = 0;
  for (const auto& entry : state) {
    if (!entry.key().isString() || !entry.value().isTensor()) continue;
    const std::string key = entry.key().toStringRef();
    std::string name;
    if (key.rfind("backbone.", 0) == 0) {
      name = key;
    } else if (key.rfind("body.", 0) == 0 || key.rfind("fpn.", 0) == 0) {
      name = "backbone." + key;
    } else {
      name = "backbone.body." + key;  // plain ImageNet ResNet state dict
    }
    auto it = own.find(name);
    if (it == own.end()) continue;
    const auto& src = entry.value().toTensor();
    if (src.sizes() != it->second.sizes()) {
      fail(ErrorCode::kWeightsUnavailable, "shape mismatch for " + name);
    }
    it->second.copy_(src.to(it->second.dtype()));
    ++loaded;
  }
  return loaded;
}

void MaskRcnnImpl::freeze_pretrained_stem() { backbone_->body().freeze_stem(); }

std::vector<std::pair<std::string, torch::Tensor>> MaskRcnnImpl::backbone_tensors() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (auto& kv : backbone_->named_parameters(true)) out.emplace_back("backbone." + kv.key(), kv.value());
  for (auto& kv : backbone_->named_buffers(true)) out.emplace_back("backbone." + kv.key(), kv.value());
  return out;
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& cfg) : net_(cfg) {}

void Model::to(torch::Device device) {
  net_->to(device);
  device_ = device;
}

torch::Device resolve_device(const std::string& spec) {
  std::string s = spec;
  if (s.empty()) {
    if (const char* env = std::getenv("SOILSEG_DEVICE")) s = env;
  }
  if (s.empty()) return torch::cuda::is_available() ? torch::Device(torch::kCUDA) : torch::Device(torch::kCPU);
  try {
    torch::Device d(s);
    if (d.is_cuda() && !torch::cuda::is_available()) {
      fail(ErrorCode::kConfigError, "device '" + s + "' requested but CUDA is unavailable");
    }
    return d;
  } catch (const c10::Error&) {
    fail(ErrorCode::kConfigError, "unrecognized device '" + s + "'");
  }
}

std::string describe_device(const torch::Device& device) {
  if (device.is_cuda()) return "cuda:" + std::to_string(device.has_index() ? device.index() : 0);
  return "cpu (" + std::to_string(at::get_num_threads()) + " threads)";
}

c10::Dict<c10::IValue, c10::IValue> read_state_dict(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kWeightsUnavailable, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    auto value = torch::pickle_load(bytes);
    if (!value.isGenericDict()) {
      fail(ErrorCode::kWeightsUnavailable, path.string() + " does not hold a plain dict of tensors");
    }
    return value.toGenericDict();
  } catch (const c10::Error& e) {
    fail(ErrorCode::kWeightsUnavailable, path.string() + ": " + e.what_without_backtrace());
  }
}

std::unique_ptr<Model> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  torch::manual_seed(seed);
  auto model = std::make_unique<Model>(cfg);
  if (cfg.pretrained_backbone) {
    std::string path = cfg.backbone_weights;
    if (path.empty()) {
      if (const char* env = std::getenv("SOILSEG_BACKBONE_WEIGHTS")) path = env;
    }
    if (path.empty()) {
      fail(ErrorCode::kWeightsUnavailable,
           "pretrained backbone requested but no weights file given (set backbone_weights or "
           "SOILSEG_BACKBONE_WEIGHTS)");
    }
    if (!std::filesystem::is_regular_file(path)) {
      fail(ErrorCode::kWeightsUnavailable, "weights file not found: " + path);
    }
    const int loaded = model->net()->load_backbone_state(read_state_dict(path));
    if (loaded == 0) fail(ErrorCode::kWeightsUnavailable, "no backbone tensors matched in " + path);
    model->net()->freeze_pretrained_stem();
  }
  return model;
}

torch::Tensor image_to_tensor(const RgbImage& image) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(image.pixels.data()), {image.height, image.width, 3},
                            torch::kByte);
  return t.permute({2, 0, 1}).to(torch::kFloat).div(255.0).contiguous();
}

std::vector<DetectionResult> predict(Model& model, const RgbImage& image, const PredictOptions& opts) {
  if (image.empty()) fail(ErrorCode::kInvalidArgument, "empty image");
  const bool was_training = model.net()->is_training();
  model.set_training(false);
  auto x = image_to_tensor(image).to(model.device());
  const double min_score = opts.min_score >= 0 ? opts.min_score : model.config().box_score_thresh;
  auto result = model.net()->detect({x}, min_score);
  if (was_training) model.set_training(true);
  auto& dets = result.front();
  std::stable_sort(dets.begin(), dets.end(),
                   [](const DetectionResult& a, const DetectionResult& b) { return a.score > b.score; });
  return std::move(dets);
}

}  // namespace soilseg::model
