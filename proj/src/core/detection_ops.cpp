// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/detection_ops.hpp"

#include <cmath>

#include "soilseg/model_core.hpp"

namespace soilseg::ops {

using torch::indexing::Slice;

torch::Tensor box_area(const torch::Tensor& boxes) {
  return (boxes.select(1, 2) - boxes.select(1, 0)) * (boxes.select(1, 3) - boxes.select(1, 1));
}

torch::Tensor box_iou(const torch::Tensor& a, const torch::Tensor& b) {
  auto area_a = box_area(a);
  auto area_b = box_area(b);
  auto lt = torch::max(a.index({Slice(), torch::indexing::None, Slice(0, 2)}),
                       b.index({torch::indexing::None, Slice(), Slice(0, 2)}));
  auto rb = torch::min(a.index({Slice(), torch::indexing::None, Slice(2, 4)}),
                       b.index({torch::indexing::None, Slice(), Slice(2, 4)}));
  auto wh = (rb - lt).clamp_min(0);
  auto inter = wh.select(2, 0) * wh.select(2, 1);
  auto uni = area_a.unsqueeze(1) + area_b.unsqueeze(0) - inter;
  return inter / uni.clamp_min(1e-12);
}

torch::Tensor clip_boxes(const torch::Tensor& boxes, int64_t height, int64_t width) {
  auto x = boxes.index({"...", Slice(0, torch::indexing::None, 2)}).clamp(0, static_cast<double>(width));
  auto y = boxes.index({"...", Slice(1, torch::indexing::None, 2)}).clamp(0, static_cast<double>(height));
  return torch::stack({x.select(-1, 0), y.select(-1, 0), x.select(-1, 1), y.select(-1, 1)}, -1);
}

torch::Tensor remove_small_boxes(const torch::Tensor& boxes, double min_size) {
  auto ws = boxes.select(1, 2) - boxes.select(1, 0);
  auto hs = boxes.select(1, 3) - boxes.select(1, 1);
  return torch::nonzero((ws >= min_size) & (hs >= min_size)).squeeze(1);
}

torch::Tensor nms(const torch::Tensor& boxes, const torch::Tensor& scores, double iou_threshold) {
  const int64_t n = boxes.size(0);
  if (n == 0) return torch::empty({0}, torch::kLong);
  auto b = boxes.detach().to(torch::kCPU, torch::kFloat).contiguous();
  auto order = std::get<1>(scores.detach().to(torch::kCPU).sort(/*stable=*/true, 0, /*descending=*/true));
  auto bacc = b.accessor<float, 2>();
  auto oacc = order.accessor<int64_t, 1>();

  std::vector<float> area(static_cast<std::size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    area[i] = (bacc[i][2] - bacc[i][0]) * (bacc[i][3] - bacc[i][1]);
  }
  std::vector<char> suppressed(static_cast<std::size_t>(n), 0);
  std::vector<int64_t> keep;
  for (int64_t oi = 0; oi < n; ++oi) {
    const int64_t i = oacc[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (int64_t oj = oi + 1; oj < n; ++oj) {
      const int64_t j = oacc[oj];
      if (suppressed[j]) continue;
      const float xx1 = std::max(bacc[i][0], bacc[j][0]);
      const float yy1 = std::max(bacc[i][1], bacc[j][1]);
      const float xx2 = std::min(bacc[i][2], bacc[j][2]);
      const float yy2 = std::min(bacc[i][3], bacc[j][3]);
      const float inter = std::max(0.0f, xx2 - xx1) * std::max(0.0f, yy2 - yy1);
      const float iou = inter / (area[i] + area[j] - inter);
      if (iou > iou_threshold) suppressed[j] = 1;
    }
  }
  return torch::tensor(keep, torch::kLong).to(boxes.device());
}

torch::Tensor batched_nms(const torch::Tensor& boxes, const torch::Tensor& scores,
                          const torch::Tensor& groups, double iou_threshold) {
  if (boxes.size(0) == 0) return torch::empty({0}, torch::kLong).to(boxes.device());
  // Offset each group far apart so boxes of different groups never overlap.
  auto max_coord = boxes.max();
  auto offsets = groups.to(boxes.scalar_type()) * (max_coord + 1);
  return nms(boxes + offsets.unsqueeze(1), scores, iou_threshold);
}

BoxCoder::BoxCoder(std::array<double, 4> weights)
    : weights_(weights), clip_(std::log(1000.0 / 16.0)) {}

torch::Tensor BoxCoder::encode(const torch::Tensor& targets, const torch::Tensor& anchors) const {
  auto aw = anchors.select(1, 2) - anchors.select(1, 0);
  auto ah = anchors.select(1, 3) - anchors.select(1, 1);
  auto ax = anchors.select(1, 0) + 0.5 * aw;
  auto ay = anchors.select(1, 1) + 0.5 * ah;
  auto tw = targets.select(1, 2) - targets.select(1, 0);
  auto th = targets.select(1, 3) - targets.select(1, 1);
  auto tx = targets.select(1, 0) + 0.5 * tw;
  auto ty = targets.select(1, 1) + 0.5 * th;
  auto dx = weights_[0] * (tx - ax) / aw;
  auto dy = weights_[1] * (ty - ay) / ah;
  auto dw = weights_[2] * torch::log(tw / aw);
  auto dh = weights_[3] * torch::log(th / ah);
  return torch::stack({dx, dy, dw, dh}, 1);
}

torch::Tensor BoxCoder::decode(const torch::Tensor& codes, const torch::Tensor& anchors) const {
  const int64_t n = anchors.size(0);
  auto a = anchors.to(codes.scalar_type());
  auto aw = (a.select(1, 2) - a.select(1, 0)).unsqueeze(1);
  auto ah = (a.select(1, 3) - a.select(1, 1)).unsqueeze(1);
  auto ax = a.select(1, 0).unsqueeze(1) + 0.5 * aw;
  auto ay = a.select(1, 1).unsqueeze(1) + 0.5 * ah;
  auto c = codes.reshape({n, -1, 4});
  auto dx = c.select(2, 0) / weights_[0];
  auto dy = c.select(2, 1) / weights_[1];
  auto dw = (c.select(2, 2) / weights_[2]).clamp_max(clip_);
  auto dh = (c.select(2, 3) / weights_[3]).clamp_max(clip_);
  auto cx = dx * aw + ax;
  auto cy = dy * ah + ay;
  auto w = torch::exp(dw) * aw;
  auto h = torch::exp(dh) * ah;
  return torch::stack({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}, 2);
}

Matcher::Matcher(double high, double low, bool allow_low_quality)
    : high_(high), low_(low), allow_low_quality_(allow_low_quality) {}

torch::Tensor Matcher::operator()(const torch::Tensor& iou) const {
  if (iou.size(0) == 0) {
    return torch::full({iou.size(1)}, kBelowLow, torch::TensorOptions().dtype(torch::kLong).device(iou.device()));
  }
  auto [vals, matches] = iou.max(0);
  auto all_matches = matches.clone();
  matches.masked_fill_(vals < low_, kBelowLow);
  matches.masked_fill_((vals >= low_) & (vals < high_), kBetween);
  if (allow_low_quality_) {
    // Every gt keeps the predictions that reach its best IoU.
    auto best_per_gt = std::get<0>(iou.max(1));
    auto pairs = torch::nonzero(iou == best_per_gt.unsqueeze(1));
    auto pred_idx = pairs.select(1, 1);
    matches.index_put_({pred_idx}, all_matches.index({pred_idx}));
  }
  return matches;
}

std::pair<torch::Tensor, torch::Tensor> sample_balanced(const torch::Tensor& labels,
                                                        int batch_size, double positive_fraction) {
  auto positive = torch::nonzero(labels >= 1).squeeze(1);
  auto negative = torch::nonzero(labels == 0).squeeze(1);
  const int64_t num_pos = std::min<int64_t>(positive.numel(),
                                            static_cast<int64_t>(batch_size * positive_fraction));
  const int64_t num_neg = std::min<int64_t>(negative.numel(), batch_size - num_pos);
  auto perm_pos = torch::randperm(positive.numel(), torch::TensorOptions().dtype(torch::kLong))
                      .slice(0, 0, num_pos)
                      .to(labels.device());
  auto perm_neg = torch::randperm(negative.numel(), torch::TensorOptions().dtype(torch::kLong))
                      .slice(0, 0, num_neg)
                      .to(labels.device());
  return {positive.index({perm_pos}), negative.index({perm_neg})};
}

namespace {

// Per-axis sample positions and bilinear corners. `start` and `extent` are
// [K] in map coordinates; returns low/high indices, fractional weight and a
// validity mask, each [K, P] with P = size * n.
struct AxisSamples {
  torch::Tensor low, high, frac, valid;
};

AxisSamples axis_samples(const torch::Tensor& start, const torch::Tensor& extent, int size, int n,
                         int64_t limit) {
  auto opts = start.options();
  auto offsets = (torch::arange(size * n, opts) + 0.5) / n;  // in bin units
  auto pos = start.unsqueeze(1) + (extent / size).unsqueeze(1) * offsets.unsqueeze(0);
  auto idx = pos - 0.5;  // cell-center index space
  auto valid = (idx >= -1.0) & (idx <= static_cast<double>(limit));
  idx = idx.clamp_min(0.0);
  auto low = idx.floor().to(torch::kLong);
  auto at_edge = low >= (limit - 1);
  low = torch::where(at_edge, torch::full_like(low, limit - 1), low);
  auto high = torch::where(at_edge, low, low + 1);
  idx = torch::where(at_edge, low.to(idx.scalar_type()), idx);
  auto frac = idx - low.to(idx.scalar_type());
  return {low, high, frac, valid};
}

}  // namespace

torch::Tensor roi_align(const torch::Tensor& features, const torch::Tensor& rois,
                        double spatial_scale, int output_size, int sampling_ratio) {
  const int64_t b = features.size(0), c = features.size(1);
  const int64_t h = features.size(2), w = features.size(3);
  const int64_t k = rois.size(0);
  const int s = output_size, n = sampling_ratio;
  if (k == 0) return torch::zeros({0, c, s, s}, features.options());

  auto r = rois.detach().to(torch::kFloat);
  auto batch = r.select(1, 0).to(torch::kLong);
  auto x1 = r.select(1, 1) * spatial_scale, y1 = r.select(1, 2) * spatial_scale;
  auto x2 = r.select(1, 3) * spatial_scale, y2 = r.select(1, 4) * spatial_scale;
  const AxisSamples ax = axis_samples(x1, x2 - x1, s, n, w);
  const AxisSamples ay = axis_samples(y1, y2 - y1, s, n, h);
  const int64_t p = static_cast<int64_t>(s) * n;

  // [K, P, P] weights for the four corners; rows are y, columns x.
  auto ly = ay.frac.unsqueeze(2), hy = 1.0 - ly;
  auto lx = ax.frac.unsqueeze(1), hx = 1.0 - lx;
  auto valid = (ay.valid.unsqueeze(2) & ax.valid.unsqueeze(1)).to(torch::kFloat);
  auto base = (batch * (h * w)).view({k, 1, 1});
  auto flat = features.permute({0, 2, 3, 1}).reshape({b * h * w, c});

  auto gather = [&](const torch::Tensor& yi, const torch::Tensor& xi) {
    auto index = base + yi.unsqueeze(2) * w + xi.unsqueeze(1);  // [K, P, P]
    return flat.index_select(0, index.reshape({-1})).view({k, p, p, c});
  };
  auto wt = [&](const torch::Tensor& wy, const torch::Tensor& wx) {
    return (wy * wx * valid).to(features.scalar_type()).unsqueeze(3);
  };
  auto val = gather(ay.low, ax.low) * wt(hy, hx) + gather(ay.low, ax.high) * wt(hy, lx) +
             gather(ay.high, ax.low) * wt(ly, hx) + gather(ay.high, ax.high) * wt(ly, lx);
  // Average the n x n samples of each bin.
  auto pooled = val.view({k, s, n, s, n, c}).mean({2, 4});
  return pooled.permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor map_levels(const torch::Tensor& boxes, int min_level, int max_level) {
  auto scale = box_area(boxes).clamp_min(1e-6).sqrt();
  auto lvl = torch::floor(4.0 + torch::log2(scale / 224.0) + 1e-6);
  return lvl.clamp(min_level, max_level).to(torch::kLong) - min_level;
}

torch::Tensor to_rois(const std::vector<torch::Tensor>& boxes_per_image) {
  std::vector<torch::Tensor> parts;
  for (std::size_t i = 0; i < boxes_per_image.size(); ++i) {
    const auto& bx = boxes_per_image[i];
    auto idx = torch::full({bx.size(0), 1}, static_cast<double>(i), bx.options());
    parts.push_back(torch::cat({idx, bx}, 1));
  }
  return torch::cat(parts, 0);
}

torch::Tensor multiscale_roi_align(const std::vector<torch::Tensor>& levels,
                                   const std::vector<torch::Tensor>& boxes_per_image,
                                   int min_level, int output_size, int sampling_ratio) {
  auto rois = to_rois(boxes_per_image).detach();
  const int64_t k = rois.size(0);
  const int64_t c = levels.front().size(1);
  const int max_level = min_level + static_cast<int>(levels.size()) - 1;
  auto result = torch::zeros({k, c, output_size, output_size}, levels.front().options());
  if (k == 0) return result;
  auto assigned = map_levels(rois.slice(1, 1, 5), min_level, max_level);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    auto idx = torch::nonzero(assigned == static_cast<int64_t>(l)).squeeze(1);
    if (idx.numel() == 0) continue;
    const double scale = 1.0 / std::pow(2.0, min_level + static_cast<int>(l));
    auto pooled = roi_align(levels[l], rois.index_select(0, idx), scale, output_size, sampling_ratio);
    result = result.index_put({idx}, pooled);
  }
  return result;
}

torch::Tensor bce_with_clamp(const torch::Tensor& prob, const torch::Tensor& target) {
  auto p = prob.to(torch::kFloat).clamp(model::kBceEpsilon, 1.0 - model::kBceEpsilon);
  auto t = target.to(torch::kFloat);
  return -(t * torch::log(p) + (1.0 - t) * torch::log(1.0 - p)).mean();
}

}  // namespace soilseg::ops
