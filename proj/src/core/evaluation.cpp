// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "soilseg/error.hpp"
#include "soilseg/postprocess.hpp"

namespace soilseg::eval {

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.width != b.width || a.height != b.height) {
    fail(ErrorCode::kShapeMismatch, "mask_iou: " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                                        " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

MatchResult match_image(const ImageInstances& inst, double iou_threshold) {
  MatchResult r;
  const auto& preds = inst.predictions;
  const auto& gts = inst.ground_truths;
  r.num_gt = static_cast<int>(gts.size());
  r.order.resize(preds.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t i, std::size_t j) { return preds[i].score > preds[j].score; });

  std::vector<bool> gt_taken(gts.size(), false);
  // A match needs IoU >= threshold; the cap keeps threshold 1.0 reachable.
  const double floor_iou = std::min(iou_threshold, 1.0 - 1e-10);
  for (std::size_t p : r.order) {
    double best = floor_iou;
    int match = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_taken[g]) continue;
      const double iou = mask_iou(preds[p].mask, gts[g]);
      if (iou < best) continue;
      best = iou;
      match = static_cast<int>(g);
    }
    if (match >= 0) gt_taken[static_cast<std::size_t>(match)] = true;
    r.true_positive.push_back(match >= 0);
    r.scores.push_back(preds[p].score);
    r.matched_iou.push_back(match >= 0 ? best : 0.0);
  }
  r.unmatched_gt = static_cast<int>(std::count(gt_taken.begin(), gt_taken.end(), false));
  return r;
}

PrCurve pr_curve(const std::vector<MatchResult>& matches) {
  PrCurve curve;
  int num_gt = 0;
  struct Entry {
    double score;
    bool tp;
  };
  std::vector<Entry> entries;
  for (const auto& m : matches) {
    num_gt += m.num_gt;
    for (std::size_t i = 0; i < m.scores.size(); ++i) entries.push_back({m.scores[i], m.true_positive[i]});
  }
  if (num_gt == 0) return curve;
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.score > b.score; });

  double tp = 0, fp = 0;
  for (const auto& e : entries) {
    (e.tp ? tp : fp) += 1;
    curve.recall.push_back(tp / num_gt);
    curve.precision.push_back(tp / (tp + fp));
  }
  // Precision envelope: best precision at any equal-or-higher recall.
  std::vector<double> envelope = curve.precision;
  for (std::size_t i = envelope.size(); i > 1; --i) envelope[i - 2] = std::max(envelope[i - 2], envelope[i - 1]);

  curve.interpolated.assign(101, 0.0);
  for (int k = 0; k <= 100; ++k) {
    const double r = k == 100 ? 1.0 : k * 0.01;
    const auto it = std::lower_bound(curve.recall.begin(), curve.recall.end(), r);
    if (it != curve.recall.end()) curve.interpolated[k] = envelope[static_cast<std::size_t>(it - curve.recall.begin())];
  }
  return curve;
}

std::optional<double> average_precision(const std::vector<ImageInstances>& images, double iou_threshold) {
  std::vector<MatchResult> matches;
  matches.reserve(images.size());
  int num_gt = 0;
  for (const auto& img : images) {
    matches.push_back(match_image(img, iou_threshold));
    num_gt += matches.back().num_gt;
  }
  if (num_gt == 0) return std::nullopt;
  const PrCurve curve = pr_curve(matches);
  double sum = 0;
  for (double p : curve.interpolated) sum += p;
  return sum / 101.0;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json per_image = nlohmann::json::array();
  for (const auto& d : report.per_image) {
    per_image.push_back({{"image_id", d.image_id},
                         {"file_name", d.file_name},
                         {"num_predictions", d.num_predictions},
                         {"num_gts", d.num_gts},
                         {"true_positives", d.true_positives},
                         {"best_iou", d.best_iou}});
  }
  return {{"split", report.split},
          {"iou_threshold", report.iou_threshold},
          {"ap50", report.ap50 ? nlohmann::json(*report.ap50) : nlohmann::json(nullptr)},
          {"num_images", report.num_images},
          {"num_predictions", report.num_predictions},
          {"num_gts", report.num_gts},
          {"per_image", per_image}};
}

EvalReport eval_segm_map(const Predictor& predictor, const coco::CocoDataset& ds, const EvalConfig& cfg) {
  EvalReport report;
  report.split = coco::split_name(ds.split);
  report.iou_threshold = cfg.iou_threshold;
  std::vector<ImageInstances> instances;
  instances.reserve(ds.images.size());
  for (const auto& rec : ds.images) {
    const RgbImage image = read_image(ds.image_path(rec));
    ImageInstances inst;
    inst.image_id = rec.id;
    for (const auto* ann : ds.annotations_for(rec.id)) {
      inst.ground_truths.push_back(coco::polygon_to_mask(*ann, image.width, image.height));
    }
    auto dets = predictor(image, rec);
    std::stable_sort(dets.begin(), dets.end(),
                     [](const model::DetectionResult& a, const model::DetectionResult& b) { return a.score > b.score; });
    if (cfg.max_detections >= 0 && dets.size() > static_cast<std::size_t>(cfg.max_detections)) {
      dets.resize(static_cast<std::size_t>(cfg.max_detections));
    }
    for (const auto& d : dets) inst.predictions.push_back({d.score, post::binarize_mask(d.mask_prob, cfg.mask_threshold)});

    const MatchResult m = match_image(inst, cfg.iou_threshold);
    ImageEvalDetail detail;
    detail.image_id = rec.id;
    detail.file_name = rec.file_name;
    detail.num_predictions = static_cast<int>(inst.predictions.size());
    detail.num_gts = m.num_gt;
    detail.true_positives = static_cast<int>(std::count(m.true_positive.begin(), m.true_positive.end(), true));
    for (const auto& p : inst.predictions) {
      for (const auto& g : inst.ground_truths) detail.best_iou = std::max(detail.best_iou, mask_iou(p.mask, g));
    }
    report.num_predictions += detail.num_predictions;
    report.num_gts += detail.num_gts;
    report.per_image.push_back(detail);
    instances.push_back(std::move(inst));
  }
  report.num_images = static_cast<int>(ds.images.size());
  report.ap50 = average_precision(instances, cfg.iou_threshold);
  return report;
}

nlohmann::json to_json(const TimingReport& report) {
  return {{"warmup_runs", report.warmup_runs},       {"measured_runs", report.measured_runs},
          {"per_run_seconds", report.per_run_seconds}, {"median_seconds", report.median_seconds},
          {"mean_seconds", report.mean_seconds},     {"min_seconds", report.min_seconds},
          {"max_seconds", report.max_seconds},       {"device", report.device}};
}

TimingReport benchmark(const std::function<void()>& fn, int warmup, int runs, const std::string& device,
                       const std::function<void()>& sync) {
  if (runs < 1) fail(ErrorCode::kInvalidArgument, "runs must be >= 1");
  if (warmup < 0) fail(ErrorCode::kInvalidArgument, "warmup must be >= 0");
  for (int i = 0; i < warmup; ++i) {
    fn();
    if (sync) sync();
  }
  TimingReport r;
  r.warmup_runs = warmup;
  r.measured_runs = runs;
  r.device = device;
  for (int i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    if (sync) sync();
    r.per_run_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::vector<double> sorted = r.per_run_seconds;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median_seconds = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  r.mean_seconds = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  r.min_seconds = sorted.front();
  r.max_seconds = sorted.back();
  return r;
}

}  // namespace soilseg::eval
