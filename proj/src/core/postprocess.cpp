// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "soilseg/error.hpp"

namespace soilseg::post {

namespace fs = std::filesystem;

BinaryMask binarize_mask(const ProbMap& prob, double threshold) {
  BinaryMask out(prob.width, prob.height);
  for (std::size_t i = 0; i < prob.data.size(); ++i) {
    out.data[i] = prob.data[i] >= threshold ? 1 : 0;
  }
  return out;
}

const model::DetectionResult& select_primary_detection(const std::vector<model::DetectionResult>& dets,
                                                       double score_threshold, std::int64_t soil_label) {
  const model::DetectionResult* best = nullptr;
  for (const auto& d : dets) {
    if (d.label != soil_label || d.score < score_threshold) continue;
    if (best == nullptr || d.score > best->score) best = &d;
  }
  if (best == nullptr) {
    fail(ErrorCode::kNoSoilDetected,
         "no soil detection with score >= " + std::to_string(score_threshold) + " among " +
             std::to_string(dets.size()) + " candidates");
  }
  return *best;
}

RgbImage apply_mask_whiten(const RgbImage& original, const BinaryMask& mask) {
  if (original.width != mask.width || original.height != mask.height) {
    fail(ErrorCode::kShapeMismatch, "image " + std::to_string(original.width) + "x" +
                                        std::to_string(original.height) + " vs mask " +
                                        std::to_string(mask.width) + "x" + std::to_string(mask.height));
  }
  RgbImage out = original;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] == 0) {
      std::fill_n(out.pixels.begin() + static_cast<std::ptrdiff_t>(i * 3), 3, kWhite);
    }
  }
  return out;
}

CropRect box_to_rect(const Box& box, int width, int height) {
  auto clampi = [](double v, int hi) { return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi))); };
  return {clampi(std::floor(box.x1), width), clampi(std::floor(box.y1), height),
          clampi(std::ceil(box.x2), width), clampi(std::ceil(box.y2), height)};
}

CropRect min_circumscribed_rect(const BinaryMask& mask, const CropRect& box) {
  const int x1 = std::max(box.x1, 0), y1 = std::max(box.y1, 0);
  const int x2 = std::min(box.x2, mask.width), y2 = std::min(box.y2, mask.height);
  CropRect r{x2, y2, x1, y1};  // inverted; grown by every set pixel
  bool any = false;
  for (int row = y1; row < y2; ++row) {
    for (int col = x1; col < x2; ++col) {
      if (mask.at(row, col) == 0) continue;
      any = true;
      r.x1 = std::min(r.x1, col);
      r.y1 = std::min(r.y1, row);
      r.x2 = std::max(r.x2, col + 1);
      r.y2 = std::max(r.y2, row + 1);
    }
  }
  if (!any) fail(ErrorCode::kEmptyIntersection, "no mask pixel inside the predicted box");
  return r;
}

RgbImage crop(const RgbImage& image, const CropRect& rect) {
  if (rect.empty() || rect.x1 < 0 || rect.y1 < 0 || rect.x2 > image.width || rect.y2 > image.height) {
    fail(ErrorCode::kInvalidArgument, "crop rectangle outside the image");
  }
  RgbImage out(rect.width(), rect.height());
  const std::size_t row_bytes = static_cast<std::size_t>(rect.width()) * 3;
  for (int row = 0; row < rect.height(); ++row) {
    std::copy_n(image.at(rect.y1 + row, rect.x1), row_bytes, out.at(row, 0));
  }
  return out;
}

SegmentationArtifact segment_detections(const RgbImage& image,
                                        const std::vector<model::DetectionResult>& dets,
                                        const PostprocessConfig& cfg) {
  const auto& det = select_primary_detection(dets, cfg.score_threshold, cfg.soil_label);
  SegmentationArtifact a;
  a.score = det.score;
  a.box = det.box;
  a.mask = binarize_mask(det.mask_prob, cfg.mask_threshold);
  a.mask_area = a.mask.count();
  a.composite = apply_mask_whiten(image, a.mask);
  a.crop_rect = min_circumscribed_rect(a.mask, box_to_rect(det.box, image.width, image.height));
  a.cropped = crop(a.composite, a.crop_rect);
  return a;
}

nlohmann::json artifact_meta(const SegmentationArtifact& a) {
  return {
      {"score", a.score},
      {"box", {a.box.x1, a.box.y1, a.box.x2, a.box.y2}},
      {"crop_rect", {{"x1", a.crop_rect.x1}, {"y1", a.crop_rect.y1}, {"x2", a.crop_rect.x2}, {"y2", a.crop_rect.y2}}},
      {"mask_area", a.mask_area},
      {"image_size", {{"width", a.composite.width}, {"height", a.composite.height}}},
  };
}

void write_artifact(const fs::path& out_dir, const std::string& stem, const SegmentationArtifact& artifact,
                    const nlohmann::json& extra) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create " + out_dir.string() + ": " + ec.message());
  write_png(out_dir / (stem + "_composite.png"), artifact.composite);
  write_png(out_dir / (stem + "_crop.png"), artifact.cropped);
  auto meta = artifact_meta(artifact);
  meta.update(extra);
  std::ofstream out(out_dir / (stem + "_meta.json"));
  out << meta.dump(2) << "\n";
  if (!out) fail(ErrorCode::kIoError, "cannot write " + (out_dir / (stem + "_meta.json")).string());
}

}  // namespace soilseg::post
