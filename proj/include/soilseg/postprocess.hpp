// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

// Eq. 2 post-processing: keep the original pixels under the predicted mask,
// whiten everything else, and crop to the minimum circumscribed rectangle of
// the mask inside the predicted box.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "soilseg/image.hpp"
#include "soilseg/model_core.hpp"

namespace soilseg::post {

inline constexpr std::uint8_t kWhite = 255;

/// Integer pixel rectangle, x1/y1 inclusive and x2/y2 exclusive.
struct CropRect {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  bool empty() const { return x2 <= x1 || y2 <= y1; }
  friend bool operator==(const CropRect&, const CropRect&) = default;
};

/// pixel = 1 iff prob >= threshold (inclusive boundary).
BinaryMask binarize_mask(const ProbMap& prob, double threshold = 0.5);

/// Highest-scoring detection with label `soil_label` and score >= threshold;
/// equal scores resolve to the earliest. Throws kNoSoilDetected.
const model::DetectionResult& select_primary_detection(const std::vector<model::DetectionResult>& dets,
                                                       double score_threshold = 0.5,
                                                       std::int64_t soil_label = 1);

/// Original where mask = 1, (255, 255, 255) where mask = 0. Throws kShapeMismatch.
RgbImage apply_mask_whiten(const RgbImage& original, const BinaryMask& mask);

/// Pixels whose index range intersects the continuous box: [floor(x1), ceil(x2))
/// clipped to the image.
CropRect box_to_rect(const Box& box, int width, int height);

/// Tight bounds of the set pixels of `mask` inside `box` (clipped to the
/// image). Throws kEmptyIntersection when none remain.
CropRect min_circumscribed_rect(const BinaryMask& mask, const CropRect& box);

/// Copies the pixels of `rect`. Throws kInvalidArgument when rect leaves the image.
RgbImage crop(const RgbImage& image, const CropRect& rect);

struct PostprocessConfig {
  double score_threshold = 0.5;
  double mask_threshold = 0.5;
  std::int64_t soil_label = 1;
};

struct SegmentationArtifact {
  RgbImage composite;
  BinaryMask mask;
  Box box;
  CropRect crop_rect;
  RgbImage cropped;
  double score = 0;
  std::size_t mask_area = 0;
};

/// select_primary_detection -> binarize_mask -> apply_mask_whiten ->
/// min_circumscribed_rect -> crop.
SegmentationArtifact segment_detections(const RgbImage& image,
                                        const std::vector<model::DetectionResult>& dets,
                                        const PostprocessConfig& cfg = {});

nlohmann::json artifact_meta(const SegmentationArtifact& artifact);

/// Writes {stem}_composite.png, {stem}_crop.png and {stem}_meta.json
/// (artifact_meta merged with `extra`).
void write_artifact(const std::filesystem::path& out_dir, const std::string& stem,
                    const SegmentationArtifact& artifact, const nlohmann::json& extra = nlohmann::json::object());

}  // namespace soilseg::post
