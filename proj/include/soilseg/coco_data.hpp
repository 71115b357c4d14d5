// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

// COCO2017-style single-class ("soil") datasets: loading, validation,
// splitting, rasterization and synthetic generation.
//
// On-disk layout:
//   root/annotations/instances_{train,val}2017.json
//   root/{train,val}2017/<image files>

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "soilseg/image.hpp"

namespace soilseg::coco {

inline constexpr std::int64_t kSoilCategoryId = 1;
inline constexpr const char* kSoilCategoryName = "soil";

enum class Split { kTrain, kVal };

std::string split_name(Split split);                 // "train" / "val"
Split parse_split(const std::string& name);          // throws kInvalidArgument
std::filesystem::path annotation_path(const std::filesystem::path& root, Split split);
std::filesystem::path image_dir(const std::filesystem::path& root, Split split);

struct ImageRecord {
  std::int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// One polygon as a flat list x0, y0, x1, y1, ...
using Polygon = std::vector<double>;

struct PolygonAnnotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  std::vector<Polygon> segmentation;
  std::array<double, 4> bbox{};  // x, y, w, h
  double area = 0;
  int iscrowd = 0;
  friend bool operator==(const PolygonAnnotation&, const PolygonAnnotation&) = default;
};

struct CategoryDef {
  std::int64_t id = 0;
  std::string name;
  friend bool operator==(const CategoryDef&, const CategoryDef&) = default;
};

struct CocoDataset {
  std::vector<ImageRecord> images;
  std::vector<PolygonAnnotation> annotations;
  std::vector<CategoryDef> categories;
  std::filesystem::path root;
  Split split = Split::kTrain;

  const ImageRecord* find_image(std::int64_t id) const;
  std::vector<const PolygonAnnotation*> annotations_for(std::int64_t image_id) const;
  std::filesystem::path image_path(const ImageRecord& img) const;
};

/// Structural equality: images, annotations and categories compared id-for-id.
bool same_content(const CocoDataset& a, const CocoDataset& b);

struct SplitSpec {
  double ratio = 0.7;
  std::uint64_t seed = 0;
};

struct Violation {
  std::string kind;              // e.g. "polygon_vertices", "bbox_extent"
  std::int64_t image_id = 0;     // 0 when not applicable
  std::int64_t annotation_id = 0;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool clean() const { return violations.empty(); }
};

/// Parses the COCO JSON for `split` under `root` and cross-references it.
/// Structural problems throw: kMissingFile (layout), kSchemaError (missing or
/// mistyped keys, empty image list), kDanglingReference. Geometric content is
/// left to validate_dataset.
CocoDataset load_coco_dataset(const std::filesystem::path& root, Split split);

/// Same, from an already-parsed document; image files are not checked when
/// `root` is empty.
CocoDataset parse_coco_json(const nlohmann::json& doc, const std::filesystem::path& root,
                            Split split);

nlohmann::json to_coco_json(const CocoDataset& ds);

/// Writes the annotation JSON for `ds.split` under `root` (images untouched).
void write_coco_annotations(const CocoDataset& ds, const std::filesystem::path& root);

ValidationReport validate_dataset(const CocoDataset& ds);

/// Uniform random partition; |train| = round(ratio * N).
std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> split_dataset(
    const std::vector<std::int64_t>& image_ids, const SplitSpec& spec);

/// Even-odd rule sampled at pixel centers (col + 0.5, row + 0.5); union over
/// the annotation's polygons.
BinaryMask polygon_to_mask(const PolygonAnnotation& ann, int width, int height);
BinaryMask polygons_to_mask(const std::vector<Polygon>& polygons, int width, int height);

double polygon_area(const Polygon& poly);       // shoelace, absolute
double polygon_perimeter(const Polygon& poly);

/// Tight (x, y, w, h) around every vertex.
std::array<double, 4> polygon_bbox(const std::vector<Polygon>& polygons);

struct SyntheticOptions {
  int n_images = 20;
  int image_size = 128;
  std::uint64_t seed = 7;
  /// Number of val2017 images; negative selects round(n_images * 3 / 7), at least 1.
  int n_val = -1;
};

struct SyntheticSample {
  RgbImage image;
  Polygon polygon;
  BinaryMask mask;
};

/// One textured-background image with an irregular blob; deterministic in `seed`.
SyntheticSample make_synthetic_sample(int image_size, std::uint64_t seed);

/// Writes the full two-split layout under `out_root`. Throws kInvalidArgument
/// when n_images < 1 and kIoError on write failure.
void generate_synthetic_dataset(const SyntheticOptions& opts, const std::filesystem::path& out_root);

}  // namespace soilseg::coco
