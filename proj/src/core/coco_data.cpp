// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/coco_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "rng.hpp"
#include "soilseg/error.hpp"

namespace soilseg::coco {

namespace fs = std::filesystem;
using nlohmann::json;

std::string split_name(Split split) { return split == Split::kTrain ? "train" : "val"; }

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  fail(ErrorCode::kInvalidArgument, "unknown split '" + name + "' (expected train or val)");
}

fs::path annotation_path(const fs::path& root, Split split) {
  return root / "annotations" / ("instances_" + split_name(split) + "2017.json");
}

fs::path image_dir(const fs::path& root, Split split) { return root / (split_name(split) + "2017"); }

const ImageRecord* CocoDataset::find_image(std::int64_t id) const {
  for (const auto& img : images) {
    if (img.id == id) return &img;
  }
  return nullptr;
}

std::vector<const PolygonAnnotation*> CocoDataset::annotations_for(std::int64_t image_id) const {
  std::vector<const PolygonAnnotation*> out;
  for (const auto& ann : annotations) {
    if (ann.image_id == image_id) out.push_back(&ann);
  }
  return out;
}

fs::path CocoDataset::image_path(const ImageRecord& img) const {
  return image_dir(root, split) / img.file_name;
}

bool same_content(const CocoDataset& a, const CocoDataset& b) {
  return a.images == b.images && a.annotations == b.annotations && a.categories == b.categories;
}

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    fail(ErrorCode::kSchemaError, where + ": missing key '" + key + "'");
  }
  return *it;
}

std::int64_t require_int(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  // Some exporters write integral ids as 12.0.
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d) return static_cast<std::int64_t>(d);
  }
  fail(ErrorCode::kSchemaError, where + ": key '" + key + "' must be an integer");
}

double require_number(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number()) {
    fail(ErrorCode::kSchemaError, where + ": key '" + key + "' must be a number");
  }
  return v.get<double>();
}

const json& require_array(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_array()) {
    fail(ErrorCode::kSchemaError, where + ": key '" + key + "' must be an array");
  }
  return v;
}

PolygonAnnotation parse_annotation(const json& a, std::size_t index) {
  const std::string where = "annotations[" + std::to_string(index) + "]";
  if (!a.is_object()) fail(ErrorCode::kSchemaError, where + " must be an object");
  PolygonAnnotation ann;
  ann.id = require_int(a, "id", where);
  ann.image_id = require_int(a, "image_id", where);
  ann.category_id = require_int(a, "category_id", where);
  const json& seg = require(a, "segmentation", where);
  if (!seg.is_array()) {
    fail(ErrorCode::kSchemaError, where + ": only polygon segmentations are supported");
  }
  for (const auto& poly : seg) {
    if (!poly.is_array()) fail(ErrorCode::kSchemaError, where + ": polygon must be an array");
    Polygon p;
    p.reserve(poly.size());
    for (const auto& v : poly) {
      if (!v.is_number()) fail(ErrorCode::kSchemaError, where + ": polygon coordinate not numeric");
      p.push_back(v.get<double>());
    }
    ann.segmentation.push_back(std::move(p));
  }
  const json& bbox = require_array(a, "bbox", where);
  if (bbox.size() != 4) fail(ErrorCode::kSchemaError, where + ": bbox must have 4 numbers");
  for (std::size_t i = 0; i < 4; ++i) {
    if (!bbox[i].is_number()) fail(ErrorCode::kSchemaError, where + ": bbox must be numeric");
    ann.bbox[i] = bbox[i].get<double>();
  }
  ann.area = require_number(a, "area", where);
  if (a.contains("iscrowd")) ann.iscrowd = static_cast<int>(require_int(a, "iscrowd", where));
  return ann;
}

}  // namespace

CocoDataset parse_coco_json(const json& doc, const fs::path& root, Split split) {
  if (!doc.is_object()) fail(ErrorCode::kSchemaError, "top level must be an object");
  CocoDataset ds;
  ds.root = root;
  ds.split = split;

  const json& images = require_array(doc, "images", "document");
  if (images.empty()) fail(ErrorCode::kSchemaError, "'images' is empty");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    const json& j = images[i];
    if (!j.is_object()) fail(ErrorCode::kSchemaError, where + " must be an object");
    ImageRecord rec;
    rec.id = require_int(j, "id", where);
    const json& name = require(j, "file_name", where);
    if (!name.is_string()) fail(ErrorCode::kSchemaError, where + ": file_name must be a string");
    rec.file_name = name.get<std::string>();
    rec.width = static_cast<int>(require_int(j, "width", where));
    rec.height = static_cast<int>(require_int(j, "height", where));
    ds.images.push_back(std::move(rec));
  }

  const json& anns = require_array(doc, "annotations", "document");
  for (std::size_t i = 0; i < anns.size(); ++i) ds.annotations.push_back(parse_annotation(anns[i], i));

  const json& cats = require_array(doc, "categories", "document");
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string where = "categories[" + std::to_string(i) + "]";
    CategoryDef c;
    c.id = require_int(cats[i], "id", where);
    const json& name = require(cats[i], "name", where);
    if (!name.is_string()) fail(ErrorCode::kSchemaError, where + ": name must be a string");
    c.name = name.get<std::string>();
    ds.categories.push_back(std::move(c));
  }

  std::set<std::int64_t> image_ids;
  std::set<std::int64_t> category_ids;
  for (const auto& img : ds.images) image_ids.insert(img.id);
  for (const auto& c : ds.categories) category_ids.insert(c.id);
  for (const auto& ann : ds.annotations) {
    if (!image_ids.contains(ann.image_id)) {
      fail(ErrorCode::kDanglingReference, "annotation " + std::to_string(ann.id) +
                                              " references unknown image " +
                                              std::to_string(ann.image_id));
    }
    if (!category_ids.contains(ann.category_id)) {
      fail(ErrorCode::kDanglingReference, "annotation " + std::to_string(ann.id) +
                                              " references unknown category " +
                                              std::to_string(ann.category_id));
    }
  }

  if (!root.empty()) {
    for (const auto& img : ds.images) {
      const fs::path p = ds.image_path(img);
      if (!fs::is_regular_file(p)) fail(ErrorCode::kMissingFile, "image file " + p.string());
    }
  }
  return ds;
}

CocoDataset load_coco_dataset(const fs::path& root, Split split) {
  const fs::path ann_path = annotation_path(root, split);
  if (!fs::is_regular_file(ann_path)) fail(ErrorCode::kMissingFile, ann_path.string());
  const fs::path dir = image_dir(root, split);
  if (!fs::is_directory(dir)) fail(ErrorCode::kMissingFile, dir.string());

  std::ifstream in(ann_path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaError, ann_path.string() + ": " + e.what());
  }
  return parse_coco_json(doc, root, split);
}

json to_coco_json(const CocoDataset& ds) {
  json images = json::array();
  for (const auto& img : ds.images) {
    images.push_back({{"id", img.id}, {"file_name", img.file_name}, {"width", img.width},
                      {"height", img.height}});
  }
  json anns = json::array();
  for (const auto& a : ds.annotations) {
    anns.push_back({{"id", a.id},
                    {"image_id", a.image_id},
                    {"category_id", a.category_id},
                    {"segmentation", a.segmentation},
                    {"bbox", a.bbox},
                    {"area", a.area},
                    {"iscrowd", a.iscrowd}});
  }
  json cats = json::array();
  for (const auto& c : ds.categories) cats.push_back({{"id", c.id}, {"name", c.name}});
  return {{"images", images}, {"annotations", anns}, {"categories", cats}};
}

void write_coco_annotations(const CocoDataset& ds, const fs::path& root) {
  const fs::path path = annotation_path(root, ds.split);
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot open " + path.string());
  out << to_coco_json(ds).dump(2) << '\n';
  if (!out) fail(ErrorCode::kIoError, "write failed: " + path.string());
}

ValidationReport validate_dataset(const CocoDataset& ds) {
  ValidationReport report;
  auto add = [&](std::string kind, std::int64_t image_id, std::int64_t ann_id, std::string msg) {
    report.violations.push_back({std::move(kind), image_id, ann_id, std::move(msg)});
  };

  if (ds.categories.size() != 1 || ds.categories[0].id != kSoilCategoryId ||
      ds.categories[0].name != kSoilCategoryName) {
    add("category_set", 0, 0, "categories must be exactly [{id: 1, name: \"soil\"}]");
  }
  if (ds.images.empty()) add("no_images", 0, 0, "dataset has no images");

  std::map<std::int64_t, const ImageRecord*> by_id;
  for (const auto& img : ds.images) {
    if (img.id <= 0) add("image_id", img.id, 0, "image id must be positive");
    if (!by_id.emplace(img.id, &img).second) {
      add("duplicate_image_id", img.id, 0, "image id appears more than once");
    }
    if (img.width < 1 || img.height < 1) {
      add("image_size", img.id, 0,
          "width/height must be >= 1, got " + std::to_string(img.width) + "x" +
              std::to_string(img.height));
    }
    if (!ds.root.empty() && !fs::is_regular_file(ds.image_path(img))) {
      add("file_missing", img.id, 0, "missing " + ds.image_path(img).string());
    }
  }

  std::set<std::int64_t> ann_ids;
  std::map<std::int64_t, int> ann_count;
  for (const auto& a : ds.annotations) {
    if (a.id <= 0) add("annotation_id", a.image_id, a.id, "annotation id must be positive");
    if (!ann_ids.insert(a.id).second) {
      add("duplicate_annotation_id", a.image_id, a.id, "annotation id appears more than once");
    }
    auto it = by_id.find(a.image_id);
    if (it == by_id.end()) {
      add("image_ref", a.image_id, a.id, "references unknown image");
      continue;
    }
    ++ann_count[a.image_id];
    const ImageRecord& img = *it->second;
    if (a.category_id != kSoilCategoryId) {
      add("category_ref", a.image_id, a.id, "category must be 1 (soil)");
    }
    if (a.iscrowd != 0) add("iscrowd", a.image_id, a.id, "crowd annotations are not supported");
    if (a.segmentation.empty()) add("empty_segmentation", a.image_id, a.id, "no polygons");
    if (!(a.area > 0)) add("area", a.image_id, a.id, "area must be positive");

    bool out_of_range = false;
    bool outside_bbox = false;
    constexpr double kTol = 1e-6;
    const double bx0 = a.bbox[0], by0 = a.bbox[1];
    const double bx1 = a.bbox[0] + a.bbox[2], by1 = a.bbox[1] + a.bbox[3];
    for (std::size_t p = 0; p < a.segmentation.size(); ++p) {
      const Polygon& poly = a.segmentation[p];
      if (poly.size() < 6 || poly.size() % 2 != 0) {
        add("polygon_vertices", a.image_id, a.id,
            "polygon " + std::to_string(p) + " has " + std::to_string(poly.size()) +
                " numbers; need an even count >= 6");
        continue;
      }
      for (std::size_t i = 0; i + 1 < poly.size(); i += 2) {
        const double x = poly[i], y = poly[i + 1];
        if (x < 0 || y < 0 || x > img.width || y > img.height) out_of_range = true;
        if (x < bx0 - kTol || x > bx1 + kTol || y < by0 - kTol || y > by1 + kTol) {
          outside_bbox = true;
        }
      }
    }
    if (out_of_range) add("coordinate_range", a.image_id, a.id, "vertex outside image bounds");
    if (outside_bbox) add("bbox_extent", a.image_id, a.id, "bbox does not contain every vertex");
  }

  for (const auto& img : ds.images) {
    if (ann_count[img.id] == 0) add("no_annotations", img.id, 0, "image has no annotations");
  }
  return report;
}

std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> split_dataset(
    const std::vector<std::int64_t>& image_ids, const SplitSpec& spec) {
  if (image_ids.empty()) fail(ErrorCode::kEmptyInput, "no image ids to split");
  if (!(spec.ratio > 0.0 && spec.ratio < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "split ratio must lie in (0, 1)");
  }
  std::set<std::int64_t> unique(image_ids.begin(), image_ids.end());
  if (unique.size() != image_ids.size()) {
    fail(ErrorCode::kInvalidArgument, "duplicate image ids");
  }
  const auto n_train =
      static_cast<std::size_t>(std::llround(spec.ratio * static_cast<double>(image_ids.size())));

  std::vector<std::int64_t> order = image_ids;
  detail::Rng rng(spec.seed);
  rng.shuffle(order);
  std::vector<std::int64_t> train(order.begin(), order.begin() + n_train);
  std::vector<std::int64_t> val(order.begin() + n_train, order.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {std::move(train), std::move(val)};
}

BinaryMask polygons_to_mask(const std::vector<Polygon>& polygons, int width, int height) {
  BinaryMask mask(width, height);
  std::vector<double> crossings;
  for (const Polygon& poly : polygons) {
    if (poly.size() < 6 || poly.size() % 2 != 0) {
      fail(ErrorCode::kDegeneratePolygon,
           "polygon has " + std::to_string(poly.size() / 2) + " vertices; need >= 3");
    }
    const std::size_t n = poly.size() / 2;
    for (int row = 0; row < height; ++row) {
      const double y = row + 0.5;
      crossings.clear();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double xi = poly[2 * i], yi = poly[2 * i + 1];
        const double xj = poly[2 * j], yj = poly[2 * j + 1];
        if ((yi > y) != (yj > y)) crossings.push_back((xj - xi) * (y - yi) / (yj - yi) + xi);
      }
      if (crossings.empty()) continue;
      std::sort(crossings.begin(), crossings.end());
      for (int col = 0; col < width; ++col) {
        const double x = col + 0.5;
        // Crossings strictly right of the sample point; odd count means inside.
        const auto right = crossings.end() - std::upper_bound(crossings.begin(), crossings.end(), x);
        if (right % 2 == 1) mask.at(row, col) = 1;
      }
    }
  }
  return mask;
}

BinaryMask polygon_to_mask(const PolygonAnnotation& ann, int width, int height) {
  return polygons_to_mask(ann.segmentation, width, height);
}

double polygon_area(const Polygon& poly) {
  const std::size_t n = poly.size() / 2;
  double acc = 0.0;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    acc += poly[2 * j] * poly[2 * i + 1] - poly[2 * i] * poly[2 * j + 1];
  }
  return std::abs(acc) * 0.5;
}

double polygon_perimeter(const Polygon& poly) {
  const std::size_t n = poly.size() / 2;
  double acc = 0.0;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    acc += std::hypot(poly[2 * i] - poly[2 * j], poly[2 * i + 1] - poly[2 * j + 1]);
  }
  return acc;
}

std::array<double, 4> polygon_bbox(const std::vector<Polygon>& polygons) {
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;
  for (const Polygon& p : polygons) {
    for (std::size_t i = 0; i + 1 < p.size(); i += 2) {
      x0 = std::min(x0, p[i]);
      x1 = std::max(x1, p[i]);
      y0 = std::min(y0, p[i + 1]);
      y1 = std::max(y1, p[i + 1]);
    }
  }
  if (x0 > x1) return {0, 0, 0, 0};
  return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace soilseg::coco
