// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "rng.hpp"
#include "soilseg/coco_data.hpp"
#include "soilseg/error.hpp"

namespace soilseg::coco {

namespace fs = std::filesystem;

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

SyntheticSample make_synthetic_sample(int image_size, std::uint64_t seed) {
  if (image_size < 8) fail(ErrorCode::kInvalidArgument, "image_size must be >= 8");
  detail::Rng rng(seed);
  const int s = image_size;
  const double size = s;

  // Background: base tone, two sinusoidal stripe fields, pixel noise.
  double base[3];
  for (double& b : base) b = rng.uniform(60.0, 140.0);
  const double fx = rng.uniform(0.1, 0.4), px = rng.uniform(0.0, 6.0);
  const double fy = rng.uniform(0.05, 0.2), py = rng.uniform(0.0, 6.0);

  // Soil blob: radially perturbed circle near the image center.
  const double cx = size / 2 + rng.uniform(-0.08, 0.08) * size;
  const double cy = size / 2 + rng.uniform(-0.08, 0.08) * size;
  const double radius = size * rng.uniform(0.25, 0.35);
  double phase[3], amp[3];
  for (int k = 0; k < 3; ++k) {
    phase[k] = rng.uniform(0.0, 2 * std::numbers::pi);
    amp[k] = rng.uniform(0.03, 0.12);
  }
  constexpr int kVertices = 24;
  Polygon poly;
  poly.reserve(2 * kVertices);
  for (int i = 0; i < kVertices; ++i) {
    const double t = 2 * std::numbers::pi * i / kVertices;
    double r = 1.0;
    for (int k = 0; k < 3; ++k) r += amp[k] * std::sin((k + 2) * t + phase[k]);
    r *= radius;
    poly.push_back(round2(std::clamp(cx + r * std::cos(t), 0.0, size)));
    poly.push_back(round2(std::clamp(cy + r * std::sin(t), 0.0, size)));
  }
  double soil[3] = {120.0, 60.0, 90.0};
  for (double& c : soil) c += rng.uniform(-15.0, 15.0);

  SyntheticSample out;
  out.mask = polygons_to_mask({poly}, s, s);
  out.polygon = std::move(poly);
  out.image = RgbImage(s, s);
  for (int row = 0; row < s; ++row) {
    for (int col = 0; col < s; ++col) {
      std::uint8_t* px_out = out.image.at(row, col);
      const bool inside = out.mask.at(row, col) != 0;
      const double stripe = 25.0 * std::sin(col * fx + px) + 10.0 * std::sin(row * fy + py);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = inside ? soil[ch] + 10.0 * rng.normal()
                                : base[ch] + stripe + 12.0 * rng.normal();
        px_out[ch] = to_byte(v);
      }
    }
  }
  return out;
}

void generate_synthetic_dataset(const SyntheticOptions& opts, const fs::path& out_root) {
  if (opts.n_images < 1) fail(ErrorCode::kInvalidArgument, "n_images must be >= 1");
  const int n_val = opts.n_val >= 0
                        ? opts.n_val
                        : std::max(1, static_cast<int>(std::lround(opts.n_images * 3.0 / 7.0)));

  std::error_code ec;
  fs::create_directories(out_root / "annotations", ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create " + (out_root / "annotations").string());

  std::int64_t next_id = 1;
  for (Split split : {Split::kTrain, Split::kVal}) {
    const int count = split == Split::kTrain ? opts.n_images : n_val;
    const fs::path dir = image_dir(out_root, split);
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorCode::kIoError, "cannot create " + dir.string());

    CocoDataset ds;
    ds.split = split;
    ds.categories.push_back({kSoilCategoryId, kSoilCategoryName});
    for (int i = 0; i < count; ++i, ++next_id) {
      const SyntheticSample sample =
          make_synthetic_sample(opts.image_size, detail::mix_seed(opts.seed, static_cast<std::uint64_t>(next_id)));
      char name[32];
      std::snprintf(name, sizeof(name), "soil_%06lld.png", static_cast<long long>(next_id));
      write_png(dir / name, sample.image);

      ds.images.push_back({next_id, name, opts.image_size, opts.image_size});
      PolygonAnnotation ann;
      ann.id = next_id;
      ann.image_id = next_id;
      ann.category_id = kSoilCategoryId;
      ann.segmentation = {sample.polygon};
      ann.bbox = polygon_bbox(ann.segmentation);
      ann.area = round2(polygon_area(sample.polygon));
      ds.annotations.push_back(std::move(ann));
    }
    write_coco_annotations(ds, out_root);
  }
}

}  // namespace soilseg::coco
