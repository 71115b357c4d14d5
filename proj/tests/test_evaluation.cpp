// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest_torch.hpp"

#include <random>
#include <thread>

#include "oracles.hpp"
#include "soilseg/coco_data.hpp"
#include "soilseg/evaluation.hpp"
#include "test_util.hpp"

using namespace soilseg;
using soilseg::testing::error_of;
using soilseg::testing::TempDir;

namespace {

BinaryMask block(int w, int h, int r0, int r1, int c0, int c1) {
  BinaryMask m(w, h);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) m.at(r, c) = 1;
  return m;
}

model::DetectionResult detection_from_mask(const BinaryMask& m, double score) {
  model::DetectionResult d;
  d.score = score;
  d.label = 1;
  d.mask_prob = ProbMap(m.width, m.height);
  for (std::size_t i = 0; i < m.data.size(); ++i) d.mask_prob.data[i] = m.data[i] ? 1.0f : 0.0f;
  d.box = {0, 0, static_cast<double>(m.width), static_cast<double>(m.height)};
  return d;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("mask IoU examples") {
    const auto a = block(6, 6, 1, 3, 1, 3);
    CHECK(eval::mask_iou(a, a) == 1.0);
    CHECK(eval::mask_iou(a, block(6, 6, 4, 6, 4, 6)) == 0.0);
    CHECK(eval::mask_iou(a, block(6, 6, 1, 3, 2, 4)) == doctest::Approx(1.0 / 3.0));
    CHECK(error_of([&] { eval::mask_iou(a, BinaryMask(5, 6)); }) == ErrorCode::kShapeMismatch);
  }

  TEST_CASE("AP: perfect, empty and undefined cases") {
    eval::ImageInstances img;
    img.ground_truths = {block(8, 8, 0, 3, 0, 3), block(8, 8, 4, 8, 4, 8)};
    img.predictions = {{0.9, img.ground_truths[0]}, {0.8, img.ground_truths[1]}};
    CHECK(eval::average_precision({img}) == 1.0);

    img.predictions.clear();
    CHECK(eval::average_precision({img}) == 0.0);

    eval::ImageInstances none;
    CHECK_FALSE(eval::average_precision({none}).has_value());
    none.predictions = {{0.5, block(8, 8, 0, 2, 0, 2)}};
    CHECK_FALSE(eval::average_precision({none}).has_value());
  }

  TEST_CASE("AP of hit, miss, hit equals the enumerated PR curve") {
    eval::ImageInstances img;
    const auto g1 = block(10, 10, 0, 4, 0, 4), g2 = block(10, 10, 6, 10, 6, 10);
    img.ground_truths = {g1, g2};
    img.predictions = {{0.9, g1}, {0.8, block(10, 10, 0, 4, 6, 10)}, {0.7, g2}};
    const auto got = eval::average_precision({img});
    REQUIRE(got.has_value());
    // Operating points: (R 0.5, P 1), (0.5, 0.5), (1, 2/3); interpolated
    // precision is 1 for recall <= 0.5 (51 levels) and 2/3 above (50 levels).
    CHECK(*got == doctest::Approx((51.0 + 50.0 * 2.0 / 3.0) / 101.0).epsilon(1e-12));
    CHECK(*got == doctest::Approx(*oracle::average_precision({img}, 0.5)).epsilon(1e-12));
  }

  TEST_CASE("AP reproduces the pycocotools value on a two-image fixture") {
    // Fixture and value from tests/reference/make_reference_values.py.
    eval::ImageInstances a, b;
    a.image_id = 1;
    a.ground_truths = {block(10, 10, 0, 5, 0, 5), block(10, 10, 5, 10, 5, 10)};
    a.predictions = {{0.9, block(10, 10, 0, 5, 0, 5)}, {0.8, block(10, 10, 0, 5, 5, 10)},
                     {0.6, block(10, 10, 5, 10, 4, 9)}};
    b.image_id = 2;
    b.ground_truths = {block(10, 10, 2, 8, 2, 8)};
    b.predictions = {{0.85, block(10, 10, 2, 8, 3, 9)}, {0.7, block(10, 10, 0, 2, 0, 10)},
                     {0.6, block(10, 10, 2, 8, 2, 8)}};
    const auto got = eval::average_precision({a, b});
    REQUIRE(got.has_value());
    CHECK(*got == doctest::Approx(0.865346534653465).epsilon(1e-12));
  }

  TEST_CASE("AP agrees with the exhaustive oracle on random instances") {
    std::mt19937_64 rng(99);
    for (int t = 0; t < 200; ++t) {
      const auto inst = oracle::random_ap_instance(rng);
      const auto got = eval::average_precision(inst);
      const auto want = oracle::average_precision(inst, 0.5);
      REQUIRE(got.has_value() == want.has_value());
      if (got) CHECK(std::abs(*got - *want) < 1e-9);
    }
  }

  TEST_CASE("matching pins a prediction to its best unclaimed ground truth") {
    eval::ImageInstances img;
    const auto g = block(8, 8, 0, 4, 0, 4);
    img.ground_truths = {g};
    img.predictions = {{0.5, g}, {0.9, block(8, 8, 0, 4, 1, 4)}};
    const auto m = eval::match_image(img, 0.5);
    REQUIRE(m.order.size() == 2);
    CHECK(m.order[0] == 1);  // higher score first
    CHECK(m.true_positive[0]);
    CHECK_FALSE(m.true_positive[1]);  // the exact copy arrives second, GT already claimed
    CHECK(m.matched_iou[0] == doctest::Approx(0.75));
    CHECK(m.unmatched_gt == 0);
  }

  TEST_CASE("eval_segm_map with an oracle model and with an empty model") {
    TempDir dir;
    coco::SyntheticOptions opts;
    opts.n_images = 4;
    opts.image_size = 64;
    coco::generate_synthetic_dataset(opts, dir.path());
    const auto ds = coco::load_coco_dataset(dir.path(), coco::Split::kTrain);

    const eval::Predictor oracle_model = [&](const RgbImage& image, const coco::ImageRecord& rec) {
      std::vector<model::DetectionResult> out;
      for (const auto* ann : ds.annotations_for(rec.id)) {
        out.push_back(detection_from_mask(coco::polygon_to_mask(*ann, image.width, image.height), 1.0));
      }
      return out;
    };
    const auto perfect = eval::eval_segm_map(oracle_model, ds);
    REQUIRE(perfect.ap50.has_value());
    CHECK(*perfect.ap50 == 1.0);
    CHECK(perfect.num_images == 4);
    CHECK(perfect.num_gts == 4);

    const eval::Predictor nothing = [](const RgbImage&, const coco::ImageRecord&) {
      return std::vector<model::DetectionResult>{};
    };
    const auto empty = eval::eval_segm_map(nothing, ds);
    REQUIRE(empty.ap50.has_value());
    CHECK(*empty.ap50 == 0.0);
    CHECK(eval::to_json(empty)["ap50"] == 0.0);
  }

  TEST_CASE("benchmark records exactly the requested runs") {
    int calls = 0;
    const auto report = eval::benchmark(
        [&] {
          ++calls;
          std::this_thread::sleep_for(std::chrono::microseconds(200));
        },
        3, 10, "cpu");
    CHECK(calls == 13);
    CHECK(report.measured_runs == 10);
    CHECK(report.warmup_runs == 3);
    CHECK(report.per_run_seconds.size() == 10);
    CHECK(report.min_seconds <= report.median_seconds);
    CHECK(report.median_seconds <= report.max_seconds);
    const auto j = eval::to_json(report);
    CHECK(j["per_run_seconds"].size() == 10);

    const auto zero_warmup = eval::benchmark([] {}, 0, 2, "cpu");
    CHECK(zero_warmup.per_run_seconds.size() == 2);
  }
}
