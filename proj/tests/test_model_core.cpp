// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest_torch.hpp"

#include <cmath>
#include <random>

#include <torch/torch.h>

#include "oracles.hpp"
#include "soilseg/coco_data.hpp"
#include "soilseg/detection_ops.hpp"
#include "soilseg/maskrcnn.hpp"
#include "soilseg/model_core.hpp"
#include "test_util.hpp"

using namespace soilseg;
using soilseg::testing::error_of;

namespace {

model::FeatureMap random_map(std::mt19937_64& rng, int c, int h, int w) {
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  model::FeatureMap fm(c, h, w);
  for (auto& v : fm.data) v = u(rng);
  return fm;
}

}  // namespace

TEST_SUITE("model_core") {
  TEST_CASE("RPN head widths are 2k objectness and 4k regression channels") {
    CHECK(model::rpn_head_channels(9) == std::pair{18, 36});
    CHECK(model::rpn_head_channels(1) == std::pair{2, 4});
    CHECK(model::rpn_head_channels(15) == std::pair{30, 60});
    for (int k = 1; k <= 64; ++k) CHECK(model::rpn_head_channels(k) == std::pair{2 * k, 4 * k});
    CHECK(error_of([] { model::rpn_head_channels(0); }) == ErrorCode::kInvalidK);
  }

  TEST_CASE("roi_align on a 2x2 map samples the bilinear center") {
    model::FeatureMap fm(1, 2, 2);
    fm.at(0, 0, 0) = 1;
    fm.at(0, 0, 1) = 2;
    fm.at(0, 1, 0) = 3;
    fm.at(0, 1, 1) = 4;
    const auto out = model::roi_align(fm, {0, 0, 2, 2}, 1, 1);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == doctest::Approx(oracle::bilinear(fm, 0, 1.0, 1.0)));
    CHECK(out[0] == doctest::Approx(2.5));
  }

  TEST_CASE("roi_align on a constant map is exactly constant") {
    model::FeatureMap fm(2, 5, 7);
    std::fill(fm.data.begin(), fm.data.end(), 3.7f);
    for (const Box& b : {Box{0, 0, 7, 5}, Box{0.25, 1.5, 3.75, 2.0}, Box{6.5, 4.5, 7, 5}}) {
      for (int s = 1; s <= 3; ++s) {
        for (float v : model::roi_align(fm, b, s, 2)) CHECK(v == 3.7f);
      }
    }
  }

  TEST_CASE("half-pixel box shift on a ramp shifts the output by half the slope") {
    constexpr float kSlope = 1.5f;
    model::FeatureMap fm(1, 8, 8);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) fm.at(0, r, c) = kSlope * c + 0.25f * r;
    const auto a = model::roi_align(fm, {2.0, 2.0, 4.0, 4.0}, 2, 2);
    const auto b = model::roi_align(fm, {2.5, 2.0, 4.5, 4.0}, 2, 2);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] - a[i] == doctest::Approx(0.5 * kSlope).epsilon(1e-6));
  }

  TEST_CASE("roi_align matches the tent-filter oracle on random maps and boxes") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> q(0, 32);
    for (int t = 0; t < 300; ++t) {
      const auto fm = random_map(rng, 3, 8, 8);
      double x1 = q(rng) * 0.25, x2 = q(rng) * 0.25, y1 = q(rng) * 0.25, y2 = q(rng) * 0.25;
      if (x1 == x2 || y1 == y2) continue;
      if (x1 > x2) std::swap(x1, x2);
      if (y1 > y2) std::swap(y1, y2);
      for (int n = 1; n <= 3; ++n) {
        const auto got = model::roi_align(fm, {x1, y1, x2, y2}, 2, n);
        const auto want = oracle::roi_align(fm, {x1, y1, x2, y2}, 2, n);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-5);
      }
    }
  }

  TEST_CASE("roi_align reproduces torchvision's aligned roi_align") {
    // Values from tests/reference/make_reference_values.py.
    model::FeatureMap fm(1, 4, 5);
    const float offsets[5] = {0.0f, 1.0f, -2.0f, 0.5f, 3.0f};
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 5; ++c) fm.at(0, r, c) = 0.5f * (r * 5 + c) + offsets[c];
    const std::vector<std::pair<Box, std::vector<double>>> cases = {
        {{0.25, 0.5, 3.75, 3.0}, {2.375, 1.859375, 5.5, 4.984375}},
        {{1.0, 0.0, 5.0, 4.0}, {1.5, 4.75, 6.5, 9.75}},
        {{2.5, 1.25, 3.0, 2.0}, {1.71875, 2.46875, 2.65625, 3.40625}},
    };
    for (const auto& [box, want] : cases) {
      const auto got = model::roi_align(fm, box, 2, 2);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
    }
  }

  TEST_CASE("batched tensor roi_align agrees with the scalar definition") {
    std::mt19937_64 rng(5);
    const auto fm = random_map(rng, 4, 6, 9);
    auto features = torch::from_blob(const_cast<float*>(fm.data.data()), {1, 4, 6, 9}, torch::kFloat).clone();
    const std::vector<Box> boxes{{0.5, 0.5, 4.0, 3.0}, {2.25, 1.0, 8.75, 6.0}, {0, 0, 9, 6}, {7.0, 4.0, 7.5, 5.5}};
    auto rois = torch::zeros({static_cast<long>(boxes.size()), 5});
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      rois[k][1] = boxes[k].x1;
      rois[k][2] = boxes[k].y1;
      rois[k][3] = boxes[k].x2;
      rois[k][4] = boxes[k].y2;
    }
    const auto out = ops::roi_align(features, rois, 1.0, 3, 2).contiguous();
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const auto scalar = model::roi_align(fm, boxes[k], 3, 2);
      for (int by = 0; by < 3; ++by)
        for (int bx = 0; bx < 3; ++bx)
          for (int c = 0; c < 4; ++c)
            CHECK(out[k][c][by][bx].item<float>() ==
                  doctest::Approx(scalar[(by * 3 + bx) * 4 + c]).epsilon(1e-5));
    }
  }

  TEST_CASE("roi_align rejects degenerate boxes") {
    model::FeatureMap fm(1, 4, 4);
    CHECK(error_of([&] { model::roi_align(fm, {1, 1, 1, 3}, 2); }) == ErrorCode::kDegenerateBox);
    CHECK(error_of([&] { model::roi_align(fm, {2, 1, 1, 3}, 2); }) == ErrorCode::kDegenerateBox);
    CHECK(error_of([&] { model::roi_align(fm, {0, 0, 2, 2}, 0); }) == ErrorCode::kInvalidArgument);
  }

  TEST_CASE("total loss is the three-way sum and rejects non-finite parts") {
    CHECK(model::total_loss({}) == 0.0);
    model::LossBreakdown p;
    p.l_rpn = 0.1;
    p.l_faster_rcnn = 0.05;
    p.l_mask = 0.05;
    CHECK(model::total_loss(p) == doctest::Approx(0.2));
    p.l_mask = std::nan("");
    CHECK(error_of([&] { model::total_loss(p); }) == ErrorCode::kNonFiniteLoss);
    p.l_mask = INFINITY;
    CHECK(error_of([&] { model::total_loss(p); }) == ErrorCode::kNonFiniteLoss);
  }

  TEST_CASE("mask BCE: ln 2 at p = 0.5, zero when exact, scalar oracle otherwise") {
    const std::vector<std::uint8_t> target{1, 0, 1, 1, 0, 0, 1, 0};
    const std::vector<float> half(target.size(), 0.5f);
    CHECK(model::mask_bce_loss(half, target) == doctest::Approx(std::log(2.0)).epsilon(1e-7));

    std::vector<float> exact(target.begin(), target.end());
    const double near_zero = model::mask_bce_loss(exact, target);
    CHECK(near_zero >= 0.0);
    CHECK(near_zero <= 1e-6);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::bernoulli_distribution coin(0.5);
    for (int t = 0; t < 20; ++t) {
      std::vector<float> pred(16);
      std::vector<std::uint8_t> tgt(16);
      double oracle_sum = 0;
      for (int i = 0; i < 16; ++i) {
        pred[i] = u(rng);
        tgt[i] = coin(rng) ? 1 : 0;
        const double p = std::clamp(static_cast<double>(pred[i]), 1e-7, 1.0 - 1e-7);
        oracle_sum += tgt[i] ? -std::log(p) : -std::log(1.0 - p);
      }
      const double got = model::mask_bce_loss(pred, tgt);
      CHECK(got >= 0.0);
      CHECK(std::abs(got - oracle_sum / 16) < 1e-9);
    }

    const std::vector<float> short_pred(3, 0.5f);
    CHECK(error_of([&] { model::mask_bce_loss(short_pred, target); }) == ErrorCode::kShapeMismatch);
  }

  TEST_CASE("batched BCE clamps like the scalar loss") {
    auto prob = torch::tensor({0.0f, 1.0f, 0.3f, 0.9f});
    auto target = torch::tensor({0.0f, 1.0f, 1.0f, 0.0f});
    const double got = ops::bce_with_clamp(prob, target).item<double>();
    const std::vector<float> p{0.0f, 1.0f, 0.3f, 0.9f};
    const std::vector<std::uint8_t> t{0, 1, 1, 0};
    CHECK(got == doctest::Approx(model::mask_bce_loss(p, t)).epsilon(1e-6));
  }

  TEST_CASE("model config validation and JSON round trip") {
    auto cfg = model::ModelConfig::compact();
    CHECK_NOTHROW(cfg.validate());
    const auto back = model::model_config_from_json(model::to_json(cfg));
    CHECK(model::to_json(back) == model::to_json(cfg));
    cfg.num_classes = 1;
    CHECK(error_of([&] { cfg.validate(); }) == ErrorCode::kConfigError);
  }

  TEST_CASE("pretrained ResNet-50 without weights is unavailable") {
    auto cfg = model::ModelConfig::resnet50_fpn();
    cfg.backbone_weights = "/nonexistent/resnet50.pt";
    CHECK(error_of([&] { model::build_model(cfg, 0); }) == ErrorCode::kWeightsUnavailable);
  }

  TEST_CASE("one training forward gives finite, additive losses") {
    auto cfg = model::ModelConfig::compact();
    auto m = model::build_model(cfg, 1);
    m->set_training(true);
    const auto sample = coco::make_synthetic_sample(128, 4);
    const auto bbox = coco::polygon_bbox({sample.polygon});
    model::TrainTarget target;
    target.boxes = torch::tensor({{static_cast<float>(bbox[0]), static_cast<float>(bbox[1]),
                                   static_cast<float>(bbox[0] + bbox[2]), static_cast<float>(bbox[1] + bbox[3])}});
    target.labels = torch::tensor({1L});
    target.masks = torch::from_blob(const_cast<std::uint8_t*>(sample.mask.data.data()), {1, 128, 128}, torch::kUInt8)
                       .clone();
    auto losses = m->net()->forward_train({model::image_to_tensor(sample.image)}, {target});
    const auto parts = losses.breakdown();
    CHECK(std::isfinite(parts.l_rpn));
    CHECK(std::isfinite(parts.l_faster_rcnn));
    CHECK(std::isfinite(parts.l_mask));
    const double sum = parts.l_rpn + parts.l_faster_rcnn + parts.l_mask;
    CHECK(std::abs(model::total_loss(parts) - sum) <= 1e-6 * std::abs(sum));
    CHECK(std::abs(losses.total().item<double>() - sum) <= 1e-5 * std::abs(sum));
  }

  TEST_CASE("inference is deterministic, sorted and tolerates blank images") {
    auto m = model::build_model(model::ModelConfig::compact(), 2);
    m->set_training(false);
    const auto sample = coco::make_synthetic_sample(128, 9);
    model::PredictOptions opts;
    opts.min_score = 0.0;
    const auto a = model::predict(*m, sample.image, opts);
    const auto b = model::predict(*m, sample.image, opts);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].box == b[i].box);
      CHECK(a[i].score == b[i].score);
      CHECK(a[i].mask_prob.data == b[i].mask_prob.data);
      if (i > 0) CHECK(a[i].score <= a[i - 1].score);
      CHECK(a[i].mask_prob.width == 128);
      CHECK(a[i].mask_prob.height == 128);
    }
    const RgbImage blank(128, 128, 0);
    CHECK_NOTHROW(model::predict(*m, blank));
  }
}
