// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/image.hpp"

#include <algorithm>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "soilseg/error.hpp"

namespace soilseg {

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

RgbImage read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    fail(ErrorCode::kIoError, "cannot decode image " + path.string());
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RgbImage out(rgb.cols, rgb.rows);
  for (int r = 0; r < rgb.rows; ++r) {
    std::copy_n(rgb.ptr<std::uint8_t>(r), static_cast<std::size_t>(rgb.cols) * 3, out.at(r, 0));
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) {
    fail(ErrorCode::kIoError, "cannot write " + path.string());
  }
}

void write_png(const std::filesystem::path& path, const BinaryMask& mask) {
  cv::Mat m(mask.height, mask.width, CV_8UC1);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) m.at<std::uint8_t>(r, c) = mask.at(r, c) ? 255 : 0;
  }
  if (!cv::imwrite(path.string(), m)) {
    fail(ErrorCode::kIoError, "cannot write " + path.string());
  }
}

}  // namespace soilseg
