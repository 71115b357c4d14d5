// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace soilseg {

/// Interleaved 8-bit RGB image, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* at(int row, int col) {
    return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }
  const std::uint8_t* at(int row, int col) const {
    return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }
  bool empty() const { return width == 0 || height == 0; }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Per-pixel {0,1} matrix; 1 marks a soil pixel.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // height * width, values 0 or 1

  BinaryMask() = default;
  BinaryMask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
  std::size_t count() const;
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Per-pixel probability map at image resolution.
struct ProbMap {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  ProbMap() = default;
  ProbMap(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
  float at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
};

/// Continuous box in pixel coordinates, (x1, y1) top-left and (x2, y2) bottom-right.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  friend bool operator==(const Box&, const Box&) = default;
};

// PNG/JPEG through OpenCV. Throws Error(kIoError) on failure.
RgbImage read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const BinaryMask& mask);

}  // namespace soilseg
