// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

// Training-curve charts rendered from the training CSV alone.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace soilseg::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  int width = 800;
  int height = 500;
};

/// Renders a line chart (markers on every point, so one-point series stay
/// visible) to a PNG. Throws kInvalidArgument for empty or mismatched
/// series and kIoError on write failure.
void render_line_chart(const std::filesystem::path& png, const ChartSpec& spec, const std::vector<Series>& series);

struct PlotResult {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
};

/// loss.png (total and the three Eq. 1 terms), lr.png and map50.png. The
/// mAP chart is skipped with a warning when the column is missing or empty.
/// Throws kMissingFile / kSchemaError for an unreadable or malformed CSV.
PlotResult plot_curves(const std::filesystem::path& log_csv, const std::filesystem::path& out_dir);

}  // namespace soilseg::plot
