// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "soilseg/error.hpp"
#include "soilseg/training.hpp"

namespace soilseg::plot {

namespace fs = std::filesystem;

namespace {

const cv::Scalar kPalette[] = {{180, 90, 30}, {40, 40, 200}, {40, 150, 40}, {160, 60, 160}};
constexpr int kMarginLeft = 90, kMarginRight = 30, kMarginTop = 50, kMarginBottom = 60;
constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// Expands a degenerate range so a single point still gets a visible axis.
void pad_range(double& lo, double& hi, double pad) {
  if (hi - lo < 1e-12) {
    lo -= pad;
    hi += pad;
  }
}

}  // namespace

void render_line_chart(const fs::path& png, const ChartSpec& spec, const std::vector<Series>& series) {
  if (series.empty()) fail(ErrorCode::kInvalidArgument, "no series to plot");
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  auto ty = [&](double y) { return spec.log_y ? std::log10(y) : y; };
  for (const auto& s : series) {
    if (s.x.empty() || s.x.size() != s.y.size()) fail(ErrorCode::kInvalidArgument, "bad series '" + s.name + "'");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (spec.log_y && s.y[i] <= 0) fail(ErrorCode::kInvalidArgument, "log axis needs positive values");
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, ty(s.y[i]));
      y_hi = std::max(y_hi, ty(s.y[i]));
    }
  }
  pad_range(x_lo, x_hi, 1.0);
  pad_range(y_lo, y_hi, spec.log_y ? 0.5 : std::max(std::abs(y_lo) * 0.1, 0.05));
  const double y_margin = (y_hi - y_lo) * 0.05;
  y_lo -= y_margin;
  y_hi += y_margin;

  cv::Mat img(spec.height, spec.width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int x0 = kMarginLeft, x1 = spec.width - kMarginRight;
  const int y0 = kMarginTop, y1 = spec.height - kMarginBottom;
  auto px = [&](double x) { return x0 + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (x1 - x0))); };
  auto py = [&](double y) { return y1 - static_cast<int>(std::lround((ty(y) - y_lo) / (y_hi - y_lo) * (y1 - y0))); };

  // Grid and ticks.
  const cv::Scalar grid(225, 225, 225), axis(60, 60, 60);
  for (int i = 0; i <= 5; ++i) {
    const double fy = y_lo + (y_hi - y_lo) * i / 5.0;
    const int yy = y1 - (y1 - y0) * i / 5;
    cv::line(img, {x0, yy}, {x1, yy}, grid, 1);
    const double label = spec.log_y ? std::pow(10.0, fy) : fy;
    cv::putText(img, tick_label(label), {8, yy + 5}, kFont, 0.45, axis, 1, cv::LINE_AA);
    const double fx = x_lo + (x_hi - x_lo) * i / 5.0;
    const int xx = x0 + (x1 - x0) * i / 5;
    cv::line(img, {xx, y0}, {xx, y1}, grid, 1);
    cv::putText(img, tick_label(fx), {xx - 12, y1 + 20}, kFont, 0.45, axis, 1, cv::LINE_AA);
  }
  cv::rectangle(img, {x0, y0}, {x1, y1}, axis, 1);
  cv::putText(img, spec.title, {x0, 30}, kFont, 0.7, axis, 2, cv::LINE_AA);
  cv::putText(img, spec.x_label, {(x0 + x1) / 2 - 20, spec.height - 15}, kFont, 0.55, axis, 1, cv::LINE_AA);
  cv::putText(img, spec.y_label, {8, y0 - 12}, kFont, 0.5, axis, 1, cv::LINE_AA);

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const cv::Scalar color = kPalette[k % std::size(kPalette)];
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const cv::Point p(px(s.x[i]), py(s.y[i]));
      if (i > 0) cv::line(img, {px(s.x[i - 1]), py(s.y[i - 1])}, p, color, 2, cv::LINE_AA);
      cv::circle(img, p, 3, color, cv::FILLED, cv::LINE_AA);
    }
    // Legend, top right.
    const int ly = y0 + 18 + static_cast<int>(k) * 20;
    cv::line(img, {x1 - 150, ly - 4}, {x1 - 125, ly - 4}, color, 2, cv::LINE_AA);
    cv::putText(img, s.name, {x1 - 118, ly}, kFont, 0.45, axis, 1, cv::LINE_AA);
  }
  std::error_code ec;
  if (png.has_parent_path()) fs::create_directories(png.parent_path(), ec);
  bool ok = false;
  try {
    ok = cv::imwrite(png.string(), img);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) fail(ErrorCode::kIoError, "cannot write " + png.string());
}

PlotResult plot_curves(const fs::path& log_csv, const fs::path& out_dir) {
  const auto table = train::read_log_csv(log_csv);
  Series total{"total", {}, {}}, rpn{"rpn", {}, {}}, frcnn{"faster_rcnn", {}, {}}, mask{"mask", {}, {}};
  Series lr{"lr", {}, {}}, map{"segm mAP@0.5", {}, {}};
  for (const auto& r : table.rows) {
    const double e = r.epoch;
    for (Series* s : {&total, &rpn, &frcnn, &mask, &lr}) s->x.push_back(e);
    total.y.push_back(r.loss_total);
    rpn.y.push_back(r.loss_rpn);
    frcnn.y.push_back(r.loss_frcnn);
    mask.y.push_back(r.loss_mask);
    lr.y.push_back(r.lr);
    if (r.eval_map50) {
      map.x.push_back(e);
      map.y.push_back(*r.eval_map50);
    }
  }
  PlotResult result;
  render_line_chart(out_dir / "loss.png", {"Training loss", "epoch", "loss"}, {total, rpn, frcnn, mask});
  result.written.push_back(out_dir / "loss.png");
  const bool positive_lr = std::all_of(lr.y.begin(), lr.y.end(), [](double v) { return v > 0; });
  render_line_chart(out_dir / "lr.png", {"Learning rate", "epoch", "lr", positive_lr}, {lr});
  result.written.push_back(out_dir / "lr.png");
  if (!table.has_eval_column) {
    result.warnings.push_back("column eval_map50 missing; map50.png skipped");
  } else if (map.x.empty()) {
    result.warnings.push_back("column eval_map50 has no values; map50.png skipped");
  } else {
    render_line_chart(out_dir / "map50.png", {"Eval segm mAP@0.5", "epoch", "mAP@0.5"}, {map});
    result.written.push_back(out_dir / "map50.png");
  }
  return result;
}

}  // namespace soilseg::plot
