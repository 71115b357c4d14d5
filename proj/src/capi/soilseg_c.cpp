// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "soilseg/soilseg.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "soilseg/coco_data.hpp"
#include "soilseg/commands.hpp"
#include "soilseg/maskrcnn.hpp"
#include "soilseg/postprocess.hpp"
#include "soilseg/training.hpp"

struct soilseg_dataset {
  soilseg::coco::CocoDataset ds;
};

struct soilseg_model {
  std::unique_ptr<soilseg::model::Model> model;
};

namespace {

using soilseg::ErrorCode;
using nlohmann::json;

thread_local std::string g_last_error;

int set_error(ErrorCode code, const std::string& message) {
  g_last_error = message;
  return static_cast<int>(code);
}

int ok() {
  g_last_error.clear();
  return SOILSEG_OK;
}

// Runs `fn`, translating exceptions into a status and the thread's last error.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const soilseg::Error& e) {
    return set_error(e.code(), e.what());
  } catch (const c10::Error& e) {
    return set_error(ErrorCode::kInternal, e.what_without_backtrace());
  } catch (const std::exception& e) {
    return set_error(ErrorCode::kInternal, e.what());
  } catch (...) {
    return set_error(ErrorCode::kInternal, "unknown exception");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

int null_arg(const char* what) { return set_error(ErrorCode::kInvalidArgument, std::string(what) + " is NULL"); }

}  // namespace

extern "C" {

const char* soilseg_version(void) { return soilseg::cmd::version(); }

const char* soilseg_status_name(int status) { return soilseg::error_code_name(static_cast<ErrorCode>(status)); }

const char* soilseg_last_error(void) { return g_last_error.c_str(); }

int soilseg_exit_code(int status) { return soilseg::cmd::exit_code_for(static_cast<ErrorCode>(status)); }

void soilseg_free_string(char* s) { std::free(s); }

int soilseg_run_command(const char* name, const char* options_json, soilseg_progress_fn progress, void* user_data,
                        char** result_json) {
  if (name == nullptr) return null_arg("name");
  return guarded([&] {
    json options = json::object();
    if (options_json != nullptr && *options_json != '\0') {
      try {
        options = json::parse(options_json);
      } catch (const json::exception& e) {
        return set_error(ErrorCode::kInvalidArgument, std::string("options: ") + e.what());
      }
    }
    soilseg::cmd::ProgressFn fn;
    if (progress != nullptr) fn = [&](const std::string& line) { progress(line.c_str(), user_data); };
    const auto outcome = soilseg::cmd::run_command(name, options, fn);
    if (result_json != nullptr) *result_json = dup_string(outcome.result.dump());
    if (outcome.status != ErrorCode::kOk) {
      return set_error(outcome.status, outcome.result.value("error", std::string()));
    }
    return ok();
  });
}

int soilseg_dataset_load(const char* root, const char* split, soilseg_dataset** out) {
  if (root == nullptr) return null_arg("root");
  if (split == nullptr) return null_arg("split");
  if (out == nullptr) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    auto handle = std::make_unique<soilseg_dataset>();
    handle->ds = soilseg::coco::load_coco_dataset(root, soilseg::coco::parse_split(split));
    *out = handle.release();
    return ok();
  });
}

int soilseg_dataset_counts(const soilseg_dataset* ds, size_t* images, size_t* annotations) {
  if (ds == nullptr) return null_arg("ds");
  if (images != nullptr) *images = ds->ds.images.size();
  if (annotations != nullptr) *annotations = ds->ds.annotations.size();
  return ok();
}

int soilseg_dataset_validate(const soilseg_dataset* ds, size_t* violations, char** report_json) {
  if (ds == nullptr) return null_arg("ds");
  return guarded([&] {
    const auto report = soilseg::coco::validate_dataset(ds->ds);
    if (violations != nullptr) *violations = report.violations.size();
    if (report_json != nullptr) {
      json arr = json::array();
      for (const auto& v : report.violations) {
        arr.push_back(
            {{"kind", v.kind}, {"image_id", v.image_id}, {"annotation_id", v.annotation_id}, {"message", v.message}});
      }
      *report_json = dup_string(arr.dump());
    }
    return ok();
  });
}

void soilseg_dataset_free(soilseg_dataset* ds) { delete ds; }

int soilseg_generate_synthetic(const char* out_root, int n_images, int image_size, uint64_t seed, int n_val) {
  if (out_root == nullptr) return null_arg("out_root");
  return guarded([&] {
    soilseg::coco::SyntheticOptions opts;
    opts.n_images = n_images;
    opts.image_size = image_size;
    opts.seed = seed;
    opts.n_val = n_val;
    soilseg::coco::generate_synthetic_dataset(opts, out_root);
    return ok();
  });
}

int soilseg_split_ids(const int64_t* ids, size_t n, double ratio, uint64_t seed, int64_t* train_out,
                      size_t* n_train, int64_t* val_out, size_t* n_val) {
  if (ids == nullptr && n > 0) return null_arg("ids");
  if (train_out == nullptr || val_out == nullptr) return null_arg("output buffer");
  if (n_train == nullptr || n_val == nullptr) return null_arg("output count");
  return guarded([&] {
    const std::vector<std::int64_t> input(ids, ids + n);
    const auto [train, val] = soilseg::coco::split_dataset(input, {ratio, seed});
    std::copy(train.begin(), train.end(), train_out);
    std::copy(val.begin(), val.end(), val_out);
    *n_train = train.size();
    *n_val = val.size();
    return ok();
  });
}

int soilseg_lr_at_epoch(const char* train_config_json, int epoch, double* lr) {
  if (lr == nullptr) return null_arg("lr");
  return guarded([&] {
    json j = json::object();
    if (train_config_json != nullptr && *train_config_json != '\0') {
      try {
        j = json::parse(train_config_json);
      } catch (const json::exception& e) {
        return set_error(ErrorCode::kInvalidArgument, std::string("train config: ") + e.what());
      }
    }
    const auto cfg = soilseg::train::train_config_from_json(j);
    *lr = soilseg::train::lr_at_epoch(cfg, epoch);
    return ok();
  });
}

int soilseg_rpn_head_channels(int k, int* objectness_channels, int* regression_channels) {
  if (objectness_channels == nullptr || regression_channels == nullptr) return null_arg("output");
  return guarded([&] {
    const auto [obj, reg] = soilseg::model::rpn_head_channels(k);
    *objectness_channels = obj;
    *regression_channels = reg;
    return ok();
  });
}

int soilseg_model_load(const char* checkpoint, const char* device, soilseg_model** out) {
  if (checkpoint == nullptr) return null_arg("checkpoint");
  if (out == nullptr) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    auto handle = std::make_unique<soilseg_model>();
    const auto dev = soilseg::model::resolve_device(device != nullptr ? device : "");
    handle->model = soilseg::train::load_model(checkpoint, dev);
    *out = handle.release();
    return ok();
  });
}

int soilseg_model_predict(soilseg_model* model, const char* image_path, char** detections_json) {
  if (model == nullptr) return null_arg("model");
  if (image_path == nullptr) return null_arg("image_path");
  if (detections_json == nullptr) return null_arg("detections_json");
  return guarded([&] {
    const auto image = soilseg::read_image(image_path);
    const auto dets = soilseg::model::predict(*model->model, image);
    json arr = json::array();
    const double thr = model->model->config().mask_threshold;
    for (const auto& d : dets) {
      arr.push_back({{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                     {"score", d.score},
                     {"label", d.label},
                     {"mask_area", soilseg::post::binarize_mask(d.mask_prob, thr).count()}});
    }
    *detections_json = dup_string(arr.dump());
    return ok();
  });
}

int soilseg_model_segment(soilseg_model* model, const char* image_path, const char* out_dir, const char* stem,
                          char** meta_json) {
  if (model == nullptr) return null_arg("model");
  if (image_path == nullptr) return null_arg("image_path");
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded([&] {
    const auto image = soilseg::read_image(image_path);
    const auto& cfg = model->model->config();
    soilseg::post::PostprocessConfig pcfg;
    pcfg.score_threshold = cfg.score_threshold;
    pcfg.mask_threshold = cfg.mask_threshold;
    const auto artifact =
        soilseg::post::segment_detections(image, soilseg::model::predict(*model->model, image), pcfg);
    const std::string name =
        (stem != nullptr && *stem != '\0') ? std::string(stem) : std::filesystem::path(image_path).stem().string();
    soilseg::post::write_artifact(out_dir, name, artifact, {{"source", image_path}});
    if (meta_json != nullptr) *meta_json = dup_string(soilseg::post::artifact_meta(artifact).dump());
    return ok();
  });
}

void soilseg_model_free(soilseg_model* model) { delete model; }

}  // extern "C"
