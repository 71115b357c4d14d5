// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest_torch.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "soilseg/coco_data.hpp"
#include "soilseg/commands.hpp"
#include "soilseg/maskrcnn.hpp"
#include "soilseg/training.hpp"
#include "test_util.hpp"

using namespace soilseg;
using soilseg::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Relative path -> contents, skipping the timestamped manifest.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == cmd::kManifestName) continue;
    out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

void make_synth(const fs::path& root, int n = 4, int size = 64) {
  const auto r = cmd::run_command("synth", {{"out", root.string()}, {"n_images", n}, {"image_size", size}});
  REQUIRE(r.status == ErrorCode::kOk);
}

/// Flat pool of `n` 8x8 images with one square annotation each.
void make_pool(const fs::path& dir, int n) {
  fs::create_directories(dir);
  json doc = {{"images", json::array()}, {"annotations", json::array()}, {"categories", {{{"id", 1}, {"name", "soil"}}}}};
  for (int i = 1; i <= n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.png", i);
    write_png(dir / name, RgbImage(8, 8, static_cast<std::uint8_t>(i)));
    doc["images"].push_back({{"id", i}, {"file_name", name}, {"width", 8}, {"height", 8}});
    doc["annotations"].push_back({{"id", i},
                                  {"image_id", i},
                                  {"category_id", 1},
                                  {"segmentation", {{1, 1, 6, 1, 6, 6, 1, 6}}},
                                  {"bbox", {1, 1, 5, 5}},
                                  {"area", 25},
                                  {"iscrowd", 0}});
  }
  std::ofstream(dir / "annotations.json") << doc.dump();
}

int exit_of(const cmd::CommandOutcome& r) { return r.result.at("exit_code").get<int>(); }

}  // namespace

TEST_SUITE("commands") {
  TEST_CASE("every outcome carries status, exit code and output arrays") {
    const auto r = cmd::run_command("nonsense", json::object());
    CHECK(r.status == ErrorCode::kInvalidArgument);
    CHECK(exit_of(r) == 64);
    CHECK(r.result["stdout"].is_array());
    CHECK(r.result["stderr"].is_array());
    CHECK(r.result.contains("error"));
  }

  TEST_CASE("exit codes by error family") {
    CHECK(cmd::exit_code_for(ErrorCode::kOk) == 0);
    CHECK(cmd::exit_code_for(ErrorCode::kInvalidArgument) == 64);
    CHECK(cmd::exit_code_for(ErrorCode::kConfigError) == 64);
    CHECK(cmd::exit_code_for(ErrorCode::kMissingFile) == 2);
    CHECK(cmd::exit_code_for(ErrorCode::kCorruptCheckpoint) == 2);
    CHECK(cmd::exit_code_for(ErrorCode::kWeightsUnavailable) == 2);
    CHECK(cmd::exit_code_for(ErrorCode::kValidationFailed) == 1);
    CHECK(cmd::exit_code_for(ErrorCode::kNonFiniteLoss) == 1);
    CHECK(cmd::exit_code_for(ErrorCode::kNoSoilDetected) == 1);
  }

  TEST_CASE("validate: clean, missing layout, bad polygon") {
    TempDir dir;
    make_synth(dir.path());
    const auto ok = cmd::run_command("validate", {{"root", dir.path().string()}});
    CHECK(ok.status == ErrorCode::kOk);
    CHECK(exit_of(ok) == 0);

    TempDir empty;
    CHECK(exit_of(cmd::run_command("validate", {{"root", empty.path().string()}})) == 2);

    auto ds = coco::load_coco_dataset(dir.path(), coco::Split::kTrain);
    ds.annotations[0].segmentation = {{1, 1, 9, 9}};
    coco::write_coco_annotations(ds, dir.path());
    const auto bad = cmd::run_command("validate", {{"root", dir.path().string()}});
    CHECK(bad.status == ErrorCode::kValidationFailed);
    CHECK(exit_of(bad) == 1);
    int violation_lines = 0;
    for (const auto& line : bad.result["stdout"]) {
      if (line.get<std::string>().find("polygon_vertices") != std::string::npos) ++violation_lines;
    }
    CHECK(violation_lines == 1);
  }

  TEST_CASE("split: 111 images become 78 and 33, reproducibly") {
    TempDir dir;
    make_pool(dir / "pool", 111);
    const auto a = cmd::run_command("split", {{"input", (dir / "pool").string()}, {"out", (dir / "a").string()}});
    REQUIRE(a.status == ErrorCode::kOk);
    auto count = [](const fs::path& d) {
      return std::distance(fs::directory_iterator(d), fs::directory_iterator{});
    };
    CHECK(count(dir / "a" / "train2017") == 78);
    CHECK(count(dir / "a" / "val2017") == 33);
    CHECK(cmd::run_command("validate", {{"root", (dir / "a").string()}}).status == ErrorCode::kOk);

    cmd::run_command("split", {{"input", (dir / "pool").string()}, {"out", (dir / "b").string()}});
    CHECK(tree(dir / "a") == tree(dir / "b"));

    const auto again = cmd::run_command("split", {{"input", (dir / "pool").string()}, {"out", (dir / "a").string()}});
    CHECK(again.status == ErrorCode::kIoError);
    const auto forced = cmd::run_command(
        "split", {{"input", (dir / "pool").string()}, {"out", (dir / "a").string()}, {"force", true}});
    CHECK(forced.status == ErrorCode::kOk);

    const auto bad_ratio = cmd::run_command(
        "split", {{"input", (dir / "pool").string()}, {"out", (dir / "c").string()}, {"ratio", 1.5}});
    CHECK(exit_of(bad_ratio) == 64);
  }

  TEST_CASE("train: snapshot of defaults, short compact run, missing root") {
    TempDir dir;
    make_synth(dir / "ds", 4, 64);

    // Default preset; the snapshot is written before the backbone is built.
    const auto paper = cmd::run_command("train", {{"root", (dir / "ds").string()},
                                                  {"out", (dir / "paper").string()},
                                                  {"model", {{"backbone_weights", (dir / "absent.pt").string()}}}});
    CHECK(paper.status == ErrorCode::kWeightsUnavailable);
    CHECK(exit_of(paper) == 2);
    const auto snapshot = read_json(dir / "paper" / "config.json");
    CHECK(snapshot["train"]["base_lr"] == 0.004);
    CHECK(snapshot["train"]["momentum"] == 0.9);
    CHECK(snapshot["train"]["weight_decay"] == 0.0001);
    CHECK(snapshot["train"]["batch_size"] == 3);
    CHECK(snapshot["train"]["epochs"] == 25);
    CHECK(snapshot["model"]["backbone"] == model::kBackboneResnet50Fpn);
    CHECK(fs::exists(dir / "paper" / cmd::kManifestName));

    const auto run = cmd::run_command("train", {{"root", (dir / "ds").string()},
                                                {"out", (dir / "run").string()},
                                                {"preset", "compact"},
                                                {"model", {{"min_size", 64}, {"max_size", 64}}},
                                                {"train", {{"epochs", 2}, {"decay_epochs", json::array()}}},
                                                {"eval_split", "none"},
                                                {"device", "cpu"}});
    REQUIRE(run.status == ErrorCode::kOk);
    CHECK(train::read_log_csv(dir / "run" / "log.csv").rows.size() == 2);
    const auto manifest = read_json(dir / "run" / cmd::kManifestName);
    CHECK(manifest["subcommand"] == "train");
    CHECK(manifest.contains("tool_version"));
    CHECK(manifest.contains("timestamp"));

    const auto missing = cmd::run_command("train", {{"root", (dir / "nowhere").string()},
                                                    {"out", (dir / "x").string()},
                                                    {"preset", "compact"}});
    CHECK(exit_of(missing) == 2);
  }

  TEST_CASE("eval from prediction files: oracle and empty") {
    TempDir dir;
    make_synth(dir / "ds", 3, 64);
    const auto ds = coco::load_coco_dataset(dir / "ds", coco::Split::kVal);
    json perfect = json::array();
    for (const auto& ann : ds.annotations) {
      perfect.push_back({{"image_id", ann.image_id}, {"score", 1.0}, {"segmentation", ann.segmentation}});
    }
    std::ofstream(dir / "perfect.json") << perfect.dump();
    std::ofstream(dir / "empty.json") << "[]";

    const auto a = cmd::run_command("eval", {{"root", (dir / "ds").string()},
                                             {"predictions", (dir / "perfect.json").string()},
                                             {"out", (dir / "ea").string()}});
    REQUIRE(a.status == ErrorCode::kOk);
    CHECK(a.result["stdout"][0] == "segm_mAP@0.5=1.0000");
    CHECK(read_json(dir / "ea" / "eval_report.json")["ap50"] == 1.0);

    const auto b = cmd::run_command("eval", {{"root", (dir / "ds").string()},
                                             {"predictions", (dir / "empty.json").string()},
                                             {"out", (dir / "eb").string()}});
    REQUIRE(b.status == ErrorCode::kOk);
    CHECK(b.result["stdout"][0] == "segm_mAP@0.5=0.0000");
    CHECK(read_json(dir / "eb" / "eval_report.json")["ap50"] == 0.0);

    const auto both = cmd::run_command("eval", {{"root", (dir / "ds").string()}});
    CHECK(exit_of(both) == 64);
  }

  TEST_CASE("bench: exact run count and four-decimal median") {
    TempDir dir;
    auto cfg = model::ModelConfig::compact();
    cfg.min_size = cfg.max_size = 64;
    auto m = model::build_model(cfg, 0);
    train::CheckpointMeta meta;
    meta.epoch = 0;
    meta.model = cfg;
    train::save_checkpoint(dir / "m.bin", *m, nullptr, meta);
    write_png(dir / "img.png", RgbImage(64, 64, 90));

    const auto r = cmd::run_command("bench", {{"checkpoint", (dir / "m.bin").string()},
                                              {"image", (dir / "img.png").string()},
                                              {"runs", 3},
                                              {"warmup", 0},
                                              {"out", (dir / "bench").string()},
                                              {"device", "cpu"}});
    REQUIRE(r.status == ErrorCode::kOk);
    const auto timing = read_json(dir / "bench" / "timing.json");
    CHECK(timing["per_run_seconds"].size() == 3);
    CHECK(timing["measured_runs"] == 3);
    CHECK(timing["warmup_runs"] == 0);
    const std::string first = r.result["stdout"][0];
    char median[32];
    std::snprintf(median, sizeof(median), "%.4f", timing["median_seconds"].get<double>());
    CHECK(first.rfind(std::string("median_seconds=") + median, 0) == 0);
  }

  TEST_CASE("plot writes the three charts") {
    TempDir dir;
    {
      std::ofstream out(dir / "log.csv");
      out << train::kLogCsvHeader << "\n0,0.004,1.5,0.5,0.6,0.4,0.3,2\n1,0.004,1.0,0.3,0.4,0.3,0.5,2\n";
    }
    const auto r = cmd::run_command("plot", {{"log_csv", (dir / "log.csv").string()}, {"out", (dir / "p").string()}});
    REQUIRE(r.status == ErrorCode::kOk);
    CHECK(r.result["written"].size() == 3);
    CHECK(exit_of(cmd::run_command("plot", {{"log_csv", (dir / "none.csv").string()}, {"out", "p"}})) == 2);
  }
}
