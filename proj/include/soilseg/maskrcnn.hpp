// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

// Mask R-CNN on libtorch: FPN backbone, RPN with 2k/4k heads, ROI Align
// box and mask branches.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "soilseg/image.hpp"
#include "soilseg/model_core.hpp"

namespace soilseg::model {

/// Ground truth for one training image; coordinates in image pixels.
struct TrainTarget {
  torch::Tensor boxes;   // float [N, 4]
  torch::Tensor labels;  // int64 [N]
  torch::Tensor masks;   // uint8 [N, H, W]
};

/// Individual loss tensors of one forward pass.
struct LossTensors {
  torch::Tensor rpn_objectness;
  torch::Tensor rpn_box;
  torch::Tensor classifier;
  torch::Tensor box_reg;
  torch::Tensor mask;

  torch::Tensor total() const { return rpn_objectness + rpn_box + classifier + box_reg + mask; }
  LossBreakdown breakdown() const;
};

/// Raw RPN head output for one pyramid level.
struct RpnHeadOutput {
  torch::Tensor objectness;  // [N, 2k, H, W]
  torch::Tensor box_deltas;  // [N, 4k, H, W]
};

/// Normalization + resize + batching of input images.
struct ImageBatch {
  torch::Tensor tensors;                              // [B, 3, Hp, Wp], padded
  std::vector<std::pair<int64_t, int64_t>> sizes;     // resized (h, w) per image
  std::vector<std::pair<int64_t, int64_t>> original;  // original (h, w)
};

class BackboneImpl;
class RpnImpl;
class RoiHeadsImpl;

class MaskRcnnImpl : public torch::nn::Module {
 public:
  explicit MaskRcnnImpl(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  /// Training-mode forward; images are float [3, H, W] in [0, 1].
  LossTensors forward_train(const std::vector<torch::Tensor>& images,
                            std::vector<TrainTarget> targets);

  /// Inference-mode forward; detections with score >= min_score, sorted by
  /// descending score, masks pasted at original resolution.
  std::vector<std::vector<DetectionResult>> detect(const std::vector<torch::Tensor>& images,
                                                   double min_score);

  /// RPN head applied to the pyramid of a batch (exposes the 2k / 4k layout).
  std::vector<RpnHeadOutput> rpn_head_outputs(const std::vector<torch::Tensor>& images);

  /// Copies backbone tensors from a state dict; returns the number loaded.
  int load_backbone_state(const c10::Dict<c10::IValue, c10::IValue>& state);

  /// Freezes the stem and first stage when starting from pretrained weights.
  void freeze_pretrained_stem();

  /// Parameters and buffers of the backbone, keyed by qualified name.
  std::vector<std::pair<std::string, torch::Tensor>> backbone_tensors() const;

 private:
  ImageBatch transform(const std::vector<torch::Tensor>& images,
                       std::vector<TrainTarget>* targets) const;

  ModelConfig cfg_;
  std::shared_ptr<BackboneImpl> backbone_;
  std::shared_ptr<RpnImpl> rpn_;
  std::shared_ptr<RoiHeadsImpl> roi_heads_;
};
TORCH_MODULE(MaskRcnn);

/// Trainable model plus the device it lives on.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  MaskRcnn& net() { return net_; }
  const MaskRcnn& net() const { return net_; }
  const ModelConfig& config() const { return net_->config(); }
  torch::Device device() const { return device_; }
  void to(torch::Device device);
  void set_training(bool on) { net_->train(on); }

 private:
  MaskRcnn net_;
  torch::Device device_{torch::kCPU};
};

/// Device named by `spec` ("cpu", "cuda", "cuda:N"); empty uses SOILSEG_DEVICE,
/// then CUDA when available, else CPU.
torch::Device resolve_device(const std::string& spec);
std::string describe_device(const torch::Device& device);

/// Validates `cfg`, seeds weight init with `seed` and loads pretrained backbone
/// weights when requested. Throws kConfigError or kWeightsUnavailable.
std::unique_ptr<Model> build_model(const ModelConfig& cfg, std::uint64_t seed = 0);

/// Reads a pickled dict of tensors (torch.save of a plain dict).
c10::Dict<c10::IValue, c10::IValue> read_state_dict(const std::filesystem::path& path);

torch::Tensor image_to_tensor(const RgbImage& image);

struct PredictOptions {
  /// Detections below this score are dropped; negative uses the model's box_score_thresh.
  double min_score = -1.0;
};

/// Inference on one image; detections sorted by descending score.
std::vector<DetectionResult> predict(Model& model, const RgbImage& image,
                                     const PredictOptions& opts = {});

}  // namespace soilseg::model
