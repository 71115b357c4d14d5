// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include <torch/torch.h>

#include "soilseg/model_core.hpp"

namespace soilseg::model {

/// Batch norm whose statistics and affine terms are either trainable or
/// frozen buffers (the usual setting when starting from pretrained weights).
class Norm2dImpl : public torch::nn::Module {
 public:
  Norm2dImpl(int64_t channels, bool frozen);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  bool frozen_;
  torch::Tensor weight_, bias_, running_mean_, running_var_;
};
TORCH_MODULE(Norm2d);

/// Feature extractor returning stride 4, 8, 16, 32 maps.
class BodyImpl : public torch::nn::Module {
 public:
  virtual std::vector<torch::Tensor> forward(torch::Tensor x) = 0;
  virtual std::vector<int64_t> out_channels() const = 0;
  /// Stops gradients into the stem and the first stage.
  virtual void freeze_stem() {}
};

class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const ModelConfig& cfg);

  /// Pyramid P2..P6 (strides 4 to 64), each with fpn_channels channels.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

  BodyImpl& body() { return *body_; }

 private:
  std::shared_ptr<BodyImpl> body_;
  torch::nn::ModuleList inner_blocks_{nullptr};
  torch::nn::ModuleList layer_blocks_{nullptr};
};

}  // namespace soilseg::model
