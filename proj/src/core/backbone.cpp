// Copyright 2026 The soilseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "backbone.hpp"

namespace soilseg::model {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

Norm2dImpl::Norm2dImpl(int64_t channels, bool frozen) : frozen_(frozen) {
  if (frozen_) {
    weight_ = register_buffer("weight", torch::ones({channels}));
    bias_ = register_buffer("bias", torch::zeros({channels}));
  } else {
    weight_ = register_parameter("weight", torch::ones({channels}));
    bias_ = register_parameter("bias", torch::zeros({channels}));
  }
  running_mean_ = register_buffer("running_mean", torch::zeros({channels}));
  running_var_ = register_buffer("running_var", torch::ones({channels}));
}

torch::Tensor Norm2dImpl::forward(const torch::Tensor& x) {
  if (frozen_) {
    auto scale = weight_ * (running_var_ + 1e-5).rsqrt();
    auto shift = bias_ - running_mean_ * scale;
    return x * scale.view({1, -1, 1, 1}).to(x.scalar_type()) +
           shift.view({1, -1, 1, 1}).to(x.scalar_type());
  }
  return torch::batch_norm(x, weight_, bias_, running_mean_, running_var_, is_training(), 0.1, 1e-5,
                           /*cudnn_enabled=*/true);
}

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1, int64_t pad = 0,
                bool bias = false) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(bias));
}

void kaiming_fan_out(nn::Module& root) {
  for (auto& m : root.modules(/*include_self=*/false)) {
    if (auto* c = m->as<nn::Conv2d>()) {
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
      if (c->bias.defined()) nn::init::zeros_(c->bias);
    }
  }
}

// ResNet bottleneck with the stride on the 3x3 convolution.
class BottleneckImpl : public nn::Module {
 public:
  BottleneckImpl(int64_t in, int64_t width, int64_t stride, bool frozen_bn) {
    const int64_t out = width * 4;
    conv1_ = register_module("conv1", conv(in, width, 1));
    bn1_ = register_module("bn1", Norm2d(width, frozen_bn));
    conv2_ = register_module("conv2", conv(width, width, 3, stride, 1));
    bn2_ = register_module("bn2", Norm2d(width, frozen_bn));
    conv3_ = register_module("conv3", conv(width, out, 1));
    bn3_ = register_module("bn3", Norm2d(out, frozen_bn));
    if (stride != 1 || in != out) {
      downsample_ = register_module("downsample",
                                    nn::Sequential(conv(in, out, 1, stride), Norm2d(out, frozen_bn)));
    }
  }

  torch::Tensor forward(torch::Tensor x) {
    auto y = torch::relu(bn1_(conv1_(x)));
    y = torch::relu(bn2_(conv2_(y)));
    y = bn3_(conv3_(y));
    auto identity = downsample_ ? downsample_->forward(x) : x;
    return torch::relu(y + identity);
  }

 private:
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  Norm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
  nn::Sequential downsample_{nullptr};
};
TORCH_MODULE(Bottleneck);

class ResNet50Body : public BodyImpl {
 public:
  explicit ResNet50Body(bool frozen_bn) {
    conv1_ = register_module("conv1", conv(3, 64, 7, 2, 3));
    bn1_ = register_module("bn1", Norm2d(64, frozen_bn));
    int64_t in = 64;
    const int blocks[4] = {3, 4, 6, 3};
    const int64_t widths[4] = {64, 128, 256, 512};
    for (int l = 0; l < 4; ++l) {
      nn::Sequential layer;
      for (int b = 0; b < blocks[l]; ++b) {
        const int64_t stride = (b == 0 && l > 0) ? 2 : 1;
        layer->push_back(Bottleneck(in, widths[l], stride, frozen_bn));
        in = widths[l] * 4;
      }
      layers_[l] = register_module("layer" + std::to_string(l + 1), layer);
    }
    kaiming_fan_out(*this);
  }

  std::vector<torch::Tensor> forward(torch::Tensor x) override {
    x = torch::relu(bn1_(conv1_(x)));
    x = F::max_pool2d(x, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
    std::vector<torch::Tensor> out;
    for (auto& layer : layers_) {
      x = layer->forward(x);
      out.push_back(x);
    }
    return out;
  }

  std::vector<int64_t> out_channels() const override { return {256, 512, 1024, 2048}; }

  void freeze_stem() override {
    for (auto& p : conv1_->parameters()) p.set_requires_grad(false);
    for (auto& p : bn1_->parameters()) p.set_requires_grad(false);
    for (auto& p : layers_[0]->parameters()) p.set_requires_grad(false);
  }

 private:
  nn::Conv2d conv1_{nullptr};
  Norm2d bn1_{nullptr};
  nn::Sequential layers_[4] = {nullptr, nullptr, nullptr, nullptr};
};

// Five conv-norm-relu pairs, each halving resolution.
class CompactBody : public BodyImpl {
 public:
  CompactBody() {
    const int64_t channels[6] = {3, 16, 32, 64, 96, 128};
    for (int s = 0; s < 5; ++s) {
      const int64_t in = channels[s], out = channels[s + 1];
      nn::Sequential stage(conv(in, out, 3, 2, 1), Norm2d(out, false), nn::ReLU(),
                           conv(out, out, 3, 1, 1), Norm2d(out, false), nn::ReLU());
      stages_[s] = register_module(s == 0 ? "stem" : "stage" + std::to_string(s), stage);
    }
    // Convolutions keep the framework's default (uniform, fan-in scaled) init.
  }

  std::vector<torch::Tensor> forward(torch::Tensor x) override {
    x = stages_[0]->forward(x);
    std::vector<torch::Tensor> out;
    for (int s = 1; s < 5; ++s) {
      x = stages_[s]->forward(x);
      out.push_back(x);
    }
    return out;
  }

  std::vector<int64_t> out_channels() const override { return {32, 64, 96, 128}; }

  void freeze_stem() override {
    for (auto& p : stages_[0]->parameters()) p.set_requires_grad(false);
  }

 private:
  nn::Sequential stages_[5] = {nullptr, nullptr, nullptr, nullptr, nullptr};
};

}  // namespace

BackboneImpl::BackboneImpl(const ModelConfig& cfg) {
  if (cfg.backbone == kBackboneResnet50Fpn) {
    body_ = register_module("body", std::make_shared<ResNet50Body>(cfg.pretrained_backbone));
  } else {
    body_ = register_module("body", std::make_shared<CompactBody>());
  }
  // Names mirror torchvision ("fpn.inner_blocks.0.0.weight") for weight import.
  auto fpn = register_module("fpn", std::make_shared<nn::Module>());
  inner_blocks_ = fpn->register_module("inner_blocks", nn::ModuleList());
  layer_blocks_ = fpn->register_module("layer_blocks", nn::ModuleList());
  const int64_t c = cfg.fpn_channels;
  for (int64_t in : body_->out_channels()) {
    auto inner = conv(in, c, 1, 1, 0, true);
    auto layer = conv(c, c, 3, 1, 1, true);
    for (auto* m : {&inner, &layer}) {
      nn::init::kaiming_uniform_((*m)->weight, 1.0);
      nn::init::zeros_((*m)->bias);
    }
    inner_blocks_->push_back(nn::Sequential(inner));
    layer_blocks_->push_back(nn::Sequential(layer));
  }
}

std::vector<torch::Tensor> BackboneImpl::forward(const torch::Tensor& x) {
  auto feats = body_->forward(x);
  const auto n = static_cast<int64_t>(feats.size());
  std::vector<torch::Tensor> results(static_cast<std::size_t>(n));
  auto last_inner = inner_blocks_[n - 1]->as<nn::Sequential>()->forward(feats[n - 1]);
  results[n - 1] = layer_blocks_[n - 1]->as<nn::Sequential>()->forward(last_inner);
  for (int64_t i = n - 2; i >= 0; --i) {
    auto lateral = inner_blocks_[i]->as<nn::Sequential>()->forward(feats[i]);
    auto top_down = F::interpolate(
        last_inner, F::InterpolateFuncOptions()
                        .size(std::vector<int64_t>{lateral.size(2), lateral.size(3)})
                        .mode(torch::kNearest));
    last_inner = lateral + top_down;
    results[i] = layer_blocks_[i]->as<nn::Sequential>()->forward(last_inner);
  }
  results.push_back(F::max_pool2d(results.back(), F::MaxPool2dFuncOptions(1).stride(2)));
  return results;
}

}  // namespace soilseg::model
