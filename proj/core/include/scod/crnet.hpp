#pragma once

// Contrast-and-relation network.
//
//   image -> ResNet bottleneck backbone -> f1 (/4), f2 (/8), f3 (/16), f4 (/32)
//   F_c^0 = LCC(f1), F_c^1 = LCC(f2)        local-context contrast path
//   F_s^0 = LSR(f3), F_s^1 = LSR(f4)        semantic relation path
//   F_s^g = AGE(f4)                          pyramid-pooled global context
//   F_l^1 = fuse(F_s^1, F_s^g)   F_l^0 = fuse(F_s^0, up(F_s^1))
//   F_out^0 = fuse(F_c^0, up(F_l^0))   F_out^1 = fuse(F_c^1, up(F_l^1))
//   feature = fuse(F_out^0, up(F_out^1))     64 channels at stride 4
//   out0 = 3x3 head(feature); out1..out4 = 1x1 heads on F_c^0, F_c^1, F_l^0, F_l^1
//
// Every output is resized to the input resolution and passed through a
// sigmoid. Inputs are RGB in [0, 1]; ImageNet normalization happens inside.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace scod {

struct CRNetConfig {
  std::int64_t depth = 50;  // 50, 101 or 152
  std::filesystem::path pretrained_path;
  std::int64_t decoder_channels = 64;
  std::vector<std::int64_t> lce_dilations{4, 8};
  std::int64_t input_size = 320;
  std::uint64_t seed = 0;
  // Ablation switches; a disabled block is replaced by 1x1 conv + BN + ReLU.
  bool use_age = true;
  bool use_lcc = true;
  bool use_lsr = true;
  bool normalize_input = true;

  /// Throws ValidationError on unsupported depth or non-positive widths.
  void validate() const;
};

enum class Activation { kNone, kReLU, kGELU, kSwish };

torch::Tensor activate(const torch::Tensor& x, Activation act);

/// Batch norm that falls back to running statistics when a training batch
/// has a single value per channel (e.g. 1x1 pooled maps with batch size 1).
class SafeBatchNorm2dImpl : public torch::nn::Module {
 public:
  explicit SafeBatchNorm2dImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(SafeBatchNorm2d);

struct ConvSpec {
  std::int64_t in = 0;
  std::int64_t out = 0;
  std::int64_t kernel = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t stride = 1;
  Activation act = Activation::kReLU;
};

/// conv (no bias) -> BN -> activation
class ConvBnActImpl : public torch::nn::Module {
 public:
  explicit ConvBnActImpl(const ConvSpec& spec);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  SafeBatchNorm2d bn{nullptr};
  Activation act;
};
TORCH_MODULE(ConvBnAct);

// --- backbone ------------------------------------------------------------------

class BottleneckImpl : public torch::nn::Module {
 public:
  static constexpr std::int64_t kExpansion = 4;
  BottleneckImpl(std::int64_t in, std::int64_t planes, std::int64_t stride);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

struct BackboneFeatures {
  torch::Tensor f1, f2, f3, f4;
};

/// Parameter names follow the torchvision layout (conv1, bn1, layer1.0.conv1, ...).
class ResNetBackboneImpl : public torch::nn::Module {
 public:
  explicit ResNetBackboneImpl(std::int64_t depth);
  BackboneFeatures forward(const torch::Tensor& x);

  static std::array<std::int64_t, 4> stage_channels() { return {256, 512, 1024, 2048}; }

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr};
  torch::nn::Sequential layer1{nullptr}, layer2{nullptr}, layer3{nullptr}, layer4{nullptr};
};
TORCH_MODULE(ResNetBackbone);

// --- decoder blocks --------------------------------------------------------------

/// Coordinate-attention style extractor: pooled H and W descriptors share a
/// 1x1 conv + BN + Swish, then gate the input through per-axis sigmoids.
class LFEImpl : public torch::nn::Module {
 public:
  explicit LFEImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  ConvBnAct shared{nullptr};
  torch::nn::Conv2d gate_h{nullptr}, gate_w{nullptr};
};
TORCH_MODULE(LFE);

/// relu(bn(LFE(local 3x3) - LFE(context 3x3, dilation d)))
class LCEImpl : public torch::nn::Module {
 public:
  LCEImpl(std::int64_t channels, std::int64_t dilation);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d local{nullptr}, context{nullptr};
  LFE local_lfe{nullptr}, context_lfe{nullptr};
  SafeBatchNorm2d bn{nullptr};
};
TORCH_MODULE(LCE);

/// 1x1 reduction to `channels`, then one LCE per dilation, concatenated.
class LCCImpl : public torch::nn::Module {
 public:
  LCCImpl(std::int64_t in, std::int64_t channels, const std::vector<std::int64_t>& dilations);
  torch::Tensor forward(const torch::Tensor& x);
  std::int64_t out_channels() const { return out_channels_; }

  ConvBnAct reduce{nullptr};
  torch::nn::ModuleList extractors{nullptr};

 private:
  std::int64_t out_channels_;
};
TORCH_MODULE(LCC);

/// Four dilated branches (1x1; 1x1-7x7-3x3d7; 1x1-7x7-7x7-3x3d7 twice),
/// concatenated, fused by 3x3 conv + BN, plus a 1x1 residual, then GELU.
class LSRImpl : public torch::nn::Module {
 public:
  LSRImpl(std::int64_t in, std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::ModuleList branches{nullptr};
  ConvBnAct fuse{nullptr};
  torch::nn::Conv2d residual{nullptr};
};
TORCH_MODULE(LSR);

/// Pyramid pooling over 1/2/3/6 bins with GELU activations.
class AGEImpl : public torch::nn::Module {
 public:
  AGEImpl(std::int64_t in, std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  static constexpr std::array<std::int64_t, 4> kBins{1, 2, 3, 6};
  torch::nn::ModuleList levels{nullptr};
  ConvBnAct project{nullptr};
};
TORCH_MODULE(AGE);

struct NetworkOutputs {
  /// out0..out4, each [B, 1, H, W] probabilities at input resolution.
  std::array<torch::Tensor, 5> outputs;
  /// Pre-prediction feature map [B, C, H, W] at input resolution.
  torch::Tensor feature;

  const torch::Tensor& main() const { return outputs[0]; }
};

class CRNetImpl : public torch::nn::Module {
 public:
  explicit CRNetImpl(const CRNetConfig& config);

  /// image [B, 3, H, W] in [0, 1]. Throws ValidationError for sides < 32.
  NetworkOutputs forward(const torch::Tensor& image);
  BackboneFeatures backbone_features(const torch::Tensor& image);

  const CRNetConfig& config() const { return config_; }

  ResNetBackbone backbone{nullptr};
  torch::nn::AnyModule contrast0, contrast1, relation0, relation1;
  AGE global{nullptr};
  ConvBnAct fuse_l1{nullptr}, fuse_l0{nullptr}, fuse_out0{nullptr}, fuse_out1{nullptr},
      fuse_feature{nullptr};
  torch::nn::Conv2d head0{nullptr};
  std::array<torch::nn::Conv2d, 4> aux_heads{nullptr, nullptr, nullptr, nullptr};

 private:
  CRNetConfig config_;
};
TORCH_MODULE(CRNet);

/// Deterministic initialization from config.seed: Kaiming-normal (fan-out)
/// convolutions, zero biases, identity batch norms. When pretrained_path is
/// set, backbone tensors are then loaded from that checkpoint.
/// Returns the names of backbone tensors missing from the checkpoint.
std::vector<std::string> init_weights(CRNet& net);

/// Builds and initializes a network.
CRNet make_crnet(const CRNetConfig& config);

}  // namespace scod
