#include "scod/crnet.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "scod/checkpoint.hpp"
#include "scod/errors.hpp"
#include "scod/rng.hpp"

namespace scod {

namespace F = torch::nn::functional;

namespace {

torch::Tensor resize_to(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor resize_like(const torch::Tensor& x, const torch::Tensor& ref) {
  return resize_to(x, ref.size(2), ref.size(3));
}

torch::nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t pad = 0,
                       std::int64_t dilation = 1, std::int64_t stride = 1, bool bias = false) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k)
                               .padding(pad)
                               .dilation(dilation)
                               .stride(stride)
                               .bias(bias));
}

std::array<std::int64_t, 4> stage_blocks(std::int64_t depth) {
  switch (depth) {
    case 50: return {3, 4, 6, 3};
    case 101: return {3, 4, 23, 3};
    case 152: return {3, 8, 36, 3};
    default: throw ValidationError("unsupported backbone depth (use 50, 101 or 152)");
  }
}

}  // namespace

void CRNetConfig::validate() const {
  stage_blocks(depth);
  if (decoder_channels < 1) throw ValidationError("decoder channels must be positive");
  if (lce_dilations.empty()) throw ValidationError("at least one LCE dilation is required");
  for (auto d : lce_dilations) {
    if (d < 1) throw ValidationError("LCE dilations must be positive");
  }
  if (input_size < 32) throw ValidationError("input size must be at least 32");
}

torch::Tensor activate(const torch::Tensor& x, Activation act) {
  switch (act) {
    case Activation::kReLU: return torch::relu(x);
    case Activation::kGELU: return torch::gelu(x);
    case Activation::kSwish: return torch::silu(x);
    case Activation::kNone: break;
  }
  return x;
}

SafeBatchNorm2dImpl::SafeBatchNorm2dImpl(std::int64_t channels)
    : bn(register_module("bn", torch::nn::BatchNorm2d(channels))) {}

torch::Tensor SafeBatchNorm2dImpl::forward(const torch::Tensor& x) {
  if (is_training() && x.size(0) * x.size(2) * x.size(3) == 1) {
    return F::batch_norm(x, bn->running_mean, bn->running_var,
                         F::BatchNormFuncOptions()
                             .weight(bn->weight)
                             .bias(bn->bias)
                             .training(false)
                             .eps(bn->options.eps()));
  }
  return bn->forward(x);
}

ConvBnActImpl::ConvBnActImpl(const ConvSpec& spec)
    : conv(register_module("conv", scod::conv(spec.in, spec.out, spec.kernel, spec.padding,
                                              spec.dilation, spec.stride))),
      bn(register_module("bn", SafeBatchNorm2d(spec.out))),
      act(spec.act) {}

torch::Tensor ConvBnActImpl::forward(const torch::Tensor& x) {
  return activate(bn->forward(conv->forward(x)), act);
}

// --- backbone ----------------------------------------------------------------------

BottleneckImpl::BottleneckImpl(std::int64_t in, std::int64_t planes, std::int64_t stride)
    : conv1(register_module("conv1", conv(in, planes, 1))),
      conv2(register_module("conv2", conv(planes, planes, 3, 1, 1, stride))),
      conv3(register_module("conv3", conv(planes, planes * kExpansion, 1))),
      bn1(register_module("bn1", torch::nn::BatchNorm2d(planes))),
      bn2(register_module("bn2", torch::nn::BatchNorm2d(planes))),
      bn3(register_module("bn3", torch::nn::BatchNorm2d(planes * kExpansion))) {
  if (stride != 1 || in != planes * kExpansion) {
    downsample = register_module(
        "downsample", torch::nn::Sequential(conv(in, planes * kExpansion, 1, 0, 1, stride),
                                            torch::nn::BatchNorm2d(planes * kExpansion)));
  }
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto out = torch::relu(bn1->forward(conv1->forward(x)));
  out = torch::relu(bn2->forward(conv2->forward(out)));
  out = bn3->forward(conv3->forward(out));
  auto identity = downsample ? downsample->forward(x) : x;
  return torch::relu(out + identity);
}

ResNetBackboneImpl::ResNetBackboneImpl(std::int64_t depth)
    : conv1(register_module("conv1", conv(3, 64, 7, 3, 1, 2))),
      bn1(register_module("bn1", torch::nn::BatchNorm2d(64))) {
  const auto blocks = stage_blocks(depth);
  std::int64_t in = 64;
  auto make_stage = [&](std::int64_t planes, std::int64_t count, std::int64_t stride) {
    torch::nn::Sequential stage;
    for (std::int64_t i = 0; i < count; ++i) {
      stage->push_back(Bottleneck(in, planes, i == 0 ? stride : 1));
      in = planes * BottleneckImpl::kExpansion;
    }
    return stage;
  };
  layer1 = register_module("layer1", make_stage(64, blocks[0], 1));
  layer2 = register_module("layer2", make_stage(128, blocks[1], 2));
  layer3 = register_module("layer3", make_stage(256, blocks[2], 2));
  layer4 = register_module("layer4", make_stage(512, blocks[3], 2));
}

BackboneFeatures ResNetBackboneImpl::forward(const torch::Tensor& x) {
  auto stem = torch::relu(bn1->forward(conv1->forward(x)));
  stem = F::max_pool2d(stem, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
  BackboneFeatures f;
  f.f1 = layer1->forward(stem);
  f.f2 = layer2->forward(f.f1);
  f.f3 = layer3->forward(f.f2);
  f.f4 = layer4->forward(f.f3);
  return f;
}

// --- decoder blocks ------------------------------------------------------------------

LFEImpl::LFEImpl(std::int64_t channels) {
  const auto mid = std::max<std::int64_t>(8, channels / 32);
  shared = register_module("shared", ConvBnAct(ConvSpec{channels, mid, 1, 0, 1, 1, Activation::kSwish}));
  gate_h = register_module("gate_h", conv(mid, channels, 1, 0, 1, 1, true));
  gate_w = register_module("gate_w", conv(mid, channels, 1, 0, 1, 1, true));
}

torch::Tensor LFEImpl::forward(const torch::Tensor& x) {
  const auto h = x.size(2);
  const auto w = x.size(3);
  auto pooled_h = x.mean(3, true);                      // [B, C, H, 1]
  auto pooled_w = x.mean(2, true).permute({0, 1, 3, 2});  // [B, C, W, 1]
  auto mid = shared->forward(torch::cat({pooled_h, pooled_w}, 2));
  auto parts = torch::split_with_sizes(mid, {h, w}, 2);
  auto a_h = torch::sigmoid(gate_h->forward(parts[0]));
  auto a_w = torch::sigmoid(gate_w->forward(parts[1].permute({0, 1, 3, 2})));
  return x * a_h * a_w;
}

LCEImpl::LCEImpl(std::int64_t channels, std::int64_t dilation)
    : local(register_module("local", conv(channels, channels, 3, 1, 1, 1, true))),
      context(register_module("context", conv(channels, channels, 3, dilation, dilation, 1, true))),
      local_lfe(register_module("local_lfe", LFE(channels))),
      context_lfe(register_module("context_lfe", LFE(channels))),
      bn(register_module("bn", SafeBatchNorm2d(channels))) {}

torch::Tensor LCEImpl::forward(const torch::Tensor& x) {
  auto f_local = local_lfe->forward(local->forward(x));
  auto f_context = context_lfe->forward(context->forward(x));
  return torch::relu(bn->forward(f_local - f_context));
}

LCCImpl::LCCImpl(std::int64_t in, std::int64_t channels, const std::vector<std::int64_t>& dilations)
    : reduce(register_module("reduce", ConvBnAct(ConvSpec{in, channels, 1}))),
      extractors(register_module("extractors", torch::nn::ModuleList())),
      out_channels_(channels * static_cast<std::int64_t>(dilations.size())) {
  for (auto d : dilations) extractors->push_back(LCE(channels, d));
}

torch::Tensor LCCImpl::forward(const torch::Tensor& x) {
  auto low = reduce->forward(x);
  std::vector<torch::Tensor> parts;
  for (const auto& m : *extractors) parts.push_back(m->as<LCEImpl>()->forward(low));
  return torch::cat(parts, 1);
}

LSRImpl::LSRImpl(std::int64_t in, std::int64_t channels)
    : branches(register_module("branches", torch::nn::ModuleList())) {
  const auto c = channels;
  const auto gelu = Activation::kGELU;
  const auto none = Activation::kNone;
  auto seq = [](std::initializer_list<ConvSpec> specs) {
    torch::nn::Sequential s;
    for (const auto& spec : specs) s->push_back(ConvBnAct(spec));
    return s;
  };
  branches->push_back(seq({{in, c, 1, 0, 1, 1, none}}));
  branches->push_back(seq({{in, c, 1, 0, 1, 1, gelu}, {c, c, 7, 3, 1, 1, gelu}, {c, c, 3, 7, 7, 1, none}}));
  for (int i = 0; i < 2; ++i) {
    branches->push_back(seq({{in, c, 1, 0, 1, 1, gelu},
                             {c, c, 7, 3, 1, 1, gelu},
                             {c, c, 7, 3, 1, 1, gelu},
                             {c, c, 3, 7, 7, 1, none}}));
  }
  fuse = register_module("fuse", ConvBnAct(ConvSpec{4 * c, c, 3, 1, 1, 1, none}));
  residual = register_module("residual", conv(in, c, 1, 0, 1, 1, true));
}

torch::Tensor LSRImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> parts;
  for (const auto& m : *branches) parts.push_back(m->as<torch::nn::SequentialImpl>()->forward(x));
  return torch::gelu(fuse->forward(torch::cat(parts, 1)) + residual->forward(x));
}

AGEImpl::AGEImpl(std::int64_t in, std::int64_t channels)
    : levels(register_module("levels", torch::nn::ModuleList())) {
  const auto reduced = std::max<std::int64_t>(1, in / 4);
  for (std::size_t i = 0; i < kBins.size(); ++i) {
    levels->push_back(ConvBnAct(ConvSpec{in, reduced, 1, 0, 1, 1, Activation::kGELU}));
  }
  project = register_module(
      "project", ConvBnAct(ConvSpec{in + 4 * reduced, channels, 1, 0, 1, 1, Activation::kGELU}));
}

torch::Tensor AGEImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> parts{x};
  for (std::size_t i = 0; i < kBins.size(); ++i) {
    auto pooled = F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions(kBins[i]));
    auto level = levels[i]->as<ConvBnActImpl>()->forward(pooled);
    parts.push_back(resize_like(level, x));
  }
  return project->forward(torch::cat(parts, 1));
}

// --- network ----------------------------------------------------------------------------

CRNetImpl::CRNetImpl(const CRNetConfig& config) : config_(config) {
  config_.validate();
  const auto c = config_.decoder_channels;
  const auto stages = ResNetBackboneImpl::stage_channels();
  backbone = register_module("backbone", ResNetBackbone(config_.depth));

  std::int64_t c0 = c;
  std::int64_t c1 = c;
  if (config_.use_lcc) {
    LCC l0(stages[0], c, config_.lce_dilations);
    LCC l1(stages[1], c, config_.lce_dilations);
    c0 = l0->out_channels();
    c1 = l1->out_channels();
    contrast0 = torch::nn::AnyModule(l0);
    contrast1 = torch::nn::AnyModule(l1);
  } else {
    contrast0 = torch::nn::AnyModule(ConvBnAct(ConvSpec{stages[0], c, 1}));
    contrast1 = torch::nn::AnyModule(ConvBnAct(ConvSpec{stages[1], c, 1}));
  }
  register_module("contrast0", contrast0.ptr());
  register_module("contrast1", contrast1.ptr());

  if (config_.use_lsr) {
    relation0 = torch::nn::AnyModule(LSR(stages[2], c));
    relation1 = torch::nn::AnyModule(LSR(stages[3], c));
  } else {
    relation0 = torch::nn::AnyModule(ConvBnAct(ConvSpec{stages[2], c, 1}));
    relation1 = torch::nn::AnyModule(ConvBnAct(ConvSpec{stages[3], c, 1}));
  }
  register_module("relation0", relation0.ptr());
  register_module("relation1", relation1.ptr());

  if (config_.use_age) global = register_module("global", AGE(stages[3], c));

  fuse_l1 = register_module("fuse_l1", ConvBnAct(ConvSpec{config_.use_age ? 2 * c : c, c, 1}));
  fuse_l0 = register_module("fuse_l0", ConvBnAct(ConvSpec{2 * c, c, 1}));
  fuse_out0 = register_module("fuse_out0", ConvBnAct(ConvSpec{c0 + c, c, 1}));
  fuse_out1 = register_module("fuse_out1", ConvBnAct(ConvSpec{c1 + c, c, 1}));
  fuse_feature = register_module("fuse_feature", ConvBnAct(ConvSpec{2 * c, c, 1}));
  head0 = register_module("head0", conv(c, 1, 3, 1, 1, 1, true));
  const std::array<std::int64_t, 4> aux_in{c0, c1, c, c};
  for (std::size_t i = 0; i < aux_in.size(); ++i) {
    aux_heads[i] = register_module("aux_head" + std::to_string(i + 1), conv(aux_in[i], 1, 1, 0, 1, 1, true));
  }
}

BackboneFeatures CRNetImpl::backbone_features(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw ValidationError("network input must be [B, 3, H, W]");
  }
  if (image.size(2) < 32 || image.size(3) < 32) {
    throw ValidationError("network input sides must be at least 32 pixels");
  }
  auto x = image;
  if (config_.normalize_input) {
    auto opts = image.options().requires_grad(false);
    auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
    auto std = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
    x = (x - mean) / std;
  }
  return backbone->forward(x);
}

NetworkOutputs CRNetImpl::forward(const torch::Tensor& image) {
  const auto h = image.size(2);
  const auto w = image.size(3);
  const auto f = backbone_features(image);

  auto fc0 = contrast0.forward(f.f1);
  auto fc1 = contrast1.forward(f.f2);
  auto fs0 = relation0.forward(f.f3);
  auto fs1 = relation1.forward(f.f4);
  auto fl1 = config_.use_age ? fuse_l1->forward(torch::cat({fs1, global->forward(f.f4)}, 1))
                             : fuse_l1->forward(fs1);
  auto fl0 = fuse_l0->forward(torch::cat({fs0, resize_like(fs1, fs0)}, 1));
  auto fo0 = fuse_out0->forward(torch::cat({fc0, resize_like(fl0, fc0)}, 1));
  auto fo1 = fuse_out1->forward(torch::cat({fc1, resize_like(fl1, fc1)}, 1));
  auto feature = fuse_feature->forward(torch::cat({fo0, resize_like(fo1, fo0)}, 1));

  NetworkOutputs out;
  out.outputs[0] = torch::sigmoid(resize_to(head0->forward(feature), h, w));
  const std::array<torch::Tensor, 4> aux_inputs{fc0, fc1, fl0, fl1};
  for (std::size_t i = 0; i < 4; ++i) {
    out.outputs[i + 1] = torch::sigmoid(resize_to(aux_heads[i]->forward(aux_inputs[i]), h, w));
  }
  out.feature = resize_to(feature, h, w);
  return out;
}

std::vector<std::string> init_weights(CRNet& net) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(
      derive_seed(net->config().seed, RngStream::kInit, 0));
  for (const auto& item : net->named_modules()) {
    const auto& name = item.key();
    auto* module = item.value().get();
    if (auto* c = dynamic_cast<torch::nn::Conv2dImpl*>(module)) {
      const bool head = name.rfind("head0", 0) == 0 || name.rfind("aux_head", 0) == 0;
      const auto& k = c->options.kernel_size();
      const double fan_out = static_cast<double>(c->options.out_channels() * k->at(0) * k->at(1));
      const double std = head ? 0.01 : std::sqrt(2.0 / fan_out);
      c->weight.normal_(0.0, std, gen);
      if (c->bias.defined()) c->bias.zero_();
    } else if (auto* bn = dynamic_cast<torch::nn::BatchNorm2dImpl*>(module)) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
      bn->running_mean.zero_();
      bn->running_var.fill_(1.0);
      bn->num_batches_tracked.zero_();
    }
  }

  std::vector<std::string> missing;
  const auto& path = net->config().pretrained_path;
  if (!path.empty()) {
    const auto archive = TensorArchive::load(path);
    // Accept both our own "backbone." prefix and bare torchvision names.
    const bool prefixed = std::any_of(archive.tensors.begin(), archive.tensors.end(),
                                      [](const auto& kv) { return kv.first.rfind("backbone.", 0) == 0; });
    const auto report = import_state(*net->backbone, archive, prefixed ? "backbone." : "");
    missing = report.missing;
  }
  return missing;
}

CRNet make_crnet(const CRNetConfig& config) {
  CRNet net(config);
  init_weights(net);
  return net;
}

}  // namespace scod
