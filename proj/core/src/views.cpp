#include "scod/views.hpp"

#include <algorithm>
#include <cmath>

#include "scod/errors.hpp"

namespace scod {

void ViewConfig::validate() const {
  if (ops.resize && resize_scales.empty()) throw ValidationError("view: empty resize scale set");
  for (double s : resize_scales) {
    if (!(s > 0.0)) throw ValidationError("view: resize scales must be positive");
  }
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw ValidationError("view: flip probability must lie in [0, 1]");
  }
  if (!(max_translate_fraction >= 0.0 && max_translate_fraction < 1.0)) {
    throw ValidationError("view: translate fraction must lie in [0, 1)");
  }
  if (!(crop_area_min > 0.0 && crop_area_min <= crop_area_max && crop_area_max <= 1.0)) {
    throw ValidationError("view: crop area range must satisfy 0 < min <= max <= 1");
  }
}

double ViewConfig::min_output_fraction() const {
  double f = 1.0;
  if (ops.resize) f *= *std::min_element(resize_scales.begin(), resize_scales.end());
  if (ops.crop) f *= std::sqrt(crop_area_min);
  return f;
}

ViewTransform ViewTransform::identity(std::int64_t height, std::int64_t width) {
  ViewTransform t;
  t.source_height = height;
  t.source_width = width;
  t.ops = ViewOps{false, false, false, false};
  t.crop = CropBox{0, 0, height, width};
  return t;
}

std::int64_t ViewTransform::output_height() const {
  return std::max<std::int64_t>(1, std::llround(resize_scale * static_cast<double>(crop.height)));
}

std::int64_t ViewTransform::output_width() const {
  return std::max<std::int64_t>(1, std::llround(resize_scale * static_cast<double>(crop.width)));
}

void ViewTransform::validate() const {
  if (crop.height <= 0 || crop.width <= 0) throw ValidationError("view: degenerate crop");
  if (crop.top < 0 || crop.left < 0 || crop.top + crop.height > source_height ||
      crop.left + crop.width > source_width) {
    throw ValidationError("view: crop box outside image bounds");
  }
  if (!(resize_scale > 0.0)) throw ValidationError("view: resize scale must be positive");
}

ViewTransform sample_view(const ViewConfig& config, Rng& rng, std::int64_t height,
                          std::int64_t width) {
  ViewTransform t = ViewTransform::identity(height, width);
  t.ops = config.ops;

  if (config.ops.crop) {
    const double area = rng.uniform(config.crop_area_min, config.crop_area_max);
    const double side = std::sqrt(area);
    const auto ch = std::clamp<std::int64_t>(std::llround(side * static_cast<double>(height)), 1, height);
    const auto cw = std::clamp<std::int64_t>(std::llround(side * static_cast<double>(width)), 1, width);
    t.crop = CropBox{rng.integer(0, height - ch), rng.integer(0, width - cw), ch, cw};
  }
  if (config.ops.translate) {
    const auto max_dy = static_cast<std::int64_t>(
        std::floor(config.max_translate_fraction * static_cast<double>(t.crop.height)));
    const auto max_dx = static_cast<std::int64_t>(
        std::floor(config.max_translate_fraction * static_cast<double>(t.crop.width)));
    t.dy = rng.integer(-max_dy, max_dy);
    t.dx = rng.integer(-max_dx, max_dx);
  }
  if (config.ops.resize) {
    const auto n = static_cast<std::int64_t>(config.resize_scales.size());
    t.resize_scale = config.resize_scales[static_cast<std::size_t>(rng.integer(0, n - 1))];
  }
  if (config.ops.flip) t.hflip = rng.bernoulli(config.flip_probability);
  return t;
}

namespace {

torch::Tensor as_nchw(const torch::Tensor& x, int& original_dim) {
  original_dim = static_cast<int>(x.dim());
  switch (x.dim()) {
    case 2: return x.unsqueeze(0).unsqueeze(0);
    case 3: return x.unsqueeze(0);
    case 4: return x;
    default: throw ValidationError("view: expected a 2-, 3- or 4-d tensor");
  }
}

torch::Tensor restore_dim(const torch::Tensor& x, int original_dim) {
  switch (original_dim) {
    case 2: return x.squeeze(0).squeeze(0);
    case 3: return x.squeeze(0);
    default: return x;
  }
}

/// Zero-filled shift of the last two axes by (dy, dx).
torch::Tensor shift(const torch::Tensor& x, std::int64_t dy, std::int64_t dx) {
  if (dy == 0 && dx == 0) return x;
  const auto h = x.size(2);
  const auto w = x.size(3);
  if (std::abs(dy) >= h || std::abs(dx) >= w) return torch::zeros_like(x);
  using torch::indexing::Slice;
  const auto src_r0 = std::max<std::int64_t>(0, -dy);
  const auto src_c0 = std::max<std::int64_t>(0, -dx);
  const auto dst_r0 = std::max<std::int64_t>(0, dy);
  const auto dst_c0 = std::max<std::int64_t>(0, dx);
  const auto rows = h - std::abs(dy);
  const auto cols = w - std::abs(dx);
  auto src = x.index({Slice(), Slice(), Slice(src_r0, src_r0 + rows), Slice(src_c0, src_c0 + cols)});
  // Pad instead of in-place copy so the autograd graph stays simple.
  namespace F = torch::nn::functional;
  return F::pad(src, F::PadFuncOptions({dst_c0, w - dst_c0 - cols, dst_r0, h - dst_r0 - rows}));
}

}  // namespace

torch::Tensor apply_to_tensor(const ViewTransform& t, const torch::Tensor& x) {
  t.validate();
  int original_dim = 0;
  auto y = as_nchw(x, original_dim);
  if (y.size(2) != t.source_height || y.size(3) != t.source_width) {
    throw ValidationError("view: input shape does not match the transform's source shape");
  }
  using torch::indexing::Slice;
  y = y.index({Slice(), Slice(), Slice(t.crop.top, t.crop.top + t.crop.height),
               Slice(t.crop.left, t.crop.left + t.crop.width)});
  y = shift(y, t.dy, t.dx);
  const auto oh = t.output_height();
  const auto ow = t.output_width();
  if (oh != y.size(2) || ow != y.size(3)) {
    namespace F = torch::nn::functional;
    const bool integral = !y.is_floating_point();
    auto src = integral ? y.to(torch::kFloat64) : y;
    y = F::interpolate(src, F::InterpolateFuncOptions()
                                .size(std::vector<std::int64_t>{oh, ow})
                                .mode(torch::kBilinear)
                                .align_corners(false));
    if (integral) y = y.to(x.scalar_type());
  }
  if (t.hflip) y = y.flip({3});
  return restore_dim(y, original_dim);
}

torch::Tensor validity_mask(const ViewTransform& t) {
  if (t.fully_valid()) {
    return torch::ones({t.output_height(), t.output_width()}, torch::kBool);
  }
  auto ones = torch::ones({t.source_height, t.source_width}, torch::kFloat64);
  // A bilinear sample equals 1 exactly when every tap with non-zero weight
  // has a source pixel.
  return apply_to_tensor(t, ones).gt(1.0 - 1e-9);
}

Image apply_to_image(const ViewTransform& t, const Image& image) {
  return Image(apply_to_tensor(t, image.pixels()).clamp(0.0, 1.0));
}

AlignedMap apply_to_map(const ViewTransform& t, const torch::Tensor& map) {
  auto aligned = apply_to_tensor(t, map);
  return {aligned, validity_mask(t).to(map.device())};
}

}  // namespace scod
