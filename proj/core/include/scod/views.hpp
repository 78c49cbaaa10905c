#pragma once

// Geometric view transforms for cross-view consistency. A transform is a
// fixed pipeline crop -> translate -> resize -> flip, so the prediction on
// the original image can be aligned with the prediction on the transformed
// image through one coordinate mapping plus a validity mask.

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "scod/data.hpp"
#include "scod/rng.hpp"

namespace scod {

struct CropBox {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;

  bool operator==(const CropBox&) const = default;
};

/// Which of the four operations (R, F, T, C) a config may draw from.
struct ViewOps {
  bool resize = true;
  bool flip = true;
  bool translate = true;
  bool crop = true;

  bool operator==(const ViewOps&) const = default;
};

struct ViewConfig {
  ViewOps ops;
  std::vector<double> resize_scales{0.75, 1.0, 1.25};
  double flip_probability = 0.5;
  /// Largest shift as a fraction of the (cropped) side.
  double max_translate_fraction = 0.1;
  double crop_area_min = 0.75;
  double crop_area_max = 0.95;

  /// Throws ValidationError on empty scale sets, non-positive scales or
  /// crop/translate ranges outside (0, 1].
  void validate() const;
  /// Smallest output side the config can produce for a square input.
  double min_output_fraction() const;
};

struct ViewTransform {
  std::int64_t source_height = 0;
  std::int64_t source_width = 0;
  ViewOps ops;
  CropBox crop;
  /// Shift in crop coordinates; positive dx moves content right.
  std::int64_t dx = 0;
  std::int64_t dy = 0;
  double resize_scale = 1.0;
  bool hflip = false;

  static ViewTransform identity(std::int64_t height, std::int64_t width);

  std::int64_t output_height() const;
  std::int64_t output_width() const;
  /// True when every output pixel has a source pixel.
  bool fully_valid() const { return dx == 0 && dy == 0; }
  /// Throws ValidationError on crops outside the source or with zero area.
  void validate() const;

  bool operator==(const ViewTransform&) const = default;
};

/// Draws a transform for a height x width input from the enabled ops.
/// Disabled ops stay at identity (scale 1, no flip, zero shift, full crop).
ViewTransform sample_view(const ViewConfig& config, Rng& rng, std::int64_t height,
                          std::int64_t width);

/// Applies the pipeline to [N, C, H, W] (or [C, H, W] / [H, W]) and keeps the
/// autograd graph. Pixels without a source are zero.
torch::Tensor apply_to_tensor(const ViewTransform& t, const torch::Tensor& x);

/// Boolean [Ho, Wo] mask of output pixels that have a source pixel.
torch::Tensor validity_mask(const ViewTransform& t);

Image apply_to_image(const ViewTransform& t, const Image& image);

struct AlignedMap {
  torch::Tensor map;
  torch::Tensor valid;
};

/// Same geometry as apply_to_image, applied to a prediction map.
AlignedMap apply_to_map(const ViewTransform& t, const torch::Tensor& map);

}  // namespace scod
