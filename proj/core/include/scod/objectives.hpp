#pragma once

// Training objectives for scribble-supervised segmentation.
//
// Shapes: prediction maps are probabilities in [0, 1] given as [H, W],
// [B, H, W] or [B, 1, H, W]; scribbles as [H, W] or [B, H, W] with the
// Label encoding; images as [3, H, W] or [B, 3, H, W]; features as
// [C, H, W] or [B, C, H, W]. Batched losses are the mean of per-image losses.
// All functions are dtype-generic and differentiable with respect to the
// prediction; images, scribbles and features act as constants.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace scod {

/// Per-term switches. A disabled term contributes exactly zero.
struct LossToggles {
  bool pce = true;
  bool cv = true;
  bool iv = true;
  bool ca = true;
  bool ss = true;
  bool aux = true;

  bool operator==(const LossToggles&) const = default;
};

struct LossConfig {
  double alpha = 0.85;             // SSIM / L1 blend of the cross-view term
  double gamma = 0.3;              // reliability bias; 0 gives symmetric gradients
  double w_iv = 0.05;
  double entropy_threshold = 0.5;  // pixels above are treated as near-boundary
  std::int64_t kernel_window = 5;  // n x n neighbourhood of the affinity term
  double sigma_s = 6.0;            // pixels
  double sigma_c = 0.1;
  std::int64_t top_channels = 16;
  std::int64_t block_size = 20;
  double boundary_fraction = 0.3;
  double fg_conf = 0.8;
  double bg_conf = 0.2;
  double w_ss_max = 0.3;
  std::int64_t w_ss_ramp_epochs = 50;
  std::int64_t iv_start_epoch = 100;
  std::array<double, 4> beta{0.3, 0.3, 0.3, 0.3};
  LossToggles toggles;

  /// Throws ValidationError when a value is outside its documented domain.
  void validate() const;
};

inline constexpr double kProbEpsilon = 1e-6;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Clamp to [eps, 1 - eps] before any logarithm.
torch::Tensor clamp_probs(const torch::Tensor& p);

/// Partial cross-entropy over scribble-labeled pixels (fg target 1, bg 0).
/// Throws ValidationError("empty supervision") if an image has no labels.
torch::Tensor pce_loss(const torch::Tensor& pred, const torch::Tensor& scribble);

/// Single-scale SSIM per pixel with 3x3 reflect-padded local statistics.
/// Returns [B, H, W].
torch::Tensor ssim_map(const torch::Tensor& a, const torch::Tensor& b);

/// mean over valid pixels of (1-alpha)(1-SSIM)/2 + alpha|a-b|. Both maps are
/// zeroed outside `valid` before the SSIM windows are taken.
torch::Tensor cv_loss(const torch::Tensor& p_aligned, const torch::Tensor& p_hat,
                      const torch::Tensor& valid, double alpha);

/// (1+gamma) L(p_aligned.detach(), p_hat) + (1-gamma) L(p_aligned, p_hat.detach()).
/// The value is always 2 * cv_loss; only the gradient split depends on gamma.
torch::Tensor rcv_loss(const torch::Tensor& p_aligned, const torch::Tensor& p_hat,
                       const torch::Tensor& valid, double alpha, double gamma);

/// Natural-log binary entropy per pixel, [B, H, W].
torch::Tensor binary_entropy_map(const torch::Tensor& pred);

/// Zero before cfg.iv_start_epoch; afterwards w_iv times the mean entropy of
/// pixels whose entropy is at most the threshold (zero if there are none).
torch::Tensor iv_loss(const torch::Tensor& pred, const LossConfig& cfg, std::int64_t epoch);

struct Pixel {
  std::int64_t row = 0;
  std::int64_t col = 0;
};

/// Gaussian kernel over position (pixels) and RGB color of a [3, H, W] image.
double visual_kernel(const torch::Tensor& image, Pixel i, Pixel j, const LossConfig& cfg);

/// 1 - p_i p_j - (1 - p_i)(1 - p_j): probability that i and j disagree.
torch::Tensor pair_disagreement(const torch::Tensor& p_i, const torch::Tensor& p_j);

/// Kernel-weighted disagreement over each pixel's n x n neighbourhood
/// (centre excluded, truncated at borders), averaged per pixel then per image.
torch::Tensor context_affinity_loss(const torch::Tensor& pred, const torch::Tensor& image,
                                    const LossConfig& cfg);

/// Unbiased covariance between each feature channel and the prediction over
/// all pixels of one image. feature [C, H, W], pred [H, W] -> [C] float64.
torch::Tensor channel_significance(const torch::Tensor& feature, const torch::Tensor& pred);

/// Indices of the n largest |sig|; ties go to the lower index.
std::vector<std::int64_t> select_significant_channels(const torch::Tensor& sig, std::int64_t n);

struct BlockIndex {
  std::int64_t block_row = 0;
  std::int64_t block_col = 0;

  bool operator==(const BlockIndex&) const = default;
};

/// Pixel extent of a block; edge blocks may be partial.
struct BlockExtent {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
};
BlockExtent block_extent(BlockIndex block, std::int64_t height, std::int64_t width,
                         std::int64_t block_size);

/// Blocks holding at least boundary_fraction confidently-foreground and at
/// least boundary_fraction confidently-background pixels. A scribbled pixel
/// takes its scribble class; otherwise pred > fg_conf is foreground and
/// pred < bg_conf is background. pred and scribble are [H, W].
std::vector<BlockIndex> boundary_regions(const torch::Tensor& pred, const torch::Tensor& scribble,
                                         const LossConfig& cfg);

/// w_ss_max * min(1, epoch / w_ss_ramp_epochs).
double ss_weight(const LossConfig& cfg, std::int64_t epoch);

/// Kernel loss over all pixel pairs inside boundary blocks, with a kernel
/// over position and the top-N significant feature channels (standardized
/// per channel). Weighted by ss_weight(epoch); zero without boundary blocks.
torch::Tensor semantic_significance_loss(const torch::Tensor& pred, const torch::Tensor& feature,
                                         const torch::Tensor& scribble, const LossConfig& cfg,
                                         std::int64_t epoch);

/// pce + ca + iv on one auxiliary output, each following its toggle.
torch::Tensor aux_loss(const torch::Tensor& pred, const torch::Tensor& scribble,
                       const torch::Tensor& image, const LossConfig& cfg, std::int64_t epoch);

/// Main prediction aligned into the transformed view, the prediction made on
/// the transformed image, and the validity mask of the alignment.
struct ViewPair {
  torch::Tensor aligned;
  torch::Tensor transformed;
  torch::Tensor valid;
};

/// Scalar values of each term, for logging and checkpoint comparison.
struct LossBreakdown {
  double pce = 0.0;
  double cv = 0.0;   // symmetric cross-view value, diagnostic only
  double rcv = 0.0;
  double iv = 0.0;
  double ca = 0.0;
  double ss = 0.0;
  std::array<double, 4> aux{};
  double total = 0.0;
  double w_ss = 0.0;
  bool iv_active = false;

  bool operator==(const LossBreakdown&) const = default;
};

/// Differentiable terms plus their scalar breakdown.
struct LossTerms {
  torch::Tensor pce, rcv, iv, ca, ss, total;
  std::array<torch::Tensor, 4> aux;
  LossBreakdown breakdown;
};

/// total = pce + rcv + iv + ca + ss on out0, plus sum_i beta_i aux(out_i).
/// `outputs` holds out0..out4 at input resolution; `feature` is the
/// pre-prediction feature map at the same resolution.
LossTerms total_loss(std::span<const torch::Tensor> outputs, const torch::Tensor& feature,
                     const torch::Tensor& scribble, const torch::Tensor& image,
                     const ViewPair& view, const LossConfig& cfg, std::int64_t epoch);

}  // namespace scod
