#pragma once

// Segmentation quality measures for camouflaged object detection:
// MAE, structure measure (S_m), enhanced-alignment measure (E_m) and the
// weighted F-measure (F_beta^w), plus dataset-level aggregation.
//
// All measures take a prediction map in [0, 1] and a binary ground truth of
// the same [H, W] shape (any dtype; nonzero is foreground).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace scod {

double mae(const torch::Tensor& pred, const torch::Tensor& gt);

/// alpha * object-aware + (1 - alpha) * region-aware similarity. An
/// all-background gt scores 1 - mean(pred), an all-foreground gt mean(pred).
double s_measure(const torch::Tensor& pred, const torch::Tensor& gt, double alpha = 0.5);

/// Mean enhanced-alignment score over the 256 thresholds (k + 1) / 256,
/// k = 0..255, where the prediction is binarized as pred >= threshold. The
/// all-foreground cut at 0 is excluded, so a perfect map scores exactly 1.
/// The per-threshold sum is divided by the pixel count.
double e_measure(const torch::Tensor& pred, const torch::Tensor& gt);

/// Weighted F-measure. An empty gt has no defined recall and scores 0.
double weighted_fbeta(const torch::Tensor& pred, const torch::Tensor& gt, double beta2 = 1.0);

/// Euclidean distance of every pixel to the nearest foreground pixel of
/// `mask`, with that pixel's flat index. Ties resolve to the smallest
/// (row, col). Foreground pixels map to themselves at distance 0.
struct DistanceTransform {
  std::vector<double> distance;
  std::vector<std::int64_t> nearest;
};
DistanceTransform distance_to_foreground(const std::vector<std::uint8_t>& mask, std::int64_t height,
                                         std::int64_t width);

struct SampleMetrics {
  std::string id;
  double mae = 0;
  double s_measure = 0;
  double e_measure = 0;
  double weighted_fbeta = 0;

  bool operator==(const SampleMetrics&) const = default;
};

SampleMetrics compute_metrics(const std::string& id, const torch::Tensor& pred, const torch::Tensor& gt);

struct MetricReport {
  std::vector<SampleMetrics> samples;  // sorted by id
  double mae = 0;
  double s_measure = 0;
  double e_measure = 0;
  double weighted_fbeta = 0;

  std::size_t count() const { return samples.size(); }
  /// Recomputes the aggregates as arithmetic means of the samples.
  void finalize();

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  /// id,mae,s_measure,e_measure,weighted_fbeta with one row per sample and a
  /// trailing "mean" row. Values are written with 17 significant digits.
  std::string to_csv() const;
  static MetricReport from_csv(const std::string& text);
  /// Fixed-width table in the column order MAE, S_m, E_m, F_beta^w.
  std::string table(const std::string& label = "") const;
};

struct EvalOptions {
  /// Unset: evaluate at the gt resolution, resizing predictions bilinearly
  /// when they differ. Set: resize both maps to size x size first.
  std::optional<std::int64_t> resolution;
  /// Stretch each prediction to [0, 1] before scoring.
  bool normalize_predictions = true;
};

/// Pairs <pred_dir>/<id>.png with <gt_dir>/<id>.png. Ground truth pixels
/// above 128 are foreground. Throws ValidationError when the id sets differ.
MetricReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                              const EvalOptions& options = {});

}  // namespace scod
