#pragma once

// Scribble-supervised dataset: domain types, on-disk layout, loading and
// validation, paired geometric augmentation, and a procedural generator of
// low-contrast ("camouflaged") samples with exact ground truth.
//
// Layout on disk:
//   <root>/<split>/images/<id>.png|.jpg|.jpeg
//   <root>/<split>/scribbles/<id>.png   single-channel 8-bit, values 0/1/2
//   <root>/<split>/gt/<id>.png          binary mask, evaluation splits only
//   <root>/<split>/ids.txt              optional manifest, one id per line

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace scod {

enum class Label : std::uint8_t {
  kUnlabeled = 0,
  kForeground = 1,
  kBackground = 2,
};

inline constexpr std::int64_t kMinImageSide = 32;

/// Color raster, float32 [3, H, W] in RGB order with values in [0, 1].
class Image {
 public:
  Image() = default;
  /// Validates shape, range and the minimum side.
  explicit Image(torch::Tensor pixels);

  const torch::Tensor& pixels() const { return pixels_; }
  std::int64_t height() const { return pixels_.size(1); }
  std::int64_t width() const { return pixels_.size(2); }

 private:
  torch::Tensor pixels_;
};

/// Ternary label raster, uint8 [H, W] with values in {0, 1, 2}.
class ScribbleMap {
 public:
  ScribbleMap() = default;
  explicit ScribbleMap(torch::Tensor labels);
  static ScribbleMap empty(std::int64_t height, std::int64_t width);

  const torch::Tensor& labels() const { return labels_; }
  std::int64_t height() const { return labels_.size(0); }
  std::int64_t width() const { return labels_.size(1); }
  std::int64_t count(Label label) const;

 private:
  torch::Tensor labels_;
};

struct Sample {
  std::string id;
  Image image;
  ScribbleMap scribble;
  /// uint8 [H, W] in {0, 1}; present iff the sample is from an evaluation split.
  std::optional<torch::Tensor> gt_mask;
};

enum class SplitKind { kTrain, kTest };

struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  SplitKind kind = SplitKind::kTrain;
  std::vector<std::string> ids;
  std::string images_dir = "images";
  std::string scribbles_dir = "scribbles";
  std::string gt_dir = "gt";

  std::filesystem::path split_dir() const { return root / split; }
  std::filesystem::path manifest_path() const { return split_dir() / "ids.txt"; }
  /// Existing image file for id (.png, .jpg or .jpeg), or nullopt.
  std::optional<std::filesystem::path> image_path(const std::string& id) const;
  std::filesystem::path scribble_path(const std::string& id) const;
  std::filesystem::path gt_path(const std::string& id) const;
  bool contains(const std::string& id) const;

  /// Reads ids.txt when present, otherwise lists the images directory
  /// (sorted). Throws ValidationError when the split directory is missing.
  static DatasetManifest open(const std::filesystem::path& root, const std::string& split,
                              SplitKind kind);
};

// --- raster I/O -------------------------------------------------------------

Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);
/// Binary mask: any non-zero pixel is foreground. Returns uint8 {0, 1}.
torch::Tensor read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const torch::Tensor& mask);
/// 8-bit grayscale map, values scaled to [0, 1] as float32 [H, W].
torch::Tensor read_gray(const std::filesystem::path& path);
/// Writes a [0, 1] map as 8-bit grayscale, rounding p * 255.
void write_gray(const std::filesystem::path& path, const torch::Tensor& map);

/// Single-channel 8-bit PNG holding the raw label values.
std::vector<std::uint8_t> encode_scribble(const ScribbleMap& map);
/// Throws ValidationError("invalid scribble label") on values outside {0,1,2}
/// and on anything that is not a single-channel 8-bit raster.
ScribbleMap decode_scribble(std::span<const std::uint8_t> bytes);
ScribbleMap read_scribble(const std::filesystem::path& path);
void write_scribble(const std::filesystem::path& path, const ScribbleMap& map);

/// Throws ValidationError("unknown sample") when id is not in the manifest.
Sample load_sample(const DatasetManifest& manifest, const std::string& id);
/// Writes image, scribble and (if present) gt into the manifest's layout.
void write_sample(const DatasetManifest& manifest, const Sample& sample);
void write_manifest(const DatasetManifest& manifest);

// --- paired augmentation ----------------------------------------------------

/// Bilinear (half-pixel centers) for the image, nearest-neighbour
/// src = floor(dst * in / out) for the labels. Output is size x size.
std::pair<Image, ScribbleMap> resize_pair(const Image& image, const ScribbleMap& scribble,
                                          std::int64_t size);
/// Nearest-neighbour resize for any [H, W] integer raster (labels, masks).
torch::Tensor resize_nearest(const torch::Tensor& labels, std::int64_t height, std::int64_t width);
/// Bilinear resize of a float [C, H, W] or [H, W] raster, half-pixel centers.
torch::Tensor resize_bilinear(const torch::Tensor& raster, std::int64_t height, std::int64_t width);
std::pair<Image, ScribbleMap> hflip_pair(const Image& image, const ScribbleMap& scribble);

// --- synthetic camouflage samples -------------------------------------------

struct SynthOptions {
  /// Largest relative offset between foreground and background texture
  /// parameters (color, frequency, amplitude).
  double max_param_offset = 0.15;
  /// Erosion margin for scribble placement as a fraction of the side.
  double erosion_fraction = 0.05;
};

/// Deterministic for a fixed seed. Each sample has a full gt mask, a
/// connected foreground stroke inside the eroded mask and a background
/// stroke inside the eroded complement. Throws ValidationError when size is
/// below the minimum side or count < 1.
std::vector<Sample> synth_generate(std::uint64_t seed, std::int64_t count, std::int64_t size,
                                   const SynthOptions& options = {});

// --- validation -------------------------------------------------------------

struct Violation {
  std::string id;
  std::string kind;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::size_t checked = 0;
  bool ok() const { return violations.empty(); }
};

/// Per-sample checks: image readable, scribble present with valid labels and
/// both classes (train), gt present and binary (test), matching sizes.
/// Throws ValidationError when the split directory cannot be read.
ValidationReport validate_dataset(const DatasetManifest& manifest);

}  // namespace scod
