#pragma once

// Training, inference and evaluation drivers.
//
// Config files are flat "key = value" text; '#' starts a comment. Keys:
//
//   dataset.root, dataset.train_split, dataset.val_split
//   train.input_size, train.batch_size, train.epochs, train.iterations,
//   train.momentum, train.weight_decay, train.max_lr, train.seed, train.hflip,
//   train.stop_after, train.checkpoint_every, train.val_every, train.output_dir
//   loss.alpha, loss.gamma, loss.w_iv, loss.entropy_threshold,
//   loss.kernel_window, loss.sigma_s, loss.sigma_c, loss.top_channels,
//   loss.block_size, loss.boundary_fraction, loss.fg_conf, loss.bg_conf,
//   loss.w_ss_max, loss.w_ss_ramp_epochs, loss.iv_start_epoch,
//   loss.beta (4 comma-separated values),
//   loss.pce, loss.cv, loss.iv, loss.ca, loss.ss, loss.aux (booleans)
//   view.resize, view.flip, view.translate, view.crop (booleans),
//   view.scales (comma-separated), view.flip_probability,
//   view.max_translate_fraction, view.crop_area_min, view.crop_area_max
//   net.depth, net.pretrained, net.decoder_channels, net.lce_dilations,
//   net.use_age, net.use_lcc, net.use_lsr
//
// Unknown keys are a validation error. Relative dataset.root and
// train.output_dir paths in a loaded file resolve against its directory.
// train.iterations > 0 fixes the total step count instead of
// epochs x steps-per-epoch; train.stop_after > 0 ends the run early without
// changing the schedule.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "scod/crnet.hpp"
#include "scod/data.hpp"
#include "scod/metrics.hpp"
#include "scod/objectives.hpp"
#include "scod/views.hpp"

namespace scod {

struct TrainConfig {
  std::filesystem::path dataset_root;
  std::string train_split = "train";
  std::string val_split;  // empty: no validation

  std::int64_t input_size = 320;
  std::int64_t batch_size = 16;
  std::int64_t epochs = 150;
  std::int64_t iterations = 0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double max_lr = 1e-3;
  std::uint64_t seed = 0;
  bool hflip = true;

  std::int64_t stop_after = 0;
  std::int64_t checkpoint_every = 0;  // steps; 0 saves at the end only
  std::int64_t val_every = 0;         // epochs; 0 disables validation
  std::filesystem::path output_dir = "runs/default";

  LossConfig loss;
  ViewConfig view;
  CRNetConfig net;

  /// Throws ValidationError on out-of-range values.
  void validate() const;

  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  std::string serialize() const;
  /// FNV-1a of the serialized settings that shape the optimization
  /// trajectory (paths, stop_after and cadences excluded).
  std::uint64_t hash() const;
};

/// Symmetric triangle: 0 at step 0, max_lr at total/2, 0 at total.
double triangle_lr(double step, std::int64_t total_steps, double max_lr);

/// Seeds the backend generator and enables deterministic kernels. Returns
/// the known sources of nondeterminism that remain (empty on CPU).
std::vector<std::string> seed_everything(std::uint64_t seed);

/// SCOD_DEVICE ("cpu", "cuda", "cuda:1"); defaults to cpu.
torch::Device default_device();

/// Random-access training samples, already resized to the input size.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::int64_t size() const = 0;
  virtual Sample get(std::int64_t index) const = 0;
};

class MemorySource : public SampleSource {
 public:
  MemorySource(std::vector<Sample> samples, std::int64_t input_size);
  std::int64_t size() const override { return static_cast<std::int64_t>(samples_.size()); }
  Sample get(std::int64_t index) const override { return samples_.at(index); }

 private:
  std::vector<Sample> samples_;
};

class DiskSource : public SampleSource {
 public:
  DiskSource(DatasetManifest manifest, std::int64_t input_size);
  std::int64_t size() const override { return static_cast<std::int64_t>(manifest_.ids.size()); }
  Sample get(std::int64_t index) const override;

 private:
  DatasetManifest manifest_;
  std::int64_t input_size_;
};

struct Batch {
  std::vector<std::string> ids;
  torch::Tensor images;     // [B, 3, S, S]
  torch::Tensor scribbles;  // [B, S, S] uint8
};

Batch collate(const std::vector<Sample>& samples, torch::Device device);

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

struct CheckpointMeta {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  nlohmann::json metrics = nlohmann::json::object();
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(TrainConfig config, std::shared_ptr<const SampleSource> source,
          std::shared_ptr<const SampleSource> validation = nullptr);

  std::int64_t steps_per_epoch() const;
  std::int64_t total_steps() const;
  std::int64_t step() const { return step_; }
  std::int64_t epoch_of(std::int64_t step) const { return step / steps_per_epoch(); }

  /// Runs one optimization step; throws NonFiniteLossError after writing a
  /// diagnostic dump into the output directory.
  StepRecord train_step();
  /// Trains until the schedule ends or stop_after steps ran in this call.
  CheckpointMeta run(const std::function<void(const StepRecord&)>& on_step = {});

  /// Loss of a batch in evaluation mode under a fixed view, without updates.
  LossBreakdown evaluate_batch(const Batch& batch, const ViewTransform& view, std::int64_t epoch);
  /// Mean metrics of the main output over the validation source.
  nlohmann::json validate_metrics();

  CheckpointMeta save(const std::filesystem::path& path) const;
  /// Restores weights, optimizer state and the step counter. Throws
  /// ValidationError when the checkpoint came from a different config.
  CheckpointMeta resume(const std::filesystem::path& path);

  /// Samples of the batch at a given global step, in order.
  std::vector<std::int64_t> batch_indices(std::int64_t step) const;
  ViewTransform view_for(std::int64_t step) const;

  CRNet& network() { return net_; }
  const TrainConfig& config() const { return config_; }
  const std::vector<StepRecord>& history() const { return history_; }
  std::filesystem::path log_path() const { return config_.output_dir / "train_log.csv"; }

 private:
  void append_log(const StepRecord& record);
  CheckpointMeta meta() const;

  TrainConfig config_;
  std::shared_ptr<const SampleSource> source_;
  std::shared_ptr<const SampleSource> validation_;
  torch::Device device_;
  CRNet net_{nullptr};
  std::unique_ptr<torch::optim::SGD> optimizer_;
  std::int64_t step_ = 0;
  std::vector<StepRecord> history_;
  nlohmann::json last_metrics_ = nlohmann::json::object();
};

/// Loads the dataset named by the config, validates it and trains. Returns
/// the metadata of the final checkpoint (<output_dir>/final.ckpt).
CheckpointMeta train(const TrainConfig& config, const std::optional<std::filesystem::path>& resume = {});

/// Network and config restored from a training checkpoint, in eval mode.
struct LoadedModel {
  TrainConfig config;
  CRNet net{nullptr};
  CheckpointMeta meta;
};
LoadedModel load_model(const std::filesystem::path& checkpoint, torch::Device device = torch::kCPU);

/// Main-output probabilities [H, W] at the image's own resolution.
torch::Tensor predict(LoadedModel& model, const Image& image);

struct InferReport {
  std::int64_t written = 0;
  std::vector<std::string> skipped;
};

/// Writes <out_dir>/<stem>.png for every readable image in image_dir.
InferReport infer(const std::filesystem::path& checkpoint, const std::filesystem::path& image_dir,
                  const std::filesystem::path& out_dir);

}  // namespace scod
