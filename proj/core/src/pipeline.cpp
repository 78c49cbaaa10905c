#include "scod/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include "scod/checkpoint.hpp"
#include "scod/errors.hpp"
#include "scod/rng.hpp"

namespace scod {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointKind = "scod-train";

std::vector<std::int64_t> permutation(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[i] = i;
  for (std::int64_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.integer(0, i)]);
  return order;
}

Sample fit_to_size(Sample s, std::int64_t size) {
  if (s.image.height() != size || s.image.width() != size) {
    auto [image, scribble] = resize_pair(s.image, s.scribble, size);
    s.image = std::move(image);
    s.scribble = std::move(scribble);
    if (s.gt_mask) s.gt_mask = resize_nearest(*s.gt_mask, size, size);
  }
  return s;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json breakdown_json(const LossBreakdown& b) {
  return {{"pce", b.pce}, {"cv", b.cv},   {"rcv", b.rcv},     {"iv", b.iv},
          {"ca", b.ca},   {"ss", b.ss},   {"aux", b.aux},     {"total", b.total},
          {"w_ss", b.w_ss}, {"iv_active", b.iv_active}};
}

CheckpointMeta meta_from(const nlohmann::json& j) {
  CheckpointMeta m;
  m.epoch = j.at("epoch");
  m.step = j.at("step");
  m.seed = j.at("seed");
  m.config_hash = j.at("config_hash");
  m.metrics = j.value("metrics", nlohmann::json::object());
  return m;
}

TensorArchive load_training_archive(const fs::path& path) {
  auto archive = TensorArchive::load(path);
  if (archive.meta.value("kind", "") != kCheckpointKind) {
    throw ValidationError("not a training checkpoint: " + path.string());
  }
  return archive;
}

bool is_raster(const fs::path& p) {
  static const std::set<std::string> kExt{".png", ".jpg", ".jpeg", ".bmp"};
  return kExt.contains(p.extension().string());
}

}  // namespace

double triangle_lr(double step, std::int64_t total_steps, double max_lr) {
  if (total_steps <= 0) return 0.0;
  const double total = static_cast<double>(total_steps);
  const double t = std::clamp(step, 0.0, total);
  const double half = total / 2.0;
  return t <= half ? max_lr * t / half : max_lr * (total - t) / half;
}

std::vector<std::string> seed_everything(std::uint64_t seed) {
  torch::manual_seed(seed);
  at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/true);
  std::vector<std::string> notes;
  if (torch::cuda::is_available()) {
    notes.push_back("CUDA upsampling backward and atomics-based reductions may differ in the last bits");
    at::globalContext().setDeterministicCuDNN(true);
    at::globalContext().setBenchmarkCuDNN(false);
  }
  return notes;
}

torch::Device default_device() {
  const char* env = std::getenv("SCOD_DEVICE");
  if (env == nullptr || *env == '\0') return torch::kCPU;
  try {
    return torch::Device(env);
  } catch (const c10::Error&) {
    throw ValidationError(std::string("SCOD_DEVICE: unrecognized device '") + env + "'");
  }
}

MemorySource::MemorySource(std::vector<Sample> samples, std::int64_t input_size) {
  if (samples.empty()) throw ValidationError("no training samples");
  samples_.reserve(samples.size());
  for (auto& s : samples) samples_.push_back(fit_to_size(std::move(s), input_size));
}

DiskSource::DiskSource(DatasetManifest manifest, std::int64_t input_size)
    : manifest_(std::move(manifest)), input_size_(input_size) {
  if (manifest_.ids.empty()) throw ValidationError("no samples in " + manifest_.split_dir().string());
}

Sample DiskSource::get(std::int64_t index) const {
  return fit_to_size(load_sample(manifest_, manifest_.ids.at(static_cast<std::size_t>(index))), input_size_);
}

Batch collate(const std::vector<Sample>& samples, torch::Device device) {
  Batch b;
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> scribbles;
  for (const auto& s : samples) {
    b.ids.push_back(s.id);
    images.push_back(s.image.pixels());
    scribbles.push_back(s.scribble.labels());
  }
  b.images = torch::stack(images).to(device);
  b.scribbles = torch::stack(scribbles).to(device);
  return b;
}

// --- trainer -------------------------------------------------------------------------

Trainer::Trainer(TrainConfig config, std::shared_ptr<const SampleSource> source,
                 std::shared_ptr<const SampleSource> validation)
    : config_(std::move(config)),
      source_(std::move(source)),
      validation_(std::move(validation)),
      device_(default_device()) {
  config_.validate();
  if (!source_ || source_->size() == 0) throw ValidationError("no training samples");
  seed_everything(config_.seed);
  auto net_config = config_.net;
  net_config.seed = config_.seed;
  net_config.input_size = config_.input_size;
  net_ = make_crnet(net_config);
  net_->to(device_);
  optimizer_ = std::make_unique<torch::optim::SGD>(
      net_->parameters(), torch::optim::SGDOptions(config_.max_lr)
                              .momentum(config_.momentum)
                              .weight_decay(config_.weight_decay));
}

std::int64_t Trainer::steps_per_epoch() const {
  return (source_->size() + config_.batch_size - 1) / config_.batch_size;
}

std::int64_t Trainer::total_steps() const {
  return config_.iterations > 0 ? config_.iterations : config_.epochs * steps_per_epoch();
}

std::vector<std::int64_t> Trainer::batch_indices(std::int64_t step) const {
  const auto spe = steps_per_epoch();
  Rng rng(config_.seed, RngStream::kDataOrder, static_cast<std::uint64_t>(step / spe));
  const auto order = permutation(source_->size(), rng);
  const auto begin = (step % spe) * config_.batch_size;
  const auto end = std::min<std::int64_t>(begin + config_.batch_size, source_->size());
  return {order.begin() + begin, order.begin() + end};
}

ViewTransform Trainer::view_for(std::int64_t step) const {
  Rng rng(config_.seed, RngStream::kView, static_cast<std::uint64_t>(step));
  return sample_view(config_.view, rng, config_.input_size, config_.input_size);
}

StepRecord Trainer::train_step() {
  const auto indices = batch_indices(step_);
  std::vector<Sample> samples;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    auto s = source_->get(indices[j]);
    Rng flip(config_.seed, RngStream::kFlip,
             static_cast<std::uint64_t>(step_ * config_.batch_size) + j);
    if (config_.hflip && flip.bernoulli(0.5)) {
      auto [image, scribble] = hflip_pair(s.image, s.scribble);
      s.image = std::move(image);
      s.scribble = std::move(scribble);
    }
    samples.push_back(std::move(s));
  }
  const auto batch = collate(samples, device_);
  const auto view = view_for(step_);

  StepRecord record;
  record.step = step_;
  record.epoch = epoch_of(step_);
  record.lr = triangle_lr(static_cast<double>(step_) + 0.5, total_steps(), config_.max_lr);
  for (auto& group : optimizer_->param_groups()) {
    static_cast<torch::optim::SGDOptions&>(group.options()).lr(record.lr);
  }

  net_->train();
  const auto out = net_->forward(batch.images);
  ViewPair pair;
  if (config_.loss.toggles.cv) {
    const auto out_t = net_->forward(apply_to_tensor(view, batch.images));
    const auto aligned = apply_to_map(view, out.main());
    pair = ViewPair{aligned.map, out_t.main(), aligned.valid};
  }
  auto terms = total_loss(out.outputs, out.feature, batch.scribbles, batch.images, pair, config_.loss,
                          record.epoch);
  record.loss = terms.breakdown;

  if (!std::isfinite(record.loss.total)) {
    fs::create_directories(config_.output_dir);
    const auto dump = config_.output_dir / ("nonfinite_step_" + std::to_string(step_) + ".json");
    nlohmann::json j{{"step", step_}, {"epoch", record.epoch}, {"lr", record.lr}, {"ids", batch.ids},
                     {"loss", breakdown_json(record.loss)}};
    std::ofstream(dump) << j.dump(2) << "\n";
    std::string ids;
    for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ", ") + id;
    throw NonFiniteLossError("non-finite loss at step " + std::to_string(step_) + " (batch: " + ids +
                             "); diagnostics in " + dump.string());
  }

  optimizer_->zero_grad();
  terms.total.backward();
  optimizer_->step();

  ++step_;
  history_.push_back(record);
  append_log(record);
  return record;
}

void Trainer::append_log(const StepRecord& r) {
  fs::create_directories(config_.output_dir);
  const auto path = log_path();
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (fresh) out << "step,epoch,lr,pce,cv,rcv,iv,ca,ss,aux1,aux2,aux3,aux4,total,w_ss,iv_active\n";
  const auto& b = r.loss;
  out << r.step << ',' << r.epoch << ',' << g17(r.lr) << ',' << g17(b.pce) << ',' << g17(b.cv) << ','
      << g17(b.rcv) << ',' << g17(b.iv) << ',' << g17(b.ca) << ',' << g17(b.ss);
  for (double a : b.aux) out << ',' << g17(a);
  out << ',' << g17(b.total) << ',' << g17(b.w_ss) << ',' << (b.iv_active ? 1 : 0) << '\n';
}

CheckpointMeta Trainer::run(const std::function<void(const StepRecord&)>& on_step) {
  if (step_ == 0 && fs::exists(log_path())) fs::remove(log_path());
  const auto spe = steps_per_epoch();
  std::int64_t ran = 0;
  while (step_ < total_steps() && (config_.stop_after == 0 || ran < config_.stop_after)) {
    const auto record = train_step();
    ++ran;
    if (on_step) on_step(record);
    if (config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0) {
      save(config_.output_dir / "last.ckpt");
    }
    if (config_.val_every > 0 && validation_ && step_ % spe == 0 &&
        (step_ / spe) % config_.val_every == 0) {
      last_metrics_ = validate_metrics();
    }
  }
  if (step_ >= total_steps()) {
    if (validation_ && config_.val_every > 0) last_metrics_ = validate_metrics();
    return save(config_.output_dir / "final.ckpt");
  }
  return save(config_.output_dir / "last.ckpt");
}

LossBreakdown Trainer::evaluate_batch(const Batch& batch, const ViewTransform& view, std::int64_t epoch) {
  torch::NoGradGuard no_grad;
  net_->eval();
  const auto images = batch.images.to(device_);
  const auto out = net_->forward(images);
  ViewPair pair;
  if (config_.loss.toggles.cv) {
    const auto out_t = net_->forward(apply_to_tensor(view, images));
    const auto aligned = apply_to_map(view, out.main());
    pair = ViewPair{aligned.map, out_t.main(), aligned.valid};
  }
  const auto terms = total_loss(out.outputs, out.feature, batch.scribbles.to(device_), images, pair,
                                config_.loss, epoch);
  return terms.breakdown;
}

nlohmann::json Trainer::validate_metrics() {
  if (!validation_) return nlohmann::json::object();
  torch::NoGradGuard no_grad;
  net_->eval();
  MetricReport report;
  for (std::int64_t i = 0; i < validation_->size(); ++i) {
    const auto s = validation_->get(i);
    if (!s.gt_mask) continue;
    const auto out = net_->forward(s.image.pixels().unsqueeze(0).to(device_));
    const auto pred = out.main()[0][0].to(torch::kCPU).to(torch::kFloat64).clamp(0.0, 1.0);
    report.samples.push_back(compute_metrics(s.id, pred, *s.gt_mask));
  }
  report.finalize();
  return {{"mae", report.mae},
          {"s_measure", report.s_measure},
          {"e_measure", report.e_measure},
          {"weighted_fbeta", report.weighted_fbeta},
          {"count", report.count()}};
}

CheckpointMeta Trainer::meta() const {
  CheckpointMeta m;
  m.step = step_;
  m.epoch = epoch_of(step_);
  m.seed = config_.seed;
  m.config_hash = config_.hash();
  m.metrics = last_metrics_;
  return m;
}

CheckpointMeta Trainer::save(const fs::path& path) const {
  const auto m = meta();
  TensorArchive archive;
  archive.meta = {{"kind", kCheckpointKind},
                  {"step", m.step},
                  {"epoch", m.epoch},
                  {"seed", m.seed},
                  {"config_hash", m.config_hash},
                  {"config", config_.serialize()},
                  {"rng", {{"scheme", "counter"}, {"seed", m.seed}}},
                  {"metrics", m.metrics}};
  if (!history_.empty()) archive.meta["last_loss"] = breakdown_json(history_.back().loss);
  export_state(*net_, archive, "model.");
  auto& state = optimizer_->state();
  for (const auto& item : net_->named_parameters(true)) {
    const auto it = state.find(item.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& sgd = static_cast<const torch::optim::SGDParamState&>(*it->second);
    if (sgd.momentum_buffer().defined()) {
      archive.tensors["optim.momentum." + item.key()] = sgd.momentum_buffer().detach().clone();
    }
  }
  archive.save(path);
  return m;
}

CheckpointMeta Trainer::resume(const fs::path& path) {
  const auto archive = load_training_archive(path);
  const auto m = meta_from(archive.meta);
  if (m.config_hash != config_.hash()) {
    throw ValidationError("checkpoint " + path.string() + " was written with a different configuration");
  }
  const auto report = import_state(*net_, archive, "model.");
  if (!report.missing.empty()) {
    throw std::runtime_error("checkpoint is missing " + std::to_string(report.missing.size()) +
                             " model tensors, e.g. " + report.missing.front());
  }
  auto& state = optimizer_->state();
  state.clear();
  for (const auto& item : net_->named_parameters(true)) {
    const auto it = archive.tensors.find("optim.momentum." + item.key());
    if (it == archive.tensors.end()) continue;
    auto s = std::make_unique<torch::optim::SGDParamState>();
    s->momentum_buffer(it->second.to(device_).clone());
    state[item.value().unsafeGetTensorImpl()] = std::move(s);
  }
  step_ = m.step;
  last_metrics_ = m.metrics;
  history_.clear();
  return m;
}

// --- drivers -------------------------------------------------------------------------

CheckpointMeta train(const TrainConfig& config, const std::optional<fs::path>& resume) {
  config.validate();
  if (config.dataset_root.empty()) throw ValidationError("dataset.root is not set");
  auto manifest = DatasetManifest::open(config.dataset_root, config.train_split, SplitKind::kTrain);
  const auto report = validate_dataset(manifest);
  if (!report.ok()) {
    std::string msg = "dataset validation failed with " + std::to_string(report.violations.size()) + " problem(s)";
    for (std::size_t i = 0; i < report.violations.size() && i < 5; ++i) {
      const auto& v = report.violations[i];
      msg += "\n  " + v.id + ": " + v.kind + " (" + v.message + ")";
    }
    throw ValidationError(msg);
  }
  auto source = std::make_shared<DiskSource>(manifest, config.input_size);
  std::shared_ptr<DiskSource> validation;
  if (!config.val_split.empty()) {
    validation = std::make_shared<DiskSource>(
        DatasetManifest::open(config.dataset_root, config.val_split, SplitKind::kTest), config.input_size);
  }
  Trainer trainer(config, source, validation);
  if (resume) trainer.resume(*resume);
  fs::create_directories(config.output_dir);
  std::ofstream(config.output_dir / "config.txt") << config.serialize();
  return trainer.run([&](const StepRecord& r) {
    if (r.step % 10 == 0 || r.step + 1 == trainer.total_steps()) {
      std::fprintf(stderr, "step %lld/%lld epoch %lld lr %.3g loss %.4f (pce %.4f rcv %.4f ca %.4f ss %.4f)\n",
                   static_cast<long long>(r.step + 1), static_cast<long long>(trainer.total_steps()),
                   static_cast<long long>(r.epoch), r.lr, r.loss.total, r.loss.pce, r.loss.rcv, r.loss.ca,
                   r.loss.ss);
    }
  });
}

LoadedModel load_model(const fs::path& checkpoint, torch::Device device) {
  const auto archive = load_training_archive(checkpoint);
  LoadedModel model;
  model.config = TrainConfig::parse(archive.meta.at("config").get<std::string>());
  model.meta = meta_from(archive.meta);
  auto net_config = model.config.net;
  net_config.pretrained_path.clear();
  net_config.input_size = model.config.input_size;
  model.net = CRNet(net_config);
  const auto report = import_state(*model.net, archive, "model.");
  if (!report.missing.empty()) {
    throw std::runtime_error("checkpoint is missing model tensor " + report.missing.front());
  }
  model.net->to(device);
  model.net->eval();
  return model;
}

torch::Tensor predict(LoadedModel& model, const Image& image) {
  torch::NoGradGuard no_grad;
  const auto size = model.config.input_size;
  const auto device = model.net->parameters().front().device();
  const auto input = resize_bilinear(image.pixels(), size, size).clamp(0.0, 1.0).unsqueeze(0).to(device);
  const auto out = model.net->forward(input).main()[0][0].to(torch::kCPU);
  return resize_bilinear(out, image.height(), image.width()).clamp(0.0, 1.0);
}

InferReport infer(const fs::path& checkpoint, const fs::path& image_dir, const fs::path& out_dir) {
  if (!fs::is_directory(image_dir)) throw ValidationError("not a directory: " + image_dir.string());
  auto model = load_model(checkpoint, default_device());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    if (e.is_regular_file() && is_raster(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  fs::create_directories(out_dir);
  InferReport report;
  for (const auto& path : files) {
    Image image;
    try {
      image = read_image(path);
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << path.string() << ": " << e.what() << "\n";
      report.skipped.push_back(path.filename().string());
      continue;
    }
    write_gray(out_dir / (path.stem().string() + ".png"), predict(model, image));
    ++report.written;
  }
  return report;
}

}  // namespace scod
