#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "scod/annotator.hpp"
#include "scod/data.hpp"
#include "scod/errors.hpp"
#include "scod/metrics.hpp"
#include "scod/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

scod::SplitKind parse_kind(const std::string& kind) {
  if (kind == "train") return scod::SplitKind::kTrain;
  if (kind == "test") return scod::SplitKind::kTest;
  throw scod::ValidationError("--kind must be 'train' or 'test'");
}

int run_train(const fs::path& config_path, const std::string& resume) {
  const auto config = scod::TrainConfig::load(config_path);
  std::optional<fs::path> from;
  if (!resume.empty()) from = resume;
  const auto meta = scod::train(config, from);
  std::printf("trained to step %lld (epoch %lld); checkpoints in %s\n", static_cast<long long>(meta.step),
              static_cast<long long>(meta.epoch), config.output_dir.string().c_str());
  return 0;
}

int run_infer(const fs::path& ckpt, const fs::path& in, const fs::path& out) {
  const auto report = scod::infer(ckpt, in, out);
  std::printf("wrote %lld maps to %s", static_cast<long long>(report.written), out.string().c_str());
  if (!report.skipped.empty()) std::printf(" (%zu unreadable images skipped)", report.skipped.size());
  std::printf("\n");
  return 0;
}

int run_eval(const fs::path& pred, const fs::path& gt, std::int64_t resolution, const std::string& json_path,
             const std::string& csv_path) {
  scod::EvalOptions options;
  if (resolution > 0) options.resolution = resolution;
  const auto report = scod::evaluate_dataset(pred, gt, options);
  std::cout << report.table(pred.filename().string());
  if (!json_path.empty()) std::ofstream(json_path) << report.to_json().dump(2) << "\n";
  if (!csv_path.empty()) std::ofstream(csv_path) << report.to_csv();
  return 0;
}

int run_synth(const fs::path& out, std::int64_t count, std::uint64_t seed, std::int64_t size,
              const std::string& split) {
  scod::DatasetManifest manifest;
  manifest.root = out;
  manifest.split = split;
  const auto samples = scod::synth_generate(seed, count, size);
  for (const auto& s : samples) {
    scod::write_sample(manifest, s);
    manifest.ids.push_back(s.id);
  }
  scod::write_manifest(manifest);
  std::printf("wrote %zu samples to %s\n", samples.size(), manifest.split_dir().string().c_str());
  return 0;
}

int run_validate(const fs::path& root, const std::string& split, const std::string& kind) {
  const auto manifest = scod::DatasetManifest::open(root, split, parse_kind(kind));
  const auto report = scod::validate_dataset(manifest);
  for (const auto& v : report.violations) {
    std::printf("%s\t%s\t%s\n", v.id.c_str(), v.kind.c_str(), v.message.c_str());
  }
  std::printf("checked %zu samples, %zu problems\n", report.checked, report.violations.size());
  return report.ok() ? 0 : 1;
}

int run_annotate(const fs::path& root, int port, const std::string& split, const std::string& assets,
                 const std::string& host) {
  scod::AnnotatorOptions options;
  options.root = root;
  options.port = port;
  options.split = split;
  options.assets_dir = assets;
  options.host = host;
  scod::AnnotatorServer server(options);
  const int bound = server.bind();
  std::printf("serving %s on http://%s:%d\n", (root / split).string().c_str(), host.c_str(), bound);
  std::fflush(stdout);
  server.listen();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scribble-supervised camouflaged object detection"};
  app.require_subcommand(1);

  std::string config;
  std::string resume;
  auto* train = app.add_subcommand("train", "Train a network from a config file");
  train->add_option("--config", config, "Flat key = value config file")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

  std::string ckpt;
  std::string in_dir;
  std::string out_dir;
  auto* infer = app.add_subcommand("infer", "Predict maps for a directory of images");
  infer->add_option("--ckpt", ckpt, "Training checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--in", in_dir, "Image directory")->required();
  infer->add_option("--out", out_dir, "Output directory")->required();

  std::string pred_dir;
  std::string gt_dir;
  std::int64_t resolution = 0;
  std::string json_out;
  std::string csv_out;
  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("--pred", pred_dir, "Prediction maps")->required();
  eval->add_option("--gt", gt_dir, "Ground-truth masks")->required();
  eval->add_option("--resolution", resolution, "Resize both maps to N x N (default: gt resolution)");
  eval->add_option("--json", json_out, "Write the full report as JSON");
  eval->add_option("--csv", csv_out, "Write per-sample rows as CSV");

  std::string root;
  int port = 8080;
  std::string split = "train";
  std::string assets;
  std::string host = "127.0.0.1";
  auto* annotate = app.add_subcommand("annotate", "Serve the annotation API for a dataset");
  annotate->add_option("--root", root, "Dataset root")->required();
  annotate->add_option("--port", port, "TCP port (0 picks one)");
  annotate->add_option("--split", split, "Split to annotate");
  annotate->add_option("--assets", assets, "Directory of UI assets served at /");
  annotate->add_option("--host", host, "Listen address");

  std::string synth_out;
  std::int64_t count = 10;
  std::uint64_t seed = 0;
  std::int64_t size = 320;
  std::string synth_split = "train";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic camouflage dataset");
  synth->add_option("--out", synth_out, "Dataset root to write")->required();
  synth->add_option("--count", count, "Number of samples");
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--size", size, "Image side in pixels");
  synth->add_option("--split", synth_split, "Split name");

  std::string validate_root;
  std::string validate_split = "train";
  std::string kind = "train";
  auto* validate = app.add_subcommand("validate", "Check a dataset split");
  validate->add_option("--root", validate_root, "Dataset root")->required();
  validate->add_option("--split", validate_split, "Split name");
  validate->add_option("--kind", kind, "train (scribbles required) or test (gt required)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*train) return run_train(config, resume);
    if (*infer) return run_infer(ckpt, in_dir, out_dir);
    if (*eval) return run_eval(pred_dir, gt_dir, resolution, json_out, csv_out);
    if (*annotate) return run_annotate(root, port, split, assets, host);
    if (*synth) return run_synth(synth_out, count, seed, size, synth_split);
    if (*validate) return run_validate(validate_root, validate_split, kind);
  } catch (const scod::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
