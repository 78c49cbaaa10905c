#include "helpers.hpp"

#include <cstdio>
#include <random>
#include <sys/wait.h>

#include <ATen/CPUGeneratorImpl.h>

#include "scod/rng.hpp"

namespace scod::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto candidate = fs::temp_directory_path() / (tag + "-" + std::to_string(rd()));
    if (fs::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw std::runtime_error("cannot create a temporary directory");
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

torch::Generator generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor uniform(torch::IntArrayRef shape, double lo, double hi, std::uint64_t seed) {
  auto gen = generator(seed);
  return torch::rand(shape, gen, torch::kFloat64) * (hi - lo) + lo;
}

torch::Tensor random_scribble(std::int64_t h, std::int64_t w, double labeled_fraction, std::uint64_t seed) {
  Rng rng(seed);
  auto labels = torch::zeros({h, w}, torch::kUInt8);
  auto a = labels.accessor<std::uint8_t, 2>();
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      if (rng.bernoulli(labeled_fraction)) a[r][c] = rng.bernoulli(0.5) ? 1 : 2;
    }
  }
  a[0][0] = 1;
  a[h - 1][w - 1] = 2;
  return labels;
}

torch::Tensor numeric_gradient(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                               double step) {
  torch::NoGradGuard guard;
  auto base = x.detach().clone();
  auto grad = torch::zeros_like(base);
  auto flat = base.view(-1);
  auto g = grad.view(-1);
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + step;
    const double up = f(base).item<double>();
    flat[i] = orig - step;
    const double down = f(base).item<double>();
    flat[i] = orig;
    g[i] = (up - down) / (2 * step);
  }
  return grad;
}

double relative_error(const torch::Tensor& a, const torch::Tensor& b) {
  const double diff = (a - b).abs().max().item<double>();
  const double scale = std::max(b.abs().max().item<double>(), 1e-12);
  return diff / scale;
}

fs::path scod_binary() { return SCOD_BINARY_PATH; }

CommandResult run_command(const std::string& command) {
  CommandResult result;
  FILE* pipe = popen((command + " 2>&1").c_str(), "r");
  if (!pipe) return result;
  char buffer[4096];
  while (const auto n = fread(buffer, 1, sizeof buffer, pipe)) result.output.append(buffer, n);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

}  // namespace scod::testing
