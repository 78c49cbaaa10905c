#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <torch/torch.h>

namespace scod::testing {

/// Removes itself on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "scod");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Seeded generator for tensor fixtures.
torch::Generator generator(std::uint64_t seed);

/// Uniform in [lo, hi], float64.
torch::Tensor uniform(torch::IntArrayRef shape, double lo, double hi, std::uint64_t seed);

/// Random ternary scribble with at least one foreground and one background pixel.
torch::Tensor random_scribble(std::int64_t h, std::int64_t w, double labeled_fraction, std::uint64_t seed);

/// Central-difference gradient of a scalar function w.r.t. x (float64).
torch::Tensor numeric_gradient(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                               double step = 1e-6);

/// max |a - b| / max(max |b|, tiny)
double relative_error(const torch::Tensor& a, const torch::Tensor& b);

/// Path of the scod executable under test.
std::filesystem::path scod_binary();

struct CommandResult {
  int exit_code = -1;
  std::string output;
};
/// Runs a shell command, capturing stdout and stderr together.
CommandResult run_command(const std::string& command);

}  // namespace scod::testing
