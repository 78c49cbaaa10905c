#pragma once

// Flat named-tensor archive with a JSON header.
//
//   bytes 0..7   magic "SCODCKPT"
//   bytes 8..11  format version (uint32, little-endian)
//   bytes 12..19 header length N (uint64, little-endian)
//   N bytes      UTF-8 JSON: {"format", "version", "meta", "tensors": [
//                  {"name", "dtype", "shape", "offset", "nbytes"}, ...]}
//   rest         tensor payloads, row-major, little-endian, at the listed
//                offsets relative to the end of the header

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace scod {

inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'O', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;

  void save(const std::filesystem::path& path) const;
  /// Throws std::runtime_error on a bad magic, unsupported version or a
  /// truncated payload.
  static TensorArchive load(const std::filesystem::path& path);
};

/// Parameters and buffers of `module`, keyed "<prefix><name>".
void export_state(const torch::nn::Module& module, TensorArchive& archive,
                  const std::string& prefix = "");

struct RestoreReport {
  std::vector<std::string> missing;
  std::vector<std::string> unexpected;
};

/// Copies archive tensors into the module's parameters and buffers. Entries
/// in the archive without the prefix are ignored. Throws std::runtime_error
/// on a shape mismatch.
RestoreReport import_state(torch::nn::Module& module, const TensorArchive& archive,
                           const std::string& prefix = "");

}  // namespace scod
