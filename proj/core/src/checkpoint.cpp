#include "scod/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

namespace scod {

namespace {

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    case torch::kInt32: return "int32";
    case torch::kUInt8: return "uint8";
    case torch::kBool: return "bool";
    default: throw std::runtime_error("checkpoint: unsupported dtype");
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "int64") return torch::kInt64;
  if (name == "int32") return torch::kInt32;
  if (name == "uint8") return torch::kUInt8;
  if (name == "bool") return torch::kBool;
  throw std::runtime_error("checkpoint: unknown dtype '" + name + "'");
}

template <typename T>
void write_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  return value;
}

}  // namespace

void TensorArchive::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = "scod-checkpoint";
  header["version"] = kCheckpointVersion;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();

  std::vector<torch::Tensor> payloads;
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    auto t = tensor.detach().cpu().contiguous();
    const auto nbytes = static_cast<std::uint64_t>(t.numel()) * t.element_size();
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype_name(t.scalar_type())},
                                 {"shape", t.sizes().vec()},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    offset += nbytes;
    payloads.push_back(std::move(t));
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp);
    const std::string text = header.dump();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_le<std::uint32_t>(out, kCheckpointVersion);
    write_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : payloads) {
      out.write(static_cast<const char*>(t.data_ptr()),
                static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = read_le<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (header.value("format", "") != "scod-checkpoint") {
    throw std::runtime_error("checkpoint: unexpected format tag");
  }

  TensorArchive archive;
  archive.meta = header.value("meta", nlohmann::json::object());
  const auto data_start = static_cast<std::uint64_t>(in.tellg());
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype"))));
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel()) * t.element_size()) {
      throw std::runtime_error("checkpoint: size mismatch for " + entry.at("name").get<std::string>());
    }
    in.seekg(static_cast<std::streamoff>(data_start + entry.at("offset").get<std::uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw std::runtime_error("checkpoint: truncated payload");
    archive.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return archive;
}

void export_state(const torch::nn::Module& module, TensorArchive& archive,
                  const std::string& prefix) {
  for (const auto& item : module.named_parameters(true)) {
    archive.tensors[prefix + item.key()] = item.value().detach().clone();
  }
  for (const auto& item : module.named_buffers(true)) {
    archive.tensors[prefix + item.key()] = item.value().detach().clone();
  }
}

RestoreReport import_state(torch::nn::Module& module, const TensorArchive& archive,
                           const std::string& prefix) {
  RestoreReport report;
  std::set<std::string> used;
  torch::NoGradGuard no_grad;
  auto restore = [&](const std::string& name, torch::Tensor& target) {
    const auto it = archive.tensors.find(prefix + name);
    if (it == archive.tensors.end()) {
      report.missing.push_back(name);
      return;
    }
    if (it->second.sizes() != target.sizes()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    }
    target.copy_(it->second);
    used.insert(it->first);
  };
  for (auto& item : module.named_parameters(true)) restore(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) restore(item.key(), item.value());
  for (const auto& [name, tensor] : archive.tensors) {
    if (name.rfind(prefix, 0) == 0 && !used.contains(name)) report.unexpected.push_back(name);
  }
  return report;
}

}  // namespace scod
