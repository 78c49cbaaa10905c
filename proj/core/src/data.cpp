#include "scod/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "scod/errors.hpp"
#include "scod/rng.hpp"

namespace fs = std::filesystem;

namespace scod {

namespace {

torch::Tensor mat_to_tensor_u8(const cv::Mat& mat) {
  const cv::Mat contiguous = mat.isContinuous() ? mat : mat.clone();
  if (contiguous.channels() == 1) {
    return torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols}, torch::kUInt8)
        .clone();
  }
  return torch::from_blob(contiguous.data,
                          {contiguous.rows, contiguous.cols, contiguous.channels()},
                          torch::kUInt8)
      .clone();
}

cv::Mat tensor_to_mat_u8(const torch::Tensor& hw_or_hwc) {
  auto t = hw_or_hwc.to(torch::kUInt8).contiguous();
  const int rows = static_cast<int>(t.size(0));
  const int cols = static_cast<int>(t.size(1));
  const int channels = t.dim() == 3 ? static_cast<int>(t.size(2)) : 1;
  cv::Mat mat(rows, cols, CV_8UC(channels));
  std::memcpy(mat.data, t.data_ptr<std::uint8_t>(), static_cast<std::size_t>(t.numel()));
  return mat;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_mat(const fs::path& path, const cv::Mat& mat) {
  ensure_parent(path);
  if (!cv::imwrite(path.string(), mat)) {
    throw std::runtime_error("failed to write raster: " + path.string());
  }
}

cv::Mat read_mat(const fs::path& path, int flags) {
  if (!fs::exists(path)) throw ValidationError("missing file: " + path.string());
  cv::Mat mat = cv::imread(path.string(), flags);
  if (mat.empty()) throw ValidationError("corrupt raster: " + path.string());
  return mat;
}

void check_labels(const torch::Tensor& labels) {
  if (labels.numel() > 0 && labels.max().item<std::int64_t>() > 2) {
    throw ValidationError("invalid scribble label");
  }
}

}  // namespace

// --- domain types ------------------------------------------------------------

Image::Image(torch::Tensor pixels) {
  if (pixels.dim() != 3 || pixels.size(0) != 3) {
    throw ValidationError("image must be a [3, H, W] tensor");
  }
  if (pixels.size(1) < kMinImageSide || pixels.size(2) < kMinImageSide) {
    throw ValidationError("image sides must be at least 32 pixels");
  }
  pixels = pixels.to(torch::kFloat32).contiguous();
  const auto lo = pixels.min().item<float>();
  const auto hi = pixels.max().item<float>();
  if (!(lo >= 0.0F && hi <= 1.0F)) throw ValidationError("image values must lie in [0, 1]");
  pixels_ = std::move(pixels);
}

ScribbleMap::ScribbleMap(torch::Tensor labels) {
  if (labels.dim() != 2) throw ValidationError("scribble map must be a [H, W] tensor");
  if (labels.is_floating_point()) throw ValidationError("scribble labels must be integers");
  if (labels.numel() > 0 && labels.min().item<std::int64_t>() < 0) {
    throw ValidationError("invalid scribble label");
  }
  check_labels(labels);
  labels_ = labels.to(torch::kUInt8).contiguous();
}

ScribbleMap ScribbleMap::empty(std::int64_t height, std::int64_t width) {
  return ScribbleMap(torch::zeros({height, width}, torch::kUInt8));
}

std::int64_t ScribbleMap::count(Label label) const {
  return labels_.eq(static_cast<std::uint8_t>(label)).sum().item<std::int64_t>();
}

// --- manifest -----------------------------------------------------------------

std::optional<fs::path> DatasetManifest::image_path(const std::string& id) const {
  for (const char* ext : {".png", ".jpg", ".jpeg", ".PNG", ".JPG"}) {
    auto candidate = split_dir() / images_dir / (id + ext);
    if (fs::exists(candidate)) return candidate;
  }
  return std::nullopt;
}

fs::path DatasetManifest::scribble_path(const std::string& id) const {
  return split_dir() / scribbles_dir / (id + ".png");
}

fs::path DatasetManifest::gt_path(const std::string& id) const {
  return split_dir() / gt_dir / (id + ".png");
}

bool DatasetManifest::contains(const std::string& id) const {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

DatasetManifest DatasetManifest::open(const fs::path& root, const std::string& split,
                                      SplitKind kind) {
  DatasetManifest manifest;
  manifest.root = root;
  manifest.split = split;
  manifest.kind = kind;
  const auto dir = manifest.split_dir();
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw ValidationError("dataset split directory not readable: " + dir.string());
  }
  if (fs::exists(manifest.manifest_path())) {
    std::ifstream in(manifest.manifest_path());
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (!line.empty()) manifest.ids.push_back(line);
    }
  } else {
    const auto images = dir / manifest.images_dir;
    if (fs::is_directory(images, ec)) {
      for (const auto& entry : fs::directory_iterator(images)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
          manifest.ids.push_back(entry.path().stem().string());
        }
      }
    }
    std::sort(manifest.ids.begin(), manifest.ids.end());
  }
  return manifest;
}

// --- raster I/O -----------------------------------------------------------------

Image read_image(const fs::path& path) {
  cv::Mat bgr = read_mat(path, cv::IMREAD_COLOR);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto hwc = mat_to_tensor_u8(rgb);
  return Image(hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0));
}

void write_image(const fs::path& path, const Image& image) {
  auto hwc = image.pixels().mul(255.0).round().clamp(0, 255).permute({1, 2, 0});
  cv::Mat rgb = tensor_to_mat_u8(hwc);
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  write_mat(path, bgr);
}

torch::Tensor read_mask(const fs::path& path) {
  cv::Mat gray = read_mat(path, cv::IMREAD_GRAYSCALE);
  return mat_to_tensor_u8(gray).gt(0).to(torch::kUInt8);
}

void write_mask(const fs::path& path, const torch::Tensor& mask) {
  write_mat(path, tensor_to_mat_u8(mask.gt(0).to(torch::kUInt8).mul(255)));
}

torch::Tensor read_gray(const fs::path& path) {
  cv::Mat gray = read_mat(path, cv::IMREAD_GRAYSCALE);
  return mat_to_tensor_u8(gray).to(torch::kFloat32).div(255.0);
}

void write_gray(const fs::path& path, const torch::Tensor& map) {
  write_mat(path, tensor_to_mat_u8(map.detach().to(torch::kFloat64).clamp(0, 1).mul(255.0).round()));
}

std::vector<std::uint8_t> encode_scribble(const ScribbleMap& map) {
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(".png", tensor_to_mat_u8(map.labels()), bytes)) {
    throw std::runtime_error("failed to encode scribble map");
  }
  return bytes;
}

ScribbleMap decode_scribble(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw ValidationError("corrupt scribble raster: empty payload");
  const cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8U,
                       const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat mat = cv::imdecode(buffer, cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw ValidationError("corrupt scribble raster");
  if (mat.channels() != 1 || mat.depth() != CV_8U) {
    throw ValidationError("scribble must be a single-channel 8-bit raster");
  }
  return ScribbleMap(mat_to_tensor_u8(mat));
}

ScribbleMap read_scribble(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("missing file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_scribble(bytes);
}

void write_scribble(const fs::path& path, const ScribbleMap& map) {
  const auto bytes = encode_scribble(map);
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed to write scribble: " + path.string());
}

Sample load_sample(const DatasetManifest& manifest, const std::string& id) {
  if (!manifest.contains(id)) throw ValidationError("unknown sample: " + id);
  const auto image_file = manifest.image_path(id);
  if (!image_file) throw ValidationError("missing image file for sample: " + id);

  Sample sample;
  sample.id = id;
  sample.image = read_image(*image_file);
  const auto h = sample.image.height();
  const auto w = sample.image.width();

  const auto scribble_file = manifest.scribble_path(id);
  if (fs::exists(scribble_file)) {
    sample.scribble = read_scribble(scribble_file);
  } else if (manifest.kind == SplitKind::kTrain) {
    throw ValidationError("missing scribble for sample: " + id);
  } else {
    sample.scribble = ScribbleMap::empty(h, w);
  }
  if (sample.scribble.height() != h || sample.scribble.width() != w) {
    throw ValidationError("size mismatch between image and scribble: " + id);
  }

  if (manifest.kind == SplitKind::kTest) {
    auto gt = read_mask(manifest.gt_path(id));
    if (gt.size(0) != h || gt.size(1) != w) {
      throw ValidationError("size mismatch between image and gt: " + id);
    }
    sample.gt_mask = std::move(gt);
  }
  return sample;
}

void write_sample(const DatasetManifest& manifest, const Sample& sample) {
  const auto dir = manifest.split_dir();
  write_image(dir / manifest.images_dir / (sample.id + ".png"), sample.image);
  write_scribble(manifest.scribble_path(sample.id), sample.scribble);
  if (sample.gt_mask) write_mask(manifest.gt_path(sample.id), *sample.gt_mask);
}

void write_manifest(const DatasetManifest& manifest) {
  ensure_parent(manifest.manifest_path());
  std::ofstream out(manifest.manifest_path(), std::ios::trunc);
  for (const auto& id : manifest.ids) out << id << '\n';
}

// --- paired augmentation ------------------------------------------------------------

torch::Tensor resize_bilinear(const torch::Tensor& raster, std::int64_t height,
                              std::int64_t width) {
  const bool planar = raster.dim() == 2;
  auto batched = planar ? raster.unsqueeze(0).unsqueeze(0) : raster.unsqueeze(0);
  if (batched.size(2) == height && batched.size(3) == width) return raster.clone();
  namespace F = torch::nn::functional;
  auto out = F::interpolate(batched, F::InterpolateFuncOptions()
                                         .size(std::vector<std::int64_t>{height, width})
                                         .mode(torch::kBilinear)
                                         .align_corners(false));
  return planar ? out.squeeze(0).squeeze(0) : out.squeeze(0);
}

torch::Tensor resize_nearest(const torch::Tensor& labels, std::int64_t height,
                             std::int64_t width) {
  const auto in_h = labels.size(0);
  const auto in_w = labels.size(1);
  // floor(dst * in / out) in exact integer arithmetic
  auto rows = torch::arange(height, torch::kInt64).mul(in_h).div(height, "floor");
  auto cols = torch::arange(width, torch::kInt64).mul(in_w).div(width, "floor");
  return labels.index_select(0, rows).index_select(1, cols).contiguous();
}

std::pair<Image, ScribbleMap> resize_pair(const Image& image, const ScribbleMap& scribble,
                                          std::int64_t size) {
  if (size < kMinImageSide) throw ValidationError("resize target must be at least 32");
  if (image.height() != scribble.height() || image.width() != scribble.width()) {
    throw ValidationError("size mismatch between image and scribble");
  }
  auto pixels = resize_bilinear(image.pixels(), size, size).clamp(0.0, 1.0);
  return {Image(pixels), ScribbleMap(resize_nearest(scribble.labels(), size, size))};
}

std::pair<Image, ScribbleMap> hflip_pair(const Image& image, const ScribbleMap& scribble) {
  return {Image(image.pixels().flip({2})), ScribbleMap(scribble.labels().flip({1}))};
}

// --- synthetic samples -------------------------------------------------------------

namespace {

struct TextureParams {
  std::array<double, 3> color{};
  std::array<double, 3> tint{};
  double amplitude = 0.2;
  double period = 16.0;
};

/// Multi-octave value noise on a lattice, smoothstep-interpolated, in [-1, 1].
class ValueNoise {
 public:
  ValueNoise(Rng& rng, std::int64_t size, double period) : size_(size), period_(period) {
    for (int octave = 0; octave < kOctaves; ++octave) {
      const double p = period_ / std::pow(2.0, octave);
      const auto cells = static_cast<std::int64_t>(std::ceil(static_cast<double>(size_) / p)) + 2;
      std::vector<double> lattice(static_cast<std::size_t>(cells * cells));
      for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
      lattices_.push_back({cells, p, std::move(lattice)});
    }
  }

  double at(double y, double x) const {
    double total = 0.0;
    double weight = 1.0;
    double norm = 0.0;
    for (const auto& level : lattices_) {
      const double gy = y / level.period;
      const double gx = x / level.period;
      const auto y0 = static_cast<std::int64_t>(std::floor(gy));
      const auto x0 = static_cast<std::int64_t>(std::floor(gx));
      const double ty = smooth(gy - static_cast<double>(y0));
      const double tx = smooth(gx - static_cast<double>(x0));
      auto v = [&](std::int64_t r, std::int64_t c) {
        return level.values[static_cast<std::size_t>(r * level.cells + c)];
      };
      const double top = v(y0, x0) * (1 - tx) + v(y0, x0 + 1) * tx;
      const double bottom = v(y0 + 1, x0) * (1 - tx) + v(y0 + 1, x0 + 1) * tx;
      total += weight * (top * (1 - ty) + bottom * ty);
      norm += weight;
      weight *= 0.5;
    }
    return total / norm;
  }

 private:
  static constexpr int kOctaves = 3;
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

  struct Level {
    std::int64_t cells;
    double period;
    std::vector<double> values;
  };
  std::int64_t size_;
  double period_;
  std::vector<Level> lattices_;
};

TextureParams random_texture(Rng& rng, std::int64_t size) {
  TextureParams p;
  for (auto& c : p.color) c = rng.uniform(0.3, 0.7);
  for (auto& t : p.tint) t = rng.uniform(0.6, 1.0);
  p.amplitude = rng.uniform(0.15, 0.3);
  p.period = rng.uniform(static_cast<double>(size) / 8.0, static_cast<double>(size) / 4.0);
  return p;
}

double offset(Rng& rng, double value, double max_offset) {
  const double magnitude = rng.uniform(0.5 * max_offset, max_offset);
  return value * (1.0 + (rng.bernoulli(0.5) ? magnitude : -magnitude));
}

TextureParams camouflage_of(Rng& rng, const TextureParams& bg, double max_offset) {
  TextureParams fg = bg;
  for (auto& c : fg.color) c = offset(rng, c, max_offset);
  fg.amplitude = offset(rng, bg.amplitude, max_offset);
  fg.period = offset(rng, bg.period, max_offset);
  return fg;
}

/// Pixels whose (2m+1)^2 neighbourhood lies inside the image and inside region.
std::vector<std::uint8_t> erode(const std::vector<std::uint8_t>& region, std::int64_t size,
                                std::int64_t margin) {
  std::vector<std::uint8_t> out(region.size(), 0);
  for (std::int64_t r = margin; r < size - margin; ++r) {
    for (std::int64_t c = margin; c < size - margin; ++c) {
      bool inside = true;
      for (std::int64_t dr = -margin; dr <= margin && inside; ++dr) {
        for (std::int64_t dc = -margin; dc <= margin; ++dc) {
          if (!region[static_cast<std::size_t>((r + dr) * size + c + dc)]) {
            inside = false;
            break;
          }
        }
      }
      out[static_cast<std::size_t>(r * size + c)] = inside ? 1 : 0;
    }
  }
  return out;
}

/// Walks a straight line through (cy, cx) in both directions while the pixel
/// stays inside `allowed`; half-pixel steps keep the path 8-connected.
void draw_connected_line(std::vector<std::uint8_t>& labels, const std::vector<std::uint8_t>& allowed,
                         std::int64_t size, double cy, double cx, double angle, double max_len,
                         std::uint8_t label) {
  const double dy = std::sin(angle);
  const double dx = std::cos(angle);
  for (const double dir : {1.0, -1.0}) {
    for (double t = 0.0; t <= max_len; t += 0.5) {
      const auto r = static_cast<std::int64_t>(std::lround(cy + dir * t * dy));
      const auto c = static_cast<std::int64_t>(std::lround(cx + dir * t * dx));
      if (r < 0 || c < 0 || r >= size || c >= size) break;
      const auto idx = static_cast<std::size_t>(r * size + c);
      if (!allowed[idx]) break;
      labels[idx] = label;
    }
  }
}

/// Adds 4-neighbours of existing `label` pixels that are inside `allowed`.
void thicken(std::vector<std::uint8_t>& labels, const std::vector<std::uint8_t>& allowed,
             std::int64_t size, std::uint8_t label) {
  const auto seed = labels;
  for (std::int64_t r = 0; r < size; ++r) {
    for (std::int64_t c = 0; c < size; ++c) {
      if (seed[static_cast<std::size_t>(r * size + c)] != label) continue;
      const std::array<std::pair<std::int64_t, std::int64_t>, 4> nbrs{
          {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}}};
      for (auto [nr, nc] : nbrs) {
        if (nr < 0 || nc < 0 || nr >= size || nc >= size) continue;
        const auto idx = static_cast<std::size_t>(nr * size + nc);
        if (allowed[idx] && labels[idx] == 0) labels[idx] = label;
      }
    }
  }
}

Sample synth_one(std::uint64_t seed, std::int64_t index, std::int64_t size,
                 const SynthOptions& options) {
  Rng rng(seed, RngStream::kSynth, static_cast<std::uint64_t>(index));
  const auto n = static_cast<std::size_t>(size * size);
  const double s = static_cast<double>(size);

  // Star-shaped blob: radius in [0.12, 0.25] * size around a central point.
  const double cy = rng.uniform(0.4, 0.6) * s;
  const double cx = rng.uniform(0.4, 0.6) * s;
  const double base_radius = rng.uniform(0.17, 0.22) * s;
  std::array<double, 3> harmonic_amp{};
  std::array<double, 3> harmonic_phase{};
  for (std::size_t k = 0; k < 3; ++k) {
    harmonic_amp[k] = rng.uniform(0.0, 0.12);
    harmonic_phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  auto radius_at = [&](double theta) {
    double r = 1.0;
    for (std::size_t k = 0; k < 3; ++k) {
      r += harmonic_amp[k] * std::cos(static_cast<double>(k + 2) * theta + harmonic_phase[k]);
    }
    return std::clamp(base_radius * r, 0.12 * s, 0.25 * s);
  };

  std::vector<std::uint8_t> mask(n, 0);
  for (std::int64_t r = 0; r < size; ++r) {
    for (std::int64_t c = 0; c < size; ++c) {
      const double y = static_cast<double>(r) + 0.5 - cy;
      const double x = static_cast<double>(c) + 0.5 - cx;
      if (std::hypot(y, x) <= radius_at(std::atan2(y, x))) {
        mask[static_cast<std::size_t>(r * size + c)] = 1;
      }
    }
  }

  const TextureParams bg = random_texture(rng, size);
  const TextureParams fg = camouflage_of(rng, bg, options.max_param_offset);
  const ValueNoise bg_noise(rng, size, bg.period);
  const ValueNoise fg_noise(rng, size, fg.period);

  auto pixels = torch::empty({3, size, size}, torch::kFloat32);
  auto acc = pixels.accessor<float, 3>();
  for (std::int64_t r = 0; r < size; ++r) {
    for (std::int64_t c = 0; c < size; ++c) {
      const bool inside = mask[static_cast<std::size_t>(r * size + c)] != 0;
      const TextureParams& p = inside ? fg : bg;
      const double v = (inside ? fg_noise : bg_noise).at(static_cast<double>(r), static_cast<double>(c));
      for (std::int64_t ch = 0; ch < 3; ++ch) {
        const auto k = static_cast<std::size_t>(ch);
        const double value = p.color[k] + p.amplitude * p.tint[k] * v;
        acc[ch][r][c] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }

  const auto margin = std::max<std::int64_t>(1, std::llround(options.erosion_fraction * s));
  std::vector<std::uint8_t> background(n);
  for (std::size_t i = 0; i < n; ++i) background[i] = mask[i] ? 0 : 1;
  const auto fg_allowed = erode(mask, size, margin);
  const auto bg_allowed = erode(background, size, margin);

  std::vector<std::uint8_t> labels(n, 0);
  // Foreground stroke through the blob centre at a random angle.
  const double fg_angle = rng.uniform(0.0, std::numbers::pi);
  draw_connected_line(labels, fg_allowed, size, std::floor(cy), std::floor(cx), fg_angle, s,
                      static_cast<std::uint8_t>(Label::kForeground));
  thicken(labels, fg_allowed, size, static_cast<std::uint8_t>(Label::kForeground));

  // Background stroke along one image side, `margin` pixels in.
  const auto side = rng.integer(0, 3);
  const double len = rng.uniform(0.3, 0.6) * s;
  const double along = rng.uniform(s * 0.2, s * 0.8);
  const double inset = static_cast<double>(margin);
  const double far = s - 1.0 - inset;
  double by = 0.0;
  double bx = 0.0;
  double b_angle = 0.0;
  switch (side) {
    case 0: by = inset; bx = along; b_angle = 0.0; break;
    case 1: by = far; bx = along; b_angle = 0.0; break;
    case 2: by = along; bx = inset; b_angle = std::numbers::pi / 2; break;
    default: by = along; bx = far; b_angle = std::numbers::pi / 2; break;
  }
  draw_connected_line(labels, bg_allowed, size, by, bx, b_angle, len / 2.0,
                      static_cast<std::uint8_t>(Label::kBackground));
  thicken(labels, bg_allowed, size, static_cast<std::uint8_t>(Label::kBackground));

  Sample sample;
  char name[32];
  std::snprintf(name, sizeof(name), "synth_%05lld", static_cast<long long>(index));
  sample.id = name;
  sample.image = Image(pixels);
  sample.scribble = ScribbleMap(torch::from_blob(labels.data(), {size, size}, torch::kUInt8).clone());
  sample.gt_mask = torch::from_blob(mask.data(), {size, size}, torch::kUInt8).clone();

  if (sample.scribble.count(Label::kForeground) == 0 ||
      sample.scribble.count(Label::kBackground) == 0) {
    throw std::logic_error("synthetic sample lost a scribble class: " + sample.id);
  }
  return sample;
}

}  // namespace

std::vector<Sample> synth_generate(std::uint64_t seed, std::int64_t count, std::int64_t size,
                                   const SynthOptions& options) {
  if (count < 1) throw ValidationError("synthetic sample count must be at least 1");
  if (size < kMinImageSide) {
    throw ValidationError("synthetic size too small to fit erosion margins (minimum 32)");
  }
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) out.push_back(synth_one(seed, i, size, options));
  return out;
}

// --- validation ------------------------------------------------------------------

ValidationReport validate_dataset(const DatasetManifest& manifest) {
  std::error_code ec;
  if (!fs::is_directory(manifest.split_dir(), ec)) {
    throw ValidationError("dataset root not readable: " + manifest.split_dir().string());
  }
  ValidationReport report;
  auto add = [&](const std::string& id, std::string kind, std::string message) {
    report.violations.push_back({id, std::move(kind), std::move(message)});
  };

  for (const auto& id : manifest.ids) {
    ++report.checked;
    const auto image_file = manifest.image_path(id);
    if (!image_file) {
      add(id, "missing_image", "no image file");
      continue;
    }
    cv::Mat image = cv::imread(image_file->string(), cv::IMREAD_COLOR);
    if (image.empty()) {
      add(id, "corrupt_image", "image cannot be decoded");
      continue;
    }

    const auto scribble_file = manifest.scribble_path(id);
    if (fs::exists(scribble_file)) {
      try {
        const auto scribble = read_scribble(scribble_file);
        if (scribble.height() != image.rows || scribble.width() != image.cols) {
          add(id, "size_mismatch", "scribble size differs from image size");
        } else if (manifest.kind == SplitKind::kTrain &&
                   (scribble.count(Label::kForeground) == 0 ||
                    scribble.count(Label::kBackground) == 0)) {
          add(id, "missing_class", "scribble lacks a foreground or background stroke");
        }
      } catch (const ValidationError& e) {
        add(id, "bad_labels", e.what());
      }
    } else if (manifest.kind == SplitKind::kTrain) {
      add(id, "missing_scribble", "no scribble file");
    }

    if (manifest.kind == SplitKind::kTest) {
      const auto gt_file = manifest.gt_path(id);
      if (!fs::exists(gt_file)) {
        add(id, "missing_gt", "no ground-truth mask");
        continue;
      }
      cv::Mat gt = cv::imread(gt_file.string(), cv::IMREAD_GRAYSCALE);
      if (gt.empty()) {
        add(id, "corrupt_gt", "ground-truth mask cannot be decoded");
      } else if (gt.rows != image.rows || gt.cols != image.cols) {
        add(id, "size_mismatch", "gt size differs from image size");
      }
    }
  }
  return report;
}

}  // namespace scod
