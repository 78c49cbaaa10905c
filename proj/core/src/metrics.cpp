#include "scod/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "scod/data.hpp"
#include "scod/errors.hpp"

namespace scod {

namespace fs = std::filesystem;

namespace {

// Spacing of doubles at 1.0, the guard the reference implementations use.
constexpr double kEps = std::numeric_limits<double>::epsilon();

struct Maps {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<double> pred;
  std::vector<std::uint8_t> gt;
  std::int64_t fg = 0;

  std::int64_t size() const { return h * w; }
};

torch::Tensor as_2d(const torch::Tensor& t, const char* what) {
  auto x = t;
  while (x.dim() > 2 && x.size(0) == 1) x = x.squeeze(0);
  if (x.dim() != 2) throw ValidationError(std::string(what) + " must be a 2-d map");
  return x;
}

Maps prepare(const torch::Tensor& pred, const torch::Tensor& gt) {
  auto p = as_2d(pred, "prediction");
  auto g = as_2d(gt, "ground truth");
  if (p.sizes() != g.sizes()) throw ValidationError("prediction and ground truth shapes differ");
  if (p.numel() == 0) throw ValidationError("empty map");
  p = p.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  g = g.detach().to(torch::kCPU).ne(0).to(torch::kUInt8).contiguous();
  Maps m;
  m.h = p.size(0);
  m.w = p.size(1);
  m.pred.assign(p.data_ptr<double>(), p.data_ptr<double>() + p.numel());
  m.gt.assign(g.data_ptr<std::uint8_t>(), g.data_ptr<std::uint8_t>() + g.numel());
  for (double v : m.pred) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("prediction values must lie in [0, 1]");
  }
  for (auto v : m.gt) m.fg += v;
  return m;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// --- S-measure ------------------------------------------------------------------------

double object_score(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  const double x = mean_of(values);
  double var = 0;
  for (double v : values) var += (v - x) * (v - x);
  const double sigma = values.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

double s_object(const Maps& m) {
  std::vector<double> fg;
  std::vector<double> bg;
  for (std::int64_t i = 0; i < m.size(); ++i) {
    if (m.gt[i]) {
      fg.push_back(m.pred[i]);
    } else {
      bg.push_back(1.0 - m.pred[i]);
    }
  }
  const double u = static_cast<double>(m.fg) / static_cast<double>(m.size());
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

double block_ssim(const Maps& m, std::int64_t r0, std::int64_t r1, std::int64_t c0, std::int64_t c1) {
  const auto n = (r1 - r0) * (c1 - c0);
  if (n == 0) return 0.0;
  double sx = 0;
  double sy = 0;
  for (auto r = r0; r < r1; ++r) {
    for (auto c = c0; c < c1; ++c) {
      sx += m.pred[r * m.w + c];
      sy += m.gt[r * m.w + c];
    }
  }
  const double x = sx / static_cast<double>(n);
  const double y = sy / static_cast<double>(n);
  double vx = 0;
  double vy = 0;
  double cxy = 0;
  for (auto r = r0; r < r1; ++r) {
    for (auto c = c0; c < c1; ++c) {
      const double dx = m.pred[r * m.w + c] - x;
      const double dy = m.gt[r * m.w + c] - y;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  vx /= denom;
  vy /= denom;
  cxy /= denom;
  const double alpha = 4.0 * x * y * cxy;
  const double beta = (x * x + y * y) * (vx + vy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  if (beta == 0.0) return 1.0;
  return 0.0;
}

double s_region(const Maps& m) {
  double sr = 0;
  double sc = 0;
  for (std::int64_t r = 0; r < m.h; ++r) {
    for (std::int64_t c = 0; c < m.w; ++c) {
      if (m.gt[r * m.w + c]) {
        sr += static_cast<double>(r);
        sc += static_cast<double>(c);
      }
    }
  }
  // Rounded centroid, shifted by one as in the reference formulation.
  const auto y = static_cast<std::int64_t>(std::nearbyint(sr / static_cast<double>(m.fg))) + 1;
  const auto x = static_cast<std::int64_t>(std::nearbyint(sc / static_cast<double>(m.fg))) + 1;
  const double area = static_cast<double>(m.size());
  const double w1 = static_cast<double>(x * y) / area;
  const double w2 = static_cast<double>(y * (m.w - x)) / area;
  const double w3 = static_cast<double>((m.h - y) * x) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * block_ssim(m, 0, y, 0, x) + w2 * block_ssim(m, 0, y, x, m.w) +
         w3 * block_ssim(m, y, m.h, 0, x) + w4 * block_ssim(m, y, m.h, x, m.w);
}

// --- E-measure ------------------------------------------------------------------------

// Highest k in [0, 255] with (k + 1) / 256 <= v, or -1.
int threshold_rank(double v) {
  int k = std::clamp(static_cast<int>(std::floor(v * 256.0)) - 1, -1, 255);
  while (k < 255 && static_cast<double>(k + 2) / 256.0 <= v) ++k;
  while (k >= 0 && static_cast<double>(k + 1) / 256.0 > v) --k;
  return k;
}

double enhanced_value(double p, double g, double mean_p, double mean_g) {
  const double dp = p - mean_p;
  const double dg = g - mean_g;
  const double align = 2.0 * dp * dg / (dp * dp + dg * dg + kEps);
  return (align + 1.0) * (align + 1.0) / 4.0;
}

// --- weighted F -----------------------------------------------------------------------

std::array<double, 49> gaussian_7x7(double sigma) {
  std::array<double, 49> k{};
  double peak = 0;
  for (int dy = -3; dy <= 3; ++dy) {
    for (int dx = -3; dx <= 3; ++dx) {
      const double v = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      k[(dy + 3) * 7 + (dx + 3)] = v;
      peak = std::max(peak, v);
    }
  }
  double sum = 0;
  for (auto& v : k) {
    if (v < kEps * peak) v = 0;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

std::vector<fs::path> list_rasters(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  static const std::set<std::string> kExt{".png", ".jpg", ".jpeg", ".bmp"};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && kExt.contains(e.path().extension().string())) out.push_back(e.path());
  }
  return out;
}

std::map<std::string, fs::path> by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& p : list_rasters(dir)) {
    if (!out.emplace(p.stem().string(), p).second) {
      throw ValidationError("duplicate id '" + p.stem().string() + "' in " + dir.string());
    }
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size() && i < 10; ++i) s += (i ? ", " : "") + items[i];
  if (items.size() > 10) s += ", ... (" + std::to_string(items.size()) + " total)";
  return s;
}

}  // namespace

double mae(const torch::Tensor& pred, const torch::Tensor& gt) {
  const auto m = prepare(pred, gt);
  double s = 0;
  for (std::int64_t i = 0; i < m.size(); ++i) s += std::abs(m.pred[i] - m.gt[i]);
  return s / static_cast<double>(m.size());
}

double s_measure(const torch::Tensor& pred, const torch::Tensor& gt, double alpha) {
  const auto m = prepare(pred, gt);
  if (m.fg == 0) return 1.0 - mean_of(m.pred);
  if (m.fg == m.size()) return mean_of(m.pred);
  return std::max(0.0, alpha * s_object(m) + (1.0 - alpha) * s_region(m));
}

double e_measure(const torch::Tensor& pred, const torch::Tensor& gt) {
  const auto m = prepare(pred, gt);
  const double n = static_cast<double>(m.size());
  // Pixels at or above threshold k, split by gt class.
  std::array<std::int64_t, 257> fg_above{};
  std::array<std::int64_t, 257> bg_above{};
  for (std::int64_t i = 0; i < m.size(); ++i) {
    const int k = threshold_rank(m.pred[i]);
    if (k < 0) continue;
    (m.gt[i] ? fg_above : bg_above)[k] += 1;
  }
  for (int k = 254; k >= 0; --k) {
    fg_above[k] += fg_above[k + 1];
    bg_above[k] += bg_above[k + 1];
  }
  const auto g = m.fg;
  double total = 0;
  for (int k = 0; k < 256; ++k) {
    const auto tp = fg_above[k];
    const auto fp = bg_above[k];
    const auto fn = g - tp;
    const auto tn = m.size() - g - fp;
    double score = 0;
    if (g == 0) {
      score = static_cast<double>(tn);
    } else if (g == m.size()) {
      score = static_cast<double>(tp);
    } else {
      const double mp = static_cast<double>(tp + fp) / n;
      const double mg = static_cast<double>(g) / n;
      score = static_cast<double>(tp) * enhanced_value(1, 1, mp, mg) +
              static_cast<double>(fp) * enhanced_value(1, 0, mp, mg) +
              static_cast<double>(fn) * enhanced_value(0, 1, mp, mg) +
              static_cast<double>(tn) * enhanced_value(0, 0, mp, mg);
    }
    total += score / n;
  }
  return total / 256.0;
}

DistanceTransform distance_to_foreground(const std::vector<std::uint8_t>& mask, std::int64_t height,
                                         std::int64_t width) {
  constexpr auto kNone = std::numeric_limits<std::int64_t>::max();
  // Per column: nearest foreground row for every row (upper one on ties).
  std::vector<std::int64_t> col_row(height * width, -1);
  for (std::int64_t c = 0; c < width; ++c) {
    std::int64_t last = -1;
    for (std::int64_t r = 0; r < height; ++r) {
      if (mask[r * width + c]) last = r;
      col_row[r * width + c] = last;
    }
    std::int64_t next = -1;
    for (std::int64_t r = height - 1; r >= 0; --r) {
      if (mask[r * width + c]) next = r;
      auto& best = col_row[r * width + c];
      if (next >= 0 && (best < 0 || next - r < r - best)) best = next;
    }
  }

  DistanceTransform out;
  out.distance.assign(height * width, 0.0);
  out.nearest.assign(height * width, -1);
  for (std::int64_t r = 0; r < height; ++r) {
    for (std::int64_t c = 0; c < width; ++c) {
      std::int64_t best_d2 = kNone;
      std::int64_t best_r = 0;
      std::int64_t best_c = 0;
      for (std::int64_t off = 0; off < width; ++off) {
        if (off * off > best_d2) break;
        for (int side = 0; side < (off == 0 ? 1 : 2); ++side) {
          const auto cc = side == 0 ? c - off : c + off;
          if (cc < 0 || cc >= width) continue;
          const auto fr = col_row[r * width + cc];
          if (fr < 0) continue;
          const auto d2 = (fr - r) * (fr - r) + off * off;
          if (d2 < best_d2 || (d2 == best_d2 && (fr < best_r || (fr == best_r && cc < best_c)))) {
            best_d2 = d2;
            best_r = fr;
            best_c = cc;
          }
        }
      }
      if (best_d2 == kNone) continue;
      out.distance[r * width + c] = std::sqrt(static_cast<double>(best_d2));
      out.nearest[r * width + c] = best_r * width + best_c;
    }
  }
  return out;
}

double weighted_fbeta(const torch::Tensor& pred, const torch::Tensor& gt, double beta2) {
  const auto m = prepare(pred, gt);
  if (m.fg == 0) {
    std::cerr << "warning: weighted F-measure of an empty ground truth is defined as 0\n";
    return 0.0;
  }
  const auto n = m.size();
  const auto dt = distance_to_foreground(m.gt, m.h, m.w);
  std::vector<double> e(n);
  std::vector<double> et(n);
  for (std::int64_t i = 0; i < n; ++i) e[i] = std::abs(m.pred[i] - m.gt[i]);
  for (std::int64_t i = 0; i < n; ++i) et[i] = m.gt[i] ? e[i] : e[dt.nearest[i]];

  static const auto kernel = gaussian_7x7(5.0);
  double tp_err = 0;
  double fp_err = 0;
  for (std::int64_t r = 0; r < m.h; ++r) {
    for (std::int64_t c = 0; c < m.w; ++c) {
      const auto i = r * m.w + c;
      if (m.gt[i]) {
        double ea = 0;
        for (int dy = -3; dy <= 3; ++dy) {
          for (int dx = -3; dx <= 3; ++dx) {
            const auto rr = r + dy;
            const auto cc = c + dx;
            if (rr < 0 || rr >= m.h || cc < 0 || cc >= m.w) continue;
            ea += kernel[(dy + 3) * 7 + (dx + 3)] * et[rr * m.w + cc];
          }
        }
        tp_err += ea < e[i] ? ea : e[i];
      } else {
        const double b = 2.0 - std::exp(std::log(0.5) / 5.0 * dt.distance[i]);
        fp_err += e[i] * b;
      }
    }
  }
  const double g = static_cast<double>(m.fg);
  const double tpw = g - tp_err;
  const double recall = 1.0 - tp_err / g;
  const double precision = tpw / (tpw + fp_err + kEps);
  return (1.0 + beta2) * recall * precision / (recall + beta2 * precision + kEps);
}

SampleMetrics compute_metrics(const std::string& id, const torch::Tensor& pred, const torch::Tensor& gt) {
  return SampleMetrics{id, mae(pred, gt), s_measure(pred, gt), e_measure(pred, gt), weighted_fbeta(pred, gt)};
}

void MetricReport::finalize() {
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  mae = s_measure = e_measure = weighted_fbeta = 0;
  if (samples.empty()) return;
  for (const auto& s : samples) {
    mae += s.mae;
    s_measure += s.s_measure;
    e_measure += s.e_measure;
    weighted_fbeta += s.weighted_fbeta;
  }
  const double n = static_cast<double>(samples.size());
  mae /= n;
  s_measure /= n;
  e_measure /= n;
  weighted_fbeta /= n;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["count"] = samples.size();
  j["mean"] = {{"mae", mae}, {"s_measure", s_measure}, {"e_measure", e_measure}, {"weighted_fbeta", weighted_fbeta}};
  j["samples"] = nlohmann::json::array();
  for (const auto& s : samples) {
    j["samples"].push_back({{"id", s.id},
                            {"mae", s.mae},
                            {"s_measure", s.s_measure},
                            {"e_measure", s.e_measure},
                            {"weighted_fbeta", s.weighted_fbeta}});
  }
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  for (const auto& s : j.at("samples")) {
    r.samples.push_back(SampleMetrics{s.at("id"), s.at("mae"), s.at("s_measure"), s.at("e_measure"),
                                      s.at("weighted_fbeta")});
  }
  r.finalize();
  return r;
}

std::string MetricReport::to_csv() const {
  std::string out = "id,mae,s_measure,e_measure,weighted_fbeta\n";
  char buf[160];
  auto row = [&](const std::string& id, double a, double b, double c, double d) {
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g,%.17g\n", a, b, c, d);
    out += id + buf;
  };
  for (const auto& s : samples) row(s.id, s.mae, s.s_measure, s.e_measure, s.weighted_fbeta);
  row("mean", mae, s_measure, e_measure, weighted_fbeta);
  return out;
}

MetricReport MetricReport::from_csv(const std::string& text) {
  MetricReport r;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw ValidationError("malformed metrics CSV row: " + line);
    if (cells[0] == "mean") continue;
    r.samples.push_back(SampleMetrics{cells[0], std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]),
                                      std::stod(cells[4])});
  }
  r.finalize();
  return r;
}

std::string MetricReport::table(const std::string& label) const {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-16s %8s %8s %8s %8s %6s\n", "", "MAE", "S_m", "E_m", "F_b^w", "n");
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-16s %8.3f %8.3f %8.3f %8.3f %6zu\n", label.empty() ? "result" : label.c_str(),
                mae, s_measure, e_measure, weighted_fbeta, samples.size());
  out += buf;
  return out;
}

MetricReport evaluate_dataset(const fs::path& pred_dir, const fs::path& gt_dir, const EvalOptions& options) {
  const auto preds = by_stem(pred_dir);
  const auto gts = by_stem(gt_dir);
  std::vector<std::string> missing;
  std::vector<std::string> extra;
  for (const auto& [id, path] : gts) {
    if (!preds.contains(id)) missing.push_back(id);
  }
  for (const auto& [id, path] : preds) {
    if (!gts.contains(id)) extra.push_back(id);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "prediction and ground-truth ids differ";
    if (!missing.empty()) msg += "; missing predictions: " + join(missing);
    if (!extra.empty()) msg += "; predictions without ground truth: " + join(extra);
    throw ValidationError(msg);
  }
  if (gts.empty()) throw ValidationError("no ground-truth maps in " + gt_dir.string());

  MetricReport report;
  for (const auto& [id, gt_path] : gts) {
    auto gt = read_gray(gt_path);
    auto pred = read_gray(preds.at(id));
    if (options.resolution) {
      const auto s = *options.resolution;
      gt = resize_bilinear(gt, s, s);
      pred = resize_bilinear(pred, s, s);
    } else if (pred.sizes() != gt.sizes()) {
      pred = resize_bilinear(pred, gt.size(0), gt.size(1));
    }
    pred = pred.clamp(0.0, 1.0);
    if (options.normalize_predictions) {
      const auto lo = pred.min();
      const auto hi = pred.max();
      if (hi.item<float>() > lo.item<float>()) pred = (pred - lo) / (hi - lo);
    }
    const auto mask = gt.mul(255.0).gt(128.0);
    report.samples.push_back(compute_metrics(id, pred, mask));
  }
  report.finalize();
  return report;
}

}  // namespace scod
