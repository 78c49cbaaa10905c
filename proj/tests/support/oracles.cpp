#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace scod::oracle {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

double mean(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double covariance(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return 0.0;
  const double mx = mean(x);
  const double my = mean(y);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
  return s / static_cast<double>(x.size() - 1);
}

double disagreement(double a, double b) { return 1.0 - a * b - (1.0 - a) * (1.0 - b); }

double round_half_even(double x) {
  const double f = std::floor(x);
  const double d = x - f;
  if (d > 0.5) return f + 1;
  if (d < 0.5) return f;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1;
}

std::vector<double> region(const Grid& g, std::int64_t r0, std::int64_t r1, std::int64_t c0, std::int64_t c1) {
  std::vector<double> out;
  for (auto r = r0; r < r1; ++r) {
    for (auto c = c0; c < c1; ++c) out.push_back(g.at(r, c));
  }
  return out;
}

double structural(const std::vector<double>& p, const std::vector<double>& g) {
  if (p.empty()) return 0.0;
  const double x = mean(p);
  const double y = mean(g);
  const double sx = covariance(p, p);
  const double sy = covariance(g, g);
  const double sxy = covariance(p, g);
  const double a = 4 * x * y * sxy;
  const double b = (x * x + y * y) * (sx + sy);
  if (a != 0) return a / (b + kEps);
  return b == 0 ? 1.0 : 0.0;
}

double object_similarity(const std::vector<double>& values) {
  const double x = mean(values);
  const double sd = std::sqrt(covariance(values, values));
  return 2 * x / (x * x + 1 + sd + kEps);
}

}  // namespace

Grid to_grid(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  while (d.dim() > 2) d = d.squeeze(0);
  Grid g(d.size(0), d.size(1));
  auto a = d.accessor<double, 2>();
  for (std::int64_t r = 0; r < g.h; ++r) {
    for (std::int64_t c = 0; c < g.w; ++c) g.at(r, c) = a[r][c];
  }
  return g;
}

std::vector<Grid> to_grids(const torch::Tensor& t) {
  std::vector<Grid> out;
  for (std::int64_t c = 0; c < t.size(0); ++c) out.push_back(to_grid(t[c]));
  return out;
}

torch::Tensor to_tensor(const Grid& g) {
  auto t = torch::empty({g.h, g.w}, torch::kFloat64);
  auto a = t.accessor<double, 2>();
  for (std::int64_t r = 0; r < g.h; ++r) {
    for (std::int64_t c = 0; c < g.w; ++c) a[r][c] = g.at(r, c);
  }
  return t;
}

ViewLookup view_lookup(const ViewTransform& t, const Grid& source) {
  const auto ch = t.crop.height;
  const auto cw = t.crop.width;
  const auto oh = std::max<std::int64_t>(1, std::llround(t.resize_scale * static_cast<double>(ch)));
  const auto ow = std::max<std::int64_t>(1, std::llround(t.resize_scale * static_cast<double>(cw)));

  // Value and coverage of the shifted crop at integer coordinates.
  auto shifted = [&](std::int64_t r, std::int64_t c, double& value, double& covered) {
    const auto sr = r - t.dy;
    const auto sc = c - t.dx;
    if (sr < 0 || sr >= ch || sc < 0 || sc >= cw) {
      value = 0;
      covered = 0;
    } else {
      value = source.at(t.crop.top + sr, t.crop.left + sc);
      covered = 1;
    }
  };
  auto taps = [](std::int64_t out_index, std::int64_t in_size, std::int64_t out_size, std::int64_t& i0,
                 std::int64_t& i1, double& frac) {
    const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
    const double src = std::max(0.0, scale * (static_cast<double>(out_index) + 0.5) - 0.5);
    i0 = static_cast<std::int64_t>(std::floor(src));
    i1 = i0 < in_size - 1 ? i0 + 1 : i0;
    frac = src - static_cast<double>(i0);
  };

  ViewLookup out{Grid(oh, ow), std::vector<bool>(oh * ow)};
  for (std::int64_t y = 0; y < oh; ++y) {
    for (std::int64_t x = 0; x < ow; ++x) {
      const auto xs = t.hflip ? ow - 1 - x : x;
      double value = 0;
      double covered = 0;
      if (oh == ch && ow == cw) {
        shifted(y, xs, value, covered);
      } else {
        std::int64_t r0, r1, c0, c1;
        double fy, fx;
        taps(y, ch, oh, r0, r1, fy);
        taps(xs, cw, ow, c0, c1, fx);
        const std::int64_t rr[2] = {r0, r1};
        const std::int64_t cc[2] = {c0, c1};
        const double wy[2] = {1 - fy, fy};
        const double wx[2] = {1 - fx, fx};
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            double v, k;
            shifted(rr[a], cc[b], v, k);
            value += wy[a] * wx[b] * v;
            covered += wy[a] * wx[b] * k;
          }
        }
      }
      out.map.at(y, x) = value;
      out.valid[y * ow + x] = covered > 1.0 - 1e-9;
    }
  }
  return out;
}

double context_affinity(const Grid& pred, const std::vector<Grid>& image, const LossConfig& cfg) {
  const auto r = cfg.kernel_window / 2;
  double total = 0;
  for (std::int64_t i = 0; i < pred.h; ++i) {
    for (std::int64_t j = 0; j < pred.w; ++j) {
      double sum = 0;
      int neighbours = 0;
      for (auto a = i - r; a <= i + r; ++a) {
        for (auto b = j - r; b <= j + r; ++b) {
          if (a < 0 || b < 0 || a >= pred.h || b >= pred.w || (a == i && b == j)) continue;
          double color = 0;
          for (const auto& ch : image) color += std::pow(ch.at(i, j) - ch.at(a, b), 2);
          const double pos = static_cast<double>((a - i) * (a - i) + (b - j) * (b - j));
          const double k =
              std::exp(-pos / (2 * cfg.sigma_s * cfg.sigma_s) - color / (2 * cfg.sigma_c * cfg.sigma_c));
          sum += k * disagreement(pred.at(i, j), pred.at(a, b));
          ++neighbours;
        }
      }
      if (neighbours > 0) total += sum / neighbours;
    }
  }
  return total / static_cast<double>(pred.h * pred.w);
}

std::vector<double> channel_significance(const std::vector<Grid>& feature, const Grid& pred) {
  std::vector<double> out;
  for (const auto& f : feature) out.push_back(covariance(f.v, pred.v));
  return out;
}

double semantic_significance(const Grid& pred, const std::vector<Grid>& feature, const Grid& labels,
                             const LossConfig& cfg, std::int64_t epoch) {
  const double weight =
      cfg.w_ss_ramp_epochs == 0
          ? cfg.w_ss_max
          : cfg.w_ss_max * std::min(1.0, static_cast<double>(epoch) / static_cast<double>(cfg.w_ss_ramp_epochs));
  const auto h = pred.h;
  const auto w = pred.w;
  const auto bs = cfg.block_size;

  struct Block {
    std::int64_t r0, r1, c0, c1;
  };
  std::vector<Block> blocks;
  for (std::int64_t r0 = 0; r0 < h; r0 += bs) {
    for (std::int64_t c0 = 0; c0 < w; c0 += bs) {
      const Block b{r0, std::min(h, r0 + bs), c0, std::min(w, c0 + bs)};
      double fg = 0;
      double bg = 0;
      for (auto r = b.r0; r < b.r1; ++r) {
        for (auto c = b.c0; c < b.c1; ++c) {
          const auto label = static_cast<int>(labels.at(r, c));
          const bool is_fg = label == 1 || (label == 0 && pred.at(r, c) > cfg.fg_conf);
          const bool is_bg = label == 2 || (label == 0 && pred.at(r, c) < cfg.bg_conf);
          fg += is_fg;
          bg += is_bg;
        }
      }
      const double area = static_cast<double>((b.r1 - b.r0) * (b.c1 - b.c0));
      if (fg >= cfg.boundary_fraction * area && bg >= cfg.boundary_fraction * area) blocks.push_back(b);
    }
  }
  if (blocks.empty()) return 0.0;

  const auto sig = channel_significance(feature, pred);
  std::vector<std::size_t> rank(sig.size());
  for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
  std::sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    if (std::abs(sig[a]) != std::abs(sig[b])) return std::abs(sig[a]) > std::abs(sig[b]);
    return a < b;
  });
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.top_channels), sig.size());

  std::vector<Grid> selected;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& f = feature[rank[k]];
    const double m = mean(f.v);
    double var = 0;
    for (double v : f.v) var += (v - m) * (v - m);
    const double sd = std::sqrt(var / static_cast<double>(f.v.size()));
    Grid z(h, w);
    for (std::size_t i = 0; i < f.v.size(); ++i) z.v[i] = sd > 1e-12 ? (f.v[i] - m) / sd : 0.0;
    selected.push_back(z);
  }

  double total = 0;
  for (const auto& b : blocks) {
    double sum = 0;
    for (auto r1 = b.r0; r1 < b.r1; ++r1) {
      for (auto c1 = b.c0; c1 < b.c1; ++c1) {
        for (auto r2 = b.r0; r2 < b.r1; ++r2) {
          for (auto c2 = b.c0; c2 < b.c1; ++c2) {
            double feat = 0;
            for (const auto& z : selected) feat += std::pow(z.at(r1, c1) - z.at(r2, c2), 2);
            const double pos = static_cast<double>((r1 - r2) * (r1 - r2) + (c1 - c2) * (c1 - c2));
            const double k =
                std::exp(-pos / (2 * cfg.sigma_s * cfg.sigma_s) - feat / (2 * cfg.sigma_c * cfg.sigma_c));
            sum += k * disagreement(pred.at(r1, c1), pred.at(r2, c2));
          }
        }
      }
    }
    total += sum / static_cast<double>((b.r1 - b.r0) * (b.c1 - b.c0));
  }
  return weight * total / static_cast<double>(h * w);
}

double mae(const Grid& pred, const Grid& gt) {
  double s = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) s += std::abs(pred.v[i] - gt.v[i]);
  return s / static_cast<double>(pred.v.size());
}

double s_measure(const Grid& pred, const Grid& gt) {
  const double y = mean(gt.v);
  if (y == 0) return 1 - mean(pred.v);
  if (y == 1) return mean(pred.v);

  std::vector<double> fg_values;
  std::vector<double> bg_values;
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    if (gt.v[i] > 0.5) {
      fg_values.push_back(pred.v[i]);
    } else {
      bg_values.push_back(1 - pred.v[i]);
    }
  }
  const double object = y * object_similarity(fg_values) + (1 - y) * object_similarity(bg_values);

  double rows = 0;
  double cols = 0;
  double count = 0;
  for (std::int64_t r = 0; r < gt.h; ++r) {
    for (std::int64_t c = 0; c < gt.w; ++c) {
      if (gt.at(r, c) > 0.5) {
        rows += static_cast<double>(r);
        cols += static_cast<double>(c);
        count += 1;
      }
    }
  }
  const auto cy = static_cast<std::int64_t>(round_half_even(rows / count)) + 1;
  const auto cx = static_cast<std::int64_t>(round_half_even(cols / count)) + 1;
  const double area = static_cast<double>(gt.h * gt.w);
  const std::int64_t bounds[4][4] = {{0, cy, 0, cx}, {0, cy, cx, gt.w}, {cy, gt.h, 0, cx}, {cy, gt.h, cx, gt.w}};
  double regional = 0;
  for (const auto& q : bounds) {
    const double weight = static_cast<double>((q[1] - q[0]) * (q[3] - q[2])) / area;
    regional += weight * structural(region(pred, q[0], q[1], q[2], q[3]), region(gt, q[0], q[1], q[2], q[3]));
  }
  return std::max(0.0, 0.5 * object + 0.5 * regional);
}

double e_measure(const Grid& pred, const Grid& gt) {
  const double n = static_cast<double>(pred.v.size());
  const double fg = mean(gt.v) * n;
  double total = 0;
  for (int k = 0; k < 256; ++k) {
    const double t = static_cast<double>(k + 1) / 256.0;
    std::vector<double> bin(pred.v.size());
    for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = pred.v[i] >= t ? 1.0 : 0.0;
    double sum = 0;
    if (fg == 0) {
      for (double b : bin) sum += 1 - b;
    } else if (fg == n) {
      for (double b : bin) sum += b;
    } else {
      const double mp = mean(bin);
      const double mg = mean(gt.v);
      for (std::size_t i = 0; i < bin.size(); ++i) {
        const double dp = bin[i] - mp;
        const double dg = gt.v[i] - mg;
        const double align = 2 * dp * dg / (dp * dp + dg * dg + kEps);
        sum += (align + 1) * (align + 1) / 4;
      }
    }
    total += sum / n;
  }
  return total / 256.0;
}

double weighted_fbeta(const Grid& pred, const Grid& gt) {
  const auto h = gt.h;
  const auto w = gt.w;
  std::vector<std::int64_t> fg;
  for (std::int64_t i = 0; i < h * w; ++i) {
    if (gt.v[i] > 0.5) fg.push_back(i);
  }
  if (fg.empty()) return 0.0;

  Grid err(h, w);
  for (std::int64_t i = 0; i < h * w; ++i) err.v[i] = std::abs(pred.v[i] - gt.v[i]);

  // Nearest foreground pixel by exhaustive search; row-major scan with a
  // strict comparison keeps the smallest (row, col) among ties.
  Grid dist(h, w);
  Grid dep(h, w);
  for (std::int64_t i = 0; i < h * w; ++i) {
    if (gt.v[i] > 0.5) {
      dep.v[i] = err.v[i];
      continue;
    }
    std::int64_t best = -1;
    std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
    for (auto f : fg) {
      const auto dr = f / w - i / w;
      const auto dc = f % w - i % w;
      const auto d2 = dr * dr + dc * dc;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = f;
      }
    }
    dist.v[i] = std::sqrt(static_cast<double>(best_d2));
    dep.v[i] = err.v[best];
  }

  double kernel[7][7];
  double ksum = 0;
  for (int a = 0; a < 7; ++a) {
    for (int b = 0; b < 7; ++b) {
      kernel[a][b] = std::exp(-((a - 3) * (a - 3) + (b - 3) * (b - 3)) / 50.0);
      ksum += kernel[a][b];
    }
  }

  double tp_sum = 0;
  double fp_sum = 0;
  double fg_count = 0;
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      if (gt.at(r, c) > 0.5) {
        double smoothed = 0;
        for (int a = 0; a < 7; ++a) {
          for (int b = 0; b < 7; ++b) {
            const auto rr = r + a - 3;
            const auto cc = c + b - 3;
            if (rr >= 0 && rr < h && cc >= 0 && cc < w) smoothed += kernel[a][b] / ksum * dep.at(rr, cc);
          }
        }
        tp_sum += std::min(smoothed, err.at(r, c));
        fg_count += 1;
      } else {
        fp_sum += err.at(r, c) * (2 - std::pow(0.5, dist.at(r, c) / 5.0));
      }
    }
  }
  const double tpw = fg_count - tp_sum;
  const double recall = 1 - tp_sum / fg_count;
  const double precision = tpw / (tpw + fp_sum + kEps);
  return 2 * recall * precision / (recall + precision + kEps);
}

}  // namespace scod::oracle
