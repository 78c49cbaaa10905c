#include "scod/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scod/data.hpp"
#include "scod/errors.hpp"

namespace scod {

namespace F = torch::nn::functional;
using torch::indexing::Slice;

namespace {

/// [H, W] | [B, H, W] | [B, 1, H, W] -> [B, H, W]
torch::Tensor to_bhw(const torch::Tensor& x) {
  switch (x.dim()) {
    case 2: return x.unsqueeze(0);
    case 3: return x;
    case 4:
      if (x.size(1) != 1) throw ValidationError("expected a single-channel map");
      return x.squeeze(1);
    default: throw ValidationError("expected a 2-, 3- or 4-d map");
  }
}

/// [C, H, W] | [B, C, H, W] -> [B, C, H, W]
torch::Tensor to_bchw(const torch::Tensor& x) {
  if (x.dim() == 3) return x.unsqueeze(0);
  if (x.dim() == 4) return x;
  throw ValidationError("expected a 3- or 4-d tensor");
}

torch::Tensor zero_loss(const torch::Tensor& like) { return like.sum() * 0.0; }

void check_same_hw(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.size(-1) != b.size(-1) || a.size(-2) != b.size(-2)) {
    throw ValidationError(std::string("shape mismatch: ") + what);
  }
}

}  // namespace

void LossConfig::validate() const {
  auto require = [](bool ok, const char* message) {
    if (!ok) throw ValidationError(std::string("loss config: ") + message);
  };
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
  require(w_iv >= 0.0, "w_iv must be non-negative");
  require(entropy_threshold > 0.0 && entropy_threshold < 1.0, "entropy threshold must lie in (0, 1)");
  require(kernel_window >= 3 && kernel_window % 2 == 1, "kernel window must be odd and >= 3");
  require(sigma_s > 0.0 && sigma_c > 0.0, "kernel bandwidths must be positive");
  require(top_channels >= 1, "top_channels must be positive");
  require(block_size >= 1, "block size must be positive");
  require(boundary_fraction > 0.0 && boundary_fraction < 1.0, "boundary fraction must lie in (0, 1)");
  require(fg_conf > 0.0 && fg_conf < 1.0 && bg_conf > 0.0 && bg_conf < 1.0,
          "confidence thresholds must lie in (0, 1)");
  require(bg_conf < fg_conf, "bg_conf must be below fg_conf");
  require(w_ss_max >= 0.0 && w_ss_ramp_epochs >= 0, "w_ss schedule must be non-negative");
  require(iv_start_epoch >= 0, "iv_start_epoch must be non-negative");
  for (double b : beta) require(b >= 0.0, "beta weights must be non-negative");
}

torch::Tensor clamp_probs(const torch::Tensor& p) {
  return p.clamp(kProbEpsilon, 1.0 - kProbEpsilon);
}

torch::Tensor pce_loss(const torch::Tensor& pred, const torch::Tensor& scribble) {
  auto p = clamp_probs(to_bhw(pred));
  auto s = to_bhw(scribble);
  check_same_hw(p, s, "prediction vs scribble");
  auto fg = s.eq(static_cast<int>(Label::kForeground)).to(p.scalar_type());
  auto bg = s.eq(static_cast<int>(Label::kBackground)).to(p.scalar_type());
  auto count = (fg + bg).sum({1, 2});
  if (count.min().item<double>() < 1.0) throw ValidationError("empty supervision");
  auto nll = -(fg * torch::log(p) + bg * torch::log(1.0 - p));
  return (nll.sum({1, 2}) / count).mean();
}

torch::Tensor ssim_map(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = to_bhw(a).unsqueeze(1);
  auto y = to_bhw(b).unsqueeze(1);
  if (x.sizes() != y.sizes()) throw ValidationError("shape mismatch: ssim inputs");
  auto pad = F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect);
  auto pool = [&](const torch::Tensor& t) {
    return F::avg_pool2d(F::pad(t, pad), F::AvgPool2dFuncOptions(3).stride(1));
  };
  auto mu_x = pool(x);
  auto mu_y = pool(y);
  auto sigma_x = pool(x * x) - mu_x * mu_x;
  auto sigma_y = pool(y * y) - mu_y * mu_y;
  auto sigma_xy = pool(x * y) - mu_x * mu_y;
  auto num = (2.0 * mu_x * mu_y + kSsimC1) * (2.0 * sigma_xy + kSsimC2);
  auto den = (mu_x * mu_x + mu_y * mu_y + kSsimC1) * (sigma_x + sigma_y + kSsimC2);
  return (num / den).squeeze(1);
}

torch::Tensor cv_loss(const torch::Tensor& p_aligned, const torch::Tensor& p_hat,
                      const torch::Tensor& valid, double alpha) {
  auto a = to_bhw(p_aligned);
  auto b = to_bhw(p_hat);
  if (a.sizes() != b.sizes()) throw ValidationError("shape mismatch: cross-view maps");
  auto m = to_bhw(valid).to(a.scalar_type()).expand_as(a);
  auto count = m.sum({1, 2});
  if (count.min().item<double>() < 1.0) throw ValidationError("empty validity mask");
  a = a * m;
  b = b * m;
  auto per_pixel = (1.0 - alpha) * (1.0 - ssim_map(a, b)) / 2.0 + alpha * (a - b).abs();
  return ((per_pixel * m).sum({1, 2}) / count).mean();
}

torch::Tensor rcv_loss(const torch::Tensor& p_aligned, const torch::Tensor& p_hat,
                       const torch::Tensor& valid, double alpha, double gamma) {
  // Transformed-view prediction is pulled toward the (more reliable) original.
  auto towards_original = cv_loss(p_aligned.detach(), p_hat, valid, alpha);
  auto towards_transformed = cv_loss(p_aligned, p_hat.detach(), valid, alpha);
  // Written so the value is bitwise independent of gamma: both terms are equal.
  return towards_original + towards_transformed + gamma * (towards_original - towards_transformed);
}

torch::Tensor binary_entropy_map(const torch::Tensor& pred) {
  auto p = clamp_probs(to_bhw(pred));
  return -(p * torch::log(p) + (1.0 - p) * torch::log(1.0 - p));
}

torch::Tensor iv_loss(const torch::Tensor& pred, const LossConfig& cfg, std::int64_t epoch) {
  if (epoch < cfg.iv_start_epoch) return zero_loss(pred);
  auto entropy = binary_entropy_map(pred);
  auto keep = entropy.detach().le(cfg.entropy_threshold).to(entropy.scalar_type());
  auto count = keep.sum({1, 2});
  auto per_image = (entropy * keep).sum({1, 2}) / count.clamp_min(1.0);
  return cfg.w_iv * per_image.mean();
}

double visual_kernel(const torch::Tensor& image, Pixel i, Pixel j, const LossConfig& cfg) {
  auto img = image.dim() == 4 ? image[0] : image;
  auto acc_t = img.to(torch::kFloat64).contiguous();
  auto acc = acc_t.accessor<double, 3>();
  const double dr = static_cast<double>(i.row - j.row);
  const double dc = static_cast<double>(i.col - j.col);
  double color = 0.0;
  for (std::int64_t c = 0; c < acc_t.size(0); ++c) {
    const double d = acc[c][i.row][i.col] - acc[c][j.row][j.col];
    color += d * d;
  }
  return std::exp(-(dr * dr + dc * dc) / (2.0 * cfg.sigma_s * cfg.sigma_s) -
                  color / (2.0 * cfg.sigma_c * cfg.sigma_c));
}

torch::Tensor pair_disagreement(const torch::Tensor& p_i, const torch::Tensor& p_j) {
  return 1.0 - p_i * p_j - (1.0 - p_i) * (1.0 - p_j);
}

torch::Tensor context_affinity_loss(const torch::Tensor& pred, const torch::Tensor& image,
                                    const LossConfig& cfg) {
  auto p = to_bhw(pred).unsqueeze(1);
  auto img = to_bchw(image).to(p.scalar_type()).detach();
  if (img.size(0) != p.size(0)) img = img.expand({p.size(0), -1, -1, -1});
  check_same_hw(p, img, "prediction vs image");
  const auto h = p.size(2);
  const auto w = p.size(3);
  const auto r = cfg.kernel_window / 2;

  auto pad = F::PadFuncOptions({r, r, r, r});
  auto p_pad = F::pad(p, pad);
  auto img_pad = F::pad(img, pad);
  auto inside = F::pad(torch::ones({1, 1, h, w}, p.options().requires_grad(false)), pad);

  auto numerator = torch::zeros_like(p);
  auto count = torch::zeros({1, 1, h, w}, p.options().requires_grad(false));
  const double inv_s = 1.0 / (2.0 * cfg.sigma_s * cfg.sigma_s);
  const double inv_c = 1.0 / (2.0 * cfg.sigma_c * cfg.sigma_c);
  for (std::int64_t dy = -r; dy <= r; ++dy) {
    for (std::int64_t dx = -r; dx <= r; ++dx) {
      if (dy == 0 && dx == 0) continue;
      auto rows = Slice(r + dy, r + dy + h);
      auto cols = Slice(r + dx, r + dx + w);
      auto p_j = p_pad.index({Slice(), Slice(), rows, cols});
      auto img_j = img_pad.index({Slice(), Slice(), rows, cols});
      auto valid_j = inside.index({Slice(), Slice(), rows, cols});
      auto color = (img - img_j).pow(2).sum(1, true);
      auto kernel = torch::exp(-static_cast<double>(dy * dy + dx * dx) * inv_s - color * inv_c);
      numerator = numerator + kernel * valid_j * pair_disagreement(p, p_j);
      count = count + valid_j;
    }
  }
  return (numerator / count.clamp_min(1.0)).mean({1, 2, 3}).mean();
}

torch::Tensor channel_significance(const torch::Tensor& feature, const torch::Tensor& pred) {
  if (feature.dim() != 3) throw ValidationError("channel significance expects a [C, H, W] feature");
  auto p = pred.dim() == 3 ? pred.squeeze(0) : pred;
  check_same_hw(feature, p, "feature vs prediction");
  const auto m = feature.size(1) * feature.size(2);
  if (m < 2) throw ValidationError("channel significance needs at least 2 pixels");
  auto f = feature.detach().to(torch::kFloat64).reshape({feature.size(0), m});
  auto q = p.detach().to(torch::kFloat64).reshape({m});
  auto fc = f - f.mean(1, true);
  auto qc = q - q.mean();
  return (fc * qc).sum(1) / static_cast<double>(m - 1);
}

std::vector<std::int64_t> select_significant_channels(const torch::Tensor& sig, std::int64_t n) {
  const auto c = sig.numel();
  if (n > c) throw ValidationError("cannot select more channels than available");
  auto values = sig.detach().to(torch::kFloat64).contiguous();
  const double* v = values.data_ptr<double>();
  std::vector<std::int64_t> order(static_cast<std::size_t>(c));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int64_t a, std::int64_t b) { return std::abs(v[a]) > std::abs(v[b]); });
  order.resize(static_cast<std::size_t>(std::max<std::int64_t>(n, 0)));
  return order;
}

BlockExtent block_extent(BlockIndex block, std::int64_t height, std::int64_t width,
                         std::int64_t block_size) {
  BlockExtent e;
  e.top = block.block_row * block_size;
  e.left = block.block_col * block_size;
  e.height = std::min(block_size, height - e.top);
  e.width = std::min(block_size, width - e.left);
  return e;
}

std::vector<BlockIndex> boundary_regions(const torch::Tensor& pred, const torch::Tensor& scribble,
                                         const LossConfig& cfg) {
  auto p_t = to_bhw(pred)[0].detach().to(torch::kFloat64).contiguous();
  auto s_t = to_bhw(scribble)[0].to(torch::kInt64).contiguous();
  check_same_hw(p_t, s_t, "prediction vs scribble");
  const auto h = p_t.size(0);
  const auto w = p_t.size(1);
  auto p = p_t.accessor<double, 2>();
  auto s = s_t.accessor<std::int64_t, 2>();
  const auto bs = cfg.block_size;
  const auto block_rows = (h + bs - 1) / bs;
  const auto block_cols = (w + bs - 1) / bs;

  std::vector<BlockIndex> selected;
  for (std::int64_t br = 0; br < block_rows; ++br) {
    for (std::int64_t bc = 0; bc < block_cols; ++bc) {
      const auto e = block_extent({br, bc}, h, w, bs);
      std::int64_t fg = 0;
      std::int64_t bg = 0;
      for (std::int64_t r = e.top; r < e.top + e.height; ++r) {
        for (std::int64_t c = e.left; c < e.left + e.width; ++c) {
          const auto label = s[r][c];
          if (label == static_cast<std::int64_t>(Label::kForeground)) {
            ++fg;
          } else if (label == static_cast<std::int64_t>(Label::kBackground)) {
            ++bg;
          } else if (p[r][c] > cfg.fg_conf) {
            ++fg;
          } else if (p[r][c] < cfg.bg_conf) {
            ++bg;
          }
        }
      }
      const double area = static_cast<double>(e.height * e.width);
      if (static_cast<double>(fg) >= cfg.boundary_fraction * area &&
          static_cast<double>(bg) >= cfg.boundary_fraction * area) {
        selected.push_back({br, bc});
      }
    }
  }
  return selected;
}

double ss_weight(const LossConfig& cfg, std::int64_t epoch) {
  if (cfg.w_ss_ramp_epochs == 0) return cfg.w_ss_max;
  const double progress =
      static_cast<double>(std::max<std::int64_t>(epoch, 0)) / static_cast<double>(cfg.w_ss_ramp_epochs);
  return cfg.w_ss_max * std::min(1.0, progress);
}

namespace {

torch::Tensor standardize_channels(const torch::Tensor& f) {
  auto mean = f.mean({1, 2}, true);
  auto sd = f.std({1, 2}, /*unbiased=*/false, true);
  auto centered = f - mean;
  return torch::where(sd > 1e-12, centered / sd.clamp_min(1e-12), torch::zeros_like(centered));
}

torch::Tensor pairwise_sq_dist(const torch::Tensor& x) {
  return (x.unsqueeze(1) - x.unsqueeze(0)).pow(2).sum(-1);
}

}  // namespace

torch::Tensor semantic_significance_loss(const torch::Tensor& pred, const torch::Tensor& feature,
                                         const torch::Tensor& scribble, const LossConfig& cfg,
                                         std::int64_t epoch) {
  auto p_all = to_bhw(pred);
  auto f_all = to_bchw(feature).detach().to(p_all.scalar_type());
  auto s_all = to_bhw(scribble);
  check_same_hw(p_all, f_all, "prediction vs feature");
  const double weight = ss_weight(cfg, epoch);
  if (weight == 0.0) return zero_loss(pred);

  const auto batch = p_all.size(0);
  const auto h = p_all.size(1);
  const auto w = p_all.size(2);
  const double m = static_cast<double>(h * w);
  const double inv_s = 1.0 / (2.0 * cfg.sigma_s * cfg.sigma_s);
  const double inv_c = 1.0 / (2.0 * cfg.sigma_c * cfg.sigma_c);
  auto opts = p_all.options().requires_grad(false);

  std::vector<torch::Tensor> per_image;
  per_image.reserve(static_cast<std::size_t>(batch));
  for (std::int64_t b = 0; b < batch; ++b) {
    auto p = p_all[b];
    auto f = f_all[b];
    auto total = zero_loss(p);
    const auto blocks = boundary_regions(p.detach(), s_all[b], cfg);
    if (!blocks.empty()) {
      const auto n = std::min<std::int64_t>(cfg.top_channels, f.size(0));
      const auto channels = select_significant_channels(channel_significance(f, p), n);
      auto index = torch::tensor(channels, torch::kInt64);
      auto significant = standardize_channels(f.index_select(0, index));
      for (const auto& block : blocks) {
        const auto e = block_extent(block, h, w, cfg.block_size);
        auto rows = Slice(e.top, e.top + e.height);
        auto cols = Slice(e.left, e.left + e.width);
        auto pb = p.index({rows, cols}).reshape({-1});
        auto fb = significant.index({Slice(), rows, cols}).reshape({n, -1}).t();
        auto yy = torch::arange(e.top, e.top + e.height, opts).view({-1, 1}).expand({e.height, e.width});
        auto xx = torch::arange(e.left, e.left + e.width, opts).view({1, -1}).expand({e.height, e.width});
        auto pos = torch::stack({yy.reshape({-1}), xx.reshape({-1})}, 1);
        auto kernel = torch::exp(-pairwise_sq_dist(pos) * inv_s - pairwise_sq_dist(fb) * inv_c);
        auto disagreement = pair_disagreement(pb.unsqueeze(1), pb.unsqueeze(0));
        total = total + (kernel * disagreement).sum() / static_cast<double>(pb.numel());
      }
    }
    per_image.push_back(weight * total / m);
  }
  return torch::stack(per_image).mean();
}

torch::Tensor aux_loss(const torch::Tensor& pred, const torch::Tensor& scribble,
                       const torch::Tensor& image, const LossConfig& cfg, std::int64_t epoch) {
  auto loss = zero_loss(pred);
  if (cfg.toggles.pce) loss = loss + pce_loss(pred, scribble);
  if (cfg.toggles.ca) loss = loss + context_affinity_loss(pred, image, cfg);
  if (cfg.toggles.iv) loss = loss + iv_loss(pred, cfg, epoch);
  return loss;
}

LossTerms total_loss(std::span<const torch::Tensor> outputs, const torch::Tensor& feature,
                     const torch::Tensor& scribble, const torch::Tensor& image,
                     const ViewPair& view, const LossConfig& cfg, std::int64_t epoch) {
  if (outputs.empty()) throw ValidationError("total_loss needs at least the main output");
  if (cfg.toggles.aux && outputs.size() < 5) {
    throw ValidationError("total_loss needs out0..out4 when auxiliary losses are enabled");
  }
  const auto& out0 = outputs[0];
  const auto& t = cfg.toggles;

  LossTerms terms;
  terms.pce = t.pce ? pce_loss(out0, scribble) : zero_loss(out0);
  terms.rcv = t.cv ? rcv_loss(view.aligned, view.transformed, view.valid, cfg.alpha, cfg.gamma)
                   : zero_loss(out0);
  terms.iv = t.iv ? iv_loss(out0, cfg, epoch) : zero_loss(out0);
  terms.ca = t.ca ? context_affinity_loss(out0, image, cfg) : zero_loss(out0);
  terms.ss = t.ss ? semantic_significance_loss(out0, feature, scribble, cfg, epoch)
                  : zero_loss(out0);
  terms.total = terms.pce + terms.rcv + terms.iv + terms.ca + terms.ss;
  for (std::size_t i = 0; i < 4; ++i) {
    terms.aux[i] = t.aux ? aux_loss(outputs[i + 1], scribble, image, cfg, epoch)
                         : zero_loss(out0);
    terms.total = terms.total + cfg.beta[i] * terms.aux[i];
  }

  auto& b = terms.breakdown;
  b.pce = terms.pce.item<double>();
  b.rcv = terms.rcv.item<double>();
  b.cv = b.rcv / 2.0;
  b.iv = terms.iv.item<double>();
  b.ca = terms.ca.item<double>();
  b.ss = terms.ss.item<double>();
  for (std::size_t i = 0; i < 4; ++i) b.aux[i] = terms.aux[i].item<double>();
  b.total = terms.total.item<double>();
  b.w_ss = t.ss ? ss_weight(cfg, epoch) : 0.0;
  b.iv_active = t.iv && epoch >= cfg.iv_start_epoch;
  return terms;
}

}  // namespace scod
