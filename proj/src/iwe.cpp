#include "trajcm/iwe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "trajcm/parallel.hpp"

namespace trajcm {
namespace {

constexpr std::size_t kChunk = 16384;

// Normalized 1D Gaussian weights (and their derivative w.r.t. the event
// coordinate) over pixels first..first+count-1.
struct Footprint {
  int first = 0;
  int count = 0;
  double w[64];
  double dw[64];
};

int gaussian_radius(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  if (2 * r + 2 > 64) throw std::invalid_argument("build_iwe: sigma too large");
  return r;
}

Footprint gaussian_footprint(double u, double sigma, int radius) {
  Footprint f;
  const int base = static_cast<int>(std::floor(u));
  f.first = base - radius;
  f.count = 2 * radius + 2;
  const double inv_var = 1.0 / (sigma * sigma);
  double sum = 0.0;
  double dsum = 0.0;
  for (int i = 0; i < f.count; ++i) {
    const double d = (f.first + i) - u;
    f.w[i] = std::exp(-0.5 * d * d * inv_var);
    f.dw[i] = f.w[i] * d * inv_var;
    sum += f.w[i];
    dsum += f.dw[i];
  }
  for (int i = 0; i < f.count; ++i) {
    f.dw[i] = (f.dw[i] * sum - f.w[i] * dsum) / (sum * sum);
    f.w[i] /= sum;
  }
  return f;
}

template <typename Visit>
void for_each_tap(const Vec2& p, double sigma, int radius, int width, int height, Visit&& visit) {
  if (sigma == 0.0) {
    const int x0 = static_cast<int>(std::floor(p.x));
    const int y0 = static_cast<int>(std::floor(p.y));
    const double fx = p.x - x0;
    const double fy = p.y - y0;
    const double wx[2] = {1.0 - fx, fx};
    const double wy[2] = {1.0 - fy, fy};
    const double dwx[2] = {-1.0, 1.0};
    for (int j = 0; j < 2; ++j) {
      const int y = y0 + j;
      if (y < 0 || y >= height) continue;
      for (int i = 0; i < 2; ++i) {
        const int x = x0 + i;
        if (x < 0 || x >= width) continue;
        // value, d/dx, d/dy
        visit(static_cast<std::size_t>(y) * width + x, wx[i] * wy[j], dwx[i] * wy[j], wx[i] * dwx[j]);
      }
    }
    return;
  }
  const Footprint fx = gaussian_footprint(p.x, sigma, radius);
  const Footprint fy = gaussian_footprint(p.y, sigma, radius);
  for (int j = 0; j < fy.count; ++j) {
    const int y = fy.first + j;
    if (y < 0 || y >= height) continue;
    for (int i = 0; i < fx.count; ++i) {
      const int x = fx.first + i;
      if (x < 0 || x >= width) continue;
      visit(static_cast<std::size_t>(y) * width + x, fx.w[i] * fy.w[j], fx.dw[i] * fy.w[j],
            fx.w[i] * fy.dw[j]);
    }
  }
}

}  // namespace

std::vector<double> Iwe::summed() const {
  std::vector<double> out = pos;
  for (std::size_t i = 0; i < neg.size(); ++i) out[i] += neg[i];
  return out;
}

Iwe build_iwe(const WarpedEvents& warped, double sigma, bool polarity_split) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("build_iwe: sigma must be >= 0");
  const int radius = sigma > 0.0 ? gaussian_radius(sigma) : 0;
  const std::size_t n_pixels = static_cast<std::size_t>(warped.width) * warped.height;
  Iwe iwe{warped.width, warped.height, warped.t_ref, sigma, polarity_split, {}, {}};
  iwe.pos.assign(n_pixels, 0.0);
  if (polarity_split) iwe.neg.assign(n_pixels, 0.0);

  // Fixed chunks accumulate into private images that are merged in chunk
  // order, so the result does not depend on the worker count.
  const std::size_t n = warped.pos.size();
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  const std::size_t wave = static_cast<std::size_t>(thread_count());
  std::vector<std::vector<double>> partial_pos(std::min(wave, n_chunks));
  std::vector<std::vector<double>> partial_neg(partial_pos.size());
  for (std::size_t first = 0; first < n_chunks; first += wave) {
    const std::size_t count = std::min(wave, n_chunks - first);
    parallel_for(count, [&](std::size_t slot) {
      auto& pos = partial_pos[slot];
      auto& neg = partial_neg[slot];
      pos.assign(n_pixels, 0.0);
      if (polarity_split) neg.assign(n_pixels, 0.0);
      const std::size_t begin = (first + slot) * kChunk;
      const std::size_t end = std::min(n, begin + kChunk);
      for (std::size_t k = begin; k < end; ++k) {
        if (!warped.valid[k]) continue;
        auto& img = (polarity_split && warped.polarity[k] < 0) ? neg : pos;
        const double w = warped.weight[k];
        for_each_tap(warped.pos[k], sigma, radius, warped.width, warped.height,
                     [&](std::size_t px, double v, double, double) { img[px] += w * v; });
      }
    });
    for (std::size_t slot = 0; slot < count; ++slot) {
      for (std::size_t i = 0; i < n_pixels; ++i) iwe.pos[i] += partial_pos[slot][i];
      if (polarity_split) {
        for (std::size_t i = 0; i < n_pixels; ++i) iwe.neg[i] += partial_neg[slot][i];
      }
    }
  }
  return iwe;
}

namespace {

double image_contrast(const std::vector<double>& img, int w, int h) {
  double g = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double gx = x + 1 < w ? img[i + 1] - img[i] : 0.0;
      const double gy = y + 1 < h ? img[i + w] - img[i] : 0.0;
      g += std::sqrt(gx * gx + gy * gy);
    }
  }
  return g;
}

std::vector<double> image_contrast_backward(const std::vector<double>& img, int w, int h) {
  std::vector<double> d(img.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double gx = x + 1 < w ? img[i + 1] - img[i] : 0.0;
      const double gy = y + 1 < h ? img[i + w] - img[i] : 0.0;
      const double m = std::sqrt(gx * gx + gy * gy);
      if (m == 0.0) continue;
      d[i] -= (gx + gy) / m;
      if (x + 1 < w) d[i + 1] += gx / m;
      if (y + 1 < h) d[i + w] += gy / m;
    }
  }
  return d;
}

}  // namespace

double contrast_g(const Iwe& iwe) {
  double g = image_contrast(iwe.pos, iwe.width, iwe.height);
  if (!iwe.neg.empty()) g += image_contrast(iwe.neg, iwe.width, iwe.height);
  return g;
}

IweGradient contrast_g_backward(const Iwe& iwe) {
  IweGradient grad;
  grad.pos = image_contrast_backward(iwe.pos, iwe.width, iwe.height);
  if (!iwe.neg.empty()) grad.neg = image_contrast_backward(iwe.neg, iwe.width, iwe.height);
  return grad;
}

std::vector<Vec2> iwe_backward(const WarpedEvents& warped, const Iwe& iwe, const IweGradient& grad) {
  const int radius = iwe.sigma > 0.0 ? gaussian_radius(iwe.sigma) : 0;
  const std::size_t n = warped.pos.size();
  std::vector<Vec2> out(n);
  parallel_for((n + kChunk - 1) / kChunk, [&](std::size_t chunk) {
    const std::size_t end = std::min(n, (chunk + 1) * kChunk);
    for (std::size_t k = chunk * kChunk; k < end; ++k) {
      if (!warped.valid[k]) continue;
      const auto& g = (iwe.polarity_split && warped.polarity[k] < 0) ? grad.neg : grad.pos;
      Vec2 acc;
      for_each_tap(warped.pos[k], iwe.sigma, radius, iwe.width, iwe.height,
                   [&](std::size_t px, double, double dx, double dy) {
                     acc.x += g[px] * dx;
                     acc.y += g[px] * dy;
                   });
      out[k] = acc * warped.weight[k];
    }
  });
  return out;
}

double image_variance(std::span<const double> image) {
  if (image.empty()) return 0.0;
  double mean = 0.0;
  for (double v : image) mean += v;
  mean /= static_cast<double>(image.size());
  double var = 0.0;
  for (double v : image) var += (v - mean) * (v - mean);
  return var / static_cast<double>(image.size());
}

void write_pgm(const Iwe& iwe, const std::filesystem::path& path, const PgmOptions& options) {
  if (options.bits != 8 && options.bits != 16) throw std::invalid_argument("write_pgm: bits must be 8 or 16");
  std::vector<double> img;
  switch (options.channel) {
    case IweChannel::Sum: img = iwe.summed(); break;
    case IweChannel::Positive: img = iwe.pos; break;
    case IweChannel::Negative:
      img = iwe.neg.empty() ? std::vector<double>(iwe.pos.size(), 0.0) : iwe.neg;
      break;
  }
  const double max_value = img.empty() ? 0.0 : *std::max_element(img.begin(), img.end());
  const double max_level = options.bits == 8 ? 255.0 : 65535.0;
  const double scale = max_value > 0.0 ? max_level / max_value : 0.0;

  auto fmt = [](double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  };
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "P5\n# trajcm iwe max=" << fmt(max_value) << " scale=" << fmt(scale) << "\n"
      << iwe.width << ' ' << iwe.height << '\n'
      << static_cast<int>(max_level) << '\n';
  for (double v : img) {
    const auto level = static_cast<unsigned>(std::lround(std::clamp(v * scale, 0.0, max_level)));
    if (options.bits == 16) out.put(static_cast<char>(level >> 8));
    out.put(static_cast<char>(level & 0xFF));
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace trajcm
