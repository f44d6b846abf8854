#include "stm/transforms/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stm/error.hpp"

namespace stm::transforms {

void DimConfig::validate() const {
  if (!(probability >= 0.0 && probability <= 1.0)) throw ConfigError("DIM probability must lie in [0, 1]");
  if (!(resize_low > 0.0 && resize_low <= 1.0)) throw ConfigError("DIM resize_low must lie in (0, 1]");
}

void TimConfig::validate() const {
  if (kernel_length < 1 || kernel_length % 2 == 0) throw ConfigError("TIM kernel length must be odd and >= 1");
}

void SimConfig::validate() const {
  if (copies < 1) throw ConfigError("SIM needs at least one copy");
}

void AdmixConfig::validate() const {
  if (copies < 1 || mixed < 1) throw ConfigError("Admix needs m1, m2 >= 1");
  if (!(strength >= 0.0)) throw ConfigError("Admix strength must be non-negative");
}

void SpectrumConfig::validate() const {
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("spectrum rho must lie in [0, 1)");
  if (!(sigma >= 0.0)) throw ConfigError("spectrum sigma must be non-negative");
  if (samples < 1) throw ConfigError("spectrum needs at least one sample");
}

// ---------------------------------------------------------------- resize

namespace {

struct Tap {
  int lo, hi;
  double w_hi;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    t[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
  }
  return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int height, int width) {
  const Shape in = x.shape();
  if (height == in.height && width == in.width) return x;
  const auto th = taps(in.height, height), tw = taps(in.width, width);
  Tensor y(Shape{in.channels, height, width});
  for (int c = 0; c < in.channels; ++c) {
    for (int h = 0; h < height; ++h) {
      const Tap a = th[static_cast<std::size_t>(h)];
      for (int w = 0; w < width; ++w) {
        const Tap b = tw[static_cast<std::size_t>(w)];
        const double top = (1.0 - b.w_hi) * x.at(c, a.lo, b.lo) + b.w_hi * x.at(c, a.lo, b.hi);
        const double bot = (1.0 - b.w_hi) * x.at(c, a.hi, b.lo) + b.w_hi * x.at(c, a.hi, b.hi);
        y.at(c, h, w) = (1.0 - a.w_hi) * top + a.w_hi * bot;
      }
    }
  }
  return y;
}

Tensor resize_bilinear_adjoint(const Tensor& g, Shape input) {
  const Shape os = g.shape();
  if (os.height == input.height && os.width == input.width) return g;
  const auto th = taps(input.height, os.height), tw = taps(input.width, os.width);
  Tensor dx(input);
  for (int c = 0; c < os.channels; ++c) {
    for (int h = 0; h < os.height; ++h) {
      const Tap a = th[static_cast<std::size_t>(h)];
      for (int w = 0; w < os.width; ++w) {
        const Tap b = tw[static_cast<std::size_t>(w)];
        const double v = g.at(c, h, w);
        dx.at(c, a.lo, b.lo) += (1.0 - a.w_hi) * (1.0 - b.w_hi) * v;
        dx.at(c, a.lo, b.hi) += (1.0 - a.w_hi) * b.w_hi * v;
        dx.at(c, a.hi, b.lo) += a.w_hi * (1.0 - b.w_hi) * v;
        dx.at(c, a.hi, b.hi) += a.w_hi * b.w_hi * v;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- DIM

DimLayout draw_dim_layout(Shape shape, const DimConfig& cfg, Rng& rng) {
  cfg.validate();
  DimLayout layout;
  layout.height = shape.height;
  layout.width = shape.width;
  if (!(uniform01(rng) < cfg.probability)) return layout;
  layout.applied = true;
  const double ratio = uniform(rng, cfg.resize_low, 1.0);
  layout.height = std::clamp(static_cast<int>(std::lround(ratio * shape.height)), 1, shape.height);
  layout.width = std::clamp(static_cast<int>(std::lround(ratio * shape.width)), 1, shape.width);
  layout.top = uniform_int(rng, 0, shape.height - layout.height);
  layout.left = uniform_int(rng, 0, shape.width - layout.width);
  return layout;
}

Image apply_dim_layout(const Image& x, const DimLayout& layout) {
  if (!layout.applied) return x;
  const Tensor small = resize_bilinear(x, layout.height, layout.width);
  Image out(x.shape());
  for (int c = 0; c < x.shape().channels; ++c) {
    for (int h = 0; h < layout.height; ++h) {
      for (int w = 0; w < layout.width; ++w) out.at(c, layout.top + h, layout.left + w) = small.at(c, h, w);
    }
  }
  return out;
}

Tensor dim_layout_adjoint(const Tensor& g, const DimLayout& layout) {
  if (!layout.applied) return g;
  Tensor crop(Shape{g.shape().channels, layout.height, layout.width});
  for (int c = 0; c < g.shape().channels; ++c) {
    for (int h = 0; h < layout.height; ++h) {
      for (int w = 0; w < layout.width; ++w) crop.at(c, h, w) = g.at(c, layout.top + h, layout.left + w);
    }
  }
  return resize_bilinear_adjoint(crop, g.shape());
}

Image dim_transform(const Image& x, const DimConfig& cfg, Rng& rng) {
  return apply_dim_layout(x, draw_dim_layout(x.shape(), cfg, rng));
}

// ---------------------------------------------------------------- TIM

std::vector<double> gaussian_kernel(int kernel_length) {
  TimConfig{kernel_length}.validate();
  const int k = kernel_length;
  const double sigma = k / 3.0;
  const int r = k / 2;
  std::vector<double> kernel(static_cast<std::size_t>(k * k));
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double d2 = static_cast<double>((i - r) * (i - r) + (j - r) * (j - r));
      const double v = std::exp(-d2 / (2.0 * sigma * sigma));
      kernel[static_cast<std::size_t>(i * k + j)] = v;
      total += v;
    }
  }
  for (double& v : kernel) v /= total;
  return kernel;
}

Tensor tim_smooth(const Tensor& g, const TimConfig& cfg) {
  cfg.validate();
  if (cfg.kernel_length == 1) return g;
  const auto kernel = gaussian_kernel(cfg.kernel_length);
  const int k = cfg.kernel_length, r = k / 2;
  const Shape s = g.shape();
  Tensor out(s);
  for (int c = 0; c < s.channels; ++c) {
    for (int h = 0; h < s.height; ++h) {
      for (int w = 0; w < s.width; ++w) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i) {
          const int hh = h + i - r;
          if (hh < 0 || hh >= s.height) continue;
          for (int j = 0; j < k; ++j) {
            const int ww = w + j - r;
            if (ww < 0 || ww >= s.width) continue;
            acc += kernel[static_cast<std::size_t>(i * k + j)] * g.at(c, hh, ww);
          }
        }
        out.at(c, h, w) = acc;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- SIM / Admix

std::vector<Image> sim_copies(const Image& x, const SimConfig& cfg) {
  cfg.validate();
  std::vector<Image> copies;
  copies.reserve(static_cast<std::size_t>(cfg.copies));
  for (int i = 0; i < cfg.copies; ++i) copies.push_back(x * std::ldexp(1.0, -i));
  return copies;
}

std::vector<std::size_t> draw_admix_partners(std::size_t pool_size, const AdmixConfig& cfg, Rng& rng) {
  cfg.validate();
  if (pool_size == 0) throw ConfigError("Admix needs a non-empty pool of other-class images");
  std::vector<std::size_t> picks;
  if (pool_size >= static_cast<std::size_t>(cfg.mixed)) {
    std::vector<std::size_t> idx(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) idx[i] = i;
    for (int m = 0; m < cfg.mixed; ++m) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, m, static_cast<int>(pool_size) - 1));
      std::swap(idx[static_cast<std::size_t>(m)], idx[j]);
      picks.push_back(idx[static_cast<std::size_t>(m)]);
    }
  } else {
    for (int m = 0; m < cfg.mixed; ++m) {
      picks.push_back(static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool_size) - 1)));
    }
  }
  return picks;
}

std::vector<Image> admix_batch(const Image& x, std::span<const Image* const> pool, const AdmixConfig& cfg,
                               Rng& rng) {
  const auto picks = draw_admix_partners(pool.size(), cfg, rng);
  std::vector<Image> out;
  out.reserve(picks.size() * static_cast<std::size_t>(cfg.copies));
  for (std::size_t p : picks) {
    const Image& other = *pool[p];
    require_same_shape(x, other, "admix_batch");
    for (int i = 0; i < cfg.copies; ++i) {
      const double scale = std::ldexp(1.0, -i);
      Image mixed(x.shape());
      for (std::size_t k = 0; k < x.size(); ++k) mixed[k] = (x[k] + cfg.strength * other[k]) * scale;
      out.push_back(clip_unit(std::move(mixed)));
    }
  }
  return out;
}

// ---------------------------------------------------------------- DCT

std::vector<double> dct_matrix(int n) {
  std::vector<double> m(static_cast<std::size_t>(n * n));
  for (int k = 0; k < n; ++k) {
    const double a = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) {
      m[static_cast<std::size_t>(k * n + i)] = a * std::cos(std::numbers::pi * (i + 0.5) * k / n);
    }
  }
  return m;
}

namespace {

// out = A X B^T per channel, A (H x H), B (W x W); transpose flags select A^T / B.
Tensor separable(const Tensor& x, const std::vector<double>& a, const std::vector<double>& b, bool inverse) {
  const Shape s = x.shape();
  const int H = s.height, W = s.width;
  Tensor out(s);
  std::vector<double> tmp(static_cast<std::size_t>(H * W));
  for (int c = 0; c < s.channels; ++c) {
    const auto in = x.channel(c);
    auto dst = out.channel(c);
    // rows: tmp[h][v] = sum_w X[h][w] * Bop[v][w]
    for (int h = 0; h < H; ++h) {
      for (int v = 0; v < W; ++v) {
        double acc = 0.0;
        for (int w = 0; w < W; ++w) {
          const double coef = inverse ? b[static_cast<std::size_t>(w * W + v)] : b[static_cast<std::size_t>(v * W + w)];
          acc += in[static_cast<std::size_t>(h * W + w)] * coef;
        }
        tmp[static_cast<std::size_t>(h * W + v)] = acc;
      }
    }
    // cols: dst[u][v] = sum_h Aop[u][h] * tmp[h][v]
    for (int u = 0; u < H; ++u) {
      for (int v = 0; v < W; ++v) {
        double acc = 0.0;
        for (int h = 0; h < H; ++h) {
          const double coef = inverse ? a[static_cast<std::size_t>(h * H + u)] : a[static_cast<std::size_t>(u * H + h)];
          acc += coef * tmp[static_cast<std::size_t>(h * W + v)];
        }
        dst[static_cast<std::size_t>(u * W + v)] = acc;
      }
    }
  }
  return out;
}

}  // namespace

Tensor dct2(const Tensor& x) {
  return separable(x, dct_matrix(x.shape().height), dct_matrix(x.shape().width), false);
}

Tensor idct2(const Tensor& x) {
  return separable(x, dct_matrix(x.shape().height), dct_matrix(x.shape().width), true);
}

// ---------------------------------------------------------------- spectrum

SpectrumDraw draw_spectrum(Shape shape, const SpectrumConfig& cfg, Rng& rng) {
  cfg.validate();
  SpectrumDraw d{Tensor(shape), Tensor(shape)};
  for (double& v : d.noise.storage()) v = cfg.sigma * standard_normal(rng);
  for (double& v : d.mask.storage()) v = uniform(rng, 1.0 - cfg.rho, 1.0 + cfg.rho);
  return d;
}

Tensor spectrum_apply_unclipped(const Image& x, const SpectrumDraw& draw) {
  return idct2(hadamard(dct2(x + draw.noise), draw.mask));
}

Tensor spectrum_adjoint(const Tensor& g, const SpectrumDraw& draw) {
  return idct2(hadamard(dct2(g), draw.mask));
}

Image spectrum_transform(const Image& x, const SpectrumConfig& cfg, Rng& rng) {
  const SpectrumDraw draw = draw_spectrum(x.shape(), cfg, rng);
  return clip_unit(spectrum_apply_unclipped(x, draw));
}

}  // namespace stm::transforms
