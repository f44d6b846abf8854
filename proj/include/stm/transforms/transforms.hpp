#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "stm/rng.hpp"
#include "stm/tensor.hpp"

namespace stm::transforms {

// Diverse-input resize-and-pad. With probability p the image is bilinearly
// resized to a random size in [resize_low, 1] of the canvas and zero-padded
// back at a random offset; otherwise it passes through unchanged.
struct DimConfig {
  double probability = 0.5;
  double resize_low = 0.9;
  void validate() const;
};

// Translation-invariant gradient smoothing with a normalised k x k Gaussian
// kernel (std = k / 3).
struct TimConfig {
  int kernel_length = 7;
  void validate() const;
};

// Scale copies x / 2^i, i in [0, m1).
struct SimConfig {
  int copies = 5;
  void validate() const;
};

// Admix: (x + eta * x') / 2^i for m2 images x' drawn from other classes.
struct AdmixConfig {
  int copies = 5;
  int mixed = 3;
  double strength = 0.2;
  void validate() const;
};

// Spectrum simulation: idct2(dct2(x + xi) .* M), xi ~ N(0, sigma^2),
// M ~ U(1 - rho, 1 + rho). sigma is stored in [0, 1] units.
struct SpectrumConfig {
  double rho = 0.5;
  double sigma = 16.0 / 255.0;
  int samples = 20;
  void validate() const;
};

// Geometry chosen by one diverse-input draw.
struct DimLayout {
  bool applied = false;
  int height = 0;
  int width = 0;
  int top = 0;
  int left = 0;
};

DimLayout draw_dim_layout(Shape shape, const DimConfig& cfg, Rng& rng);
Image apply_dim_layout(const Image& x, const DimLayout& layout);
// Adjoint of apply_dim_layout (pulls an output gradient back to the input).
Tensor dim_layout_adjoint(const Tensor& g, const DimLayout& layout);
Image dim_transform(const Image& x, const DimConfig& cfg, Rng& rng);

// Bilinear resize with half-pixel centres and edge clamping; the identity
// when the size is unchanged.
Tensor resize_bilinear(const Tensor& x, int height, int width);
Tensor resize_bilinear_adjoint(const Tensor& g, Shape input);

std::vector<double> gaussian_kernel(int kernel_length);
// Depthwise 2-D convolution with the TIM kernel, zero padding, same shape.
Tensor tim_smooth(const Tensor& g, const TimConfig& cfg);

std::vector<Image> sim_copies(const Image& x, const SimConfig& cfg);

// Returns m1 * m2 images, ordered by sampled image then by scale.
std::vector<Image> admix_batch(const Image& x, std::span<const Image* const> pool, const AdmixConfig& cfg,
                               Rng& rng);
// Indices into `pool` of the m2 sampled images (without replacement when the
// pool is large enough).
std::vector<std::size_t> draw_admix_partners(std::size_t pool_size, const AdmixConfig& cfg, Rng& rng);

// Orthonormal type-II DCT over the spatial dims of every channel, and its inverse.
Tensor dct2(const Tensor& x);
Tensor idct2(const Tensor& x);
// Orthonormal DCT-II matrix C with C[k][n] = a_k cos(pi (n + 1/2) k / N).
std::vector<double> dct_matrix(int n);

struct SpectrumDraw {
  Tensor noise;  // xi
  Tensor mask;   // M
};

SpectrumDraw draw_spectrum(Shape shape, const SpectrumConfig& cfg, Rng& rng);
// idct2(dct2(x + xi) .* M) before clipping.
Tensor spectrum_apply_unclipped(const Image& x, const SpectrumDraw& draw);
// Adjoint of the linear part: idct2(dct2(g) .* M).
Tensor spectrum_adjoint(const Tensor& g, const SpectrumDraw& draw);
Image spectrum_transform(const Image& x, const SpectrumConfig& cfg, Rng& rng);

}  // namespace stm::transforms
