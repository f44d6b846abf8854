#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stm/nn/params.hpp"
#include "stm/tensor.hpp"

namespace stm::nn {

// Activations a layer keeps from forward() for its backward().
struct Cache {
  std::vector<Tensor> tensors;
  std::vector<std::size_t> indices;
  std::vector<double> scalars;
  std::vector<Cache> children;
};

// Per-call inputs shared by every layer of a network: the flat parameter
// vector and an optional conditioning vector (the style embedding).
struct PassContext {
  std::span<const double> params;
  std::span<const double> condition;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Shape output_shape(Shape in) const = 0;
  // `cache` may be null when no backward pass follows.
  virtual Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const = 0;
  // Returns d loss / d x. Parameter gradients are accumulated into
  // `param_grads` (same layout as ctx.params) unless it is empty.
  virtual Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                          std::span<double> param_grads) const = 0;
};

using LayerPtr = std::shared_ptr<const Layer>;

class Conv2d final : public Layer {
 public:
  Conv2d(ParamLayout& layout, const std::string& key, int in_channels, int out_channels,
         int kernel, int stride, int padding, bool zero_init = false);

  Shape output_shape(Shape in) const override;
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;

 private:
  int in_, out_, kernel_, stride_, padding_;
  std::size_t weight_, bias_;
};

class Dense final : public Layer {
 public:
  Dense(ParamLayout& layout, const std::string& key, int in_features, int out_features);

  Shape output_shape(Shape in) const override;
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;

 private:
  int in_, out_;
  std::size_t weight_, bias_;
};

class Relu final : public Layer {
 public:
  Shape output_shape(Shape in) const override { return in; }
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;
};

// Smooth ReLU variant (softplus), for networks that must pass finite-difference checks.
class Softplus final : public Layer {
 public:
  Shape output_shape(Shape in) const override { return in; }
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;
};

class MaxPool2 final : public Layer {
 public:
  Shape output_shape(Shape in) const override;
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;
};

class AvgPool2 final : public Layer {
 public:
  Shape output_shape(Shape in) const override;
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;
};

class GlobalAvgPool final : public Layer {
 public:
  Shape output_shape(Shape in) const override { return {in.channels, 1, 1}; }
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;
};

class Upsample2 final : public Layer {
 public:
  Shape output_shape(Shape in) const override { return {in.channels, 2 * in.height, 2 * in.width}; }
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;
};

// Instance normalisation whose per-channel scale and shift are affine
// functions of the conditioning vector z:
//   scale = softplus(A_s z + b_s) > 0,  shift = A_b z + b_b.
// The default initialisation yields scale = 1, shift = 0 for every z.
class CondInstanceNorm final : public Layer {
 public:
  CondInstanceNorm(ParamLayout& layout, const std::string& key, int channels, int condition_dim,
                   double map_init_std = 0.0);

  Shape output_shape(Shape in) const override { return in; }
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;

  // Scale/shift the layer applies for conditioning vector z.
  void affine(const PassContext& ctx, std::vector<double>& scale, std::vector<double>& shift) const;

 private:
  int channels_, dim_;
  std::size_t scale_w_, scale_b_, shift_w_, shift_b_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}

  void add(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  const std::vector<LayerPtr>& layers() const { return layers_; }

  Shape output_shape(Shape in) const override;
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;

 private:
  std::vector<LayerPtr> layers_;
};

// y = x + inner(x); inner must preserve the shape.
class Residual final : public Layer {
 public:
  explicit Residual(LayerPtr inner) : inner_(std::move(inner)) {}

  Shape output_shape(Shape in) const override { return in; }
  Tensor forward(const PassContext& ctx, const Tensor& x, Cache* cache) const override;
  Tensor backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                  std::span<double> param_grads) const override;

 private:
  LayerPtr inner_;
};

}  // namespace stm::nn
