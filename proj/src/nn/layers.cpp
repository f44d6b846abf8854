#include "stm/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "stm/error.hpp"

namespace stm::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

// c (m x n) += op(a) * op(b), all row-major; op(a) is m x k, op(b) is k x n.
// Eigen's blocked GEMM packs its operands, so its rounding does not depend on
// where they live in memory. Products it would hand to its matrix-vector or
// coefficient-wise kernels get plain loops instead, since those kernels peel
// by address and would make results vary from run to run.
void gemm_acc(const double* a, bool ta, const double* b, bool tb, double* c, int m, int n, int k) {
  if (m > 1 && n > 1 && m + n + k >= 24) {
    MatMap cm(c, m, n);
    if (!ta && !tb) cm.noalias() += ConstMatMap(a, m, k) * ConstMatMap(b, k, n);
    else if (ta && !tb) cm.noalias() += ConstMatMap(a, k, m).transpose() * ConstMatMap(b, k, n);
    else if (!ta && tb) cm.noalias() += ConstMatMap(a, m, k) * ConstMatMap(b, n, k).transpose();
    else cm.noalias() += ConstMatMap(a, k, m).transpose() * ConstMatMap(b, n, k).transpose();
    return;
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = ta ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
        const double bv = tb ? b[static_cast<std::size_t>(j) * k + p] : b[static_cast<std::size_t>(p) * n + j];
        acc += av * bv;
      }
      c[static_cast<std::size_t>(i) * n + j] += acc;
    }
  }
}

// y = w x + bias for a row-major w (m x k).
void matvec(const double* w, const double* x, const double* bias, double* y, int m, int k) {
  for (int i = 0; i < m; ++i) {
    double acc = bias != nullptr ? bias[i] : 0.0;
    const double* row = w + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) acc += row[p] * x[p];
    y[i] = acc;
  }
}

// g (m x k) += u v^T.
void outer_acc(const double* u, const double* v, double* g, int m, int k) {
  for (int i = 0; i < m; ++i) {
    double* row = g + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) row[p] += u[i] * v[p];
  }
}

int conv_out(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(ParamLayout& layout, const std::string& key, int in_channels, int out_channels,
               int kernel, int stride, int padding, bool zero_init)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  const int fan_in = in_channels * kernel * kernel;
  weight_ = layout
                .add(join_key(key, "weight"), {out_channels, in_channels, kernel, kernel},
                     zero_init ? ParamInit::zeros() : ParamInit::he(fan_in))
                .offset;
  bias_ = layout.add(join_key(key, "bias"), {out_channels}, ParamInit::zeros()).offset;
}

Shape Conv2d::output_shape(Shape in) const {
  if (in.channels != in_) {
    throw InputError("conv expects " + std::to_string(in_) + " channels, got " +
                     std::to_string(in.channels));
  }
  return {out_, conv_out(in.height, kernel_, stride_, padding_),
          conv_out(in.width, kernel_, stride_, padding_)};
}

Tensor Conv2d::forward(const PassContext& ctx, const Tensor& x, Cache* cache) const {
  const Shape in = x.shape();
  const Shape os = output_shape(in);
  const int rows = in_ * kernel_ * kernel_;
  const int cols = os.height * os.width;

  Tensor col(Shape{1, rows, cols});
  double* cp = col.data();
  for (int c = 0; c < in_; ++c) {
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj, cp += cols) {
        for (int oh = 0; oh < os.height; ++oh) {
          const int ih = oh * stride_ - padding_ + ki;
          double* row = cp + oh * os.width;
          if (ih < 0 || ih >= in.height) {
            std::fill(row, row + os.width, 0.0);
            continue;
          }
          const double* src = x.data() + (static_cast<std::size_t>(c) * in.height + ih) * in.width;
          for (int ow = 0; ow < os.width; ++ow) {
            const int iw = ow * stride_ - padding_ + kj;
            row[ow] = (iw >= 0 && iw < in.width) ? src[iw] : 0.0;
          }
        }
      }
    }
  }

  Tensor y(os);
  const double* b = ctx.params.data() + bias_;
  for (int o = 0; o < out_; ++o) std::fill_n(y.data() + static_cast<std::size_t>(o) * cols, cols, b[o]);
  gemm_acc(ctx.params.data() + weight_, false, col.data(), false, y.data(), out_, cols, rows);

  if (cache != nullptr) {
    cache->tensors.clear();
    cache->tensors.push_back(std::move(col));
    cache->tensors.push_back(Tensor(in));  // shape carrier for backward
  }
  return y;
}

Tensor Conv2d::backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                        std::span<double> param_grads) const {
  const Tensor& col = cache.tensors[0];
  const Shape in = cache.tensors[1].shape();
  const Shape os = dy.shape();
  const int rows = in_ * kernel_ * kernel_;
  const int cols = os.height * os.width;

  if (!param_grads.empty()) {
    gemm_acc(dy.data(), false, col.data(), true, param_grads.data() + weight_, out_, rows, cols);
    for (int o = 0; o < out_; ++o) {
      const double* row = dy.data() + static_cast<std::size_t>(o) * cols;
      double acc = 0.0;
      for (int j = 0; j < cols; ++j) acc += row[j];
      param_grads[bias_ + static_cast<std::size_t>(o)] += acc;
    }
  }

  std::vector<double> dcol(static_cast<std::size_t>(rows) * cols, 0.0);
  gemm_acc(ctx.params.data() + weight_, true, dy.data(), false, dcol.data(), rows, cols, out_);

  Tensor dx(in);
  const double* cp = dcol.data();
  for (int c = 0; c < in_; ++c) {
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj, cp += cols) {
        for (int oh = 0; oh < os.height; ++oh) {
          const int ih = oh * stride_ - padding_ + ki;
          if (ih < 0 || ih >= in.height) continue;
          double* dst = dx.data() + (static_cast<std::size_t>(c) * in.height + ih) * in.width;
          const double* row = cp + oh * os.width;
          for (int ow = 0; ow < os.width; ++ow) {
            const int iw = ow * stride_ - padding_ + kj;
            if (iw >= 0 && iw < in.width) dst[iw] += row[ow];
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Dense

Dense::Dense(ParamLayout& layout, const std::string& key, int in_features, int out_features)
    : in_(in_features), out_(out_features) {
  weight_ = layout.add(join_key(key, "weight"), {out_features, in_features}, ParamInit::he(in_features))
                .offset;
  bias_ = layout.add(join_key(key, "bias"), {out_features}, ParamInit::zeros()).offset;
}

Shape Dense::output_shape(Shape in) const {
  if (static_cast<int>(in.size()) != in_) {
    throw InputError("dense expects " + std::to_string(in_) + " features, got " +
                     std::to_string(in.size()));
  }
  return {out_, 1, 1};
}

Tensor Dense::forward(const PassContext& ctx, const Tensor& x, Cache* cache) const {
  Tensor y(output_shape(x.shape()));
  matvec(ctx.params.data() + weight_, x.data(), ctx.params.data() + bias_, y.data(), out_, in_);
  if (cache != nullptr) {
    cache->tensors.clear();
    cache->tensors.push_back(x);
  }
  return y;
}

Tensor Dense::backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                       std::span<double> param_grads) const {
  const Tensor& x = cache.tensors[0];
  if (!param_grads.empty()) {
    outer_acc(dy.data(), x.data(), param_grads.data() + weight_, out_, in_);
    for (int o = 0; o < out_; ++o) param_grads[bias_ + static_cast<std::size_t>(o)] += dy[static_cast<std::size_t>(o)];
  }
  Tensor dx(x.shape());
  gemm_acc(dy.data(), false, ctx.params.data() + weight_, false, dx.data(), 1, in_, out_);
  return dx;
}

// ---------------------------------------------------------------- activations

Tensor Relu::forward(const PassContext&, const Tensor& x, Cache* cache) const {
  Tensor y = x;
  for (double& v : y.storage()) v = v > 0.0 ? v : 0.0;
  if (cache != nullptr) {
    cache->tensors.clear();
    cache->tensors.push_back(x);
  }
  return y;
}

Tensor Relu::backward(const PassContext&, const Tensor& dy, const Cache& cache,
                      std::span<double>) const {
  const Tensor& x = cache.tensors[0];
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

Tensor Softplus::forward(const PassContext&, const Tensor& x, Cache* cache) const {
  Tensor y = x;
  for (double& v : y.storage()) v = softplus(v);
  if (cache != nullptr) {
    cache->tensors.clear();
    cache->tensors.push_back(x);
  }
  return y;
}

Tensor Softplus::backward(const PassContext&, const Tensor& dy, const Cache& cache,
                          std::span<double>) const {
  const Tensor& x = cache.tensors[0];
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= sigmoid(x[i]);
  return dx;
}

// ---------------------------------------------------------------- pooling

Shape MaxPool2::output_shape(Shape in) const { return {in.channels, in.height / 2, in.width / 2}; }

Tensor MaxPool2::forward(const PassContext&, const Tensor& x, Cache* cache) const {
  const Shape in = x.shape();
  const Shape os = output_shape(in);
  Tensor y(os);
  std::vector<std::size_t> argmax(os.size());
  std::size_t o = 0;
  for (int c = 0; c < os.channels; ++c) {
    for (int h = 0; h < os.height; ++h) {
      for (int w = 0; w < os.width; ++w, ++o) {
        std::size_t best = (static_cast<std::size_t>(c) * in.height + 2 * h) * in.width + 2 * w;
        for (int dh = 0; dh < 2; ++dh) {
          for (int dw = 0; dw < 2; ++dw) {
            const std::size_t idx = (static_cast<std::size_t>(c) * in.height + 2 * h + dh) * in.width + 2 * w + dw;
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  if (cache != nullptr) {
    cache->indices = std::move(argmax);
    cache->tensors.clear();
    cache->tensors.push_back(Tensor(in));
  }
  return y;
}

Tensor MaxPool2::backward(const PassContext&, const Tensor& dy, const Cache& cache,
                          std::span<double>) const {
  Tensor dx(cache.tensors[0].shape());
  for (std::size_t o = 0; o < dy.size(); ++o) dx[cache.indices[o]] += dy[o];
  return dx;
}

Shape AvgPool2::output_shape(Shape in) const { return {in.channels, in.height / 2, in.width / 2}; }

Tensor AvgPool2::forward(const PassContext&, const Tensor& x, Cache* cache) const {
  const Shape in = x.shape();
  const Shape os = output_shape(in);
  Tensor y(os);
  for (int c = 0; c < os.channels; ++c) {
    for (int h = 0; h < os.height; ++h) {
      for (int w = 0; w < os.width; ++w) {
        y.at(c, h, w) = 0.25 * (x.at(c, 2 * h, 2 * w) + x.at(c, 2 * h, 2 * w + 1) +
                                x.at(c, 2 * h + 1, 2 * w) + x.at(c, 2 * h + 1, 2 * w + 1));
      }
    }
  }
  if (cache != nullptr) {
    cache->tensors.clear();
    cache->tensors.push_back(Tensor(in));
  }
  return y;
}

Tensor AvgPool2::backward(const PassContext&, const Tensor& dy, const Cache& cache,
                          std::span<double>) const {
  Tensor dx(cache.tensors[0].shape());
  const Shape os = dy.shape();
  for (int c = 0; c < os.channels; ++c) {
    for (int h = 0; h < os.height; ++h) {
      for (int w = 0; w < os.width; ++w) {
        const double g = 0.25 * dy.at(c, h, w);
        dx.at(c, 2 * h, 2 * w) += g;
        dx.at(c, 2 * h, 2 * w + 1) += g;
        dx.at(c, 2 * h + 1, 2 * w) += g;
        dx.at(c, 2 * h + 1, 2 * w + 1) += g;
      }
    }
  }
  return dx;
}

Tensor GlobalAvgPool::forward(const PassContext&, const Tensor& x, Cache* cache) const {
  const Shape in = x.shape();
  Tensor y(output_shape(in));
  for (int c = 0; c < in.channels; ++c) {
    double s = 0.0;
    for (double v : x.channel(c)) s += v;
    y[static_cast<std::size_t>(c)] = s / static_cast<double>(in.plane());
  }
  if (cache != nullptr) {
    cache->tensors.clear();
    cache->tensors.push_back(Tensor(in));
  }
  return y;
}

Tensor GlobalAvgPool::backward(const PassContext&, const Tensor& dy, const Cache& cache,
                               std::span<double>) const {
  Tensor dx(cache.tensors[0].shape());
  const double inv = 1.0 / static_cast<double>(dx.shape().plane());
  for (int c = 0; c < dx.shape().channels; ++c) {
    for (double& v : dx.channel(c)) v = dy[static_cast<std::size_t>(c)] * inv;
  }
  return dx;
}

Tensor Upsample2::forward(const PassContext&, const Tensor& x, Cache*) const {
  const Shape in = x.shape();
  Tensor y(output_shape(in));
  for (int c = 0; c < in.channels; ++c) {
    for (int h = 0; h < 2 * in.height; ++h) {
      for (int w = 0; w < 2 * in.width; ++w) y.at(c, h, w) = x.at(c, h / 2, w / 2);
    }
  }
  return y;
}

Tensor Upsample2::backward(const PassContext&, const Tensor& dy, const Cache&, std::span<double>) const {
  const Shape os = dy.shape();
  Tensor dx(Shape{os.channels, os.height / 2, os.width / 2});
  for (int c = 0; c < os.channels; ++c) {
    for (int h = 0; h < os.height; ++h) {
      for (int w = 0; w < os.width; ++w) dx.at(c, h / 2, w / 2) += dy.at(c, h, w);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- conditional instance norm

namespace {
constexpr double kNormEps = 1e-5;
// softplus(kUnitScaleBias) == 1
const double kUnitScaleBias = std::log(std::exp(1.0) - 1.0);
}  // namespace

CondInstanceNorm::CondInstanceNorm(ParamLayout& layout, const std::string& key, int channels,
                                   int condition_dim, double map_init_std)
    : channels_(channels), dim_(condition_dim) {
  const ParamInit map_init = map_init_std > 0.0 ? ParamInit::normal(map_init_std) : ParamInit::zeros();
  scale_w_ = layout.add(join_key(key, "scale_map.weight"), {channels, condition_dim}, map_init).offset;
  scale_b_ = layout.add(join_key(key, "scale_map.bias"), {channels}, ParamInit::constant(kUnitScaleBias)).offset;
  shift_w_ = layout.add(join_key(key, "shift_map.weight"), {channels, condition_dim}, map_init).offset;
  shift_b_ = layout.add(join_key(key, "shift_map.bias"), {channels}, ParamInit::zeros()).offset;
}

void CondInstanceNorm::affine(const PassContext& ctx, std::vector<double>& scale,
                              std::vector<double>& shift) const {
  if (static_cast<int>(ctx.condition.size()) != dim_) {
    throw InputError("conditional norm expects an embedding of dimension " + std::to_string(dim_) +
                     ", got " + std::to_string(ctx.condition.size()));
  }
  std::vector<double> pre(static_cast<std::size_t>(channels_)), sh(static_cast<std::size_t>(channels_));
  const double* p = ctx.params.data();
  matvec(p + scale_w_, ctx.condition.data(), p + scale_b_, pre.data(), channels_, dim_);
  matvec(p + shift_w_, ctx.condition.data(), p + shift_b_, sh.data(), channels_, dim_);
  scale.resize(static_cast<std::size_t>(channels_));
  shift.resize(static_cast<std::size_t>(channels_));
  for (int c = 0; c < channels_; ++c) {
    scale[static_cast<std::size_t>(c)] = softplus(pre[static_cast<std::size_t>(c)]);
    shift[static_cast<std::size_t>(c)] = sh[static_cast<std::size_t>(c)];
  }
}

Tensor CondInstanceNorm::forward(const PassContext& ctx, const Tensor& x, Cache* cache) const {
  if (x.shape().channels != channels_) throw InputError("conditional norm channel mismatch");
  std::vector<double> scale, shift;
  affine(ctx, scale, shift);

  const auto n = static_cast<double>(x.shape().plane());
  Tensor xhat(x.shape());
  Tensor y(x.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(channels_));
  for (int c = 0; c < channels_; ++c) {
    const auto in = x.channel(c);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + kNormEps);
    inv_std[static_cast<std::size_t>(c)] = is;
    auto xh = xhat.channel(c);
    auto out = y.channel(c);
    for (std::size_t i = 0; i < in.size(); ++i) {
      xh[i] = (in[i] - mean) * is;
      out[i] = scale[static_cast<std::size_t>(c)] * xh[i] + shift[static_cast<std::size_t>(c)];
    }
  }
  if (cache != nullptr) {
    cache->tensors.clear();
    cache->tensors.push_back(std::move(xhat));
    cache->scalars = std::move(inv_std);
  }
  return y;
}

Tensor CondInstanceNorm::backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                                  std::span<double> param_grads) const {
  const Tensor& xhat = cache.tensors[0];
  const auto& inv_std = cache.scalars;
  std::vector<double> scale, shift;
  affine(ctx, scale, shift);

  const auto n = static_cast<double>(dy.shape().plane());
  Tensor dx(dy.shape());
  const auto C = static_cast<std::size_t>(channels_);
  std::vector<double> dpre(C), dshift(C), pre(C);
  matvec(ctx.params.data() + scale_w_, ctx.condition.data(), ctx.params.data() + scale_b_, pre.data(), channels_, dim_);

  for (int c = 0; c < channels_; ++c) {
    const auto g = dy.channel(c);
    const auto xh = xhat.channel(c);
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      sum_g += g[i];
      sum_gx += g[i] * xh[i];
    }
    dshift[static_cast<std::size_t>(c)] = sum_g;
    dpre[static_cast<std::size_t>(c)] = sum_gx * sigmoid(pre[static_cast<std::size_t>(c)]);
    const double s = scale[static_cast<std::size_t>(c)];
    const double k = s * inv_std[static_cast<std::size_t>(c)] / n;
    auto out = dx.channel(c);
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = k * (n * g[i] - sum_g - xh[i] * sum_gx);
  }

  if (!param_grads.empty()) {
    outer_acc(dpre.data(), ctx.condition.data(), param_grads.data() + scale_w_, channels_, dim_);
    outer_acc(dshift.data(), ctx.condition.data(), param_grads.data() + shift_w_, channels_, dim_);
    for (std::size_t c = 0; c < C; ++c) {
      param_grads[scale_b_ + c] += dpre[c];
      param_grads[shift_b_ + c] += dshift[c];
    }
  }
  return dx;
}

// ---------------------------------------------------------------- containers

Shape Sequential::output_shape(Shape in) const {
  for (const auto& l : layers_) in = l->output_shape(in);
  return in;
}

Tensor Sequential::forward(const PassContext& ctx, const Tensor& x, Cache* cache) const {
  if (cache != nullptr) cache->children.resize(layers_.size());
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(ctx, h, cache != nullptr ? &cache->children[i] : nullptr);
  }
  return h;
}

Tensor Sequential::backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                            std::span<double> param_grads) const {
  Tensor g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(ctx, g, cache.children[i], param_grads);
  }
  return g;
}

Tensor Residual::forward(const PassContext& ctx, const Tensor& x, Cache* cache) const {
  if (cache != nullptr) cache->children.resize(1);
  Tensor y = inner_->forward(ctx, x, cache != nullptr ? &cache->children[0] : nullptr);
  y += x;
  return y;
}

Tensor Residual::backward(const PassContext& ctx, const Tensor& dy, const Cache& cache,
                          std::span<double> param_grads) const {
  Tensor dx = inner_->backward(ctx, dy, cache.children[0], param_grads);
  dx += dy;
  return dx;
}

}  // namespace stm::nn
