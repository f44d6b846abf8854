#include "stm/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "stm/error.hpp"

namespace stm {

std::string Shape::str() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.size()) {
    throw InputError("tensor of shape " + shape_.str() + " given " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "tensor -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InputError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

double l1_norm(const Tensor& t) {
  double sum = 0.0;
  for (double v : t.values()) sum += std::abs(v);
  return sum;
}

double linf_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "linf_distance");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double max_abs(const Tensor& t) {
  double worst = 0.0;
  for (double v : t.values()) worst = std::max(worst, std::abs(v));
  return worst;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

bool within_unit_interval(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

Tensor clip_unit(Tensor t) {
  for (double& v : t.storage()) v = std::clamp(v, 0.0, 1.0);
  return t;
}

Tensor clip_unit_mask(const Tensor& pre) {
  Tensor mask(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) mask[i] = (pre[i] >= 0.0 && pre[i] <= 1.0) ? 1.0 : 0.0;
  return mask;
}

Tensor hadamard(Tensor a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
  return a;
}

}  // namespace stm
