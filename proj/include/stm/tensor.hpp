#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace stm {

// Dimensions of a 3-D activation. Images are logically H x W x C; storage is
// planar (channel-major) so that per-channel operations see contiguous rows.
struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t plane() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int c, int h, int w) { return data_[index(c, h, w)]; }
  double at(int c, int h, int w) const { return data_[index(c, h, w)]; }

  std::span<double> channel(int c) {
    return std::span<double>(data_).subspan(static_cast<std::size_t>(c) * shape_.plane(),
                                            shape_.plane());
  }
  std::span<const double> channel(int c) const {
    return std::span<const double>(data_).subspan(static_cast<std::size_t>(c) * shape_.plane(),
                                                  shape_.plane());
  }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);
  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t index(int c, int h, int w) const {
    return (static_cast<std::size_t>(c) * shape_.height + h) * shape_.width + w;
  }

  Shape shape_;
  std::vector<double> data_;
};

// Images and input gradients share the tensor representation.
using Image = Tensor;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

double l1_norm(const Tensor& t);
double linf_distance(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& t);
bool all_finite(const Tensor& t);
bool within_unit_interval(const Tensor& t);

// Elementwise clamp to [0, 1].
Tensor clip_unit(Tensor t);
// Mask of entries that clip_unit leaves untouched (1) versus saturates (0),
// i.e. the derivative of clip_unit evaluated at `pre`.
Tensor clip_unit_mask(const Tensor& pre);
Tensor hadamard(Tensor a, const Tensor& b);

}  // namespace stm
