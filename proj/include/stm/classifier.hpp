#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stm/tensor.hpp"

namespace stm {

// Opaque per-call state kept between a forward pass and its backward pass.
struct TraceState {
  virtual ~TraceState() = default;
};

struct ForwardTrace {
  std::vector<double> logits;
  std::shared_ptr<const TraceState> state;
};

struct LossAndGradient {
  double loss = 0.0;
  Tensor gradient;
};

// The differentiable-classifier oracle every attack consumes. Implementations
// must be safe for concurrent const calls.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual const std::string& id() const = 0;
  virtual int num_classes() const = 0;
  virtual Shape input_shape() const = 0;

  virtual std::vector<double> logits(const Image& x) const = 0;

  virtual bool differentiable() const { return false; }
  // Forward pass that retains what backward() needs.
  virtual ForwardTrace forward(const Image& x) const;
  // Vector-Jacobian product: d(cotangent . logits)/dx.
  virtual Tensor backward(const ForwardTrace& trace, std::span<const double> cotangent) const;

  int predict(const Image& x) const;
  void check_input(const Image& x) const;
};

double log_sum_exp(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);
double cross_entropy(std::span<const double> logits, int label);
// d cross_entropy / d logits = softmax - onehot.
std::vector<double> cross_entropy_grad(std::span<const double> logits, int label);

// Cross-entropy J(x, y) of the handle.
double loss(const Classifier& handle, const Image& x, int label);
// Gradient of J(x, y) with respect to the input image.
Tensor input_gradient(const Classifier& handle, const Image& x, int label);
LossAndGradient loss_and_gradient(const Classifier& handle, const Image& x, int label);

// Classifier whose logits are the weighted average of its members' logits.
class Ensemble final : public Classifier {
 public:
  Ensemble(std::vector<std::shared_ptr<const Classifier>> members, std::vector<double> weights);

  const std::string& id() const override { return id_; }
  int num_classes() const override { return classes_; }
  Shape input_shape() const override { return members_.front()->input_shape(); }
  std::vector<double> logits(const Image& x) const override;
  bool differentiable() const override;
  ForwardTrace forward(const Image& x) const override;
  Tensor backward(const ForwardTrace& trace, std::span<const double> cotangent) const override;

  const std::vector<std::shared_ptr<const Classifier>>& members() const { return members_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<std::shared_ptr<const Classifier>> members_;
  std::vector<double> weights_;
  std::string id_;
  int classes_ = 0;
};

// Equal-weight ensemble convenience, as used for multi-surrogate attacks.
std::shared_ptr<Ensemble> make_uniform_ensemble(std::vector<std::shared_ptr<const Classifier>> members);

// Gradient of the cross-entropy of the weighted-average logits.
Tensor ensemble_gradient(std::span<const std::shared_ptr<const Classifier>> handles,
                         std::span<const double> weights, const Image& x, int label);

}  // namespace stm
