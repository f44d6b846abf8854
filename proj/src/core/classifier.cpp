#include "stm/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stm/error.hpp"

namespace stm {

ForwardTrace Classifier::forward(const Image& x) const {
  if (!differentiable()) {
    throw UnsupportedError("classifier '" + id() + "' does not expose input gradients");
  }
  return ForwardTrace{logits(x), nullptr};
}

Tensor Classifier::backward(const ForwardTrace&, std::span<const double>) const {
  throw UnsupportedError("classifier '" + id() + "' does not expose input gradients");
}

int Classifier::predict(const Image& x) const {
  const auto z = logits(x);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

void Classifier::check_input(const Image& x) const {
  if (x.shape() != input_shape()) {
    throw InputError("classifier '" + id() + "' expects " + input_shape().str() + ", got " +
                     x.shape().str());
  }
}

double log_sum_exp(std::span<const double> values) {
  const double peak = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - peak);
  return peak + std::log(sum);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

double cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size())) {
    throw InputError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(logits.size()) + ")");
  }
  return log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
}

std::vector<double> cross_entropy_grad(std::span<const double> logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size())) {
    throw InputError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(logits.size()) + ")");
  }
  auto p = softmax(logits);
  p[static_cast<std::size_t>(label)] -= 1.0;
  return p;
}

double loss(const Classifier& handle, const Image& x, int label) {
  handle.check_input(x);
  return cross_entropy(handle.logits(x), label);
}

LossAndGradient loss_and_gradient(const Classifier& handle, const Image& x, int label) {
  handle.check_input(x);
  if (!handle.differentiable()) {
    throw UnsupportedError("classifier '" + handle.id() + "' does not expose input gradients");
  }
  const ForwardTrace trace = handle.forward(x);
  const double value = cross_entropy(trace.logits, label);
  const auto cot = cross_entropy_grad(trace.logits, label);
  return LossAndGradient{value, handle.backward(trace, cot)};
}

Tensor input_gradient(const Classifier& handle, const Image& x, int label) {
  return loss_and_gradient(handle, x, label).gradient;
}

namespace {

struct EnsembleTrace final : TraceState {
  std::vector<ForwardTrace> members;
};

}  // namespace

Ensemble::Ensemble(std::vector<std::shared_ptr<const Classifier>> members, std::vector<double> weights)
    : members_(std::move(members)), weights_(std::move(weights)) {
  if (members_.empty()) throw ConfigError("ensemble needs at least one member");
  if (members_.size() != weights_.size()) throw ConfigError("ensemble weights/member count mismatch");
  double total = 0.0;
  for (double w : weights_) {
    if (w < 0.0) throw ConfigError("ensemble weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("ensemble weights must sum to 1");
  classes_ = members_.front()->num_classes();
  id_ = "ensemble(";
  for (std::size_t k = 0; k < members_.size(); ++k) {
    if (members_[k]->num_classes() != classes_) {
      throw ConfigError("ensemble members disagree on class count");
    }
    if (members_[k]->input_shape() != members_.front()->input_shape()) {
      throw ConfigError("ensemble members disagree on input shape");
    }
    id_ += (k ? "," : "") + members_[k]->id();
  }
  id_ += ")";
}

std::vector<double> Ensemble::logits(const Image& x) const {
  std::vector<double> fused(static_cast<std::size_t>(classes_), 0.0);
  for (std::size_t k = 0; k < members_.size(); ++k) {
    const auto z = members_[k]->logits(x);
    for (std::size_t c = 0; c < fused.size(); ++c) fused[c] += weights_[k] * z[c];
  }
  return fused;
}

bool Ensemble::differentiable() const {
  return std::all_of(members_.begin(), members_.end(),
                     [](const auto& m) { return m->differentiable(); });
}

ForwardTrace Ensemble::forward(const Image& x) const {
  if (!differentiable()) {
    throw UnsupportedError("ensemble '" + id_ + "' contains a non-differentiable member");
  }
  auto state = std::make_shared<EnsembleTrace>();
  std::vector<double> fused(static_cast<std::size_t>(classes_), 0.0);
  for (std::size_t k = 0; k < members_.size(); ++k) {
    state->members.push_back(members_[k]->forward(x));
    const auto& z = state->members.back().logits;
    for (std::size_t c = 0; c < fused.size(); ++c) fused[c] += weights_[k] * z[c];
  }
  return ForwardTrace{std::move(fused), std::move(state)};
}

Tensor Ensemble::backward(const ForwardTrace& trace, std::span<const double> cotangent) const {
  const auto& state = dynamic_cast<const EnsembleTrace&>(*trace.state);
  Tensor grad;
  std::vector<double> scaled(cotangent.size());
  for (std::size_t k = 0; k < members_.size(); ++k) {
    for (std::size_t c = 0; c < scaled.size(); ++c) scaled[c] = weights_[k] * cotangent[c];
    Tensor gk = members_[k]->backward(state.members[k], scaled);
    if (k == 0) {
      grad = std::move(gk);
    } else {
      grad += gk;
    }
  }
  return grad;
}

std::shared_ptr<Ensemble> make_uniform_ensemble(std::vector<std::shared_ptr<const Classifier>> members) {
  std::vector<double> weights(members.size(), 1.0 / static_cast<double>(members.size()));
  return std::make_shared<Ensemble>(std::move(members), std::move(weights));
}

Tensor ensemble_gradient(std::span<const std::shared_ptr<const Classifier>> handles,
                         std::span<const double> weights, const Image& x, int label) {
  Ensemble ensemble({handles.begin(), handles.end()}, {weights.begin(), weights.end()});
  return input_gradient(ensemble, x, label);
}

}  // namespace stm
