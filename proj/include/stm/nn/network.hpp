#pragma once

#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "stm/classifier.hpp"
#include "stm/nn/layers.hpp"
#include "stm/nn/params.hpp"

namespace stm::nn {

// Immutable description of a network: its layer graph, parameter layout and
// the JSON spec it was built from (used to rebuild it from a checkpoint).
struct Architecture {
  nlohmann::json spec;
  Shape input;
  ParamLayout layout;
  std::shared_ptr<const Sequential> body;
};

// Classifier backed by an Architecture and a flat parameter vector.
class NetworkClassifier final : public Classifier {
 public:
  NetworkClassifier(std::string id, std::shared_ptr<const Architecture> arch, std::vector<double> params);

  const std::string& id() const override { return id_; }
  int num_classes() const override { return classes_; }
  Shape input_shape() const override { return arch_->input; }
  std::vector<double> logits(const Image& x) const override;
  bool differentiable() const override { return true; }
  ForwardTrace forward(const Image& x) const override;
  Tensor backward(const ForwardTrace& trace, std::span<const double> cotangent) const override;

  // Backward pass that also accumulates parameter gradients (training).
  Tensor backward_with_params(const ForwardTrace& trace, std::span<const double> cotangent,
                              std::span<double> param_grads) const;

  const Architecture& architecture() const { return *arch_; }
  std::shared_ptr<const Architecture> architecture_ptr() const { return arch_; }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& mutable_params() { return params_; }
  std::string checksum() const;

 private:
  std::string id_;
  std::shared_ptr<const Architecture> arch_;
  std::vector<double> params_;
  int classes_ = 0;
};

class Adam {
 public:
  explicit Adam(std::size_t size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grads);
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Versioned on-disk parameter archive:
//   8-byte magic "STMPARAM", uint32 format version, uint64 header length,
//   UTF-8 JSON header, then the raw little-endian float64 parameter data.
// The header carries a key -> shape/offset manifest, the architecture spec,
// free-form metadata and the SHA-256 of the data block.
struct Archive {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string kind;
  nlohmann::json arch;
  nlohmann::json metadata;
  std::vector<ParamSlot> slots;
  std::vector<double> values;

  void save(const std::string& path) const;
  static Archive load(const std::string& path);
};

Archive make_archive(std::string kind, const Architecture& arch, std::vector<double> values,
                     nlohmann::json metadata = nlohmann::json::object());
// Checks that the archive's manifest matches `layout` key by key and shape by shape.
void check_manifest(const Archive& archive, const ParamLayout& layout);

}  // namespace stm::nn
