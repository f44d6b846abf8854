#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stm/classifier.hpp"

namespace stm::eval {

// JPEG encode/decode round trip (baseline, 4:4:4) at the given quality.
Image jpeg_defense(const Image& x, int quality);
// Uniform quantisation to 2^bits levels, renormalised to [0, 1].
Image bit_depth_reduction(const Image& x, int bits);

// Input-preprocessing defense placed in front of a classifier.
class Defense {
 public:
  virtual ~Defense() = default;
  virtual std::string id() const = 0;
  virtual Image apply(const Image& x) const = 0;
};

class JpegDefense final : public Defense {
 public:
  explicit JpegDefense(int quality);
  std::string id() const override { return "jpeg:" + std::to_string(quality_); }
  Image apply(const Image& x) const override { return jpeg_defense(x, quality_); }

 private:
  int quality_;
};

class BitDepthDefense final : public Defense {
 public:
  explicit BitDepthDefense(int bits);
  std::string id() const override { return "bitred:" + std::to_string(bits_); }
  Image apply(const Image& x) const override { return bit_depth_reduction(x, bits_); }

 private:
  int bits_;
};

// Defenses that need third-party pretrained models (hgd, rp, nips-r3,
// comdefend, rs, npr). apply() raises an unsupported-capability error.
class ExternalDefense final : public Defense {
 public:
  explicit ExternalDefense(std::string name) : name_(std::move(name)) {}
  std::string id() const override { return name_; }
  Image apply(const Image& x) const override;

 private:
  std::string name_;
};

// "jpeg:<quality>", "bitred:<bits>" or one of the external defense names.
std::shared_ptr<const Defense> make_defense(const std::string& spec);
const std::vector<std::string>& external_defense_names();

// defense followed by the wrapped classifier; exposes no gradients.
class DefendedClassifier final : public Classifier {
 public:
  DefendedClassifier(std::shared_ptr<const Defense> defense, std::shared_ptr<const Classifier> model);

  const std::string& id() const override { return id_; }
  int num_classes() const override { return model_->num_classes(); }
  Shape input_shape() const override { return model_->input_shape(); }
  std::vector<double> logits(const Image& x) const override;

 private:
  std::shared_ptr<const Defense> defense_;
  std::shared_ptr<const Classifier> model_;
  std::string id_;
};

}  // namespace stm::eval
