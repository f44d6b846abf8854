#pragma once

#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "stm/classifier.hpp"
#include "stm/example.hpp"
#include "stm/nn/network.hpp"
#include "stm/rng.hpp"

namespace stm::style {

struct StyleEmbedding {
  std::vector<double> z;
  std::size_t dim() const { return z.size(); }
};

// Each coordinate i.i.d. standard normal.
StyleEmbedding sample_embedding(int dim, Rng& rng);

struct StyleArchConfig {
  Shape input{3, 32, 32};
  int embedding_dim = 100;
  std::vector<int> channels{8, 16, 32};  // encoder stages; the decoder mirrors them
  int residual_blocks = 2;

  nlohmann::json to_json() const;
  static StyleArchConfig from_json(const nlohmann::json& j);
};

// Embedding-conditioned encoder/decoder:
//   conv(s1) -> conv(s2) -> conv(s2) -> residual blocks -> (upsample, conv) x 2 -> conv head
// with conditional instance normalisation after every hidden convolution.
// The head adds a logit offset to the input, out = sigmoid(logit(x) + head),
// so a zero head reproduces the input and outputs always lie in (0, 1).
class StyleNetwork {
 public:
  static constexpr int kVersion = 1;

  // Identity initialisation: every conditional scale is 1, every shift 0,
  // and the head is zero, so stylize(x, z) == x up to the logit clamp.
  // `map_init_std` > 0 perturbs the embedding maps so that z matters from
  // the first step of training.
  static StyleNetwork create(const StyleArchConfig& cfg, std::uint64_t seed, double map_init_std = 0.0);

  const StyleArchConfig& config() const { return cfg_; }
  const std::string& identifier() const { return identifier_; }
  void set_identifier(std::string id) { identifier_ = std::move(id); }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& mutable_params() { return params_; }
  const nn::Architecture& architecture() const { return *arch_; }
  std::string checksum() const;

  struct Trace {
    Image input;
    Image output;
    nn::Cache cache;
  };

  Image stylize(const Image& x, const StyleEmbedding& z) const;
  Image forward(const Image& x, const StyleEmbedding& z, Trace* trace) const;
  // d(loss)/dx given d(loss)/d(output); accumulates parameter gradients into
  // `param_grads` unless it is empty.
  Tensor backward(const Trace& trace, const StyleEmbedding& z, const Tensor& d_output,
                  std::span<double> param_grads) const;

  // Stores metadata() merged with `metadata`.
  void save(const std::string& path, nlohmann::json metadata = nlohmann::json::object()) const;
  static StyleNetwork load(const std::string& path);
  // Metadata stored alongside the parameters by the last save()/load().
  const nlohmann::json& metadata() const { return metadata_; }
  void set_metadata(nlohmann::json m) { metadata_ = std::move(m); }

 private:
  StyleArchConfig cfg_;
  std::shared_ptr<const nn::Architecture> arch_;
  std::vector<double> params_;
  std::string identifier_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

std::shared_ptr<const nn::Architecture> build_style_arch(const StyleArchConfig& cfg);

// Vector-Jacobian product of stylize at (x, z).
Tensor stylize_vjp(const StyleNetwork& net, const Image& x, const StyleEmbedding& z, const Tensor& g);

// clip01(gamma * x_orig + (1 - gamma) * x_s + r), r ~ U[-beta*eps, beta*eps] i.i.d.
Image mix_and_perturb(const Image& x_orig, const Image& x_s, double gamma, double beta, double epsilon,
                      Rng& rng);

struct StmConfig {
  double gamma = 0.5;
  double beta = 2.0;
  int samples = 20;
  void validate() const;
};

// ------------------------------------------------------------------ training

// Fixed random-feature loss network: pixel statistics plus two ReLU conv stages.
class PerceptualFeatures {
 public:
  PerceptualFeatures(Shape input, std::uint64_t seed);

  struct Features {
    std::vector<Tensor> layers;  // pixel, stage 1, stage 2
    nn::Cache stage1, stage2;
  };
  Features extract(const Image& x, bool keep_cache) const;
  // Back-propagates per-layer feature gradients to the pixels.
  Tensor backward(const Features& f, std::vector<Tensor> d_layers) const;

 private:
  nn::ParamLayout layout_;
  std::shared_ptr<nn::Sequential> stage1_, stage2_;
  std::vector<double> params_;
};

// Per-channel mean and standard deviation of each feature layer.
struct StyleStatistics {
  std::vector<std::vector<double>> mean, stdev;
};
StyleStatistics feature_statistics(const std::vector<Tensor>& layers);

// Per-channel mean and std of raw pixels, the colour statistics of an image.
std::vector<double> colour_statistics(const Image& x);
// Mean absolute difference of colour statistics between x and y.
double colour_statistic_shift(const Image& x, const Image& y);

struct PretrainConfig {
  int steps = 2500;
  int batch_size = 4;
  double learning_rate = 2e-3;
  double style_weight = 10.0;
  double content_weight = 0.1;
  double temperature = 0.35;  // sharpness of the z -> corpus-style assignment
  double map_init_std = 0.05;
  std::uint64_t seed = 7;
};

struct PretrainResult {
  StyleNetwork net;
  double final_loss = 0.0;
};

// Trains content + style objectives: for an embedding z, the target style is a
// softmax(W z / T)-weighted blend of the style corpus' feature statistics, so
// sampling z ~ N(0, I) at attack time selects and blends corpus styles.
PretrainResult pretrain_style_network(const StyleArchConfig& arch, std::span<const Image> style_corpus,
                                      std::span<const Image> content_corpus, const PretrainConfig& cfg);

struct FinetuneConfig {
  std::vector<std::shared_ptr<const Classifier>> members;
  std::vector<double> weights;
  int epochs = 30;
  double learning_rate = 1e-4;
  int batch_size = 1;
  std::uint64_t seed = 0;
  void validate() const;
};

// sum_k w_k J_k(ST(x, z), y) for one example.
double finetune_loss(const StyleNetwork& net, const FinetuneConfig& cfg, const LabeledExample& ex,
                     const StyleEmbedding& z);

// Minimises the weighted ensemble cross-entropy of stylized images with a
// fresh z per step. Only style-network parameters change; the result carries
// metadata {"finetuned": true, ...}.
StyleNetwork finetune_style_network(const StyleNetwork& net, const FinetuneConfig& cfg,
                                    std::span<const LabeledExample> data);

}  // namespace stm::style
