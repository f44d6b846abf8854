#include "stm/style/style.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stm/error.hpp"
#include "stm/hash.hpp"

namespace stm::style {
namespace {

constexpr double kLogitClamp = 1e-4;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

StyleEmbedding sample_embedding(int dim, Rng& rng) {
  if (dim < 1) throw ConfigError("embedding dimension must be >= 1");
  StyleEmbedding e;
  e.z.resize(static_cast<std::size_t>(dim));
  for (double& v : e.z) v = standard_normal(rng);
  return e;
}

nlohmann::json StyleArchConfig::to_json() const {
  return {{"input", {input.channels, input.height, input.width}},
          {"embedding_dim", embedding_dim},
          {"channels", channels},
          {"residual_blocks", residual_blocks}};
}

StyleArchConfig StyleArchConfig::from_json(const nlohmann::json& j) {
  StyleArchConfig c;
  const auto in = j.at("input").get<std::vector<int>>();
  c.input = Shape{in.at(0), in.at(1), in.at(2)};
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.residual_blocks = j.at("residual_blocks").get<int>();
  return c;
}

std::shared_ptr<const nn::Architecture> build_style_arch(const StyleArchConfig& cfg) {
  if (cfg.channels.size() != 3) throw ConfigError("style encoder needs exactly three stages");
  if (cfg.input.height % 4 != 0 || cfg.input.width % 4 != 0) {
    throw ConfigError("style network input size must be divisible by 4");
  }
  if (cfg.embedding_dim < 1) throw ConfigError("embedding dimension must be >= 1");
  auto arch = std::make_shared<nn::Architecture>();
  arch->spec = cfg.to_json();
  arch->input = cfg.input;
  auto& L = arch->layout;
  const int D = cfg.embedding_dim;
  const int c1 = cfg.channels[0], c2 = cfg.channels[1], c3 = cfg.channels[2];
  auto body = std::make_shared<nn::Sequential>();

  auto conv_block = [&](const std::string& key, int in, int out, int stride, nn::Sequential& seq, bool relu) {
    seq.add(std::make_shared<nn::Conv2d>(L, key + ".conv", in, out, 3, stride, 1));
    seq.add(std::make_shared<nn::CondInstanceNorm>(L, key + ".cin", out, D));
    if (relu) seq.add(std::make_shared<nn::Relu>());
  };

  conv_block("enc1", cfg.input.channels, c1, 1, *body, true);
  conv_block("enc2", c1, c2, 2, *body, true);
  conv_block("enc3", c2, c3, 2, *body, true);
  for (int b = 0; b < cfg.residual_blocks; ++b) {
    auto inner = std::make_shared<nn::Sequential>();
    const std::string key = "res" + std::to_string(b + 1);
    conv_block(key + ".a", c3, c3, 1, *inner, true);
    conv_block(key + ".b", c3, c3, 1, *inner, false);
    body->add(std::make_shared<nn::Residual>(inner));
  }
  body->add(std::make_shared<nn::Upsample2>());
  conv_block("dec1", c3, c2, 1, *body, true);
  body->add(std::make_shared<nn::Upsample2>());
  conv_block("dec2", c2, c1, 1, *body, true);
  body->add(std::make_shared<nn::Conv2d>(L, "head", c1, cfg.input.channels, 3, 1, 1, /*zero_init=*/true));

  arch->body = body;
  if (arch->body->output_shape(cfg.input) != cfg.input) throw ConfigError("style network does not preserve shape");
  return arch;
}

StyleNetwork StyleNetwork::create(const StyleArchConfig& cfg, std::uint64_t seed, double map_init_std) {
  StyleNetwork net;
  net.cfg_ = cfg;
  net.arch_ = build_style_arch(cfg);
  Rng rng = make_rng(seed, {0x57});
  net.params_ = net.arch_->layout.initialize(rng);
  if (map_init_std > 0.0) {
    for (const auto& slot : net.arch_->layout.slots()) {
      if (slot.key.find("_map.weight") == std::string::npos) continue;
      for (std::size_t i = 0; i < slot.size; ++i) net.params_[slot.offset + i] = map_init_std * standard_normal(rng);
    }
  }
  net.identifier_ = "style-v" + std::to_string(kVersion) + "-init";
  return net;
}

std::string StyleNetwork::checksum() const { return sha256_hex(params_); }

Image StyleNetwork::forward(const Image& x, const StyleEmbedding& z, Trace* trace) const {
  if (x.shape() != cfg_.input) {
    throw InputError("style network expects " + cfg_.input.str() + ", got " + x.shape().str());
  }
  if (static_cast<int>(z.dim()) != cfg_.embedding_dim) {
    throw InputError("style embedding has dimension " + std::to_string(z.dim()) + ", network expects " +
                     std::to_string(cfg_.embedding_dim));
  }
  const nn::PassContext ctx{params_, z.z};
  Tensor head = arch_->body->forward(ctx, x, trace != nullptr ? &trace->cache : nullptr);
  Image out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = std::clamp(x[i], kLogitClamp, 1.0 - kLogitClamp);
    out[i] = sigmoid(std::log(p / (1.0 - p)) + head[i]);
  }
  if (trace != nullptr) {
    trace->input = x;
    trace->output = out;
  }
  return out;
}

Image StyleNetwork::stylize(const Image& x, const StyleEmbedding& z) const { return forward(x, z, nullptr); }

Tensor StyleNetwork::backward(const Trace& trace, const StyleEmbedding& z, const Tensor& d_output,
                              std::span<double> param_grads) const {
  const nn::PassContext ctx{params_, z.z};
  Tensor d_pre(d_output.shape());
  for (std::size_t i = 0; i < d_pre.size(); ++i) {
    const double s = trace.output[i];
    d_pre[i] = d_output[i] * s * (1.0 - s);
  }
  Tensor dx = arch_->body->backward(ctx, d_pre, trace.cache, param_grads);
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double x = trace.input[i];
    if (x > kLogitClamp && x < 1.0 - kLogitClamp) dx[i] += d_pre[i] / (x * (1.0 - x));
  }
  return dx;
}

void StyleNetwork::save(const std::string& path, nlohmann::json metadata) const {
  nlohmann::json merged = metadata_;
  merged.update(metadata);
  metadata = std::move(merged);
  metadata["identifier"] = identifier_;
  metadata["version"] = kVersion;
  nn::make_archive("style_network", *arch_, params_, std::move(metadata)).save(path);
}

StyleNetwork StyleNetwork::load(const std::string& path) {
  const auto archive = nn::Archive::load(path);
  if (archive.kind != "style_network") throw InputError("'" + path + "' is not a style network archive");
  StyleNetwork net;
  net.cfg_ = StyleArchConfig::from_json(archive.arch);
  net.arch_ = build_style_arch(net.cfg_);
  nn::check_manifest(archive, net.arch_->layout);
  net.params_ = archive.values;
  net.metadata_ = archive.metadata;
  net.identifier_ = archive.metadata.value("identifier", std::string("style"));
  return net;
}

Tensor stylize_vjp(const StyleNetwork& net, const Image& x, const StyleEmbedding& z, const Tensor& g) {
  StyleNetwork::Trace trace;
  net.forward(x, z, &trace);
  return net.backward(trace, z, g, {});
}

Image mix_and_perturb(const Image& x_orig, const Image& x_s, double gamma, double beta, double epsilon,
                      Rng& rng) {
  require_same_shape(x_orig, x_s, "mix_and_perturb");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("mixing ratio gamma must lie in [0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("noise bound beta must be non-negative");
  const double bound = beta * epsilon;
  Image out(x_orig.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = gamma * x_orig[i] + (1.0 - gamma) * x_s[i];
    if (bound > 0.0) v += uniform(rng, -bound, bound);
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

void StmConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("mixing ratio gamma must lie in [0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("noise bound beta must be non-negative");
  if (samples < 1) throw ConfigError("STM needs at least one sample per iteration");
}

// ------------------------------------------------------------------ perceptual features

PerceptualFeatures::PerceptualFeatures(Shape input, std::uint64_t seed) {
  stage1_ = std::make_shared<nn::Sequential>();
  stage1_->add(std::make_shared<nn::Conv2d>(layout_, "f1", input.channels, 16, 3, 1, 1));
  stage1_->add(std::make_shared<nn::Relu>());
  stage2_ = std::make_shared<nn::Sequential>();
  stage2_->add(std::make_shared<nn::Conv2d>(layout_, "f2", 16, 32, 3, 2, 1));
  stage2_->add(std::make_shared<nn::Relu>());
  Rng rng = make_rng(seed, {0xfea7});
  params_ = layout_.initialize(rng);
}

PerceptualFeatures::Features PerceptualFeatures::extract(const Image& x, bool keep_cache) const {
  const nn::PassContext ctx{params_, {}};
  Features f;
  f.layers.push_back(x);
  f.layers.push_back(stage1_->forward(ctx, x, keep_cache ? &f.stage1 : nullptr));
  f.layers.push_back(stage2_->forward(ctx, f.layers[1], keep_cache ? &f.stage2 : nullptr));
  return f;
}

Tensor PerceptualFeatures::backward(const Features& f, std::vector<Tensor> d_layers) const {
  const nn::PassContext ctx{params_, {}};
  Tensor d1 = stage2_->backward(ctx, d_layers[2], f.stage2, {});
  d1 += d_layers[1];
  Tensor d0 = stage1_->backward(ctx, d1, f.stage1, {});
  d0 += d_layers[0];
  return d0;
}

namespace {
constexpr double kStdEps = 1e-6;
}

StyleStatistics feature_statistics(const std::vector<Tensor>& layers) {
  StyleStatistics s;
  for (const auto& t : layers) {
    std::vector<double> m, sd;
    for (int c = 0; c < t.shape().channels; ++c) {
      const auto ch = t.channel(c);
      const double n = static_cast<double>(ch.size());
      double mean = 0.0;
      for (double v : ch) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : ch) var += (v - mean) * (v - mean);
      m.push_back(mean);
      sd.push_back(std::sqrt(var / n + kStdEps));
    }
    s.mean.push_back(std::move(m));
    s.stdev.push_back(std::move(sd));
  }
  return s;
}

std::vector<double> colour_statistics(const Image& x) {
  const auto s = feature_statistics({x});
  std::vector<double> out = s.mean[0];
  out.insert(out.end(), s.stdev[0].begin(), s.stdev[0].end());
  return out;
}

double colour_statistic_shift(const Image& x, const Image& y) {
  const auto a = colour_statistics(x), b = colour_statistics(y);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return total / static_cast<double>(a.size());
}

namespace {

// Style-statistics loss and its gradient with respect to each feature layer.
double statistics_loss(const std::vector<Tensor>& layers, const StyleStatistics& target,
                       std::vector<Tensor>& grads, double weight) {
  const StyleStatistics cur = feature_statistics(layers);
  double loss = 0.0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor& t = layers[l];
    const int C = t.shape().channels;
    const double n = static_cast<double>(t.shape().plane());
    const double norm = weight / C;
    for (int c = 0; c < C; ++c) {
      const double dm = cur.mean[l][static_cast<std::size_t>(c)] - target.mean[l][static_cast<std::size_t>(c)];
      const double sd = cur.stdev[l][static_cast<std::size_t>(c)];
      const double ds = sd - target.stdev[l][static_cast<std::size_t>(c)];
      loss += norm * (dm * dm + ds * ds);
      const double mean = cur.mean[l][static_cast<std::size_t>(c)];
      const auto in = t.channel(c);
      auto g = grads[l].channel(c);
      for (std::size_t i = 0; i < in.size(); ++i) {
        g[i] += norm * (2.0 * dm / n + 2.0 * ds * (in[i] - mean) / (n * sd));
      }
    }
  }
  return loss;
}

StyleStatistics blend(const std::vector<StyleStatistics>& corpus, const std::vector<double>& w) {
  StyleStatistics out = corpus.front();
  for (std::size_t l = 0; l < out.mean.size(); ++l) {
    for (std::size_t c = 0; c < out.mean[l].size(); ++c) {
      double m = 0.0, s = 0.0;
      for (std::size_t k = 0; k < corpus.size(); ++k) {
        m += w[k] * corpus[k].mean[l][c];
        s += w[k] * corpus[k].stdev[l][c];
      }
      out.mean[l][c] = m;
      out.stdev[l][c] = s;
    }
  }
  return out;
}

}  // namespace

PretrainResult pretrain_style_network(const StyleArchConfig& arch, std::span<const Image> style_corpus,
                                      std::span<const Image> content_corpus, const PretrainConfig& cfg) {
  if (style_corpus.size() < 4) throw ConfigError("style pretraining needs at least 4 style images");
  if (content_corpus.empty()) throw ConfigError("style pretraining needs content images");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw ConfigError("invalid pretraining schedule");

  StyleNetwork net = StyleNetwork::create(arch, cfg.seed, cfg.map_init_std);
  const PerceptualFeatures features(arch.input, cfg.seed);

  std::vector<StyleStatistics> corpus_stats;
  for (const auto& s : style_corpus) corpus_stats.push_back(feature_statistics(features.extract(s, false).layers));

  // Fixed projection from embeddings to corpus-style logits.
  Rng proj_rng = make_rng(cfg.seed, {0x9a0});
  const std::size_t S = style_corpus.size();
  const auto D = static_cast<std::size_t>(arch.embedding_dim);
  std::vector<double> projection(S * D);
  for (double& v : projection) v = standard_normal(proj_rng) / std::sqrt(static_cast<double>(D));

  Rng rng = make_rng(cfg.seed, {0x9a1});
  nn::Adam adam(net.params().size(), cfg.learning_rate);
  std::vector<double> grads(net.params().size());
  double last = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::fill(grads.begin(), grads.end(), 0.0);
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Image& x = content_corpus[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(content_corpus.size()) - 1))];
      const StyleEmbedding z = sample_embedding(arch.embedding_dim, rng);
      std::vector<double> logits(S);
      for (std::size_t k = 0; k < S; ++k) {
        double acc = 0.0;
        for (std::size_t d = 0; d < D; ++d) acc += projection[k * D + d] * z.z[d];
        logits[k] = acc / cfg.temperature;
      }
      const StyleStatistics target = blend(corpus_stats, softmax(logits));

      StyleNetwork::Trace trace;
      const Image out = net.forward(x, z, &trace);
      const auto fo = features.extract(out, true);
      const auto fx = features.extract(x, false);
      std::vector<Tensor> d_layers;
      for (const auto& t : fo.layers) d_layers.emplace_back(t.shape());

      double loss = statistics_loss(fo.layers, target, d_layers, cfg.style_weight);
      const Tensor& a = fo.layers[2];
      const Tensor& c = fx.layers[2];
      const double n = static_cast<double>(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - c[i];
        loss += cfg.content_weight * diff * diff / n;
        d_layers[2][i] += cfg.content_weight * 2.0 * diff / n;
      }
      Tensor d_out = features.backward(fo, std::move(d_layers));
      d_out *= 1.0 / cfg.batch_size;
      net.backward(trace, z, d_out, grads);
      batch_loss += loss / cfg.batch_size;
    }
    adam.step(net.mutable_params(), grads);
    last = batch_loss;
  }
  net.set_identifier("style-v" + std::to_string(StyleNetwork::kVersion) + "-pretrained");
  return PretrainResult{std::move(net), last};
}

// ------------------------------------------------------------------ fine-tuning

void FinetuneConfig::validate() const {
  if (members.empty()) throw ConfigError("fine-tuning needs at least one ensemble member");
  if (members.size() != weights.size()) throw ConfigError("fine-tuning weights/member count mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("fine-tuning weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("fine-tuning weights must sum to 1");
  for (const auto& m : members) {
    if (!m->differentiable()) {
      throw UnsupportedError("fine-tuning member '" + m->id() + "' does not expose gradients");
    }
  }
  if (epochs < 0 || batch_size < 1) throw ConfigError("invalid fine-tuning schedule");
}

double finetune_loss(const StyleNetwork& net, const FinetuneConfig& cfg, const LabeledExample& ex,
                     const StyleEmbedding& z) {
  const Image xs = net.stylize(ex.image, z);
  double total = 0.0;
  for (std::size_t k = 0; k < cfg.members.size(); ++k) total += cfg.weights[k] * loss(*cfg.members[k], xs, ex.label);
  return total;
}

StyleNetwork finetune_style_network(const StyleNetwork& net, const FinetuneConfig& cfg,
                                    std::span<const LabeledExample> data) {
  cfg.validate();
  StyleNetwork tuned = net;
  if (cfg.epochs == 0) return tuned;
  if (data.empty()) throw ConfigError("fine-tuning needs a non-empty dataset");

  Rng rng = make_rng(cfg.seed, {0xf17e});
  nn::Adam adam(tuned.params().size(), cfg.learning_rate);
  std::vector<double> grads(tuned.params().size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const int D = tuned.config().embedding_dim;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i - 1)))]);
    }
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grads.begin(), grads.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const LabeledExample& ex = data[order[k]];
        const StyleEmbedding z = sample_embedding(D, rng);
        StyleNetwork::Trace trace;
        const Image xs = tuned.forward(ex.image, z, &trace);
        Tensor d_xs(xs.shape());
        for (std::size_t m = 0; m < cfg.members.size(); ++m) {
          const ForwardTrace ft = cfg.members[m]->forward(xs);
          auto cot = cross_entropy_grad(ft.logits, ex.label);
          for (double& v : cot) v *= cfg.weights[m] / static_cast<double>(end - start);
          d_xs += cfg.members[m]->backward(ft, cot);
        }
        tuned.backward(trace, z, d_xs, grads);
      }
      adam.step(tuned.mutable_params(), grads);
    }
  }
  tuned.set_identifier("style-v" + std::to_string(StyleNetwork::kVersion) + "-finetuned");
  nlohmann::json meta = tuned.metadata();
  meta["finetuned"] = true;
  meta["finetune_members"] = nlohmann::json::array();
  for (const auto& m : cfg.members) meta["finetune_members"].push_back(m->id());
  meta["finetune_weights"] = cfg.weights;
  meta["finetune_epochs"] = cfg.epochs;
  meta["finetune_learning_rate"] = cfg.learning_rate;
  tuned.set_metadata(std::move(meta));
  return tuned;
}

}  // namespace stm::style
