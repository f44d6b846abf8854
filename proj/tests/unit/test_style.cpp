#include <gtest/gtest.h>

#include <filesystem>

#include "stm/error.hpp"
#include "stm/eval/dataset.hpp"
#include "stm/eval/defenses.hpp"
#include "stm/style/style.hpp"
#include "support.hpp"

using namespace stm;
using namespace stm::style;
using stm::testing::central_difference;
using stm::testing::random_image;
using stm::testing::relative_error;

namespace {

StyleArchConfig small_arch() {
  StyleArchConfig cfg;
  cfg.input = {3, 8, 8};
  cfg.embedding_dim = 6;
  cfg.channels = {4, 6, 6};
  cfg.residual_blocks = 1;
  return cfg;
}

// Network with every parameter moved off its identity initialisation.
StyleNetwork perturbed(std::uint64_t seed, double scale = 0.2) {
  StyleNetwork net = StyleNetwork::create(small_arch(), seed, 0.3);
  Rng rng = make_rng(seed, {1});
  for (double& p : net.mutable_params()) p += scale * standard_normal(rng);
  return net;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(StyleNetwork, IdentityAtInitialisation) {
  const StyleNetwork net = StyleNetwork::create(small_arch(), 1);
  Rng rng = make_rng(2);
  const Image x = random_image({3, 8, 8}, 3, 0.0, 1.0);
  const Image y = net.stylize(x, sample_embedding(6, rng));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], std::clamp(x[i], 1e-4, 1 - 1e-4), 1e-12);
}

TEST(StyleNetwork, OutputsStayInsideUnitInterval) {
  const StyleNetwork net = perturbed(4, 1.0);
  Rng rng = make_rng(5);
  for (int t = 0; t < 10; ++t) {
    const Image y = net.stylize(random_image({3, 8, 8}, 6 + t, 0.0, 1.0), sample_embedding(6, rng));
    EXPECT_TRUE(within_unit_interval(y));
    EXPECT_TRUE(all_finite(y));
  }
}

TEST(StyleNetwork, RejectsWrongShapes) {
  const StyleNetwork net = StyleNetwork::create(small_arch(), 1);
  Rng rng = make_rng(2);
  EXPECT_THROW(net.stylize(Image(Shape{3, 4, 4}), sample_embedding(6, rng)), InputError);
  EXPECT_THROW(net.stylize(Image(Shape{3, 8, 8}), sample_embedding(5, rng)), InputError);
}

TEST(StyleNetwork, InputGradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const StyleNetwork net = perturbed(10 + s);
    Rng rng = make_rng(20 + s);
    const StyleEmbedding z = sample_embedding(6, rng);
    const Image x = random_image({3, 8, 8}, 30 + s);
    const Tensor r = random_image({3, 8, 8}, 40 + s, -1, 1);
    const Tensor g = stylize_vjp(net, x, z, r);
    for (int k = 0; k < 20; ++k) {
      const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(x.size()) - 1));
      const double fd = central_difference([&](const Tensor& v) { return dot(net.stylize(v, z), r); }, x, i);
      EXPECT_LT(relative_error(g[i], fd), 1e-3) << "seed " << s << " coordinate " << i;
    }
  }
}

TEST(StyleNetwork, ParameterGradientMatchesFiniteDifferences) {
  StyleNetwork net = perturbed(50);
  Rng rng = make_rng(51);
  const StyleEmbedding z = sample_embedding(6, rng);
  const Image x = random_image({3, 8, 8}, 52);
  const Tensor r = random_image({3, 8, 8}, 53, -1, 1);
  StyleNetwork::Trace trace;
  net.forward(x, z, &trace);
  std::vector<double> pg(net.params().size(), 0.0);
  net.backward(trace, z, r, pg);
  for (int k = 0; k < 30; ++k) {
    const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pg.size()) - 1));
    const double v = net.params()[i];
    net.mutable_params()[i] = v + 1e-5;
    const double up = dot(net.stylize(x, z), r);
    net.mutable_params()[i] = v - 1e-5;
    const double down = dot(net.stylize(x, z), r);
    net.mutable_params()[i] = v;
    EXPECT_LT(relative_error(pg[i], (up - down) / 2e-5), 1e-3) << "param " << i;
  }
}

TEST(StyleNetwork, SaveLoadRoundTrip) {
  const StyleNetwork net = perturbed(60);
  const auto path = (std::filesystem::temp_directory_path() / "stm_test_style.stmp").string();
  net.save(path, {{"tag", 3}});
  const StyleNetwork back = StyleNetwork::load(path);
  EXPECT_EQ(back.params(), net.params());
  EXPECT_EQ(back.checksum(), net.checksum());
  EXPECT_EQ(back.metadata().at("tag"), 3);
  EXPECT_EQ(back.config().to_json(), net.config().to_json());
}

TEST(MixAndPerturb, NoiseIsBoundedAndCentred) {
  const Image x(Shape{1, 1, 1}, {0.5});
  const Image xs(Shape{1, 1, 1}, {0.3});
  Rng rng = make_rng(70);
  const double eps = 16.0 / 255.0, beta = 0.5;
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 1000000;
  for (int t = 0; t < n; ++t) {
    const double v = mix_and_perturb(x, xs, 0.5, beta, eps, rng)[0];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  EXPECT_GE(lo, 0.4 - beta * eps);
  EXPECT_LE(hi, 0.4 + beta * eps);
  EXPECT_LT(lo, 0.4 - 0.99 * beta * eps);
  EXPECT_GT(hi, 0.4 + 0.99 * beta * eps);
  EXPECT_NEAR(sum / n, 0.4, 1e-4);
}

TEST(MixAndPerturb, EndpointsAndClipping) {
  const Image x = random_image({3, 4, 4}, 71), xs = random_image({3, 4, 4}, 72);
  Rng rng = make_rng(73);
  EXPECT_EQ(mix_and_perturb(x, xs, 1.0, 0.0, 0.1, rng), x);
  EXPECT_EQ(mix_and_perturb(x, xs, 0.0, 0.0, 0.1, rng), xs);
  EXPECT_TRUE(within_unit_interval(mix_and_perturb(x, xs, 0.5, 50.0, 0.1, rng)));
  EXPECT_THROW(mix_and_perturb(x, xs, 1.5, 0.0, 0.1, rng), ConfigError);
  EXPECT_THROW((StmConfig{0.5, -1.0, 20}.validate()), ConfigError);
  EXPECT_THROW((StmConfig{0.5, 1.0, 0}.validate()), ConfigError);
}

TEST(Statistics, ColourStatisticsOfConstantImage) {
  const Image x(Shape{3, 4, 4}, 0.25);
  const auto s = colour_statistics(x);
  ASSERT_EQ(s.size(), 6u);
  EXPECT_NEAR(s[0], 0.25, 1e-12);
  EXPECT_EQ(colour_statistic_shift(x, x), 0.0);
}

TEST(Pretraining, ReducesTheTrainingLoss) {
  const auto corpus = eval::make_style_corpus(6, 8, 1);
  std::vector<Image> content;
  for (int i = 0; i < 6; ++i) content.push_back(random_image({3, 8, 8}, 80 + i));
  PretrainConfig cfg;
  cfg.batch_size = 6;
  cfg.steps = 1;
  const double initial = pretrain_style_network(small_arch(), corpus, content, cfg).final_loss;
  cfg.steps = 150;
  const PretrainResult trained = pretrain_style_network(small_arch(), corpus, content, cfg);
  EXPECT_LT(trained.final_loss, 0.7 * initial);
  Rng rng = make_rng(2);
  const Image y = trained.net.stylize(content[0], sample_embedding(6, rng));
  EXPECT_GT(linf_distance(y, content[0]), 0.01);
  EXPECT_THROW(pretrain_style_network(small_arch(), std::span(corpus).first(2), content, cfg), ConfigError);
}

TEST(Finetuning, LowersEnsembleLossAndFlagsTheNetwork) {
  const auto model = stm::testing::tiny_classifier(90, {3, 8, 8}, "convnet", 4, 4, "relu");
  std::vector<LabeledExample> data;
  for (int i = 0; i < 12; ++i) data.push_back({random_image({3, 8, 8}, 100 + i), i % 4, std::nullopt});
  const StyleNetwork start = perturbed(91, 0.1);
  FinetuneConfig cfg;
  cfg.members = {model};
  cfg.weights = {1.0};
  cfg.learning_rate = 3e-3;
  cfg.epochs = 0;
  const StyleNetwork same = finetune_style_network(start, cfg, data);
  EXPECT_EQ(same.params(), start.params());

  auto mean_loss = [&](const StyleNetwork& net) {
    Rng rng = make_rng(92);
    double total = 0.0;
    for (const auto& ex : data)
      for (int k = 0; k < 4; ++k) total += finetune_loss(net, cfg, ex, sample_embedding(6, rng));
    return total / (4.0 * data.size());
  };
  cfg.epochs = 15;
  const StyleNetwork tuned = finetune_style_network(start, cfg, data);
  EXPECT_LT(mean_loss(tuned), mean_loss(start));
  EXPECT_TRUE(tuned.metadata().at("finetuned").get<bool>());
  EXPECT_EQ(tuned.metadata().at("finetune_members")[0], model->id());
}

TEST(Finetuning, RejectsNonDifferentiableMembersAndBadWeights) {
  const auto model = stm::testing::tiny_classifier(93);
  const auto defended = std::make_shared<eval::DefendedClassifier>(eval::make_defense("bitred:4"), model);
  FinetuneConfig cfg;
  cfg.members = {defended};
  cfg.weights = {1.0};
  EXPECT_THROW(cfg.validate(), UnsupportedError);
  cfg.members = {model, model};
  cfg.weights = {0.5, 0.6};
  EXPECT_THROW(cfg.validate(), ConfigError);
}
