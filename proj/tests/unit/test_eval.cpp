#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "stm/error.hpp"
#include "stm/eval/dataset.hpp"
#include "stm/eval/defenses.hpp"
#include "stm/eval/experiment.hpp"
#include "stm/eval/image_io.hpp"
#include "stm/eval/zoo.hpp"
#include "support.hpp"

using namespace stm;
using namespace stm::eval;
using stm::testing::random_image;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stm_test_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small but learnable split and a two-model zoo trained on it, shared by the
// experiment tests.
struct Toy {
  DatasetSplit data;
  ModelZoo zoo;
};

const Toy& toy() {
  static const Toy t = [] {
    SyntheticShapesConfig cfg;
    cfg.size = 16;
    cfg.train_per_class = 60;
    cfg.test_per_class = 6;
    Toy out;
    out.data = make_synthetic_shapes(cfg);
    ClassifierTrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 4;
    tc.accuracy_floor = 0.0;
    out.zoo = train_toy_classifiers(out.data,
                                    {{"small-a", "convnet", 6, 1, {"surrogate"}}, {"small-b", "resnet", 6, 2, {"target"}}},
                                    tc);
    return out;
  }();
  return t;
}

}  // namespace

TEST(Jpeg, QualityHundredIsNearlyLosslessAndLowQualityIsNot) {
  Image x(Shape{3, 16, 16});
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 16; ++h)
      for (int w = 0; w < 16; ++w) x.at(c, h, w) = (h * 16 + w + 40 * c) % 256 / 255.0;
  EXPECT_LT(linf_distance(jpeg_defense(x, 100), x), 0.05);
  const Image noisy = random_image({3, 16, 16}, 1, 0.0, 1.0);
  EXPECT_GT(linf_distance(jpeg_defense(noisy, 10), noisy), 0.1);
  EXPECT_TRUE(within_unit_interval(jpeg_defense(noisy, 50)));
  EXPECT_THROW(jpeg_defense(noisy, 0), ConfigError);
}

// Compares against an independent codec when a Python with Pillow is around.
TEST(Jpeg, AgreesWithPillow) {
#ifdef STM_PYTHON
  const std::string python = STM_PYTHON;
#else
  const std::string python;
#endif
  if (python.empty()) GTEST_SKIP() << "no Python interpreter configured";
  const fs::path dir = scratch("jpeg");
  const Image x = quantize_8bit(random_image({3, 16, 16}, 2, 0.0, 1.0));
  write_png((dir / "in.png").string(), x);
  const std::string script =
      "import sys\n"
      "from PIL import Image\n"
      "im = Image.open(sys.argv[1]).convert('RGB')\n"
      "im.save(sys.argv[2], quality=75, subsampling=0)\n"
      "Image.open(sys.argv[2]).convert('RGB').save(sys.argv[3])\n";
  std::ofstream(dir / "c.py") << script;
  const std::string cmd = python + " -c \"import PIL\" 2>/dev/null && " + python + " " +
                          (dir / "c.py").string() + " " + (dir / "in.png").string() + " " +
                          (dir / "o.jpg").string() + " " + (dir / "out.png").string();
  if (std::system(cmd.c_str()) != 0) GTEST_SKIP() << "Pillow is not available";
  const Image theirs = read_png((dir / "out.png").string());
  const Image ours = jpeg_defense(x, 75);
  // Both use libjpeg's standard tables; decoders may differ by rounding.
  EXPECT_LE(linf_distance(ours, theirs), 3.0 / 255.0);
}

TEST(BitDepth, EightBitsIsQuantisationAndOneBitIsThreshold) {
  const Image x = random_image({3, 5, 5}, 3, 0.0, 1.0);
  EXPECT_EQ(bit_depth_reduction(x, 8), quantize_8bit(x));
  const Image one = bit_depth_reduction(x, 1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(one[i], x[i] >= 0.5 ? 1.0 : 0.0);
  EXPECT_THROW(bit_depth_reduction(x, 0), ConfigError);
}

TEST(Defenses, FactoryAndExternalDefenses) {
  EXPECT_EQ(make_defense("jpeg")->id(), "jpeg:75");
  EXPECT_EQ(make_defense("bitred:3")->id(), "bitred:3");
  EXPECT_THROW(make_defense("jpeg:abc"), ConfigError);
  EXPECT_THROW(make_defense("blur"), ConfigError);
  for (const auto& name : external_defense_names()) {
    const auto d = make_defense(name);
    EXPECT_THROW(d->apply(Image(Shape{3, 4, 4})), UnsupportedError);
  }
}

TEST(SuccessRate, CountsMisclassifications) {
  const auto model = stm::testing::tiny_classifier(4);
  std::vector<Image> adv;
  std::vector<LabeledExample> ex;
  for (int i = 0; i < 8; ++i) {
    adv.push_back(random_image({3, 8, 8}, 10 + i));
    ex.push_back({adv.back(), model->predict(adv.back()), std::nullopt});
  }
  EXPECT_EQ(attack_success_rate(adv, ex, *model, attacks::Mode::untargeted), 0.0);
  for (auto& e : ex) e.label = (e.label + 1) % 4;
  EXPECT_EQ(attack_success_rate(adv, ex, *model, attacks::Mode::untargeted), 100.0);
  for (auto& e : ex) e.target_label = (e.label + 3) % 4;
  EXPECT_EQ(attack_success_rate(adv, ex, *model, attacks::Mode::targeted), 100.0);
  EXPECT_THROW(attack_success_rate({}, {}, *model, attacks::Mode::untargeted), ConfigError);
}

TEST(Dataset, SyntheticShapesAreDeterministicAndBalanced) {
  SyntheticShapesConfig cfg;
  cfg.size = 8;
  cfg.train_per_class = 3;
  cfg.test_per_class = 2;
  const auto a = make_synthetic_shapes(cfg), b = make_synthetic_shapes(cfg);
  ASSERT_EQ(a.train.size(), 30u);
  ASSERT_EQ(a.test.size(), 20u);
  std::vector<int> counts(10, 0);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train.examples[i].image, b.train.examples[i].image);
    EXPECT_TRUE(within_unit_interval(a.train.examples[i].image));
    ++counts[static_cast<std::size_t>(a.train.examples[i].label)];
  }
  for (int c : counts) EXPECT_EQ(c, 3);
  cfg.size = 10;
  EXPECT_THROW(make_synthetic_shapes(cfg), ConfigError);
}

TEST(Dataset, DirectoryRoundTripIsLosslessOnTheEightBitGrid) {
  SyntheticShapesConfig cfg;
  cfg.size = 8;
  cfg.train_per_class = 2;
  cfg.test_per_class = 1;
  auto split = make_synthetic_shapes(cfg);
  for (auto* d : {&split.train, &split.test})
    for (auto& ex : d->examples) ex.image = quantize_8bit(ex.image);
  const fs::path dir = scratch("dataset");
  save_split(split, dir.string());
  const auto back = load_split(dir.string());
  ASSERT_EQ(back.train.size(), split.train.size());
  EXPECT_EQ(back.train.class_names, split.train.class_names);
  // Loading orders by class, then file name; saving writes in that order.
  for (std::size_t i = 0; i < back.test.size(); ++i) {
    EXPECT_EQ(back.test.examples[i].label, split.test.examples[i].label);
    EXPECT_EQ(back.test.examples[i].image, split.test.examples[i].image);
  }
  EXPECT_THROW(load_split((dir / "nope").string()), InputError);
}

TEST(ImageIo, SixteenBitPngAndTensorFilesRoundTrip) {
  const fs::path dir = scratch("io");
  const Image x = random_image({3, 5, 7}, 5, 0.0, 1.0);
  write_png((dir / "a.png").string(), x, 16);
  EXPECT_LE(linf_distance(read_png((dir / "a.png").string()), x), 0.5 / 65535 + 1e-12);
  save_tensors((dir / "t.stmt").string(), {x, random_image({1, 2, 2}, 6)});
  const auto back = load_tensors((dir / "t.stmt").string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], x);
  EXPECT_THROW(read_png((dir / "missing.png").string()), InputError);
  std::ofstream(dir / "bad.stmt") << "garbage";
  EXPECT_THROW(load_tensors((dir / "bad.stmt").string()), InputError);
}

TEST(Zoo, SaveLoadKeepsWeightsAndAccuracy) {
  const Toy& t = toy();
  const fs::path dir = scratch("zoo");
  t.zoo.save(dir.string());
  const ModelZoo back = ModelZoo::load(dir.string());
  ASSERT_EQ(back.models.size(), 2u);
  for (const auto& m : t.zoo.models) {
    const auto& r = back.get(m.spec.name);
    EXPECT_EQ(r.model->params(), m.model->params());
    EXPECT_EQ(r.checksum, m.checksum);
    EXPECT_DOUBLE_EQ(accuracy(*r.model, t.data.test), m.clean_accuracy);
    EXPECT_EQ(r.spec.roles, m.spec.roles);
  }
  EXPECT_EQ(back.names_with_role("target"), std::vector<std::string>{"small-b"});
  EXPECT_THROW(ModelZoo::load((dir / "none").string()), MissingArtifactError);
  EXPECT_THROW(back.get("x"), ConfigError);
}

TEST(Zoo, TrainingLearnsAndIsSeedSensitive) {
  const Toy& t = toy();
  for (const auto& m : t.zoo.models) EXPECT_GT(m.clean_accuracy, 15.0) << m.spec.name;
  ClassifierTrainConfig tc;
  tc.epochs = 1;
  tc.accuracy_floor = 0.0;
  const auto a = train_classifier({"x", "convnet", 4, 1, {}}, t.data, tc);
  const auto b = train_classifier({"x", "convnet", 4, 1, {}}, t.data, tc);
  const auto c = train_classifier({"x", "convnet", 4, 2, {}}, t.data, tc);
  EXPECT_EQ(a->params(), b->params());
  EXPECT_NE(a->params(), c->params());
  tc.accuracy_floor = 101.0;
  EXPECT_THROW(train_classifier({"x", "convnet", 4, 1, {}}, t.data, tc), TrainingError);
}

namespace {

ExperimentConfig small_experiment() {
  ExperimentConfig cfg;
  cfg.name = "unit";
  cfg.images = 12;
  attacks::PresetParams p;
  p.budget = AttackBudget::from_255(16, 4, 1.0);
  cfg.attacks = {{attacks::preset("ifgsm", p), StyleSource::finetuned, ""},
                 {attacks::preset("dim", p), StyleSource::finetuned, ""}};
  cfg.surrogates = {"small-a"};
  cfg.targets = {"small-a", "small-b"};
  cfg.seeds = {0, 1};
  return cfg;
}

}  // namespace

TEST(Experiment, ReportsAreDeterministicAcrossRunsAndWorkerCounts) {
  const Toy& t = toy();
  ExperimentConfig cfg = small_experiment();
  const auto r1 = run_experiment_matrix(cfg, t.zoo, t.data.test, {});
  cfg.workers = 3;
  const auto r2 = run_experiment_matrix(cfg, t.zoo, t.data.test, {});
  cfg.workers = 1;
  EXPECT_EQ(r1.to_json(false).dump(), run_experiment_matrix(cfg, t.zoo, t.data.test, {}).to_json(false).dump());
  EXPECT_EQ(r1.cells.size(), 2u * 2u * 2u);
  for (std::size_t i = 0; i < r1.cells.size(); ++i) EXPECT_EQ(r1.cells[i].fooled, r2.cells[i].fooled);
  EXPECT_TRUE(r1.failures.empty());
  const auto back = EvaluationReport::from_json(r1.to_json());
  EXPECT_EQ(back.payload_hash(), r1.payload_hash());
  EXPECT_FALSE(r1.table().empty());
  EXPECT_FALSE(std::isnan(r1.mean_success("dim", "small-a", "small-b")));
  EXPECT_TRUE(std::isnan(r1.mean_success("stm", "small-a", "small-b")));
}

TEST(Experiment, WhiteBoxSuccessIsHighAndGrowsWithEpsilon) {
  const Toy& t = toy();
  ExperimentConfig cfg = small_experiment();
  cfg.targets = {"small-a"};
  cfg.seeds = {0};
  double previous = -1.0;
  for (double eps : {0.0, 2.0, 8.0, 32.0}) {
    attacks::PresetParams p;
    p.budget = AttackBudget::from_255(eps, 10, 1.0);
    cfg.attacks = {{attacks::preset("ifgsm", p), StyleSource::finetuned, ""}};
    const double rate = run_experiment_matrix(cfg, t.zoo, t.data.test, {}).mean_success("ifgsm", "small-a", "small-a");
    EXPECT_GE(rate, previous);
    previous = rate;
    if (eps == 0.0) EXPECT_EQ(rate, 0.0);
  }
  EXPECT_GE(previous, 95.0);
}

TEST(Experiment, DegenerateAndFailingConfigurations) {
  const Toy& t = toy();
  ExperimentConfig cfg = small_experiment();
  cfg.attacks.clear();
  EXPECT_THROW(run_experiment_matrix(cfg, t.zoo, t.data.test, {}), ConfigError);
  cfg = small_experiment();
  cfg.offset = 10000;
  EXPECT_THROW(run_experiment_matrix(cfg, t.zoo, t.data.test, {}), ConfigError);
  cfg = small_experiment();
  cfg.targets = {"missing"};
  EXPECT_THROW(run_experiment_matrix(cfg, t.zoo, t.data.test, {}), ConfigError);
  cfg = small_experiment();
  cfg.attacks = {{attacks::preset("stm"), StyleSource::finetuned, ""}};
  EXPECT_THROW(run_experiment_matrix(cfg, t.zoo, t.data.test, {}), MissingArtifactError);

  // An external defense cannot run: the cell is dropped and a failure recorded.
  cfg = small_experiment();
  cfg.defenses = {"hgd", "bitred:4"};
  const auto r = run_experiment_matrix(cfg, t.zoo, t.data.test, {});
  EXPECT_FALSE(r.failures.empty());
  for (const auto& f : r.failures) EXPECT_EQ(f.kind, "unsupported_capability");
  EXPECT_TRUE(std::isnan(r.mean_success("ifgsm", "small-a", "hgd/small-b")));
  EXPECT_FALSE(std::isnan(r.mean_success("ifgsm", "small-a", "bitred:4/small-b")));
}

TEST(Experiment, EnsembleSurrogatesAndConfigRoundTrip) {
  const Toy& t = toy();
  ExperimentConfig cfg = small_experiment();
  cfg.surrogates = {"ensemble:small-a+small-b"};
  cfg.seeds = {0};
  const auto r = run_experiment_matrix(cfg, t.zoo, t.data.test, {});
  EXPECT_FALSE(std::isnan(r.mean_success("dim", "ensemble:small-a+small-b", "small-b")));
  EXPECT_EQ(ExperimentConfig::from_json(cfg.to_json()).hash(), cfg.hash());
  EXPECT_THROW(ExperimentConfig::from_json({{"attacks", {"nope"}}}), ConfigError);
}

TEST(Ablation, FourStrategiesAndAccuracyRows) {
  const Toy& t = toy();
  const auto rows = ablation_strategies({0.5, 2.0, 2}, AttackBudget::from_255(16, 2, 1.0));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].row(), "noise");
  EXPECT_EQ(rows[3].row(), "style+ft+mix");
  EXPECT_FALSE(rows[0].spec.uses_style_network());
  EXPECT_EQ(rows[1].style, StyleSource::pretrained);
  EXPECT_EQ(rows[2].style, StyleSource::finetuned);

  style::StyleArchConfig arch;
  arch.input = {3, 16, 16};
  arch.embedding_dim = 4;
  arch.channels = {4, 4, 4};
  arch.residual_blocks = 1;
  const auto pre = style::StyleNetwork::create(arch, 1, 0.2);
  auto ft = pre;
  ft.set_metadata({{"finetuned", true}});
  ExperimentConfig cfg = small_experiment();
  cfg.attacks = rows;
  cfg.seeds = {0};
  const auto r = run_experiment_matrix(cfg, t.zoo, t.data.test, {&ft, &pre, nullptr});
  for (const auto& row : rows) EXPECT_FALSE(std::isnan(r.mean_success(row.row(), "small-a", "small-b")));

  const std::vector<std::shared_ptr<const Classifier>> models{t.zoo.get("small-a").model};
  const auto table = ablation_accuracy_table(models, pre, ft, take(t.data.test, 10), 0.5, 0);
  ASSERT_EQ(table.size(), 4u);
  // An identity-initialised network leaves images unchanged.
  const auto identity = style::StyleNetwork::create(arch, 2);
  const auto acc = stylized_accuracy(models, &identity, take(t.data.test, 10), 0.0, 0);
  EXPECT_NEAR(acc.mean(), accuracy(*models[0], take(t.data.test, 10)), 10.0 + 1e-9);
}
