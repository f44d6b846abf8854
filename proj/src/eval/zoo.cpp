#include "stm/eval/zoo.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "stm/error.hpp"
#include "stm/rng.hpp"

namespace fs = std::filesystem;

namespace stm::eval {

std::shared_ptr<const nn::Architecture> build_classifier_arch(const nlohmann::json& spec) {
  auto arch = std::make_shared<nn::Architecture>();
  arch->spec = spec;
  const auto input = spec.at("input").get<std::vector<int>>();
  arch->input = Shape{input.at(0), input.at(1), input.at(2)};
  const std::string family = spec.at("family").get<std::string>();
  const int w = spec.value("width", 16);
  const int classes = spec.value("classes", 10);
  const bool smooth = spec.value("activation", std::string("relu")) == "softplus";
  auto& L = arch->layout;
  auto act = [smooth]() -> nn::LayerPtr {
    if (smooth) return std::make_shared<nn::Softplus>();
    return std::make_shared<nn::Relu>();
  };
  auto body = std::make_shared<nn::Sequential>();
  const int c = arch->input.channels;

  if (arch->input.height % 4 != 0 || arch->input.width % 4 != 0) {
    throw ConfigError("classifier input size must be divisible by 4");
  }
  const int qh = arch->input.height / 4, qw = arch->input.width / 4;

  if (family == "convnet") {
    body->add(std::make_shared<nn::Conv2d>(L, "conv1", c, w, 3, 1, 1));
    body->add(act());
    body->add(std::make_shared<nn::MaxPool2>());
    body->add(std::make_shared<nn::Conv2d>(L, "conv2", w, 2 * w, 3, 1, 1));
    body->add(act());
    body->add(std::make_shared<nn::MaxPool2>());
    body->add(std::make_shared<nn::Conv2d>(L, "conv3", 2 * w, 2 * w, 3, 1, 1));
    body->add(act());
    body->add(std::make_shared<nn::Dense>(L, "fc1", 2 * w * qh * qw, 64));
    body->add(act());
    body->add(std::make_shared<nn::Dense>(L, "fc2", 64, classes));
  } else if (family == "resnet") {
    auto block = [&](const std::string& key, int ch) {
      auto inner = std::make_shared<nn::Sequential>();
      inner->add(std::make_shared<nn::Conv2d>(L, key + ".conv1", ch, ch, 3, 1, 1));
      inner->add(act());
      inner->add(std::make_shared<nn::Conv2d>(L, key + ".conv2", ch, ch, 3, 1, 1));
      body->add(std::make_shared<nn::Residual>(inner));
      body->add(act());
    };
    body->add(std::make_shared<nn::Conv2d>(L, "stem", c, w, 3, 1, 1));
    body->add(act());
    block("block1", w);
    body->add(std::make_shared<nn::Conv2d>(L, "down1", w, 2 * w, 3, 2, 1));
    body->add(act());
    block("block2", 2 * w);
    body->add(std::make_shared<nn::Conv2d>(L, "down2", 2 * w, 2 * w, 3, 2, 1));
    body->add(act());
    body->add(std::make_shared<nn::GlobalAvgPool>());
    body->add(std::make_shared<nn::Dense>(L, "fc", 2 * w, classes));
  } else if (family == "widenet") {
    body->add(std::make_shared<nn::Conv2d>(L, "conv1", c, w, 5, 1, 2));
    body->add(act());
    body->add(std::make_shared<nn::AvgPool2>());
    body->add(std::make_shared<nn::Conv2d>(L, "conv2", w, 2 * w, 5, 1, 2));
    body->add(act());
    body->add(std::make_shared<nn::AvgPool2>());
    body->add(std::make_shared<nn::Dense>(L, "fc", 2 * w * qh * qw, classes));
  } else {
    throw ConfigError("unknown classifier family '" + family + "'");
  }
  arch->body = body;
  arch->body->output_shape(arch->input);  // validates the wiring
  return arch;
}

bool ModelEntry::has_role(const std::string& role) const {
  return std::find(spec.roles.begin(), spec.roles.end(), role) != spec.roles.end();
}

const ModelEntry& ModelZoo::get(const std::string& name) const {
  for (const auto& m : models) {
    if (m.spec.name == name) return m;
  }
  throw ConfigError("model '" + name + "' is not in the zoo");
}

bool ModelZoo::contains(const std::string& name) const {
  return std::any_of(models.begin(), models.end(), [&](const auto& m) { return m.spec.name == name; });
}

std::vector<std::string> ModelZoo::names_with_role(const std::string& role) const {
  std::vector<std::string> out;
  for (const auto& m : models) {
    if (m.has_role(role)) out.push_back(m.spec.name);
  }
  return out;
}

nlohmann::json ModelZoo::accuracy_table() const {
  auto table = nlohmann::json::array();
  for (const auto& m : models) {
    table.push_back({{"name", m.spec.name},
                     {"family", m.spec.family},
                     {"width", m.spec.width},
                     {"seed", m.spec.seed},
                     {"roles", m.spec.roles},
                     {"clean_accuracy", m.clean_accuracy},
                     {"checksum", m.checksum}});
  }
  return table;
}

void ModelZoo::save(const std::string& dir) const {
  fs::create_directories(dir);
  for (const auto& m : models) {
    nn::make_archive("classifier", m.model->architecture(), m.model->params(),
                     {{"name", m.spec.name}, {"clean_accuracy", m.clean_accuracy}})
        .save((fs::path(dir) / (m.spec.name + ".stmp")).string());
  }
  std::ofstream out(fs::path(dir) / "zoo.json");
  out << nlohmann::json{{"format", "stm-zoo"}, {"version", 1}, {"models", accuracy_table()}}.dump(2) << "\n";
}

ModelZoo ModelZoo::load(const std::string& dir) {
  const fs::path manifest = fs::path(dir) / "zoo.json";
  if (!fs::exists(manifest)) {
    throw MissingArtifactError("no model zoo at '" + dir + "'; run `stm train-zoo` first");
  }
  std::ifstream in(manifest);
  const auto doc = nlohmann::json::parse(in);
  ModelZoo zoo;
  for (const auto& row : doc.at("models")) {
    ModelEntry e;
    e.spec.name = row.at("name").get<std::string>();
    e.spec.family = row.at("family").get<std::string>();
    e.spec.width = row.at("width").get<int>();
    e.spec.seed = row.at("seed").get<std::uint64_t>();
    e.spec.roles = row.at("roles").get<std::vector<std::string>>();
    e.clean_accuracy = row.at("clean_accuracy").get<double>();
    e.checksum = row.at("checksum").get<std::string>();
    const auto archive = nn::Archive::load((fs::path(dir) / (e.spec.name + ".stmp")).string());
    auto arch = build_classifier_arch(archive.arch);
    nn::check_manifest(archive, arch->layout);
    e.model = std::make_shared<nn::NetworkClassifier>(e.spec.name, arch, archive.values);
    if (e.model->checksum() != e.checksum) {
      throw InputError("checkpoint for '" + e.spec.name + "' does not match the zoo manifest checksum");
    }
    zoo.models.push_back(std::move(e));
  }
  return zoo;
}

std::vector<ZooMemberSpec> default_zoo_specs() {
  return {
      {"convnet-a", "convnet", 16, 11, {"surrogate", "ensemble"}},
      {"convnet-b", "convnet", 16, 12, {"ensemble"}},
      {"resnet-a", "resnet", 16, 21, {"target"}},
      {"widenet-a", "widenet", 16, 31, {"target"}},
      {"resnet-b", "resnet", 16, 22, {"target"}},
  };
}

std::shared_ptr<const nn::NetworkClassifier> init_classifier(const std::string& name,
                                                             const nlohmann::json& arch_spec,
                                                             std::uint64_t seed) {
  auto arch = build_classifier_arch(arch_spec);
  Rng rng = make_rng(seed, {0x1417});
  return std::make_shared<nn::NetworkClassifier>(name, arch, arch->layout.initialize(rng));
}

namespace {

// Random translation (edge-replicated) and per-image contrast/brightness jitter.
Image augment(const Image& x, int max_shift, double jitter, Rng& rng) {
  const Shape s = x.shape();
  const int dy = uniform_int(rng, -max_shift, max_shift), dx = uniform_int(rng, -max_shift, max_shift);
  const double gain = uniform(rng, 1.0 - jitter, 1.0 + jitter), offset = uniform(rng, -jitter / 2, jitter / 2);
  Image out(s);
  for (int c = 0; c < s.channels; ++c) {
    for (int h = 0; h < s.height; ++h) {
      for (int w = 0; w < s.width; ++w) {
        const int sh = std::clamp(h - dy, 0, s.height - 1), sw = std::clamp(w - dx, 0, s.width - 1);
        out.at(c, h, w) = std::clamp(gain * (x.at(c, sh, sw) - 0.5) + 0.5 + offset, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace

double accuracy(const Classifier& model, const Dataset& data) {
  if (data.examples.empty()) throw ConfigError("accuracy of an empty dataset");
  std::size_t correct = 0;
  for (const auto& ex : data.examples) correct += model.predict(ex.image) == ex.label ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.examples.size());
}

std::shared_ptr<const nn::NetworkClassifier> train_classifier(const ZooMemberSpec& spec,
                                                              const DatasetSplit& data,
                                                              const ClassifierTrainConfig& cfg) {
  const Shape s = data.train.shape();
  const nlohmann::json arch_spec = {{"family", spec.family},
                                    {"width", spec.width},
                                    {"classes", data.train.num_classes()},
                                    {"input", {s.channels, s.height, s.width}}};
  auto init = init_classifier(spec.name, arch_spec, spec.seed);
  auto model = std::make_shared<nn::NetworkClassifier>(*init);

  Rng rng = make_rng(spec.seed, {0x7a11});
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  nn::Adam adam(model->params().size(), cfg.learning_rate);
  std::vector<double> grads(model->params().size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i - 1)))]);
    }
    // Cosine decay over the run.
    const double progress = static_cast<double>(epoch) / std::max(1, cfg.epochs);
    adam.set_learning_rate(cfg.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979 * progress)));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grads.begin(), grads.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = data.train.examples[order[k]];
        const auto trace = model->forward(cfg.augment ? augment(ex.image, cfg.max_shift, cfg.jitter, rng) : ex.image);
        auto cot = cross_entropy_grad(trace.logits, ex.label);
        for (double& v : cot) v /= static_cast<double>(end - start);
        model->backward_with_params(trace, cot, grads);
      }
      adam.step(model->mutable_params(), grads);
    }
  }

  const double acc = accuracy(*model, data.test);
  if (acc < cfg.accuracy_floor) {
    throw TrainingError("model '" + spec.name + "' reached " + std::to_string(acc) +
                        "% test accuracy, below the floor of " + std::to_string(cfg.accuracy_floor) +
                        "% (family " + spec.family + ", " + std::to_string(cfg.epochs) +
                        " epochs, lr " + std::to_string(cfg.learning_rate) + ")");
  }
  return model;
}

ModelZoo train_toy_classifiers(const DatasetSplit& data, const std::vector<ZooMemberSpec>& specs,
                               const ClassifierTrainConfig& cfg) {
  std::vector<std::string> families;
  for (const auto& s : specs) {
    if (std::find(families.begin(), families.end(), s.family) == families.end()) families.push_back(s.family);
  }
  if (specs.size() < 2 || families.size() < 2) {
    throw ConfigError("a transfer zoo needs at least two models from two architecture families");
  }
  ModelZoo zoo;
  for (const auto& spec : specs) {
    ModelEntry e;
    e.spec = spec;
    e.model = train_classifier(spec, data, cfg);
    e.clean_accuracy = accuracy(*e.model, data.test);
    e.checksum = e.model->checksum();
    zoo.models.push_back(std::move(e));
  }
  return zoo;
}

}  // namespace stm::eval
