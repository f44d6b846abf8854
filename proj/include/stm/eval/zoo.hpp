#pragma once

#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "stm/eval/dataset.hpp"
#include "stm/nn/network.hpp"

namespace stm::eval {

// Classifier families of the desk-scale zoo:
//   "convnet" - 3x3 conv / max-pool stack with a dense head
//   "resnet"  - residual blocks, strided downsampling, global average pool
//   "widenet" - 5x5 conv / average-pool stack with a linear head
// spec: {"family", "width", "classes", "input": [C, H, W], "activation"?}
std::shared_ptr<const nn::Architecture> build_classifier_arch(const nlohmann::json& spec);

struct ZooMemberSpec {
  std::string name;
  std::string family;
  int width = 16;
  std::uint64_t seed = 0;
  std::vector<std::string> roles;  // "surrogate", "target", "ensemble"
};

struct ModelEntry {
  ZooMemberSpec spec;
  double clean_accuracy = 0.0;  // percent, on the test split
  std::string checksum;
  std::shared_ptr<const nn::NetworkClassifier> model;

  bool has_role(const std::string& role) const;
};

struct ClassifierTrainConfig {
  int epochs = 8;
  int batch_size = 32;
  double learning_rate = 2e-3;
  double accuracy_floor = 70.0;  // percent
  bool augment = false;          // random shifts and contrast jitter
  int max_shift = 2;
  double jitter = 0.2;
};

class ModelZoo {
 public:
  std::vector<ModelEntry> models;

  const ModelEntry& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names_with_role(const std::string& role) const;

  // <dir>/zoo.json (accuracy table, roles, checksums) + <dir>/<name>.stmp
  void save(const std::string& dir) const;
  static ModelZoo load(const std::string& dir);
  nlohmann::json accuracy_table() const;
};

// Five models over three families: the surrogate and a second convnet form
// the fine-tuning ensemble; two resnets and a widenet are held-out targets.
std::vector<ZooMemberSpec> default_zoo_specs();

std::shared_ptr<const nn::NetworkClassifier> init_classifier(const std::string& name,
                                                             const nlohmann::json& arch_spec,
                                                             std::uint64_t seed);

std::shared_ptr<const nn::NetworkClassifier> train_classifier(const ZooMemberSpec& spec,
                                                              const DatasetSplit& data,
                                                              const ClassifierTrainConfig& cfg);

ModelZoo train_toy_classifiers(const DatasetSplit& data, const std::vector<ZooMemberSpec>& specs,
                               const ClassifierTrainConfig& cfg);

// Percentage of `data` classified correctly.
double accuracy(const Classifier& model, const Dataset& data);

}  // namespace stm::eval
