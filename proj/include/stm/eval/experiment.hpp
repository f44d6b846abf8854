#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "stm/attacks/attacks.hpp"
#include "stm/eval/dataset.hpp"
#include "stm/eval/zoo.hpp"

namespace stm::eval {

// Untargeted: share of images with argmax != y; targeted: argmax == y*.
// Percent in [0, 100].
double attack_success_rate(const std::vector<Image>& adversarial, const std::vector<LabeledExample>& examples,
                           const Classifier& target, attacks::Mode mode);

// Which style network an attack row draws on.
enum class StyleSource { finetuned, pretrained };

struct AttackEntry {
  attacks::AttackSpec spec;
  StyleSource style = StyleSource::finetuned;
  std::string label;  // row name in the report; defaults to spec.name
  std::string row() const { return label.empty() ? spec.name : label; }
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::size_t offset = 0;      // first test image of the slice
  std::size_t images = 200;    // slice length
  std::vector<AttackEntry> attacks;
  // Zoo names, or "ensemble:<a>+<b>+..." for an equal-weight logit ensemble.
  std::vector<std::string> surrogates{"convnet-a"};
  std::vector<std::string> targets;  // empty: every zoo model
  std::vector<std::string> defenses;  // applied in front of every target
  std::vector<std::uint64_t> seeds{0};
  int workers = 1;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  std::string hash() const;
};

struct ExperimentResources {
  const style::StyleNetwork* finetuned = nullptr;
  const style::StyleNetwork* pretrained = nullptr;
  // Admix partners; defaults to the attacked slice when null.
  const std::vector<LabeledExample>* admix_pool = nullptr;
};

struct CellResult {
  std::string attack, surrogate, target;
  std::uint64_t seed = 0;
  std::size_t attacked = 0;
  std::size_t fooled = 0;
  double success_rate = 0.0;
};

struct FailureRecord {
  std::string attack, surrogate, target;
  std::uint64_t seed = 0;
  std::size_t image = 0;
  std::string kind, message;
};

struct EvaluationReport {
  nlohmann::json config;
  std::string config_hash;
  nlohmann::json clean_accuracy;        // per model, on the slice
  std::size_t skipped_misclassified = 0;  // per surrogate and seed, summed
  std::vector<CellResult> cells;         // one per attack x surrogate x target x seed
  nlohmann::json images;                 // per-image outcomes
  std::vector<FailureRecord> failures;
  // Stylized-image accuracy rows of the ablation preset, when run.
  nlohmann::json ablation_accuracy;
  double wall_clock_seconds = 0.0;

  // Mean success rate over seeds for one cell, or NaN if absent.
  double mean_success(const std::string& attack, const std::string& surrogate, const std::string& target) const;

  nlohmann::json to_json(bool include_timing = true) const;
  static EvaluationReport from_json(const nlohmann::json& j);
  // Hash of the report without wall-clock fields.
  std::string payload_hash() const;
  std::string table() const;
  void save(const std::string& dir) const;  // <dir>/report.json, <dir>/report.txt
};

EvaluationReport run_experiment_matrix(const ExperimentConfig& cfg, const ModelZoo& zoo, const Dataset& test,
                                       const ExperimentResources& resources);

// The four strategy rows: noise only, stylized, stylized with the fine-tuned
// network, and fine-tuned with mixing. Every row adds the bounded noise.
std::vector<AttackEntry> ablation_strategies(const style::StmConfig& stm, const AttackBudget& budget = {});

// Accuracy (percent) of each model on stylized images of `data`, one draw of
// z per image, optionally mixed with the clean image.
struct StylizedAccuracy {
  std::vector<std::string> models;
  std::vector<double> accuracy;
  double mean() const;
};
StylizedAccuracy stylized_accuracy(const std::vector<std::shared_ptr<const Classifier>>& models,
                                   const style::StyleNetwork* net, const Dataset& data, double gamma,
                                   std::uint64_t seed);

// Rows clean / stylized / fine-tuned / fine-tuned + mixing.
nlohmann::json ablation_accuracy_table(const std::vector<std::shared_ptr<const Classifier>>& models,
                                       const style::StyleNetwork& pretrained, const style::StyleNetwork& finetuned,
                                       const Dataset& data, double gamma, std::uint64_t seed);

}  // namespace stm::eval
