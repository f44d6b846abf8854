#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "stm/classifier.hpp"
#include "stm/example.hpp"
#include "stm/momentum.hpp"
#include "stm/rng.hpp"
#include "stm/style/style.hpp"
#include "stm/transforms/transforms.hpp"

namespace stm::attacks {

enum class Mode { untargeted, targeted };

// Stylize-mix-perturb view of the current iterate:
//   x_bar = clip01(gamma * base + (1 - gamma) * ST(x_t, z) + r).
// `base` is x_t unless mix_with_clean, in which case it is the clean input.
// With stylize = false the style network is skipped (x_s = x_t), which gives
// the noise-only strategy.
struct StyleStage {
  double gamma = 0.5;
  double beta = 2.0;
  bool stylize = true;
  bool mix_with_clean = false;
  // Pull the gradient back through mixing and the style network instead of
  // applying the gradient at x_bar directly.
  bool chain_rule = false;
};

using Stage = std::variant<transforms::DimConfig, transforms::SimConfig, transforms::AdmixConfig,
                           transforms::SpectrumConfig, StyleStage>;

struct AttackSpec {
  std::string name = "mifgsm";
  AttackBudget budget;
  // Applied in order to every draw: each stage maps a view to one or more views.
  std::vector<Stage> stack;
  // Gradient smoothing applied to the averaged gradient before the momentum update.
  std::optional<transforms::TimConfig> tim;
  int samples = 1;  // N draws of the stack per iteration
  Mode mode = Mode::untargeted;

  bool uses_style_network() const;
  bool uses_admix_pool() const;
  void validate() const;
  nlohmann::json to_json() const;
  static AttackSpec from_json(const nlohmann::json& j);
  std::string hash() const;
};

// Shared read-only inputs some attacks need.
struct AttackResources {
  const style::StyleNetwork* style_network = nullptr;
  // Candidate Admix partners; images with the attacked label are skipped.
  const std::vector<LabeledExample>* admix_pool = nullptr;
  bool allow_unfinetuned = false;
};

struct IterationRecord {
  double momentum_l1 = 0.0;
  double gradient_l1 = 0.0;  // of the averaged gradient
  double loss = 0.0;         // mean surrogate loss over the views
  double linf = 0.0;         // ||x_{t+1} - x||_inf
};

struct AttackTrace {
  std::vector<IterationRecord> iterations;
  std::uint64_t seed = 0;
  std::string spec_hash;
};

struct AttackResult {
  Image adversarial;
  AttackTrace trace;
};

// Transformation-averaged momentum sign-gradient loop. Untargeted attacks
// ascend J(., y); targeted attacks descend J(., y*). `seed` seeds the draw
// stream and is recorded in the trace.
AttackResult run_attack(const AttackSpec& spec, const Classifier& surrogate, const LabeledExample& ex,
                        const AttackResources& resources, std::uint64_t seed);
AttackResult run_attack(const AttackSpec& spec, const Classifier& surrogate, const LabeledExample& ex,
                        const AttackResources& resources, Rng& rng);

AttackResult run_stm(const style::StmConfig& stm, const style::StyleNetwork& net, const AttackBudget& budget,
                     const Classifier& surrogate, const LabeledExample& ex, Rng& rng,
                     bool allow_unfinetuned = false);

AttackSpec stm_spec(const style::StmConfig& stm, const AttackBudget& budget = {});
AttackSpec compose(const style::StmConfig& stm, const transforms::DimConfig& base, const AttackBudget& budget = {});
AttackSpec compose(const style::StmConfig& stm, const transforms::TimConfig& base, const AttackBudget& budget = {});
AttackSpec compose(const style::StmConfig& stm, const transforms::SimConfig& base, const AttackBudget& budget = {});

// Parameters the presets read; defaults are the standard settings.
struct PresetParams {
  AttackBudget budget;
  transforms::DimConfig dim;
  transforms::TimConfig tim;
  transforms::SimConfig sim;
  transforms::AdmixConfig admix;
  transforms::SpectrumConfig spectrum;
  style::StmConfig stm;
};

// ifgsm, mifgsm, dim, tim, sim, admix, s2im, stm, st-dim, st-tim, st-sim
const std::vector<std::string>& preset_names();
AttackSpec preset(const std::string& name, const PresetParams& params = {});

// True if the style network carries the fine-tuned flag.
bool is_finetuned(const style::StyleNetwork& net);

}  // namespace stm::attacks
