// End-to-end acceptance run on the synthetic-shape zoo. Prints one PASS/FAIL
// line per criterion and exits nonzero if any criterion fails.
//
//   acceptance --work DIR [--reuse] [--only 1,5,6]
//
// Artifacts (dataset is procedural; zoo, style networks, reports) live under
// DIR. Without --reuse the directory is wiped first.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stm/attacks/attacks.hpp"
#include "stm/eval/dataset.hpp"
#include "stm/eval/experiment.hpp"
#include "stm/eval/zoo.hpp"
#include "stm/momentum.hpp"
#include "stm/style/style.hpp"
#include "stm/transforms/transforms.hpp"

namespace fs = std::filesystem;
using namespace stm;
using Clock = std::chrono::steady_clock;
using nlohmann::json;

namespace {

const std::vector<std::string> kTargets{"resnet-a", "widenet-a", "resnet-b"};
const std::vector<std::uint64_t> kSeeds{0, 1, 2};
constexpr int kTransferImages = 200;

struct Context {
  fs::path work;
  bool reuse = false;
  eval::DatasetSplit data;
  eval::ModelZoo zoo;
  style::StyleNetwork pretrained;
  std::vector<style::StyleNetwork> finetuned;  // one per seed
  json summary = json::object();
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

// ------------------------------------------------------------------ artifacts

void prepare(Context& ctx) {
  if (!ctx.reuse && fs::exists(ctx.work)) fs::remove_all(ctx.work);
  fs::create_directories(ctx.work);
  ctx.data = eval::make_synthetic_shapes({});

  const fs::path zoo_dir = ctx.work / "zoo";
  if (fs::exists(zoo_dir / "zoo.json")) {
    ctx.zoo = eval::ModelZoo::load(zoo_dir.string());
  } else {
    const auto t0 = Clock::now();
    progress("training the classifier zoo");
    ctx.zoo = eval::train_toy_classifiers(ctx.data, eval::default_zoo_specs(), {});
    ctx.zoo.save(zoo_dir.string());
    progress("zoo trained in " + fmt(since(t0), 0) + " s");
  }
  ctx.summary["zoo"] = ctx.zoo.accuracy_table();

  const fs::path pre_path = ctx.work / "style" / "pretrained.stmp";
  fs::create_directories(pre_path.parent_path());
  if (fs::exists(pre_path)) {
    ctx.pretrained = style::StyleNetwork::load(pre_path.string());
  } else {
    const auto t0 = Clock::now();
    progress("pretraining the style network");
    const Shape shape = ctx.data.train.shape();
    style::StyleArchConfig arch;
    arch.input = shape;
    style::PretrainConfig cfg;
    cfg.steps = 3000;
    const auto corpus = eval::make_style_corpus(16, shape.height, cfg.seed);
    std::vector<Image> content;
    for (const auto& ex : ctx.data.train.examples) content.push_back(ex.image);
    auto result = style::pretrain_style_network(arch, corpus, content, cfg);
    result.net.save(pre_path.string(), {{"finetuned", false}, {"final_loss", result.final_loss}});
    ctx.pretrained = style::StyleNetwork::load(pre_path.string());
    progress("pretrained in " + fmt(since(t0), 0) + " s");
  }

  std::vector<std::shared_ptr<const Classifier>> members;
  for (const auto& name : ctx.zoo.names_with_role("ensemble")) members.push_back(ctx.zoo.get(name).model);
  const auto subset = eval::take(ctx.data.train, 400);
  for (auto seed : kSeeds) {
    const fs::path path = ctx.work / "style" / ("finetuned-" + std::to_string(seed) + ".stmp");
    if (!fs::exists(path)) {
      const auto t0 = Clock::now();
      progress("fine-tuning the style network, seed " + std::to_string(seed));
      style::FinetuneConfig cfg;
      cfg.members = members;
      cfg.weights.assign(members.size(), 1.0 / static_cast<double>(members.size()));
      cfg.seed = seed;
      style::finetune_style_network(ctx.pretrained, cfg, subset.examples).save(path.string());
      progress("fine-tuned in " + fmt(since(t0), 0) + " s");
    }
    ctx.finetuned.push_back(style::StyleNetwork::load(path.string()));
  }
}

// ------------------------------------------------------------------ criteria

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Plain I-FGSM / MI-FGSM written out directly from the update rule.
Image reference_attack(const Classifier& model, const LabeledExample& ex, const AttackBudget& b, double mu) {
  Image x = ex.image;
  std::vector<double> g(x.size(), 0.0);
  for (int t = 0; t < b.iterations; ++t) {
    const Tensor grad = input_gradient(model, x, ex.label);
    double norm = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) norm += std::abs(grad[i]);
    for (std::size_t i = 0; i < grad.size(); ++i) g[i] = mu * g[i] + (norm > 0.0 ? grad[i] / norm : grad[i]);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      double v = x[i] + b.step_size * s;
      v = std::min(std::max(v, ex.image[i] - b.epsilon), ex.image[i] + b.epsilon);
      x[i] = std::min(std::max(v, 0.0), 1.0);
    }
  }
  return x;
}

Outcome criterion1(Context& ctx) {
  const auto& sur = *ctx.zoo.get("convnet-a").model;
  const auto images = eval::take(ctx.data.test, 50);
  attacks::AttackResources res;
  res.style_network = &ctx.finetuned[0];
  const AttackBudget budget;
  auto ifgsm_budget = budget;
  ifgsm_budget.momentum_decay = 0.0;
  attacks::AttackSpec identity_mi;
  identity_mi.name = "identity";
  attacks::AttackSpec identity_i = identity_mi;
  identity_i.budget = ifgsm_budget;
  const auto mifgsm = attacks::preset("mifgsm");
  const auto ifgsm = attacks::preset("ifgsm");
  int stm_eq = 0, mi_eq = 0, i_eq = 0, ref_eq = 0;
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto& ex = images.examples[k];
    const std::uint64_t seed = 1000 + k;
    const Image mi = attacks::run_attack(mifgsm, sur, ex, res, seed).adversarial;
    Rng rng(seed);
    const Image stm = attacks::run_stm({1.0, 0.0, 1}, ctx.finetuned[0], budget, sur, ex, rng).adversarial;
    stm_eq += stm == mi;
    mi_eq += attacks::run_attack(identity_mi, sur, ex, res, seed).adversarial == mi;
    const Image i = attacks::run_attack(ifgsm, sur, ex, res, seed).adversarial;
    i_eq += attacks::run_attack(identity_i, sur, ex, res, seed).adversarial == i;
    ref_eq += (reference_attack(sur, ex, budget, 1.0) == mi) && (reference_attack(sur, ex, ifgsm_budget, 0.0) == i);
  }
  const int n = static_cast<int>(images.size());
  ctx.summary["c1"] = {{"images", n}, {"stm_eq_mifgsm", stm_eq}, {"identity_eq_mifgsm", mi_eq},
                       {"identity_eq_ifgsm", i_eq}, {"reference_eq", ref_eq}};
  return {stm_eq == n && mi_eq == n && i_eq == n && ref_eq == n,
          "byte-identical over " + std::to_string(n) + " images: STM(1,0,1)=MI-FGSM " + std::to_string(stm_eq) +
              ", identity stack=MI-FGSM " + std::to_string(mi_eq) + ", =I-FGSM " + std::to_string(i_eq) +
              ", reference loop " + std::to_string(ref_eq)};
}

Outcome criterion2(Context& ctx) {
  const auto& sur = *ctx.zoo.get("convnet-a").model;
  const auto images = eval::take(ctx.data.test, 100);
  attacks::AttackResources res;
  res.style_network = &ctx.finetuned[0];
  const auto pool = eval::take(ctx.data.train, 200).examples;
  res.admix_pool = &pool;
  const double eps_255[] = {4.0, 8.0, 16.0};
  std::size_t attacks = 0, violations = 0;
  double worst = 0.0;
  for (const auto& name : attacks::preset_names()) {
    for (std::size_t k = 0; k < images.size(); ++k) {
      attacks::PresetParams p;
      p.budget = AttackBudget::from_255(eps_255[k % 3], 5, 1.0);
      p.stm.samples = 2;
      p.sim.copies = 2;
      p.admix.copies = 2;
      p.admix.mixed = 1;
      p.spectrum.samples = 2;
      const auto spec = attacks::preset(name, p);
      const auto& ex = images.examples[k];
      const Image adv = attacks::run_attack(spec, sur, ex, res, 7000 + k).adversarial;
      const double d = linf_distance(adv, ex.image);
      worst = std::max(worst, d - p.budget.epsilon);
      if (d > p.budget.epsilon + 1e-9 || !within_unit_interval(adv) || !all_finite(adv)) ++violations;
      ++attacks;
    }
  }
  ctx.summary["c2"] = {{"attacks", attacks}, {"violations", violations}, {"max_excess", worst}};
  return {attacks >= 1000 && violations == 0,
          std::to_string(attacks) + " attacks over " + std::to_string(attacks::preset_names().size()) +
              " variants, violations " + std::to_string(violations) + ", max(linf - eps) " + sci(worst)};
}

double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

Outcome criterion3(Context& ctx) {
  constexpr double h = 1e-6;
  constexpr int kInputs = 5, kCoords = 20;
  Rng rng(31);
  double worst_cls = 0.0, worst_style = 0.0;
  int checks = 0;
  // Uniform random images with random labels keep the loss away from
  // saturation, where differences of the loss drown in rounding.
  eval::Dataset images;
  const Shape shape = ctx.data.test.shape();
  for (int k = 0; k < kInputs; ++k) {
    Image x(shape);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = uniform01(rng);
    images.examples.push_back({x, uniform_int(rng, 0, ctx.data.test.num_classes() - 1), std::nullopt});
  }
  for (const auto& entry : ctx.zoo.models) {
    const auto& model = *entry.model;
    for (const auto& ex : images.examples) {
      const Tensor g = input_gradient(model, ex.image, ex.label);
      for (int c = 0; c < kCoords; ++c) {
        const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(g.size()) - 1));
        Image xp = ex.image, xm = ex.image;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (loss(model, xp, ex.label) - loss(model, xm, ex.label)) / (2.0 * h);
        worst_cls = std::max(worst_cls, relative_error(g[i], fd));
        ++checks;
      }
    }
  }
  const auto& net = ctx.finetuned[0];
  for (const auto& ex : images.examples) {
    const auto z = style::sample_embedding(net.config().embedding_dim, rng);
    Tensor r(ex.image.shape());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = standard_normal(rng);
    auto probe = [&](const Image& x) {
      const Image y = net.stylize(x, z);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
      return s;
    };
    const Tensor g = style::stylize_vjp(net, ex.image, z, r);
    for (int c = 0; c < kCoords; ++c) {
      const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(g.size()) - 1));
      Image xp = ex.image, xm = ex.image;
      xp[i] += h;
      xm[i] -= h;
      worst_style = std::max(worst_style, relative_error(g[i], (probe(xp) - probe(xm)) / (2.0 * h)));
      ++checks;
    }
  }
  ctx.summary["c3"] = {{"checks", checks}, {"classifier_max_rel", worst_cls}, {"style_max_rel", worst_style}};
  return {worst_cls < 1e-3 && worst_style < 1e-3,
          std::to_string(checks) + " coordinates on " + std::to_string(kInputs) + " random inputs; max relative error classifiers " + sci(worst_cls) +
              ", style network " + sci(worst_style)};
}

Outcome criterion4(Context& ctx) {
  Rng rng(44);
  double worst_dct = 0.0, worst_trip = 0.0, worst_parseval = 0.0;
  constexpr int n = 4;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x(Shape{3, n, n});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = uniform(rng, -1.0, 1.0);
    const Tensor y = transforms::dct2(x);
    for (int c = 0; c < 3; ++c) {
      for (int u = 0; u < n; ++u) {
        for (int v = 0; v < n; ++v) {
          double s = 0.0;
          for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
              s += x.at(c, a, b) * std::cos(std::numbers::pi * (a + 0.5) * u / n) * std::cos(std::numbers::pi * (b + 0.5) * v / n);
            }
          }
          s *= (u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n)) * (v == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n));
          worst_dct = std::max(worst_dct, std::abs(s - y.at(c, u, v)));
        }
      }
    }
    worst_trip = std::max(worst_trip, linf_distance(transforms::idct2(y), x));
    double ex = 0.0, ey = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      ex += x[i] * x[i];
      ey += y[i] * y[i];
    }
    worst_parseval = std::max(worst_parseval, std::abs(ex - ey));
  }
  ctx.summary["c4"] = {{"dct_max_abs", worst_dct}, {"roundtrip_max_abs", worst_trip}, {"parseval_max_abs", worst_parseval}};
  return {worst_dct < 1e-9 && worst_trip < 1e-9 && worst_parseval < 1e-9,
          "100 random 3x4x4 inputs; brute-force " + sci(worst_dct) + ", round trip " + sci(worst_trip) +
              ", Parseval " + sci(worst_parseval)};
}

Outcome criterion5(Context& ctx) {
  std::vector<std::shared_ptr<const Classifier>> members;
  for (const auto& name : ctx.zoo.names_with_role("ensemble")) members.push_back(ctx.zoo.get(name).model);
  double raw = 0.0, ft = 0.0, mixed = 0.0;
  json rows = json::array();
  bool per_seed = true;
  for (std::size_t s = 0; s < kSeeds.size(); ++s) {
    const auto seed = kSeeds[s];
    const double r = eval::stylized_accuracy(members, &ctx.pretrained, ctx.data.test, 0.0, seed).mean();
    const double f = eval::stylized_accuracy(members, &ctx.finetuned[s], ctx.data.test, 0.0, seed).mean();
    const double m = eval::stylized_accuracy(members, &ctx.finetuned[s], ctx.data.test, 0.5, seed).mean();
    rows.push_back({{"seed", seed}, {"raw", r}, {"finetuned", f}, {"mixed", m}});
    per_seed = per_seed && r < f && f < m;
    raw += r / kSeeds.size();
    ft += f / kSeeds.size();
    mixed += m / kSeeds.size();
  }
  ctx.summary["c5"] = {{"seeds", rows}, {"raw", raw}, {"finetuned", ft}, {"mixed", mixed}, {"every_seed", per_seed}};
  return {raw < ft && ft < mixed,
          "ensemble accuracy on " + std::to_string(ctx.data.test.size()) + " stylized test images, mean of 3 seeds: raw " +
              fmt(raw) + " < fine-tuned " + fmt(ft) + " < mixed " + fmt(mixed) + (per_seed ? " (every seed)" : "")};
}

eval::EvaluationReport run_matrix(Context& ctx, const std::string& name, eval::ExperimentConfig cfg, std::size_t seed_index) {
  const fs::path path = ctx.work / "reports" / name / "report.json";
  if (ctx.reuse && fs::exists(path)) {
    std::ifstream in(path);
    return eval::EvaluationReport::from_json(json::parse(in));
  }
  const auto t0 = Clock::now();
  cfg.name = name;
  eval::ExperimentResources res;
  res.pretrained = &ctx.pretrained;
  res.finetuned = &ctx.finetuned[seed_index];
  auto report = eval::run_experiment_matrix(cfg, ctx.zoo, ctx.data.test, res);
  report.save(path.parent_path().string());
  progress(name + " in " + fmt(since(t0), 0) + " s");
  return report;
}

eval::ExperimentConfig transfer_config(std::vector<eval::AttackEntry> attacks, const std::vector<std::string>& targets) {
  eval::ExperimentConfig cfg;
  cfg.images = kTransferImages;
  cfg.attacks = std::move(attacks);
  cfg.targets = targets;
  return cfg;
}

// Every model except the surrogate, including convnet-b, a member of the
// fine-tuning ensemble.
const std::vector<std::string> kBlackBox{"convnet-b", "resnet-a", "widenet-a", "resnet-b"};

Outcome criterion6(Context& ctx) {
  std::vector<eval::AttackEntry> rows{{attacks::preset("mifgsm"), eval::StyleSource::finetuned, "mifgsm"}};
  for (auto& e : eval::ablation_strategies(style::StmConfig{})) rows.push_back(e);
  const std::vector<std::string> names{"mifgsm", "noise", "style", "style+ft", "style+ft+mix"};
  // success[row][target], averaged over seeds
  std::map<std::string, std::map<std::string, double>> success;
  for (std::size_t s = 0; s < kSeeds.size(); ++s) {
    auto cfg = transfer_config(rows, kBlackBox);
    cfg.seeds = {kSeeds[s]};
    const auto report = run_matrix(ctx, "transfer-seed" + std::to_string(kSeeds[s]), cfg, s);
    for (const auto& n : names) {
      for (const auto& t : kBlackBox) success[n][t] += report.mean_success(n, "convnet-a", t) / kSeeds.size();
    }
  }
  auto mean = [&](const std::string& n, const std::vector<std::string>& set) {
    double m = 0.0;
    for (const auto& t : set) m += success[n][t] / set.size();
    return m;
  };
  int improved = 0;
  std::string per_target;
  for (const auto& t : kTargets) {
    const double gain = success["style+ft+mix"][t] - success["mifgsm"][t];
    improved += gain >= 5.0;
    per_target += " " + t + " " + fmt(success["mifgsm"][t], 1) + "->" + fmt(success["style+ft+mix"][t], 1);
  }
  const double a = mean("style", kBlackBox), b = mean("style+ft", kBlackBox), c = mean("style+ft+mix", kBlackBox);
  const bool ordered = a < b && b < c;
  const double ha = mean("style", kTargets), hb = mean("style+ft", kTargets), hc = mean("style+ft+mix", kTargets);
  json means = json::object();
  for (const auto& n : names) means[n] = {{"black_box", mean(n, kBlackBox)}, {"held_out", mean(n, kTargets)}};
  ctx.summary["c6"] = {{"success", success}, {"targets_improved_5pp", improved}, {"mean", means}};
  return {improved >= 2 && ordered,
          "MI-FGSM->STM:" + per_target + "; >=5pp on " + std::to_string(improved) +
              "/3 held-out targets; black-box mean style " + fmt(a) + ", +ft " + fmt(b) + ", +ft+mix " + fmt(c) +
              (ordered ? " (ordered)" : " (not ordered)") + "; held-out only " + fmt(ha) + ", " + fmt(hb) + ", " +
              fmt(hc) + "; noise " + fmt(mean("noise", kBlackBox))};
}

Outcome criterion7(Context& ctx) {
  const std::vector<std::pair<std::string, std::string>> pairs{{"dim", "st-dim"}, {"tim", "st-tim"}, {"sim", "st-sim"}};
  std::vector<eval::AttackEntry> rows;
  for (const auto& [plain, composed] : pairs) {
    rows.push_back({attacks::preset(plain), eval::StyleSource::finetuned, plain});
    rows.push_back({attacks::preset(composed), eval::StyleSource::finetuned, composed});
  }
  std::map<std::string, double> mean;  // over targets and seeds
  for (std::size_t s = 0; s < kSeeds.size(); ++s) {
    auto cfg = transfer_config(rows, kTargets);
    cfg.seeds = {kSeeds[s]};
    const auto report = run_matrix(ctx, "composition-seed" + std::to_string(kSeeds[s]), cfg, s);
    for (const auto& row : rows) {
      for (const auto& t : kTargets) {
        mean[row.row()] += report.mean_success(row.row(), "convnet-a", t) / (kTargets.size() * kSeeds.size());
      }
    }
  }
  bool pass = true;
  std::string detail;
  json out = json::object();
  for (const auto& [plain, composed] : pairs) {
    const double p = mean[plain], c = mean[composed];
    pass = pass && c >= p;
    out[plain] = p;
    out[composed] = c;
    detail += (detail.empty() ? "" : ", ") + plain + " " + fmt(p) + " vs " + composed + " " + fmt(c);
  }
  ctx.summary["c7"] = out;
  return {pass, "mean black-box success over targets and 3 seeds: " + detail};
}

Outcome criterion8(Context& ctx) {
  eval::ExperimentConfig cfg;
  cfg.images = kTransferImages;
  cfg.attacks = {{attacks::preset("ifgsm"), eval::StyleSource::finetuned, "ifgsm"}};
  cfg.surrogates.clear();
  for (const auto& m : ctx.zoo.models) cfg.surrogates.push_back(m.spec.name);
  cfg.targets = cfg.surrogates;
  const auto report = run_matrix(ctx, "whitebox", cfg, 0);
  json out = json::object();
  std::string others;
  for (const auto& name : cfg.surrogates) {
    const double s = report.mean_success("ifgsm", name, name);
    out[name] = s;
    if (name != "convnet-a") others += (others.empty() ? "" : ", ") + name + " " + fmt(s, 1);
  }
  ctx.summary["c8"] = out;
  const double surrogate = out["convnet-a"].get<double>();
  return {surrogate >= 95.0, "I-FGSM white-box success on the surrogate convnet-a " + fmt(surrogate) +
                                 " (other models as their own surrogate: " + others + ")"};
}

Outcome criterion9(Context& ctx) {
  eval::ExperimentConfig cfg;
  cfg.name = "determinism";
  cfg.images = 20;
  attacks::PresetParams p;
  p.stm.samples = 4;
  p.dim.probability = 0.7;
  for (const auto* name : {"mifgsm", "dim", "st-dim", "admix"}) {
    cfg.attacks.push_back({attacks::preset(name, p), eval::StyleSource::finetuned, name});
  }
  cfg.surrogates = {"convnet-a", "ensemble:convnet-a+convnet-b"};
  cfg.seeds = {0, 1};
  eval::ExperimentResources res;
  res.pretrained = &ctx.pretrained;
  res.finetuned = &ctx.finetuned[0];
  const auto first = eval::run_experiment_matrix(cfg, ctx.zoo, ctx.data.test, res);
  cfg.workers = 3;
  const auto second = eval::run_experiment_matrix(cfg, ctx.zoo, ctx.data.test, res);
  const std::string a = first.to_json(false).dump(), b = second.to_json(false).dump();
  ctx.summary["c9"] = {{"payload_hash", first.payload_hash()}, {"bytes", a.size()}, {"cells", first.cells.size()}};
  return {a == b && first.payload_hash() == second.payload_hash(),
          std::to_string(first.cells.size()) + " cells, reports " + (a == b ? "byte-identical" : "differ") +
              " (1 vs 3 workers), payload " + first.payload_hash().substr(0, 16)};
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.work = "acceptance-work";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      ctx.work = argv[++i];
    } else if (arg == "--reuse") {
      ctx.reuse = true;
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      for (std::string item; std::getline(list, item, ',');) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance --work DIR [--reuse] [--only 1,2,...]\n";
      return 2;
    }
  }

  const auto start = Clock::now();
  try {
    prepare(ctx);
  } catch (const std::exception& e) {
    std::cout << "FAIL setup: " << e.what() << "\n";
    return 1;
  }

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"reduction identities", criterion1}, {"constraint suite", criterion2}, {"gradient fidelity", criterion3},
      {"spectrum correctness", criterion4}, {"fine-tuning direction", criterion5}, {"transfer improvement", criterion6},
      {"composition sanity", criterion7},   {"white-box floor", criterion8},       {"determinism audit", criterion9},
  };
  int failed = 0;
  json results = json::array();
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[k].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    const double secs = since(t0);
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[k].first << ": " << o.detail << " ["
              << fmt(secs, 1) << " s]" << std::endl;
    results.push_back({{"criterion", id}, {"name", criteria[k].first}, {"pass", o.pass}, {"detail", o.detail},
                       {"seconds", secs}});
  }
  ctx.summary["results"] = results;
  ctx.summary["seconds"] = since(start);
  std::ofstream(ctx.work / "acceptance.json") << ctx.summary.dump(2) << "\n";
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << " in "
            << fmt(since(start), 0) << " s" << std::endl;
  return failed == 0 ? 0 : 1;
}
