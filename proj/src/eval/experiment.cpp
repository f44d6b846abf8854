#include "stm/eval/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "stm/error.hpp"
#include "stm/eval/defenses.hpp"
#include "stm/hash.hpp"

namespace stm::eval {
namespace {

std::uint64_t name_stream(const std::string& name) { return std::stoull(sha256_hex(name).substr(0, 15), nullptr, 16); }

std::shared_ptr<const Classifier> resolve_model(const ModelZoo& zoo, const std::string& name) {
  const std::string prefix = "ensemble:";
  if (name.rfind(prefix, 0) == 0) {
    std::vector<std::shared_ptr<const Classifier>> members;
    std::stringstream ss(name.substr(prefix.size()));
    std::string part;
    while (std::getline(ss, part, '+')) {
      if (!zoo.contains(part)) throw ConfigError("ensemble member '" + part + "' is not in the zoo");
      members.push_back(zoo.get(part).model);
    }
    if (members.empty()) throw ConfigError("empty ensemble '" + name + "'");
    return make_uniform_ensemble(members);
  }
  if (!zoo.contains(name)) throw ConfigError("model '" + name + "' is not in the zoo");
  return zoo.get(name).model;
}

// Runs fn(i) for i in [0, n) on `workers` threads; each index is handled once.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const int threads = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

nlohmann::json entry_to_json(const AttackEntry& e) {
  return {{"spec", e.spec.to_json()},
          {"style", e.style == StyleSource::pretrained ? "pretrained" : "finetuned"},
          {"label", e.row()}};
}

struct TargetModel {
  std::string name;
  std::shared_ptr<const Classifier> model;
};

struct ImageJob {
  bool attacked = false;
  bool failed = false;
  std::string error_kind, error_message;
  std::vector<int> predictions;  // per target; -1 when the target failed
  std::vector<std::string> target_errors;
};

}  // namespace

double attack_success_rate(const std::vector<Image>& adversarial, const std::vector<LabeledExample>& examples,
                           const Classifier& target, attacks::Mode mode) {
  if (adversarial.empty()) throw ConfigError("success rate of an empty adversarial set");
  if (adversarial.size() != examples.size()) throw ConfigError("adversarial set and labels differ in size");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < adversarial.size(); ++i) {
    const int pred = target.predict(adversarial[i]);
    if (mode == attacks::Mode::targeted) {
      if (!examples[i].target_label) throw ConfigError("targeted success rate needs target labels");
      hits += pred == *examples[i].target_label ? 1 : 0;
    } else {
      hits += pred != examples[i].label ? 1 : 0;
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(adversarial.size());
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json attacks_json = nlohmann::json::array();
  for (const auto& a : attacks) attacks_json.push_back(entry_to_json(a));
  return {{"name", name},     {"offset", offset},   {"images", images},     {"attacks", attacks_json},
          {"surrogates", surrogates}, {"targets", targets}, {"defenses", defenses}, {"seeds", seeds}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    c.offset = j.value("offset", c.offset);
    c.images = j.value("images", c.images);
    for (const auto& a : j.at("attacks")) {
      AttackEntry e;
      if (a.is_string()) {
        e.spec = attacks::preset(a.get<std::string>());
      } else {
        e.spec = a.contains("spec") ? attacks::AttackSpec::from_json(a.at("spec"))
                                    : attacks::preset(a.at("preset").get<std::string>());
        const std::string style = a.value("style", std::string("finetuned"));
        if (style == "pretrained") e.style = StyleSource::pretrained;
        else if (style != "finetuned") throw ConfigError("unknown style source '" + style + "'");
        e.label = a.value("label", std::string());
      }
      c.attacks.push_back(std::move(e));
    }
    c.surrogates = j.value("surrogates", c.surrogates);
    c.targets = j.value("targets", c.targets);
    c.defenses = j.value("defenses", c.defenses);
    c.seeds = j.value("seeds", c.seeds);
    c.workers = j.value("workers", c.workers);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
}

std::string ExperimentConfig::hash() const { return sha256_hex(to_json().dump()); }

double EvaluationReport::mean_success(const std::string& attack, const std::string& surrogate,
                                      const std::string& target) const {
  double total = 0.0;
  int n = 0;
  for (const auto& c : cells) {
    if (c.attack == attack && c.surrogate == surrogate && c.target == target) {
      total += c.success_rate;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : total / n;
}

nlohmann::json EvaluationReport::to_json(bool include_timing) const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const auto& c : cells) {
    cells_json.push_back({{"attack", c.attack},
                          {"surrogate", c.surrogate},
                          {"target", c.target},
                          {"seed", c.seed},
                          {"attacked", c.attacked},
                          {"fooled", c.fooled},
                          {"success_rate", c.success_rate}});
  }
  nlohmann::json failures_json = nlohmann::json::array();
  for (const auto& f : failures) {
    failures_json.push_back({{"attack", f.attack},
                             {"surrogate", f.surrogate},
                             {"target", f.target},
                             {"seed", f.seed},
                             {"image", f.image},
                             {"kind", f.kind},
                             {"message", f.message}});
  }
  nlohmann::json j = {{"format", "stm-report"},
                      {"version", 1},
                      {"config", config},
                      {"config_hash", config_hash},
                      {"clean_accuracy", clean_accuracy},
                      {"skipped_misclassified", skipped_misclassified},
                      {"cells", cells_json},
                      {"images", images},
                      {"failures", failures_json}};
  if (!ablation_accuracy.is_null()) j["ablation_accuracy"] = ablation_accuracy;
  if (include_timing) j["wall_clock_seconds"] = wall_clock_seconds;
  return j;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& j) {
  try {
    EvaluationReport r;
    r.config = j.at("config");
    r.config_hash = j.at("config_hash").get<std::string>();
    r.clean_accuracy = j.at("clean_accuracy");
    r.skipped_misclassified = j.at("skipped_misclassified").get<std::size_t>();
    for (const auto& c : j.at("cells")) {
      r.cells.push_back({c.at("attack"), c.at("surrogate"), c.at("target"), c.at("seed"), c.at("attacked"),
                         c.at("fooled"), c.at("success_rate")});
    }
    r.images = j.at("images");
    for (const auto& f : j.at("failures")) {
      r.failures.push_back(
          {f.at("attack"), f.at("surrogate"), f.at("target"), f.at("seed"), f.at("image"), f.at("kind"), f.at("message")});
    }
    if (j.contains("ablation_accuracy")) r.ablation_accuracy = j.at("ablation_accuracy");
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed report: ") + e.what());
  }
}

std::string EvaluationReport::payload_hash() const { return sha256_hex(to_json(false).dump()); }

std::string EvaluationReport::table() const {
  std::vector<std::string> rows, surrogates, targets;
  auto add = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& c : cells) {
    add(rows, c.attack);
    add(surrogates, c.surrogate);
    add(targets, c.target);
  }
  std::ostringstream out;
  char buf[64];
  for (const auto& s : surrogates) {
    out << "surrogate: " << s << "\n";
    std::snprintf(buf, sizeof buf, "%-16s", "attack");
    out << buf;
    for (const auto& t : targets) {
      std::snprintf(buf, sizeof buf, " %14s", t.substr(0, 14).c_str());
      out << buf;
    }
    out << "\n";
    for (const auto& a : rows) {
      std::snprintf(buf, sizeof buf, "%-16s", a.substr(0, 16).c_str());
      out << buf;
      for (const auto& t : targets) {
        const double v = mean_success(a, s, t);
        if (std::isnan(v)) std::snprintf(buf, sizeof buf, " %14s", "-");
        else std::snprintf(buf, sizeof buf, " %13.1f%%", v);
        out << buf;
      }
      out << "\n";
    }
    out << "\n";
  }
  if (ablation_accuracy.is_array()) {
    out << "stylized-image accuracy\n";
    for (const auto& row : ablation_accuracy) {
      std::snprintf(buf, sizeof buf, "%-16s", row.at("strategy").get<std::string>().c_str());
      out << buf;
      for (const auto& [model, acc] : row.at("accuracy").items()) {
        std::snprintf(buf, sizeof buf, " %s %.1f%%", model.c_str(), acc.get<double>());
        out << buf;
      }
      std::snprintf(buf, sizeof buf, "  mean %.1f%%\n", row.at("mean").get<double>());
      out << buf;
    }
    out << "\n";
  }
  if (!failures.empty()) out << failures.size() << " failure(s) recorded in report.json\n";
  return out.str();
}

void EvaluationReport::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir + "/report.json") << to_json(true).dump(2) << "\n";
  std::ofstream(dir + "/report.txt") << table();
}

EvaluationReport run_experiment_matrix(const ExperimentConfig& cfg, const ModelZoo& zoo, const Dataset& test,
                                       const ExperimentResources& resources) {
  const auto start = std::chrono::steady_clock::now();
  if (cfg.attacks.empty()) throw ConfigError("experiment has no attacks");
  if (cfg.surrogates.empty()) throw ConfigError("experiment has no surrogates");
  if (cfg.seeds.empty()) throw ConfigError("experiment has no seeds");

  std::vector<LabeledExample> slice;
  for (std::size_t i = cfg.offset; i < test.examples.size() && slice.size() < cfg.images; ++i) {
    slice.push_back(test.examples[i]);
  }
  if (slice.empty()) throw ConfigError("experiment slice is empty");

  std::vector<std::pair<std::string, std::shared_ptr<const Classifier>>> surrogates;
  for (const auto& s : cfg.surrogates) surrogates.emplace_back(s, resolve_model(zoo, s));

  std::vector<std::string> target_names = cfg.targets;
  if (target_names.empty()) {
    for (const auto& m : zoo.models) target_names.push_back(m.spec.name);
  }
  std::vector<TargetModel> targets;
  for (const auto& t : target_names) targets.push_back({t, resolve_model(zoo, t)});
  const std::size_t plain_targets = targets.size();
  for (const auto& d : cfg.defenses) {
    const auto defense = make_defense(d);
    for (std::size_t k = 0; k < plain_targets; ++k) {
      targets.push_back({defense->id() + "/" + targets[k].name,
                         std::make_shared<DefendedClassifier>(defense, targets[k].model)});
    }
  }

  for (const auto& a : cfg.attacks) {
    a.spec.validate();
    if (a.spec.uses_style_network()) {
      const bool pre = a.style == StyleSource::pretrained;
      if ((pre ? resources.pretrained : resources.finetuned) == nullptr) {
        throw MissingArtifactError("attack '" + a.row() + "' needs the " + (pre ? "pretrained" : "fine-tuned") +
                                   " style network; run `stm " + (pre ? "pretrain-style" : "finetune-style") +
                                   "` first");
      }
    }
  }

  EvaluationReport report;
  report.config = cfg.to_json();
  report.config_hash = cfg.hash();
  report.images = nlohmann::json::array();

  nlohmann::json clean = nlohmann::json::object();
  for (const auto& t : targets) {
    try {
      std::size_t ok = 0;
      for (const auto& ex : slice) ok += t.model->predict(ex.image) == ex.label ? 1 : 0;
      clean[t.name] = 100.0 * static_cast<double>(ok) / static_cast<double>(slice.size());
    } catch (const Error& e) {
      clean[t.name] = nullptr;
    }
  }
  for (const auto& [name, model] : surrogates) {
    if (clean.contains(name)) continue;
    std::size_t ok = 0;
    for (const auto& ex : slice) ok += model->predict(ex.image) == ex.label ? 1 : 0;
    clean[name] = 100.0 * static_cast<double>(ok) / static_cast<double>(slice.size());
  }
  report.clean_accuracy = clean;

  const std::vector<LabeledExample>& pool = resources.admix_pool != nullptr ? *resources.admix_pool : slice;

  for (const auto& entry : cfg.attacks) {
    attacks::AttackResources res;
    res.admix_pool = &pool;
    if (entry.style == StyleSource::pretrained) {
      res.style_network = resources.pretrained;
      res.allow_unfinetuned = true;
    } else {
      res.style_network = resources.finetuned;
    }
    const std::string row = entry.row();
    for (const auto& [sname, surrogate] : surrogates) {
      for (const std::uint64_t seed : cfg.seeds) {
        std::vector<ImageJob> jobs(slice.size());
        parallel_for(slice.size(), cfg.workers, [&](std::size_t i) {
          ImageJob& job = jobs[i];
          LabeledExample ex = slice[i];
          if (surrogate->predict(ex.image) != ex.label) return;
          job.attacked = true;
          const std::uint64_t job_seed = derive_seed(seed, {name_stream(row), name_stream(sname), cfg.offset + i});
          if (entry.spec.mode == attacks::Mode::targeted && !ex.target_label) {
            Rng trng = make_rng(job_seed, {0x7a});
            const int k = surrogate->num_classes();
            ex.target_label = (ex.label + 1 + uniform_int(trng, 0, k - 2)) % k;
          }
          Image adv;
          try {
            adv = attacks::run_attack(entry.spec, *surrogate, ex, res, job_seed).adversarial;
          } catch (const Error& e) {
            job.failed = true;
            job.error_kind = e.kind();
            job.error_message = e.what();
            return;
          }
          job.predictions.assign(targets.size(), -1);
          job.target_errors.assign(targets.size(), std::string());
          for (std::size_t t = 0; t < targets.size(); ++t) {
            try {
              const int pred = targets[t].model->predict(adv);
              const bool hit = entry.spec.mode == attacks::Mode::targeted ? pred == *ex.target_label : pred != ex.label;
              job.predictions[t] = hit ? 1 : 0;
            } catch (const Error& e) {
              job.target_errors[t] = std::string(e.kind()) + ": " + e.what();
            }
          }
        });

        std::vector<CellResult> cells(targets.size());
        std::vector<bool> target_failed(targets.size(), false);
        for (std::size_t t = 0; t < targets.size(); ++t) cells[t] = {row, sname, targets[t].name, seed, 0, 0, 0.0};
        for (std::size_t i = 0; i < jobs.size(); ++i) {
          const ImageJob& job = jobs[i];
          nlohmann::json rec = {{"attack", row}, {"surrogate", sname}, {"seed", seed},
                                {"image", cfg.offset + i}, {"label", slice[i].label}};
          if (!job.attacked) {
            ++report.skipped_misclassified;
            rec["status"] = "skipped";
          } else if (job.failed) {
            report.failures.push_back({row, sname, "", seed, cfg.offset + i, job.error_kind, job.error_message});
            rec["status"] = "failed";
          } else {
            rec["status"] = "attacked";
            nlohmann::json fooled = nlohmann::json::array();
            for (std::size_t t = 0; t < targets.size(); ++t) {
              if (!job.target_errors[t].empty()) {
                if (!target_failed[t]) {
                  const auto colon = job.target_errors[t].find(':');
                  report.failures.push_back({row, sname, targets[t].name, seed, cfg.offset + i,
                                             job.target_errors[t].substr(0, colon),
                                             job.target_errors[t].substr(colon + 2)});
                }
                target_failed[t] = true;
                continue;
              }
              ++cells[t].attacked;
              if (job.predictions[t] == 1) {
                ++cells[t].fooled;
                fooled.push_back(targets[t].name);
              }
            }
            rec["fooled"] = fooled;
          }
          report.images.push_back(std::move(rec));
        }
        for (std::size_t t = 0; t < targets.size(); ++t) {
          if (target_failed[t] || cells[t].attacked == 0) continue;
          cells[t].success_rate = 100.0 * static_cast<double>(cells[t].fooled) / static_cast<double>(cells[t].attacked);
          report.cells.push_back(cells[t]);
        }
      }
    }
  }
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<AttackEntry> ablation_strategies(const style::StmConfig& stm, const AttackBudget& budget) {
  auto row = [&](const std::string& label, bool stylize, double gamma, StyleSource source) {
    AttackEntry e;
    e.spec = attacks::stm_spec(stm, budget);
    auto& st = std::get<attacks::StyleStage>(e.spec.stack.front());
    st.stylize = stylize;
    st.gamma = gamma;
    e.spec.name = label;
    e.style = source;
    e.label = label;
    return e;
  };
  return {row("noise", false, 0.0, StyleSource::pretrained), row("style", true, 0.0, StyleSource::pretrained),
          row("style+ft", true, 0.0, StyleSource::finetuned), row("style+ft+mix", true, stm.gamma, StyleSource::finetuned)};
}

double StylizedAccuracy::mean() const {
  if (accuracy.empty()) return 0.0;
  double total = 0.0;
  for (double a : accuracy) total += a;
  return total / static_cast<double>(accuracy.size());
}

StylizedAccuracy stylized_accuracy(const std::vector<std::shared_ptr<const Classifier>>& models,
                                   const style::StyleNetwork* net, const Dataset& data, double gamma,
                                   std::uint64_t seed) {
  if (data.examples.empty()) throw ConfigError("stylized accuracy of an empty dataset");
  StylizedAccuracy out;
  std::vector<std::size_t> correct(models.size(), 0);
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const auto& ex = data.examples[i];
    Image x = ex.image;
    if (net != nullptr) {
      Rng rng = make_rng(seed, {0x5a, i});
      const auto z = style::sample_embedding(net->config().embedding_dim, rng);
      x = style::mix_and_perturb(ex.image, net->stylize(ex.image, z), gamma, 0.0, 0.0, rng);
    }
    for (std::size_t m = 0; m < models.size(); ++m) correct[m] += models[m]->predict(x) == ex.label ? 1 : 0;
  }
  for (std::size_t m = 0; m < models.size(); ++m) {
    out.models.push_back(models[m]->id());
    out.accuracy.push_back(100.0 * static_cast<double>(correct[m]) / static_cast<double>(data.examples.size()));
  }
  return out;
}

nlohmann::json ablation_accuracy_table(const std::vector<std::shared_ptr<const Classifier>>& models,
                                       const style::StyleNetwork& pretrained, const style::StyleNetwork& finetuned,
                                       const Dataset& data, double gamma, std::uint64_t seed) {
  auto row = [&](const char* name, const style::StyleNetwork* net, double g) {
    const auto acc = stylized_accuracy(models, net, data, g, seed);
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t m = 0; m < acc.models.size(); ++m) per[acc.models[m]] = acc.accuracy[m];
    return nlohmann::json{{"strategy", name}, {"accuracy", per}, {"mean", acc.mean()}};
  };
  return nlohmann::json::array({row("clean", nullptr, 0.0), row("style", &pretrained, 0.0),
                                row("style+ft", &finetuned, 0.0), row("style+ft+mix", &finetuned, gamma)});
}

}  // namespace stm::eval
