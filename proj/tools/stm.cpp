// Command-line entry point: dataset, zoo, style network, attacks, reports.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stm/attacks/attacks.hpp"
#include "stm/error.hpp"
#include "stm/eval/dataset.hpp"
#include "stm/eval/experiment.hpp"
#include "stm/eval/image_io.hpp"
#include "stm/eval/zoo.hpp"
#include "stm/hash.hpp"
#include "stm/style/style.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stm;

namespace {

constexpr const char* kRootEnv = "STM_HOME";

json builtin_defaults() {
  return {
      {"seed", 0},
      // budget, 0-255 units
      {"epsilon", 16.0},
      {"iterations", 10},
      {"step_size", nullptr},  // epsilon / iterations
      {"momentum", 1.0},
      {"targeted", false},
      // transforms
      {"dim_probability", 0.5},
      {"dim_resize_low", 0.9},
      {"tim_kernel", 7},
      {"sim_copies", 5},
      {"admix_copies", 5},
      {"admix_mixed", 3},
      {"admix_strength", 0.2},
      {"s2im_rho", 0.5},
      {"s2im_sigma", 16.0},
      {"s2im_n", 20},
      // STM
      {"gamma", 0.5},
      {"beta", 2.0},
      {"n", 20},
      {"mix_with_clean", false},
      {"chain_rule", false},
      {"allow_unfinetuned", false},
      // what to attack
      {"attack", "stm"},
      {"attacks", json::array()},
      {"spec", ""},
      {"surrogate", "convnet-a"},
      {"targets", json::array()},
      {"defenses", json::array()},
      {"seeds", json::array({0})},
      {"images", 200},
      {"offset", 0},
      {"workers", 1},
      {"ablation", false},
      {"name", "default"},
      // dataset
      {"image_size", 32},
      {"train_per_class", 400},
      {"test_per_class", 100},
      // zoo
      {"zoo_epochs", 8},
      {"accuracy_floor", 70.0},
      // style network
      {"embedding_dim", 100},
      {"style_corpus", 16},
      {"pretrain_steps", 3000},
      {"pretrain_lr", 2e-3},
      {"style_weight", 10.0},
      {"content_weight", 0.1},
      {"finetune_members", json::array()},
      {"finetune_epochs", 30},
      {"finetune_lr", 1e-4},
      {"finetune_images", 400},
      // report
      {"format", "text"},
  };
}

struct Flag {
  std::string name;  // as typed, e.g. "--epsilon"
  std::string key;   // settings key
  CLI::Option* option = nullptr;
};

struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::map<std::string, std::string> values;
  std::vector<Flag> flags;
  std::vector<std::pair<std::string, CLI::Option*>> switches;
  std::string config_path, root, out, data, zoo, style, input;
  int verbosity = 0;
  json settings;
};

void value_flag(Command& c, const std::string& flag, const std::string& key, const std::string& help) {
  Flag f{flag, key, nullptr};
  f.option = c.app->add_option(flag, c.values[key], help);
  c.flags.push_back(f);
}

void switch_flag(Command& c, const std::string& flag, const std::string& key, const std::string& help) {
  c.switches.emplace_back(key, c.app->add_flag(flag, help));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

json convert(const std::string& key, const std::string& raw, const json& like) {
  try {
    if (like.is_boolean()) {
      if (raw == "true" || raw == "1") return true;
      if (raw == "false" || raw == "0") return false;
      throw ConfigError("");
    }
    if (like.is_number_integer()) {
      std::size_t used = 0;
      const long long v = std::stoll(raw, &used);
      if (used != raw.size()) throw ConfigError("");
      return v;
    }
    if (like.is_number() || like.is_null()) {
      std::size_t used = 0;
      const double v = std::stod(raw, &used);
      if (used != raw.size()) throw ConfigError("");
      return v;
    }
    if (like.is_array()) {
      json arr = json::array();
      const bool numeric = key == "seeds";
      for (const auto& item : split_list(raw)) {
        arr.push_back(numeric ? json(std::stoull(item)) : json(item));
      }
      return arr;
    }
    return raw;
  } catch (const std::logic_error&) {
    throw ConfigError("invalid value '" + raw + "' for " + key);
  } catch (const ConfigError&) {
    throw ConfigError("invalid value '" + raw + "' for " + key);
  }
}

// CLI flag > config file > built-in defaults.
void resolve(Command& c) {
  c.settings = builtin_defaults();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw InputError("cannot read config file '" + c.config_path + "'");
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + c.config_path + "' is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (!c.settings.contains(key)) throw ConfigError("unknown config key '" + key + "'");
      const json& like = c.settings[key];
      const bool compatible = like.is_null() ? value.is_number() || value.is_null()
                              : like.is_number() ? value.is_number()
                                                 : like.type() == value.type();
      if (!compatible) throw ConfigError("config key '" + key + "' has the wrong type");
      c.settings[key] = value;
    }
  }
  for (const auto& f : c.flags) {
    if (f.option->count() > 0) c.settings[f.key] = convert(f.key, c.values[f.key], builtin_defaults()[f.key]);
  }
  for (const auto& [key, opt] : c.switches) {
    if (opt->count() > 0) c.settings[key] = true;
  }
  if (c.root.empty()) {
    const char* env = std::getenv(kRootEnv);
    c.root = env != nullptr && *env != '\0' ? env : "stm-artifacts";
  }
}

std::string root_path(const Command& c, const std::string& sub) { return (fs::path(c.root) / sub).string(); }
std::string data_dir(const Command& c) { return c.data.empty() ? root_path(c, "data") : c.data; }
std::string zoo_dir(const Command& c) { return c.zoo.empty() ? root_path(c, "zoo") : c.zoo; }

void log(const Command& c, const std::string& msg) {
  if (c.verbosity > 0) std::cerr << "[stm " << c.name << "] " << msg << "\n";
}

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::string dataset_hash(const eval::Dataset& d) {
  std::string blob;
  for (const auto& name : d.class_names) blob += name + "\n";
  for (const auto& ex : d.examples) {
    blob += std::to_string(ex.label) + ":" + sha256_hex(std::span<const double>(ex.image.data(), ex.image.size())) + "\n";
  }
  return sha256_hex(blob);
}

void write_json(const std::string& path, const json& j) {
  fs::create_directories(fs::path(path).parent_path().empty() ? fs::path(".") : fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

void write_manifest(const std::string& path, const Command& c, const json& inputs, const json& outputs,
                    const json& extra = json::object()) {
  json m = {{"tool", "stm"},
            {"command", c.name},
            {"settings", c.settings},
            {"inputs", inputs},
            {"outputs", outputs}};
  m.update(extra);
  write_json(path, m);
}

eval::DatasetSplit require_data(const Command& c) {
  const std::string dir = data_dir(c);
  if (!fs::exists(fs::path(dir) / "train") || !fs::exists(fs::path(dir) / "test")) {
    throw MissingArtifactError("no dataset at '" + dir + "'; run `stm make-dataset` first (or pass --data)");
  }
  return eval::load_split(dir);
}

eval::ModelZoo require_zoo(const Command& c) { return eval::ModelZoo::load(zoo_dir(c)); }

std::string pretrained_path(const Command& c) { return root_path(c, "style/pretrained.stmp"); }
std::string finetuned_path(const Command& c) { return c.style.empty() ? root_path(c, "style/finetuned.stmp") : c.style; }

style::StyleNetwork load_style(const std::string& path, const char* producer) {
  if (!fs::exists(path)) {
    throw MissingArtifactError("no style network at '" + path + "'; run `stm " + std::string(producer) + "` first");
  }
  return style::StyleNetwork::load(path);
}

attacks::PresetParams preset_params(const json& s) {
  attacks::PresetParams p;
  const double eps = s["epsilon"].get<double>() / 255.0;
  const int iterations = s["iterations"].get<int>();
  p.budget = AttackBudget::with_default_step(eps, iterations, s["momentum"].get<double>());
  if (!s["step_size"].is_null()) p.budget.step_size = s["step_size"].get<double>() / 255.0;
  p.dim = {s["dim_probability"].get<double>(), s["dim_resize_low"].get<double>()};
  p.tim = {s["tim_kernel"].get<int>()};
  p.sim = {s["sim_copies"].get<int>()};
  p.admix = {s["admix_copies"].get<int>(), s["admix_mixed"].get<int>(), s["admix_strength"].get<double>()};
  p.spectrum = {s["s2im_rho"].get<double>(), s["s2im_sigma"].get<double>() / 255.0, s["s2im_n"].get<int>()};
  p.stm = {s["gamma"].get<double>(), s["beta"].get<double>(), s["n"].get<int>()};
  return p;
}

attacks::AttackSpec build_spec(const std::string& name, const json& s) {
  attacks::AttackSpec spec = attacks::preset(name, preset_params(s));
  for (auto& stage : spec.stack) {
    if (auto* st = std::get_if<attacks::StyleStage>(&stage)) {
      st->mix_with_clean = s["mix_with_clean"].get<bool>();
      st->chain_rule = s["chain_rule"].get<bool>();
    }
  }
  if (s["targeted"].get<bool>()) spec.mode = attacks::Mode::targeted;
  spec.validate();
  return spec;
}

// ------------------------------------------------------------------ commands

int cmd_make_dataset(Command& c) {
  eval::SyntheticShapesConfig cfg;
  cfg.size = c.settings["image_size"].get<int>();
  cfg.train_per_class = c.settings["train_per_class"].get<int>();
  cfg.test_per_class = c.settings["test_per_class"].get<int>();
  cfg.seed = c.settings["seed"].get<std::uint64_t>() + 1;
  const std::string out = c.out.empty() ? root_path(c, "data") : c.out;
  log(c, "rendering synthetic shapes into " + out);
  const auto split = eval::make_synthetic_shapes(cfg);
  fs::remove_all(fs::path(out) / "train");
  fs::remove_all(fs::path(out) / "test");
  eval::save_split(split, out);
  write_manifest((fs::path(out) / "manifest.json").string(), c, json::object(),
                 {{"train", dataset_hash(split.train)}, {"test", dataset_hash(split.test)}},
                 {{"classes", split.train.class_names},
                  {"train_images", split.train.size()},
                  {"test_images", split.test.size()}});
  std::cout << "wrote " << split.train.size() << " train and " << split.test.size() << " test images to " << out
            << "\n";
  return 0;
}

int cmd_train_zoo(Command& c) {
  const auto data = require_data(c);
  eval::ClassifierTrainConfig cfg;
  cfg.epochs = c.settings["zoo_epochs"].get<int>();
  cfg.accuracy_floor = c.settings["accuracy_floor"].get<double>();
  auto specs = eval::default_zoo_specs();
  const auto seed = c.settings["seed"].get<std::uint64_t>();
  if (seed != 0) {
    for (auto& s : specs) s.seed = derive_seed(seed, {s.seed});
  }
  log(c, "training " + std::to_string(specs.size()) + " classifiers");
  const auto zoo = eval::train_toy_classifiers(data, specs, cfg);
  const std::string out = c.out.empty() ? zoo_dir(c) : c.out;
  zoo.save(out);
  json outputs = json::object();
  for (const auto& m : zoo.models) outputs[m.spec.name] = m.checksum;
  write_manifest((fs::path(out) / "manifest.json").string(), c,
                 {{"train", dataset_hash(data.train)}, {"test", dataset_hash(data.test)}}, outputs,
                 {{"accuracy", zoo.accuracy_table()}});
  for (const auto& m : zoo.models) {
    std::printf("%-12s %-8s %6.2f%%\n", m.spec.name.c_str(), m.spec.family.c_str(), m.clean_accuracy);
  }
  return 0;
}

int cmd_pretrain_style(Command& c) {
  const auto data = require_data(c);
  const Shape shape = data.train.shape();
  style::StyleArchConfig arch;
  arch.input = shape;
  arch.embedding_dim = c.settings["embedding_dim"].get<int>();
  style::PretrainConfig cfg;
  cfg.steps = c.settings["pretrain_steps"].get<int>();
  cfg.learning_rate = c.settings["pretrain_lr"].get<double>();
  cfg.style_weight = c.settings["style_weight"].get<double>();
  cfg.content_weight = c.settings["content_weight"].get<double>();
  cfg.seed = derive_seed(c.settings["seed"].get<std::uint64_t>(), {0x57});
  const auto corpus = eval::make_style_corpus(c.settings["style_corpus"].get<int>(), shape.height, cfg.seed);
  std::vector<Image> content;
  for (const auto& ex : data.train.examples) content.push_back(ex.image);
  log(c, "pretraining for " + std::to_string(cfg.steps) + " steps");
  const auto result = style::pretrain_style_network(arch, corpus, content, cfg);
  const std::string out = c.out.empty() ? pretrained_path(c) : c.out;
  fs::create_directories(fs::path(out).parent_path());
  result.net.save(out, {{"finetuned", false}, {"pretrain_steps", cfg.steps}, {"final_loss", result.final_loss}});
  write_manifest(out + ".manifest.json", c, {{"train", dataset_hash(data.train)}},
                 {{"network", result.net.checksum()}, {"file", file_sha256(out)}});
  std::cout << "pretrained style network " << out << " (final loss " << result.final_loss << ")\n";
  return 0;
}

int cmd_finetune_style(Command& c) {
  const auto data = require_data(c);
  const auto zoo = require_zoo(c);
  const std::string in = c.input.empty() ? pretrained_path(c) : c.input;
  const auto net = load_style(in, "pretrain-style");
  style::FinetuneConfig cfg;
  auto members = c.settings["finetune_members"].get<std::vector<std::string>>();
  if (members.empty()) members = zoo.names_with_role("ensemble");
  if (members.empty()) throw ConfigError("no fine-tuning ensemble members; tag zoo models with the ensemble role");
  json member_checksums = json::object();
  for (const auto& m : members) {
    cfg.members.push_back(zoo.get(m).model);
    cfg.weights.push_back(1.0 / static_cast<double>(members.size()));
    member_checksums[m] = zoo.get(m).checksum;
  }
  cfg.epochs = c.settings["finetune_epochs"].get<int>();
  cfg.learning_rate = c.settings["finetune_lr"].get<double>();
  cfg.seed = derive_seed(c.settings["seed"].get<std::uint64_t>(), {0xf7});
  const auto count = static_cast<std::size_t>(c.settings["finetune_images"].get<int>());
  const auto subset = eval::take(data.train, count);
  log(c, "fine-tuning on " + std::to_string(subset.size()) + " images against " + std::to_string(members.size()) +
             " models");
  const auto tuned = style::finetune_style_network(net, cfg, subset.examples);
  const std::string out = c.out.empty() ? finetuned_path(c) : c.out;
  fs::create_directories(fs::path(out).parent_path());
  tuned.save(out);
  write_manifest(out + ".manifest.json", c,
                 {{"pretrained", net.checksum()}, {"members", member_checksums}, {"train", dataset_hash(subset)}},
                 {{"network", tuned.checksum()}, {"file", file_sha256(out)}});
  std::cout << "fine-tuned style network " << out << "\n";
  return 0;
}

int cmd_attack(Command& c) {
  const auto& s = c.settings;
  const auto data = require_data(c);
  const auto zoo = require_zoo(c);
  attacks::AttackSpec spec;
  if (!s["spec"].get<std::string>().empty()) {
    std::ifstream in(s["spec"].get<std::string>());
    if (!in) throw InputError("cannot read attack spec '" + s["spec"].get<std::string>() + "'");
    spec = attacks::AttackSpec::from_json(json::parse(in, nullptr, false));
  } else {
    spec = build_spec(s["attack"].get<std::string>(), s);
  }
  const std::string surrogate_name = s["surrogate"].get<std::string>();
  if (!zoo.contains(surrogate_name)) throw ConfigError("surrogate '" + surrogate_name + "' is not in the zoo");
  const auto& surrogate = *zoo.get(surrogate_name).model;

  std::optional<style::StyleNetwork> net;
  attacks::AttackResources res;
  res.allow_unfinetuned = s["allow_unfinetuned"].get<bool>();
  res.admix_pool = &data.test.examples;
  json inputs = {{"surrogate", {{"name", surrogate_name}, {"checksum", zoo.get(surrogate_name).checksum}}},
                 {"test", dataset_hash(data.test)}};
  if (spec.uses_style_network()) {
    net = load_style(finetuned_path(c), res.allow_unfinetuned ? "pretrain-style" : "finetune-style");
    res.style_network = &*net;
    inputs["style_network"] = net->checksum();
  }

  const auto seed = s["seed"].get<std::uint64_t>();
  const auto offset = static_cast<std::size_t>(s["offset"].get<int>());
  const auto count = static_cast<std::size_t>(s["images"].get<int>());
  const std::string out = c.out.empty() ? root_path(c, "attacks/" + spec.name) : c.out;
  fs::create_directories(fs::path(out) / "png");

  std::vector<Image> adversarial;
  json records = json::array();
  std::size_t attacked = 0, fooled = 0;
  for (std::size_t i = offset; i < data.test.examples.size() && i < offset + count; ++i) {
    LabeledExample ex = data.test.examples[i];
    json rec = {{"image", i}, {"label", ex.label}};
    if (surrogate.predict(ex.image) != ex.label) {
      rec["status"] = "skipped";
      records.push_back(rec);
      continue;
    }
    const std::uint64_t job_seed = derive_seed(seed, {i});
    if (spec.mode == attacks::Mode::targeted) {
      Rng trng = make_rng(job_seed, {0x7a});
      const int k = surrogate.num_classes();
      ex.target_label = (ex.label + 1 + uniform_int(trng, 0, k - 2)) % k;
      rec["target_label"] = *ex.target_label;
    }
    const auto result = attacks::run_attack(spec, surrogate, ex, res, job_seed);
    const int pred = surrogate.predict(result.adversarial);
    const bool hit = spec.mode == attacks::Mode::targeted ? pred == *ex.target_label : pred != ex.label;
    ++attacked;
    fooled += hit ? 1 : 0;
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    eval::write_png((fs::path(out) / "png" / name).string(), result.adversarial, 16);
    rec["status"] = "attacked";
    rec["seed"] = job_seed;
    rec["prediction"] = pred;
    rec["sha256"] = sha256_hex(std::span<const double>(result.adversarial.data(), result.adversarial.size()));
    json iters = json::array();
    for (const auto& it : result.trace.iterations) {
      iters.push_back({{"momentum_l1", it.momentum_l1}, {"gradient_l1", it.gradient_l1}, {"loss", it.loss},
                       {"linf", it.linf}});
    }
    rec["trace"] = iters;
    records.push_back(rec);
    adversarial.push_back(result.adversarial);
  }
  const std::string tensors = (fs::path(out) / "adversarial.stmt").string();
  eval::save_tensors(tensors, adversarial);
  write_json((fs::path(out) / "spec.json").string(), spec.to_json());
  const double rate = attacked == 0 ? 0.0 : 100.0 * static_cast<double>(fooled) / static_cast<double>(attacked);
  write_manifest((fs::path(out) / "manifest.json").string(), c, inputs,
                 {{"adversarial", file_sha256(tensors)}},
                 {{"spec", spec.to_json()},
                  {"spec_hash", spec.hash()},
                  {"seed", seed},
                  {"attacked", attacked},
                  {"white_box_success", rate},
                  {"images", records}});
  std::printf("%s on %s: %zu attacked, white-box success %.2f%% -> %s\n", spec.name.c_str(), surrogate_name.c_str(),
              attacked, rate, out.c_str());
  return 0;
}

int cmd_evaluate(Command& c) {
  const auto& s = c.settings;
  const auto data = require_data(c);
  const auto zoo = require_zoo(c);
  eval::ExperimentConfig cfg;
  cfg.name = s["name"].get<std::string>();
  cfg.images = static_cast<std::size_t>(s["images"].get<int>());
  cfg.offset = static_cast<std::size_t>(s["offset"].get<int>());
  cfg.surrogates = {s["surrogate"].get<std::string>()};
  cfg.targets = s["targets"].get<std::vector<std::string>>();
  cfg.defenses = s["defenses"].get<std::vector<std::string>>();
  cfg.seeds = s["seeds"].get<std::vector<std::uint64_t>>();
  cfg.workers = s["workers"].get<int>();
  const bool ablation = s["ablation"].get<bool>();
  if (ablation) {
    const auto p = preset_params(s);
    cfg.attacks = eval::ablation_strategies(p.stm, p.budget);
  } else {
    auto names = s["attacks"].get<std::vector<std::string>>();
    if (names.empty()) names = {s["attack"].get<std::string>()};
    for (const auto& n : names) cfg.attacks.push_back({build_spec(n, s), eval::StyleSource::finetuned, ""});
  }

  bool need_pre = false, need_ft = false;
  for (const auto& a : cfg.attacks) {
    if (!a.spec.uses_style_network()) continue;
    (a.style == eval::StyleSource::pretrained ? need_pre : need_ft) = true;
  }
  std::optional<style::StyleNetwork> pre, ft;
  eval::ExperimentResources res;
  json inputs = {{"test", dataset_hash(data.test)}, {"zoo", json::object()}};
  for (const auto& m : zoo.models) inputs["zoo"][m.spec.name] = m.checksum;
  if (need_pre || ablation) {
    pre = load_style(pretrained_path(c), "pretrain-style");
    res.pretrained = &*pre;
    inputs["pretrained_style"] = pre->checksum();
  }
  if (need_ft || ablation) {
    ft = load_style(finetuned_path(c), "finetune-style");
    if (!attacks::is_finetuned(*ft) && !s["allow_unfinetuned"].get<bool>()) {
      throw ConfigError("style network '" + finetuned_path(c) +
                        "' is not fine-tuned; run `stm finetune-style` or pass --allow-unfinetuned");
    }
    res.finetuned = &*ft;
    inputs["finetuned_style"] = ft->checksum();
  }
  log(c, "running " + std::to_string(cfg.attacks.size()) + " attack rows");
  auto report = eval::run_experiment_matrix(cfg, zoo, data.test, res);
  if (ablation) {
    std::vector<std::shared_ptr<const Classifier>> members;
    const auto& meta = ft->metadata();
    std::vector<std::string> names = meta.contains("finetune_members")
                                         ? meta["finetune_members"].get<std::vector<std::string>>()
                                         : zoo.names_with_role("ensemble");
    for (const auto& n : names) members.push_back(zoo.get(n).model);
    eval::Dataset slice{data.test.class_names, {}};
    for (std::size_t i = cfg.offset; i < data.test.size() && slice.size() < cfg.images; ++i) {
      slice.examples.push_back(data.test.examples[i]);
    }
    report.ablation_accuracy =
        eval::ablation_accuracy_table(members, *pre, *ft, slice, s["gamma"].get<double>(), cfg.seeds.front());
  }
  const std::string out = c.out.empty() ? root_path(c, "reports/" + cfg.name) : c.out;
  report.save(out);
  write_manifest((fs::path(out) / "manifest.json").string(), c, inputs,
                 {{"report", file_sha256((fs::path(out) / "report.json").string())},
                  {"payload_hash", report.payload_hash()}},
                 {{"experiment", cfg.to_json()}});
  std::cout << report.table();
  return report.failures.empty() ? 0 : 1;
}

int cmd_report(Command& c) {
  const std::string dir = c.input.empty() ? root_path(c, "reports/" + c.settings["name"].get<std::string>()) : c.input;
  const std::string path = fs::is_directory(dir) ? (fs::path(dir) / "report.json").string() : dir;
  if (!fs::exists(path)) throw MissingArtifactError("no report at '" + path + "'; run `stm evaluate` first");
  std::ifstream in(path);
  const auto report = eval::EvaluationReport::from_json(json::parse(in));
  const std::string format = c.settings["format"].get<std::string>();
  std::string text;
  if (format == "text") text = report.table();
  else if (format == "json") text = report.to_json(true).dump(2) + "\n";
  else throw ConfigError("unknown report format '" + format + "'");
  if (c.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream(c.out) << text;
  }
  return 0;
}

int exit_code(const std::string& kind) {
  if (kind == "config_error" || kind == "input_error" || kind == "usage_error") return 2;
  if (kind == "missing_artifact") return 3;
  if (kind == "unsupported_capability") return 4;
  if (kind == "training_failure") return 5;
  if (kind == "invariant_violation") return 70;
  return 1;
}

int report_error(const std::string& command, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"command", command}, {"kind", kind}, {"message", message}}}}.dump() << "\n";
  return exit_code(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer-attack toolkit: toy zoo, style network, attacks, evaluation."};
  app.require_subcommand(1);
  std::vector<Command> commands;
  commands.reserve(7);

  auto add = [&](const std::string& name, const std::string& help) -> Command& {
    commands.push_back(Command{});
    Command& c = commands.back();
    c.name = name;
    c.app = app.add_subcommand(name, help);
    c.app->add_option("--config", c.config_path, "JSON settings file (CLI flags take precedence)");
    c.app->add_option("--root", c.root, std::string("artifact root (default $") + kRootEnv + " or ./stm-artifacts)");
    c.app->add_option("--out", c.out, "output location");
    c.app->add_flag("-v,--verbose", c.verbosity, "progress messages on stderr");
    value_flag(c, "--seed", "seed", "base seed");
    return c;
  };
  auto attack_flags = [&](Command& c) {
    c.app->add_option("--data", c.data, "dataset directory (train/ and test/)");
    c.app->add_option("--zoo", c.zoo, "model zoo directory");
    c.app->add_option("--style", c.style, "style network checkpoint");
    value_flag(c, "--attack", "attack",
               "ifgsm, mifgsm, dim, tim, sim, admix, s2im, stm, st-dim, st-tim or st-sim");
    value_flag(c, "--surrogate", "surrogate", "surrogate model name");
    value_flag(c, "--targets", "targets", "comma-separated target models");
    value_flag(c, "--epsilon", "epsilon", "L-inf budget in 0-255 units");
    value_flag(c, "--iterations", "iterations", "iterations T");
    value_flag(c, "--step-size", "step_size", "step size in 0-255 units (default epsilon / T)");
    value_flag(c, "--momentum", "momentum", "momentum decay mu");
    value_flag(c, "--gamma", "gamma", "STM mixing ratio");
    value_flag(c, "--beta", "beta", "STM noise bound (multiple of epsilon)");
    value_flag(c, "--n", "n", "STM samples per iteration");
    value_flag(c, "--images", "images", "number of test images");
    value_flag(c, "--offset", "offset", "first test image");
    switch_flag(c, "--allow-unfinetuned", "allow_unfinetuned", "accept a style network that was not fine-tuned");
    switch_flag(c, "--mix-with-clean", "mix_with_clean", "mix stylized views with the clean image");
    switch_flag(c, "--targeted", "targeted", "targeted mode");
  };

  {
    Command& c = add("make-dataset", "render the synthetic 10-class shapes dataset");
    value_flag(c, "--image-size", "image_size", "image side length");
    value_flag(c, "--train-per-class", "train_per_class", "training images per class");
    value_flag(c, "--test-per-class", "test_per_class", "test images per class");
  }
  {
    Command& c = add("train-zoo", "train the toy classifier zoo");
    c.app->add_option("--data", c.data, "dataset directory");
    value_flag(c, "--epochs", "zoo_epochs", "training epochs per model");
    value_flag(c, "--accuracy-floor", "accuracy_floor", "minimum test accuracy (percent)");
  }
  {
    Command& c = add("pretrain-style", "pretrain the style network on the style corpus");
    c.app->add_option("--data", c.data, "dataset directory (content images)");
    value_flag(c, "--steps", "pretrain_steps", "optimisation steps");
  }
  {
    Command& c = add("finetune-style", "fine-tune the style network against the ensemble");
    c.app->add_option("--data", c.data, "dataset directory");
    c.app->add_option("--zoo", c.zoo, "model zoo directory");
    c.app->add_option("--in", c.input, "pretrained style network");
    value_flag(c, "--members", "finetune_members", "comma-separated ensemble members");
    value_flag(c, "--epochs", "finetune_epochs", "fine-tuning epochs");
    value_flag(c, "--lr", "finetune_lr", "learning rate");
    value_flag(c, "--images", "finetune_images", "training images used");
  }
  {
    Command& c = add("attack", "craft adversarial examples on the surrogate");
    attack_flags(c);
    value_flag(c, "--spec", "spec", "saved attack spec (JSON) instead of --attack");
  }
  {
    Command& c = add("evaluate", "run an attack x target success-rate matrix");
    attack_flags(c);
    value_flag(c, "--attacks", "attacks", "comma-separated attacks (default: --attack)");
    value_flag(c, "--defenses", "defenses", "comma-separated defenses, e.g. jpeg:75,bitred:4");
    value_flag(c, "--seeds", "seeds", "comma-separated seeds");
    value_flag(c, "--workers", "workers", "parallel workers");
    value_flag(c, "--name", "name", "report name");
    switch_flag(c, "--ablation", "ablation", "run the four-row strategy ablation");
  }
  {
    Command& c = add("report", "render a saved evaluation report");
    c.app->add_option("--in", c.input, "report directory or report.json");
    value_flag(c, "--name", "name", "report name under the artifact root");
    value_flag(c, "--format", "format", "text or json");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("", "usage_error", e.what());
  }

  for (auto& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      resolve(c);
      if (c.name == "make-dataset") return cmd_make_dataset(c);
      if (c.name == "train-zoo") return cmd_train_zoo(c);
      if (c.name == "pretrain-style") return cmd_pretrain_style(c);
      if (c.name == "finetune-style") return cmd_finetune_style(c);
      if (c.name == "attack") return cmd_attack(c);
      if (c.name == "evaluate") return cmd_evaluate(c);
      if (c.name == "report") return cmd_report(c);
    } catch (const Error& e) {
      return report_error(c.name, e.kind(), e.what());
    } catch (const json::exception& e) {
      return report_error(c.name, "input_error", e.what());
    } catch (const std::exception& e) {
      return report_error(c.name, "internal_error", e.what());
    }
  }
  return report_error("", "usage_error", "no subcommand");
}
