#include "stm/attacks/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "stm/error.hpp"
#include "stm/hash.hpp"

namespace stm::attacks {
namespace {

using Pullback = std::function<Tensor(const Tensor&)>;

// One transformed copy of the iterate and the chain of maps that carry a
// gradient at the copy back to the iterate.
struct View {
  Image x;
  std::vector<Pullback> pullbacks;
};

struct Context {
  const AttackSpec& spec;
  const AttackResources& resources;
  const LabeledExample& ex;
  const Image& clean;
  Rng& rng;
};

void expand(const transforms::DimConfig& cfg, View v, Context& ctx, std::vector<View>& out) {
  const auto layout = transforms::draw_dim_layout(v.x.shape(), cfg, ctx.rng);
  if (!layout.applied) {
    out.push_back(std::move(v));
    return;
  }
  v.x = transforms::apply_dim_layout(v.x, layout);
  v.pullbacks.push_back([layout](const Tensor& g) { return transforms::dim_layout_adjoint(g, layout); });
  out.push_back(std::move(v));
}

void expand(const transforms::SimConfig& cfg, View v, Context&, std::vector<View>& out) {
  for (int i = 0; i < cfg.copies; ++i) {
    const double scale = std::ldexp(1.0, -i);
    View c{v.x * scale, v.pullbacks};
    if (i > 0) c.pullbacks.push_back([scale](const Tensor& g) { return g * scale; });
    out.push_back(std::move(c));
  }
}

void expand(const transforms::AdmixConfig& cfg, View v, Context& ctx, std::vector<View>& out) {
  if (ctx.resources.admix_pool == nullptr) throw ConfigError("Admix needs a pool of other-class images");
  std::vector<const Image*> pool;
  for (const auto& other : *ctx.resources.admix_pool) {
    if (other.label != ctx.ex.label) pool.push_back(&other.image);
  }
  const auto picks = transforms::draw_admix_partners(pool.size(), cfg, ctx.rng);
  for (std::size_t p : picks) {
    const Image& other = *pool[p];
    require_same_shape(v.x, other, "admix");
    for (int i = 0; i < cfg.copies; ++i) {
      const double scale = std::ldexp(1.0, -i);
      Image pre(v.x.shape());
      for (std::size_t k = 0; k < pre.size(); ++k) pre[k] = (v.x[k] + cfg.strength * other[k]) * scale;
      Tensor mask = clip_unit_mask(pre);
      View c{clip_unit(std::move(pre)), v.pullbacks};
      c.pullbacks.push_back([mask = std::move(mask), scale](const Tensor& g) { return hadamard(g, mask) * scale; });
      out.push_back(std::move(c));
    }
  }
}

void expand(const transforms::SpectrumConfig& cfg, View v, Context& ctx, std::vector<View>& out) {
  auto draw = std::make_shared<transforms::SpectrumDraw>(transforms::draw_spectrum(v.x.shape(), cfg, ctx.rng));
  Tensor pre = transforms::spectrum_apply_unclipped(v.x, *draw);
  Tensor mask = clip_unit_mask(pre);
  v.x = clip_unit(std::move(pre));
  v.pullbacks.push_back([draw, mask = std::move(mask)](const Tensor& g) {
    return transforms::spectrum_adjoint(hadamard(g, mask), *draw);
  });
  out.push_back(std::move(v));
}

void expand(const StyleStage& st, View v, Context& ctx, std::vector<View>& out) {
  const double eps = ctx.spec.budget.epsilon;
  const style::StyleNetwork* net = ctx.resources.style_network;
  Image xs = v.x;
  style::StyleEmbedding z;
  if (st.stylize) {
    z = style::sample_embedding(net->config().embedding_dim, ctx.rng);
    xs = net->stylize(v.x, z);
  }
  const Image& base = st.mix_with_clean ? ctx.clean : v.x;
  const double bound = st.beta * eps;
  Image pre(v.x.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    double value = st.gamma * base[i] + (1.0 - st.gamma) * xs[i];
    if (bound > 0.0) value += uniform(ctx.rng, -bound, bound);
    pre[i] = value;
  }
  if (st.chain_rule) {
    Tensor mask = clip_unit_mask(pre);
    const double gamma = st.gamma;
    const bool through_base = !st.mix_with_clean;
    const bool stylize = st.stylize;
    v.pullbacks.push_back([=, x = v.x, mask = std::move(mask)](const Tensor& g) {
      const Tensor gm = hadamard(g, mask);
      Tensor d = stylize ? style::stylize_vjp(*net, x, z, gm) : gm;
      d *= 1.0 - gamma;
      if (through_base) d += gm * gamma;
      return d;
    });
  }
  v.x = clip_unit(std::move(pre));
  out.push_back(std::move(v));
}

std::vector<View> draw_views(const Image& x, Context& ctx) {
  std::vector<View> views;
  views.push_back(View{x, {}});
  for (const auto& stage : ctx.spec.stack) {
    std::vector<View> next;
    for (auto& v : views) {
      std::visit([&](const auto& cfg) { expand(cfg, std::move(v), ctx, next); }, stage);
    }
    views = std::move(next);
  }
  return views;
}

void check_iterate(const Image& x, const Image& clean, double epsilon, int t) {
  if (!all_finite(x) || !within_unit_interval(x) || linf_distance(x, clean) > epsilon + 1e-9) {
    throw InvariantError("iterate " + std::to_string(t) + " left the epsilon ball or [0, 1] (distance " +
                         std::to_string(linf_distance(x, clean)) + ")");
  }
}

const char* mode_name(Mode m) { return m == Mode::targeted ? "targeted" : "untargeted"; }

}  // namespace

bool AttackSpec::uses_style_network() const {
  return std::any_of(stack.begin(), stack.end(), [](const Stage& s) {
    return std::holds_alternative<StyleStage>(s) && std::get<StyleStage>(s).stylize;
  });
}

bool AttackSpec::uses_admix_pool() const {
  return std::any_of(stack.begin(), stack.end(),
                     [](const Stage& s) { return std::holds_alternative<transforms::AdmixConfig>(s); });
}

void AttackSpec::validate() const {
  budget.validate();
  if (samples < 1) throw ConfigError("an attack needs at least one sample per iteration");
  for (const auto& stage : stack) {
    std::visit(
        [](const auto& cfg) {
          using T = std::decay_t<decltype(cfg)>;
          if constexpr (std::is_same_v<T, StyleStage>) {
            style::StmConfig{cfg.gamma, cfg.beta, 1}.validate();
          } else {
            cfg.validate();
          }
        },
        stage);
  }
  if (tim) tim->validate();
}

nlohmann::json AttackSpec::to_json() const {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& stage : stack) {
    std::visit(
        [&](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, transforms::DimConfig>) {
            stages.push_back({{"type", "dim"}, {"probability", c.probability}, {"resize_low", c.resize_low}});
          } else if constexpr (std::is_same_v<T, transforms::SimConfig>) {
            stages.push_back({{"type", "sim"}, {"copies", c.copies}});
          } else if constexpr (std::is_same_v<T, transforms::AdmixConfig>) {
            stages.push_back({{"type", "admix"}, {"copies", c.copies}, {"mixed", c.mixed}, {"strength", c.strength}});
          } else if constexpr (std::is_same_v<T, transforms::SpectrumConfig>) {
            stages.push_back({{"type", "spectrum"}, {"rho", c.rho}, {"sigma", c.sigma}});
          } else {
            stages.push_back({{"type", "style"},
                              {"gamma", c.gamma},
                              {"beta", c.beta},
                              {"stylize", c.stylize},
                              {"mix_with_clean", c.mix_with_clean},
                              {"chain_rule", c.chain_rule}});
          }
        },
        stage);
  }
  return {{"name", name},
          {"budget",
           {{"epsilon", budget.epsilon},
            {"iterations", budget.iterations},
            {"step_size", budget.step_size},
            {"momentum_decay", budget.momentum_decay}}},
          {"stack", stages},
          {"tim", tim ? nlohmann::json{{"kernel_length", tim->kernel_length}} : nlohmann::json(nullptr)},
          {"samples", samples},
          {"mode", mode_name(mode)}};
}

AttackSpec AttackSpec::from_json(const nlohmann::json& j) {
  try {
    AttackSpec s;
    s.name = j.value("name", std::string("custom"));
    const auto& b = j.at("budget");
    s.budget.epsilon = b.at("epsilon").get<double>();
    s.budget.iterations = b.at("iterations").get<int>();
    s.budget.step_size = b.at("step_size").get<double>();
    s.budget.momentum_decay = b.at("momentum_decay").get<double>();
    for (const auto& st : j.at("stack")) {
      const std::string type = st.at("type").get<std::string>();
      if (type == "dim") {
        s.stack.push_back(transforms::DimConfig{st.at("probability").get<double>(), st.at("resize_low").get<double>()});
      } else if (type == "sim") {
        s.stack.push_back(transforms::SimConfig{st.at("copies").get<int>()});
      } else if (type == "admix") {
        s.stack.push_back(transforms::AdmixConfig{st.at("copies").get<int>(), st.at("mixed").get<int>(),
                                                  st.at("strength").get<double>()});
      } else if (type == "spectrum") {
        transforms::SpectrumConfig c;
        c.rho = st.at("rho").get<double>();
        c.sigma = st.at("sigma").get<double>();
        c.samples = j.at("samples").get<int>();
        s.stack.push_back(c);
      } else if (type == "style") {
        s.stack.push_back(StyleStage{st.at("gamma").get<double>(), st.at("beta").get<double>(),
                                     st.value("stylize", true), st.value("mix_with_clean", false),
                                     st.value("chain_rule", false)});
      } else {
        throw ConfigError("unknown transform stage '" + type + "'");
      }
    }
    if (j.contains("tim") && !j.at("tim").is_null()) {
      s.tim = transforms::TimConfig{j.at("tim").at("kernel_length").get<int>()};
    }
    s.samples = j.at("samples").get<int>();
    const std::string mode = j.value("mode", std::string("untargeted"));
    if (mode == "targeted") s.mode = Mode::targeted;
    else if (mode != "untargeted") throw ConfigError("unknown attack mode '" + mode + "'");
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed attack spec: ") + e.what());
  }
}

std::string AttackSpec::hash() const { return sha256_hex(to_json().dump()); }

bool is_finetuned(const style::StyleNetwork& net) { return net.metadata().value("finetuned", false); }

AttackResult run_attack(const AttackSpec& spec, const Classifier& surrogate, const LabeledExample& ex,
                        const AttackResources& resources, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  AttackResult r = run_attack(spec, surrogate, ex, resources, rng);
  r.trace.seed = seed;
  return r;
}

AttackResult run_attack(const AttackSpec& spec, const Classifier& surrogate, const LabeledExample& ex,
                        const AttackResources& resources, Rng& rng) {
  spec.validate();
  if (!surrogate.differentiable()) {
    throw UnsupportedError("surrogate '" + surrogate.id() + "' does not expose input gradients");
  }
  surrogate.check_input(ex.image);
  if (!within_unit_interval(ex.image) || !all_finite(ex.image)) throw InputError("input image must lie in [0, 1]");
  int label = ex.label;
  if (spec.mode == Mode::targeted) {
    if (!ex.target_label) throw ConfigError("targeted attack needs a target label");
    label = *ex.target_label;
  }
  if (label < 0 || label >= surrogate.num_classes()) throw InputError("label out of range");
  if (spec.uses_style_network()) {
    if (resources.style_network == nullptr) {
      throw MissingArtifactError("attack '" + spec.name + "' needs a style network; run `stm pretrain-style` and "
                                 "`stm finetune-style` first");
    }
    if (!resources.allow_unfinetuned && !is_finetuned(*resources.style_network)) {
      throw ConfigError("style network '" + resources.style_network->identifier() +
                        "' is not fine-tuned; run `stm finetune-style` or pass --allow-unfinetuned");
    }
  }

  const AttackBudget& b = spec.budget;
  const double direction = spec.mode == Mode::targeted ? -1.0 : 1.0;
  Context ctx{spec, resources, ex, ex.image, rng};
  AttackResult result{ex.image, {}};
  result.trace.spec_hash = spec.hash();
  Image& x = result.adversarial;
  MomentumState state = MomentumState::zeros(x.shape());

  for (int t = 0; t < b.iterations; ++t) {
    Tensor sum(x.shape());
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (int n = 0; n < spec.samples; ++n) {
      for (auto& view : draw_views(x, ctx)) {
        auto lg = loss_and_gradient(surrogate, view.x, label);
        Tensor g = std::move(lg.gradient);
        for (auto it = view.pullbacks.rbegin(); it != view.pullbacks.rend(); ++it) g = (*it)(g);
        sum += g;
        loss_sum += lg.loss;
        ++count;
      }
    }
    Tensor g_bar = sum * (direction / static_cast<double>(count));
    if (spec.tim) g_bar = transforms::tim_smooth(g_bar, *spec.tim);
    if (!all_finite(g_bar)) throw InvariantError("non-finite gradient at iteration " + std::to_string(t));
    state = momentum_update(std::move(state), g_bar, b.momentum_decay);
    x = sign_step_and_clip(x, ex.image, state.g, b.step_size, b.epsilon);
    check_iterate(x, ex.image, b.epsilon, t);
    result.trace.iterations.push_back(
        {l1_norm(state.g), l1_norm(g_bar), loss_sum / static_cast<double>(count), linf_distance(x, ex.image)});
  }
  return result;
}

AttackSpec stm_spec(const style::StmConfig& stm, const AttackBudget& budget) {
  stm.validate();
  AttackSpec s;
  s.name = "stm";
  s.budget = budget;
  s.stack.push_back(StyleStage{stm.gamma, stm.beta});
  s.samples = stm.samples;
  return s;
}

AttackResult run_stm(const style::StmConfig& stm, const style::StyleNetwork& net, const AttackBudget& budget,
                     const Classifier& surrogate, const LabeledExample& ex, Rng& rng, bool allow_unfinetuned) {
  AttackResources res;
  res.style_network = &net;
  res.allow_unfinetuned = allow_unfinetuned;
  return run_attack(stm_spec(stm, budget), surrogate, ex, res, rng);
}

AttackSpec compose(const style::StmConfig& stm, const transforms::DimConfig& base, const AttackBudget& budget) {
  AttackSpec s = stm_spec(stm, budget);
  s.name = "st-dim";
  s.stack.push_back(base);
  return s;
}

AttackSpec compose(const style::StmConfig& stm, const transforms::TimConfig& base, const AttackBudget& budget) {
  AttackSpec s = stm_spec(stm, budget);
  s.name = "st-tim";
  s.tim = base;
  return s;
}

AttackSpec compose(const style::StmConfig& stm, const transforms::SimConfig& base, const AttackBudget& budget) {
  AttackSpec s = stm_spec(stm, budget);
  s.name = "st-sim";
  s.stack.push_back(base);
  return s;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"ifgsm", "mifgsm", "dim",    "tim",    "sim",   "admix",
                                              "s2im",  "stm",    "st-dim", "st-tim", "st-sim"};
  return names;
}

AttackSpec preset(const std::string& name, const PresetParams& p) {
  AttackSpec s;
  s.name = name;
  s.budget = p.budget;
  if (name == "ifgsm") {
    s.budget.momentum_decay = 0.0;
  } else if (name == "mifgsm") {
  } else if (name == "dim") {
    s.stack.push_back(p.dim);
  } else if (name == "tim") {
    s.tim = p.tim;
  } else if (name == "sim") {
    s.stack.push_back(p.sim);
  } else if (name == "admix") {
    s.stack.push_back(p.admix);
  } else if (name == "s2im") {
    s.stack.push_back(p.spectrum);
    s.samples = p.spectrum.samples;
  } else if (name == "stm") {
    s = stm_spec(p.stm, p.budget);
  } else if (name == "st-dim") {
    s = compose(p.stm, p.dim, p.budget);
  } else if (name == "st-tim") {
    s = compose(p.stm, p.tim, p.budget);
  } else if (name == "st-sim") {
    s = compose(p.stm, p.sim, p.budget);
  } else {
    throw ConfigError("unknown attack '" + name + "'");
  }
  s.validate();
  return s;
}

}  // namespace stm::attacks
