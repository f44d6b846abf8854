#include "stm/momentum.hpp"

#include <algorithm>
#include <cmath>

#include "stm/error.hpp"

namespace stm {

AttackBudget AttackBudget::with_default_step(double epsilon, int iterations, double momentum_decay) {
  AttackBudget b;
  b.epsilon = epsilon;
  b.iterations = iterations;
  b.step_size = iterations > 0 ? epsilon / iterations : 0.0;
  b.momentum_decay = momentum_decay;
  return b;
}

AttackBudget AttackBudget::from_255(double epsilon_255, int iterations, double momentum_decay) {
  return with_default_step(epsilon_255 / 255.0, iterations, momentum_decay);
}

void AttackBudget::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (!(step_size >= 0.0)) throw ConfigError("step size must be non-negative");
  if (!(momentum_decay >= 0.0)) throw ConfigError("momentum decay must be non-negative");
}

Tensor l1_normalize(Tensor g) {
  const double norm = l1_norm(g);
  if (norm == 0.0) return g;
  for (double& v : g.storage()) v /= norm;
  return g;
}

MomentumState momentum_update(MomentumState state, const Tensor& g_bar, double mu) {
  require_same_shape(state.g, g_bar, "momentum_update");
  const Tensor unit = l1_normalize(g_bar);
  for (std::size_t i = 0; i < unit.size(); ++i) state.g[i] = mu * state.g[i] + unit[i];
  ++state.t;
  return state;
}

Image project_linf(Image x, const Image& x_orig, double epsilon) {
  require_same_shape(x, x_orig, "project_linf");
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lo = std::max(0.0, x_orig[i] - epsilon);
    const double hi = std::min(1.0, x_orig[i] + epsilon);
    x[i] = std::clamp(x[i], lo, hi);
  }
  return x;
}

Image sign_step_and_clip(const Image& x_adv, const Image& x_orig, const Tensor& g, double alpha,
                         double epsilon) {
  require_same_shape(x_adv, x_orig, "sign_step_and_clip");
  require_same_shape(x_adv, g, "sign_step_and_clip");
  Image next(x_adv.shape());
  for (std::size_t i = 0; i < next.size(); ++i) {
    const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    next[i] = x_adv[i] + alpha * s;
  }
  return project_linf(std::move(next), x_orig, epsilon);
}

}  // namespace stm
