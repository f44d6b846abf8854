#pragma once

#include "stm/tensor.hpp"

namespace stm {

// L-infinity budget and step schedule of an iterative sign-gradient attack.
// All magnitudes are in [0, 1] pixel units.
struct AttackBudget {
  double epsilon = 16.0 / 255.0;
  int iterations = 10;
  double step_size = 1.6 / 255.0;
  double momentum_decay = 1.0;

  // Step size from the default rule alpha = epsilon / T.
  static AttackBudget with_default_step(double epsilon, int iterations, double momentum_decay);
  // Same, with epsilon given in 0-255 units.
  static AttackBudget from_255(double epsilon_255, int iterations, double momentum_decay);
  void validate() const;
};

struct MomentumState {
  Tensor g;
  int t = 0;

  static MomentumState zeros(Shape shape) { return MomentumState{Tensor(shape), 0}; }
};

// g / ||g||_1; an all-zero g is returned unchanged.
Tensor l1_normalize(Tensor g);

// g <- mu * g + g_bar / ||g_bar||_1, t <- t + 1.
MomentumState momentum_update(MomentumState state, const Tensor& g_bar, double mu);

// Clip_{x_orig}^{eps}(x_adv + alpha * sign(g)), also clipped to [0, 1].
// sign(0) = 0.
Image sign_step_and_clip(const Image& x_adv, const Image& x_orig, const Tensor& g, double alpha,
                         double epsilon);

// Projection onto the epsilon ball around x_orig intersected with [0, 1].
Image project_linf(Image x, const Image& x_orig, double epsilon);

}  // namespace stm
