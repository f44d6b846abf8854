#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "stm/eval/zoo.hpp"
#include "stm/nn/network.hpp"
#include "stm/rng.hpp"
#include "stm/tensor.hpp"

namespace stm::testing {

inline Image random_image(Shape shape, std::uint64_t seed, double lo = 0.05, double hi = 0.95) {
  Rng rng = make_rng(seed, {0x7e57});
  Image x(shape);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = uniform(rng, lo, hi);
  return x;
}

// Small smooth classifier for gradient checks and fast attack tests.
inline std::shared_ptr<const nn::NetworkClassifier> tiny_classifier(std::uint64_t seed, Shape input = {3, 8, 8},
                                                                    const std::string& family = "convnet",
                                                                    int classes = 4, int width = 4,
                                                                    const std::string& activation = "softplus") {
  const nlohmann::json spec = {{"family", family},
                               {"width", width},
                               {"classes", classes},
                               {"input", {input.channels, input.height, input.width}},
                               {"activation", activation}};
  return eval::init_classifier(family + "-" + std::to_string(seed), spec, seed);
}

inline double central_difference(const std::function<double(const Tensor&)>& f, Tensor x, std::size_t i,
                                  double h = 1e-5) {
  const double v = x[i];
  x[i] = v + h;
  const double up = f(x);
  x[i] = v - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace stm::testing
