#pragma once

#include <optional>

#include "stm/tensor.hpp"

namespace stm {

struct LabeledExample {
  Image image;
  int label = 0;
  std::optional<int> target_label;
};

}  // namespace stm
