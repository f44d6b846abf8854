#include "stm/nn/params.hpp"

#include <cmath>

#include "stm/error.hpp"

namespace stm::nn {

const ParamSlot& ParamLayout::add(std::string key, std::vector<int> shape, ParamInit init) {
  if (find(key) != nullptr) throw ConfigError("duplicate parameter key '" + key + "'");
  std::size_t size = 1;
  for (int d : shape) size *= static_cast<std::size_t>(d);
  slots_.push_back(ParamSlot{std::move(key), std::move(shape), total_, size, init});
  total_ += size;
  return slots_.back();
}

const ParamSlot* ParamLayout::find(const std::string& key) const {
  for (const auto& s : slots_) {
    if (s.key == key) return &s;
  }
  return nullptr;
}

std::vector<double> ParamLayout::initialize(Rng& rng) const {
  std::vector<double> values(total_, 0.0);
  for (const auto& s : slots_) {
    auto out = std::span<double>(values).subspan(s.offset, s.size);
    switch (s.init.kind) {
      case InitKind::zeros:
        break;
      case InitKind::constant:
        for (double& v : out) v = s.init.value;
        break;
      case InitKind::he_normal: {
        const double std = std::sqrt(2.0 / static_cast<double>(s.init.fan_in));
        for (double& v : out) v = std * standard_normal(rng);
        break;
      }
      case InitKind::normal:
        for (double& v : out) v = s.init.value * standard_normal(rng);
        break;
    }
  }
  return values;
}

std::string join_key(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace stm::nn
