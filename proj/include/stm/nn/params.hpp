#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stm/rng.hpp"

namespace stm::nn {

enum class InitKind { zeros, constant, he_normal, normal };

struct ParamInit {
  InitKind kind = InitKind::zeros;
  double value = 0.0;  // constant value, or std for `normal`
  int fan_in = 1;      // for he_normal

  static ParamInit zeros() { return {}; }
  static ParamInit constant(double v) { return {InitKind::constant, v, 1}; }
  static ParamInit he(int fan_in) { return {InitKind::he_normal, 0.0, fan_in}; }
  static ParamInit normal(double std) { return {InitKind::normal, std, 1}; }
};

struct ParamSlot {
  std::string key;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  ParamInit init;
};

// Flat parameter layout. Layers register named slots at construction and
// later read their values from a span over the whole flat vector, which keeps
// layers immutable and makes a network's state a single std::vector<double>.
class ParamLayout {
 public:
  const ParamSlot& add(std::string key, std::vector<int> shape, ParamInit init);

  std::size_t total() const { return total_; }
  const std::vector<ParamSlot>& slots() const { return slots_; }
  const ParamSlot* find(const std::string& key) const;

  std::vector<double> initialize(Rng& rng) const;

 private:
  std::vector<ParamSlot> slots_;
  std::size_t total_ = 0;
};

// Key prefix helper for nested layers ("enc.0.conv").
std::string join_key(const std::string& prefix, const std::string& name);

}  // namespace stm::nn
