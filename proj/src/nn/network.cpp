#include "stm/nn/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "stm/error.hpp"
#include "stm/hash.hpp"

namespace stm::nn {
namespace {

struct NetworkTrace final : TraceState {
  Cache cache;
};

}  // namespace

NetworkClassifier::NetworkClassifier(std::string id, std::shared_ptr<const Architecture> arch,
                                     std::vector<double> params)
    : id_(std::move(id)), arch_(std::move(arch)), params_(std::move(params)) {
  if (params_.size() != arch_->layout.total()) {
    throw ConfigError("network '" + id_ + "' expects " + std::to_string(arch_->layout.total()) +
                      " parameters, got " + std::to_string(params_.size()));
  }
  classes_ = static_cast<int>(arch_->body->output_shape(arch_->input).size());
}

std::vector<double> NetworkClassifier::logits(const Image& x) const {
  check_input(x);
  const PassContext ctx{params_, {}};
  return arch_->body->forward(ctx, x, nullptr).storage();
}

ForwardTrace NetworkClassifier::forward(const Image& x) const {
  check_input(x);
  auto state = std::make_shared<NetworkTrace>();
  const PassContext ctx{params_, {}};
  Tensor out = arch_->body->forward(ctx, x, &state->cache);
  return ForwardTrace{std::move(out.storage()), std::move(state)};
}

Tensor NetworkClassifier::backward(const ForwardTrace& trace, std::span<const double> cotangent) const {
  return backward_with_params(trace, cotangent, {});
}

Tensor NetworkClassifier::backward_with_params(const ForwardTrace& trace, std::span<const double> cotangent,
                                               std::span<double> param_grads) const {
  const auto& state = dynamic_cast<const NetworkTrace&>(*trace.state);
  const PassContext ctx{params_, {}};
  Tensor dy(Shape{classes_, 1, 1}, std::vector<double>(cotangent.begin(), cotangent.end()));
  return arch_->body->backward(ctx, dy, state.cache, param_grads);
}

std::string NetworkClassifier::checksum() const { return sha256_hex(params_); }

Adam::Adam(std::size_t size, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

namespace {

constexpr char kMagic[8] = {'S', 'T', 'M', 'P', 'A', 'R', 'A', 'M'};

nlohmann::json slots_to_json(const std::vector<ParamSlot>& slots) {
  auto out = nlohmann::json::array();
  for (const auto& s : slots) {
    out.push_back({{"key", s.key}, {"shape", s.shape}, {"offset", s.offset}, {"size", s.size}});
  }
  return out;
}

}  // namespace

void Archive::save(const std::string& path) const {
  nlohmann::json header = {
      {"format", "stm-param-archive"},
      {"version", kFormatVersion},
      {"kind", kind},
      {"arch", arch},
      {"metadata", metadata},
      {"params", slots_to_json(slots)},
      {"count", values.size()},
      {"sha256", sha256_hex(values)},
  };
  const std::string text = header.dump(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write archive '" + path + "'");
  const std::uint32_t version = kFormatVersion;
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw InputError("failed writing archive '" + path + "'");
}

Archive Archive::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open archive '" + path + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw InputError("'" + path + "' is not a parameter archive");
  }
  if (version != kFormatVersion) {
    throw InputError("archive '" + path + "' has unsupported version " + std::to_string(version));
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);

  Archive a;
  a.kind = header.at("kind").get<std::string>();
  a.arch = header.at("arch");
  a.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& s : header.at("params")) {
    ParamSlot slot;
    slot.key = s.at("key").get<std::string>();
    slot.shape = s.at("shape").get<std::vector<int>>();
    slot.offset = s.at("offset").get<std::size_t>();
    slot.size = s.at("size").get<std::size_t>();
    a.slots.push_back(std::move(slot));
  }
  a.values.resize(header.at("count").get<std::size_t>());
  in.read(reinterpret_cast<char*>(a.values.data()),
          static_cast<std::streamsize>(a.values.size() * sizeof(double)));
  if (!in) throw InputError("archive '" + path + "' is truncated");
  if (sha256_hex(a.values) != header.at("sha256").get<std::string>()) {
    throw InputError("archive '" + path + "' failed its checksum");
  }
  return a;
}

Archive make_archive(std::string kind, const Architecture& arch, std::vector<double> values,
                     nlohmann::json metadata) {
  Archive a;
  a.kind = std::move(kind);
  a.arch = arch.spec;
  a.metadata = std::move(metadata);
  a.slots = arch.layout.slots();
  a.values = std::move(values);
  return a;
}

void check_manifest(const Archive& archive, const ParamLayout& layout) {
  if (archive.slots.size() != layout.slots().size() || archive.values.size() != layout.total()) {
    throw InputError("archive manifest does not match the architecture");
  }
  for (std::size_t i = 0; i < archive.slots.size(); ++i) {
    const auto& a = archive.slots[i];
    const auto& b = layout.slots()[i];
    if (a.key != b.key || a.shape != b.shape || a.offset != b.offset) {
      throw InputError("archive parameter '" + a.key + "' does not match layout entry '" + b.key + "'");
    }
  }
}

}  // namespace stm::nn
