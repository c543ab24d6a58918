#include <array>
#include <cstring>
#include <istream>
#include <ostream>

#include "gddpg/mlp.hpp"

namespace gddpg {
namespace {

constexpr std::array<char, 8> kMagic = {'G', 'D', 'M', 'L', 'P', '\0', '\0', '\1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("mlp checkpoint: unexpected end of data");
  return value;
}

Activation checked_activation(std::uint8_t code) {
  if (code > static_cast<std::uint8_t>(Activation::relu)) {
    throw IoError("mlp checkpoint: unknown activation code " + std::to_string(code));
  }
  return static_cast<Activation>(code);
}

}  // namespace

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::identity:
      return "identity";
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + name + "'");
}

void write_mlp(std::ostream& out, const Mlp& params) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.layer_sizes.size()));
  for (int size : params.layer_sizes) put<std::uint32_t>(out, static_cast<std::uint32_t>(size));
  for (auto a : params.hidden_activations) put<std::uint8_t>(out, static_cast<std::uint8_t>(a));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(params.output_activation));
  for (int t = 0; t < params.num_layers(); ++t) {
    const auto& w = params.weights[t];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) put<double>(out, w(r, c));
    }
    for (Eigen::Index r = 0; r < params.biases[t].size(); ++r) put<double>(out, params.biases[t](r));
  }
  if (!out) throw IoError("mlp checkpoint: write failed");
}

Mlp read_mlp(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("mlp checkpoint: bad magic");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw IoError("mlp checkpoint: unsupported version " + std::to_string(version));
  const auto count = get<std::uint32_t>(in);
  if (count < 2 || count > 64) throw IoError("mlp checkpoint: implausible layer count");
  Mlp params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto size = get<std::uint32_t>(in);
    if (size == 0 || size > (1u << 20)) throw IoError("mlp checkpoint: implausible layer size");
    params.layer_sizes.push_back(static_cast<int>(size));
  }
  for (std::uint32_t i = 0; i + 2 < count; ++i) {
    params.hidden_activations.push_back(checked_activation(get<std::uint8_t>(in)));
  }
  params.output_activation = checked_activation(get<std::uint8_t>(in));
  for (std::uint32_t t = 0; t + 1 < count; ++t) {
    MatrixX<double> w(params.layer_sizes[t + 1], params.layer_sizes[t]);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = get<double>(in);
    }
    VectorX<double> b(params.layer_sizes[t + 1]);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = get<double>(in);
    params.weights.push_back(std::move(w));
    params.biases.push_back(std::move(b));
  }
  return params;
}

}  // namespace gddpg
