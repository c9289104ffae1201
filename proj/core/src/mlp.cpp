#include "rdrl/mlp.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "rdrl/errors.hpp"

namespace rdrl::ad {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.data(), t.data() + t.size());
  return flat;
}

void ParamSet::assign_flat(std::span<const double> flat) {
  if (flat.size() != scalar_count()) throw InvalidArgument("assign_flat: scalar count mismatch");
  std::size_t off = 0;
  for (auto& t : tensors_) {
    std::memcpy(t.data(), flat.data() + off, sizeof(double) * static_cast<std::size_t>(t.size()));
    off += static_cast<std::size_t>(t.size());
  }
}

bool ParamSet::same_shape(const ParamSet& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (tensors_[i].rows() != other[i].rows() || tensors_[i].cols() != other[i].cols()) return false;
  }
  return true;
}

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : tensors_) {
    h = fnv1a(t.data(), sizeof(double) * static_cast<std::size_t>(t.size()), h);
  }
  return h;
}

void polyak_update(const ParamSet& online, ParamSet& target, double beta) {
  if (!online.same_shape(target)) throw InvalidArgument("polyak_update: shape mismatch");
  for (std::size_t i = 0; i < online.size(); ++i) {
    target[i] = beta * online[i] + (1.0 - beta) * target[i];
  }
}

void MlpSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) throw InvalidArgument("MlpSpec: widths must be >= 1");
  for (std::size_t h : hidden) {
    if (h < 1) throw InvalidArgument("MlpSpec: hidden widths must be >= 1");
  }
}

std::uint64_t MlpSpec::hash() const {
  std::uint64_t h = kFnvOffset;
  auto mix = [&](std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    h = fnv1a(bytes, 8, h);
  };
  mix(input_dim);
  for (std::size_t w : hidden) mix(w);
  mix(output_dim);
  mix(static_cast<std::uint64_t>(activation));
  return h;
}

std::string MlpSpec::describe() const {
  std::ostringstream os;
  os << input_dim;
  for (std::size_t w : hidden) os << ':' << w;
  os << ':' << output_dim;
  return os.str();
}

ParamSet init_mlp(const MlpSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  std::vector<Matrix> tensors;
  std::size_t fan_in = spec.input_dim;
  auto layer = [&](std::size_t fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix w(fan_in, fan_out), b(1, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = dist(rng);
    tensors.push_back(std::move(w));
    tensors.push_back(std::move(b));
    fan_in = fan_out;
  };
  for (std::size_t h : spec.hidden) layer(h);
  layer(spec.output_dim);
  return ParamSet(std::move(tensors));
}

Matrix mlp_predict(const MlpSpec& spec, const ParamSet& params, const Matrix& input) {
  if (params.size() != 2 * spec.layer_count()) throw InvalidArgument("mlp_predict: parameter count");
  if (static_cast<std::size_t>(input.cols()) != spec.input_dim) {
    throw InvalidArgument("mlp_predict: input width does not match spec");
  }
  Matrix h = input;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    Matrix next = h * params[2 * l];
    next.rowwise() += params[2 * l + 1].row(0);
    if (l + 1 < spec.layer_count()) next = next.cwiseMax(0.0);
    h = std::move(next);
  }
  return h;
}

Var mlp_forward(const MlpSpec& spec, std::span<const Var> params, Var input) {
  if (params.size() != 2 * spec.layer_count()) throw InvalidArgument("mlp_forward: parameter count");
  if (static_cast<std::size_t>(input.cols()) != spec.input_dim) {
    throw InvalidArgument("mlp_forward: input width does not match spec");
  }
  Var h = input;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    h = linear(h, params[2 * l], params[2 * l + 1]);
    if (l + 1 < spec.layer_count()) h = relu(h);
  }
  return h;
}

}  // namespace rdrl::ad
