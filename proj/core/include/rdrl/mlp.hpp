#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rdrl/autodiff.hpp"

namespace rdrl::ad {

/// Ordered list of parameter tensors. Copying a ParamSet produces an
/// independent snapshot.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::vector<Matrix> tensors) : tensors_(std::move(tensors)) {}

  std::size_t size() const { return tensors_.size(); }
  Matrix& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix& operator[](std::size_t i) const { return tensors_[i]; }
  std::vector<Matrix>& tensors() { return tensors_; }
  const std::vector<Matrix>& tensors() const { return tensors_; }

  std::size_t scalar_count() const;
  std::vector<double> flatten() const;
  /// Overwrites values from a flat array laid out as flatten() produces.
  void assign_flat(std::span<const double> flat);
  bool same_shape(const ParamSet& other) const;

  /// FNV-1a over the raw bytes of every tensor.
  std::uint64_t hash() const;

 private:
  std::vector<Matrix> tensors_;
};

/// target <- beta * online + (1 - beta) * target, elementwise.
void polyak_update(const ParamSet& online, ParamSet& target, double beta);

enum class Activation { Relu };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  std::vector<std::size_t> hidden;
  Activation activation = Activation::Relu;

  std::size_t layer_count() const { return hidden.size() + 1; }
  void validate() const;
  /// Stable architecture fingerprint stored in checkpoints.
  std::uint64_t hash() const;
  /// e.g. "4:256:256:20".
  std::string describe() const;
};

/// Weights W_l (fan_in x fan_out) and biases b_l (1 x fan_out), both drawn
/// uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
ParamSet init_mlp(const MlpSpec& spec, std::mt19937_64& rng);

/// Inference path: no tape.
Matrix mlp_predict(const MlpSpec& spec, const ParamSet& params, const Matrix& input);

/// Differentiable path; `params` are the bound leaves of a ParamSet.
Var mlp_forward(const MlpSpec& spec, std::span<const Var> params, Var input);

}  // namespace rdrl::ad
