#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "align_teleop/autodiff.hpp"

namespace align_teleop {

enum class Activation : std::uint8_t { Identity, Tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Fully connected feedforward network. Parameters are stored in one flat
/// buffer, layer by layer, each layer as its row-major weight matrix
/// (out x in) followed by its bias vector.
class Mlp {
 public:
  Mlp() = default;
  /// Zero-initialized network.
  explicit Mlp(std::vector<std::size_t> layer_sizes, Activation hidden = Activation::Tanh,
               Activation output = Activation::Identity);

  /// Xavier-uniform weights, zero biases.
  static Mlp xavier(std::vector<std::size_t> layer_sizes, std::mt19937_64& rng,
                    Activation hidden = Activation::Tanh, Activation output = Activation::Identity);

  const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  std::size_t layer_count() const { return sizes_.size() - 1; }
  Activation hidden_activation() const noexcept { return hidden_; }
  Activation output_activation() const noexcept { return output_; }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> biases(std::size_t layer);
  std::span<const double> biases(std::size_t layer) const;

  std::vector<double> operator()(std::span<const double> input) const;

  /// Records the forward pass with parameters taken from `params`, which must
  /// come from tape.register_parameters(parameters()).
  std::vector<ad::Var> forward(ad::Tape& tape, std::span<const ad::Var> input, ad::ParamHandle params) const;
  /// Records the forward pass treating the weights as constants; gradients
  /// still flow to the inputs.
  std::vector<ad::Var> forward(ad::Tape& tape, std::span<const ad::Var> input) const;

  /// FNV-1a over the parameter bytes and layer sizes.
  std::uint64_t checksum() const;

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::vector<std::size_t> sizes_;
  Activation hidden_ = Activation::Tanh;
  Activation output_ = Activation::Identity;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;  // start of each layer's weights

  void check_input(std::size_t n) const;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(std::size_t parameter_count, AdamConfig cfg)
      : config(cfg), first_moment(parameter_count, 0.0), second_moment(parameter_count, 0.0) {}

  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

/// One bias-corrected Adam update. Throws TrainingDiverged carrying the index
/// of the first non-finite gradient component, leaving params and state
/// untouched.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace align_teleop
