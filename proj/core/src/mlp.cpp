#include "align_teleop/mlp.hpp"

#include <cmath>

#include "align_teleop/error.hpp"

namespace align_teleop {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw InvalidInput("unknown activation '" + s + "'");
}

Mlp::Mlp(std::vector<std::size_t> layer_sizes, Activation hidden, Activation output)
    : sizes_(std::move(layer_sizes)), hidden_(hidden), output_(output) {
  if (sizes_.size() < 2) throw InvalidInput("an MLP needs at least an input and an output layer");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] == 0 || sizes_[l + 1] == 0) throw InvalidInput("layer sizes must be positive");
    offsets_.push_back(total);
    total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_.assign(total, 0.0);
}

Mlp Mlp::xavier(std::vector<std::size_t> layer_sizes, std::mt19937_64& rng, Activation hidden,
                Activation output) {
  Mlp net(std::move(layer_sizes), hidden, output);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double fan = static_cast<double>(net.sizes_[l] + net.sizes_[l + 1]);
    std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan), std::sqrt(6.0 / fan));
    for (double& w : net.weights(l)) w = dist(rng);
  }
  return net;
}

std::span<double> Mlp::weights(std::size_t l) {
  return {params_.data() + offsets_.at(l), sizes_[l] * sizes_[l + 1]};
}
std::span<const double> Mlp::weights(std::size_t l) const {
  return {params_.data() + offsets_.at(l), sizes_[l] * sizes_[l + 1]};
}
std::span<double> Mlp::biases(std::size_t l) {
  return {params_.data() + offsets_.at(l) + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
}
std::span<const double> Mlp::biases(std::size_t l) const {
  return {params_.data() + offsets_.at(l) + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
}

void Mlp::check_input(std::size_t n) const {
  if (sizes_.empty()) throw InvalidInput("empty network");
  if (n != input_size()) throw DimensionMismatch("mlp input", input_size(), n);
}

std::vector<double> Mlp::operator()(std::span<const double> input) const {
  check_input(input.size());
  std::vector<double> x(input.begin(), input.end());
  std::vector<double> y;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t in = sizes_[l];
    const std::size_t out = sizes_[l + 1];
    const auto w = weights(l);
    const auto b = biases(l);
    const bool last = l + 1 == layer_count();
    const Activation act = last ? output_ : hidden_;
    y.assign(out, 0.0);
    for (std::size_t i = 0; i < out; ++i) {
      double acc = b[i];
      for (std::size_t j = 0; j < in; ++j) acc += w[i * in + j] * x[j];
      y[i] = act == Activation::Tanh ? std::tanh(acc) : acc;
    }
    x.swap(y);
  }
  return x;
}

namespace {

std::vector<ad::Var> activate(ad::Tape& tape, std::vector<ad::Var> v, Activation act) {
  if (act == Activation::Tanh) {
    for (auto& x : v) x = tape.tanh(x);
  }
  return v;
}

}  // namespace

std::vector<ad::Var> Mlp::forward(ad::Tape& tape, std::span<const ad::Var> input,
                                  ad::ParamHandle params) const {
  check_input(input.size());
  if (params.size != params_.size()) throw DimensionMismatch("mlp parameter handle", params_.size(), params.size);
  std::vector<ad::Var> x(input.begin(), input.end());
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t w_off = offsets_[l];
    const std::size_t b_off = w_off + sizes_[l] * sizes_[l + 1];
    auto y = tape.affine(x, params, w_off, b_off, sizes_[l + 1]);
    x = activate(tape, std::move(y), l + 1 == layer_count() ? output_ : hidden_);
  }
  return x;
}

std::vector<ad::Var> Mlp::forward(ad::Tape& tape, std::span<const ad::Var> input) const {
  check_input(input.size());
  std::vector<ad::Var> x(input.begin(), input.end());
  for (std::size_t l = 0; l < layer_count(); ++l) {
    auto y = tape.affine_frozen(x, weights(l).data(), biases(l).data(), sizes_[l + 1]);
    x = activate(tape, std::move(y), l + 1 == layer_count() ? output_ : hidden_);
  }
  return x;
}

std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t Mlp::checksum() const {
  std::uint64_t h = fnv1a(std::as_bytes(std::span(sizes_)));
  return fnv1a(std::as_bytes(std::span(params_)), h);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size()) throw DimensionMismatch("adam gradient", params.size(), grads.size());
  if (state.first_moment.size() != params.size()) {
    throw DimensionMismatch("adam state", params.size(), state.first_moment.size());
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) throw TrainingDiverged("non-finite gradient component", i);
  }
  const AdamConfig& c = state.config;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    params[i] -= c.learning_rate * (m / bias1) / (std::sqrt(v / bias2) + c.epsilon);
  }
}

}  // namespace align_teleop
