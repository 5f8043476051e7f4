#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mcbench {

enum class Activation { Relu, Tanh, Linear };

Activation activation_from_tag(const std::string& tag);
std::string activation_tag(Activation a);

// Auxiliary input spliced into one affine layer: the vector is concatenated
// to that layer's input before the affine map. The critic injects the action
// after its first hidden layer this way.
struct Injection {
  std::size_t layer;  // affine layer index, 0-based
  std::size_t width;
};

// Intermediates of one forward pass; holds exactly what a backward pass needs.
struct ForwardTrace {
  std::vector<std::vector<double>> inputs;    // per affine layer, after concat
  std::vector<std::vector<double>> preacts;   // per affine layer
  std::vector<double> output;
};

// Parameter gradients mirroring the owning net's weight/bias shapes, plus the
// gradient with respect to the auxiliary input when the net declares one.
struct GradientSet {
  std::vector<std::vector<double>> weight_grads;
  std::vector<std::vector<double>> bias_grads;
  std::vector<double> aux_grad;

  void scale(double factor);
  void accumulate(const GradientSet& other);
  void set_zero();
};

// Dense feed-forward network with per-layer activations. Weight matrices are
// row-major (out x in). Parameters flatten layer by layer, weights then
// biases, which is also the checkpoint and optimizer vector ordering.
class Mlp {
 public:
  Mlp(std::vector<std::size_t> layer_sizes, std::vector<Activation> activations,
      std::uint64_t seed, std::optional<Injection> injection = std::nullopt);

  const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }
  const std::vector<Activation>& activations() const { return activations_; }
  const std::optional<Injection>& injection() const { return injection_; }
  std::size_t affine_layer_count() const { return weights_.size(); }
  std::size_t input_size() const { return layer_sizes_.front(); }
  std::size_t output_size() const { return layer_sizes_.back(); }
  std::size_t param_count() const;

  const std::vector<double>& weights(std::size_t layer) const { return weights_[layer]; }
  const std::vector<double>& biases(std::size_t layer) const { return biases_[layer]; }

  // Fills `trace` in place (buffers are reused across calls) and returns a
  // reference to the output stored inside it.
  const std::vector<double>& forward(const std::vector<double>& input,
                                     const std::vector<double>& aux,
                                     ForwardTrace& trace) const;
  std::vector<double> forward(const std::vector<double>& input,
                              const std::vector<double>& aux = {}) const;

  // Exact reverse-mode gradients for all parameters and, when the net has an
  // injection, for the auxiliary input. `grads` is overwritten.
  void backward(const ForwardTrace& trace, const std::vector<double>& output_grad,
                GradientSet& grads) const;
  GradientSet backward(const ForwardTrace& trace,
                       const std::vector<double>& output_grad) const;

  // theta <- theta - learning_rate * grad
  void sgd_step(const GradientSet& grads, double learning_rate);

  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& params);

  GradientSet make_gradients() const;

  void save(const std::string& path) const;
  static Mlp load(const std::string& path);

 private:
  std::size_t layer_input_size(std::size_t layer) const;

  std::vector<std::size_t> layer_sizes_;
  std::vector<Activation> activations_;
  std::optional<Injection> injection_;
  std::vector<std::vector<double>> weights_;  // per layer, row-major out x in
  std::vector<std::vector<double>> biases_;   // per layer
};

}  // namespace mcbench
