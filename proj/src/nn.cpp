#include "mcbench/nn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mcbench/rng.hpp"

namespace mcbench {

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Linear: return z;
  }
  return z;
}

// Derivative expressed through the post-activation value. relu'(0) is 0.
double activate_deriv(Activation a, double post) {
  switch (a) {
    case Activation::Relu: return post > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - post * post;
    case Activation::Linear: return 1.0;
  }
  return 1.0;
}

void format_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> parts;
  std::string item;
  std::stringstream ss(line);
  while (std::getline(ss, item, ',')) parts.push_back(item);
  return parts;
}

}  // namespace

Activation activation_from_tag(const std::string& tag) {
  if (tag == "relu") return Activation::Relu;
  if (tag == "tanh") return Activation::Tanh;
  if (tag == "linear") return Activation::Linear;
  throw std::invalid_argument("unknown activation tag '" + tag + "'");
}

std::string activation_tag(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Linear: return "linear";
  }
  return "linear";
}

void GradientSet::scale(double factor) {
  for (auto& wg : weight_grads)
    for (double& g : wg) g *= factor;
  for (auto& bg : bias_grads)
    for (double& g : bg) g *= factor;
  for (double& g : aux_grad) g *= factor;
}

void GradientSet::accumulate(const GradientSet& other) {
  if (other.weight_grads.size() != weight_grads.size())
    throw std::invalid_argument("gradient accumulate: shape mismatch");
  for (std::size_t l = 0; l < weight_grads.size(); ++l) {
    if (other.weight_grads[l].size() != weight_grads[l].size() ||
        other.bias_grads[l].size() != bias_grads[l].size())
      throw std::invalid_argument("gradient accumulate: shape mismatch");
    for (std::size_t i = 0; i < weight_grads[l].size(); ++i)
      weight_grads[l][i] += other.weight_grads[l][i];
    for (std::size_t i = 0; i < bias_grads[l].size(); ++i)
      bias_grads[l][i] += other.bias_grads[l][i];
  }
  if (other.aux_grad.size() != aux_grad.size())
    throw std::invalid_argument("gradient accumulate: shape mismatch");
  for (std::size_t i = 0; i < aux_grad.size(); ++i) aux_grad[i] += other.aux_grad[i];
}

void GradientSet::set_zero() {
  for (auto& wg : weight_grads) std::fill(wg.begin(), wg.end(), 0.0);
  for (auto& bg : bias_grads) std::fill(bg.begin(), bg.end(), 0.0);
  std::fill(aux_grad.begin(), aux_grad.end(), 0.0);
}

Mlp::Mlp(std::vector<std::size_t> layer_sizes, std::vector<Activation> activations,
         std::uint64_t seed, std::optional<Injection> injection)
    : layer_sizes_(std::move(layer_sizes)),
      activations_(std::move(activations)),
      injection_(injection) {
  if (layer_sizes_.size() < 2)
    throw std::invalid_argument("network needs at least two layers");
  if (activations_.size() != layer_sizes_.size() - 1)
    throw std::invalid_argument("activation list length must be layer count - 1");
  for (std::size_t s : layer_sizes_)
    if (s == 0) throw std::invalid_argument("layer sizes must be positive");
  if (injection_) {
    if (injection_->layer >= layer_sizes_.size() - 1)
      throw std::invalid_argument("injection layer out of range");
    if (injection_->width == 0)
      throw std::invalid_argument("injection width must be positive");
  }

  const std::size_t n_layers = layer_sizes_.size() - 1;
  weights_.resize(n_layers);
  biases_.resize(n_layers);
  Rng rng(seed);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t in = layer_input_size(l);
    const std::size_t out = layer_sizes_[l + 1];
    // Small uniform init: +-1/sqrt(fan_in) for hidden layers, +-3e-3 for the
    // final layer so initial outputs stay near zero.
    const double bound =
        (l + 1 == n_layers) ? 3e-3 : 1.0 / std::sqrt(static_cast<double>(in));
    weights_[l].resize(out * in);
    biases_[l].resize(out);
    for (double& w : weights_[l]) w = rng.uniform(-bound, bound);
    for (double& b : biases_[l]) b = rng.uniform(-bound, bound);
  }
}

std::size_t Mlp::layer_input_size(std::size_t layer) const {
  std::size_t in = layer_sizes_[layer];
  if (injection_ && injection_->layer == layer) in += injection_->width;
  return in;
}

std::size_t Mlp::param_count() const {
  std::size_t count = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l)
    count += weights_[l].size() + biases_[l].size();
  return count;
}

const std::vector<double>& Mlp::forward(const std::vector<double>& input,
                                        const std::vector<double>& aux,
                                        ForwardTrace& trace) const {
  if (input.size() != layer_sizes_.front())
    throw std::invalid_argument("forward: input width mismatch");
  if (injection_) {
    if (aux.size() != injection_->width)
      throw std::invalid_argument("forward: auxiliary input width mismatch");
  } else if (!aux.empty()) {
    throw std::invalid_argument("forward: net declares no auxiliary input");
  }

  const std::size_t n_layers = weights_.size();
  trace.inputs.resize(n_layers);
  trace.preacts.resize(n_layers);

  trace.inputs[0].assign(input.begin(), input.end());
  if (injection_ && injection_->layer == 0)
    trace.inputs[0].insert(trace.inputs[0].end(), aux.begin(), aux.end());

  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::vector<double>& u = trace.inputs[l];
    const std::size_t in = u.size();
    const std::size_t out = layer_sizes_[l + 1];
    std::vector<double>& z = trace.preacts[l];
    z.resize(out);
    const double* w = weights_[l].data();
    for (std::size_t i = 0; i < out; ++i) {
      double acc = biases_[l][i];
      const double* row = w + i * in;
      for (std::size_t j = 0; j < in; ++j) acc += row[j] * u[j];
      z[i] = acc;
    }
    std::vector<double>& h = (l + 1 < n_layers) ? trace.inputs[l + 1] : trace.output;
    h.resize(out);
    const Activation act = activations_[l];
    for (std::size_t i = 0; i < out; ++i) h[i] = activate(act, z[i]);
    if (l + 1 < n_layers && injection_ && injection_->layer == l + 1)
      h.insert(h.end(), aux.begin(), aux.end());
  }
  return trace.output;
}

std::vector<double> Mlp::forward(const std::vector<double>& input,
                                 const std::vector<double>& aux) const {
  ForwardTrace trace;
  return forward(input, aux, trace);
}

void Mlp::backward(const ForwardTrace& trace, const std::vector<double>& output_grad,
                   GradientSet& grads) const {
  const std::size_t n_layers = weights_.size();
  if (trace.inputs.size() != n_layers || trace.preacts.size() != n_layers)
    throw std::invalid_argument("backward: trace does not match this net");
  if (trace.output.size() != layer_sizes_.back() ||
      output_grad.size() != layer_sizes_.back())
    throw std::invalid_argument("backward: output gradient width mismatch");
  for (std::size_t l = 0; l < n_layers; ++l)
    if (trace.inputs[l].size() != layer_input_size(l) ||
        trace.preacts[l].size() != layer_sizes_[l + 1])
      throw std::invalid_argument("backward: trace does not match this net");

  grads.weight_grads.resize(n_layers);
  grads.bias_grads.resize(n_layers);
  grads.aux_grad.assign(injection_ ? injection_->width : 0, 0.0);

  // Scratch kept across calls; backward runs in tight per-sample loops.
  thread_local std::vector<double> delta;
  thread_local std::vector<double> delta_prev;

  delta.assign(output_grad.begin(), output_grad.end());
  for (std::size_t li = n_layers; li-- > 0;) {
    const std::vector<double>& u = trace.inputs[li];
    const std::size_t in = u.size();
    const std::size_t out = layer_sizes_[li + 1];
    const Activation act = activations_[li];
    const std::vector<double>& post =
        (li + 1 < n_layers) ? trace.inputs[li + 1] : trace.output;

    std::vector<double>& wg = grads.weight_grads[li];
    std::vector<double>& bg = grads.bias_grads[li];
    wg.resize(out * in);
    bg.resize(out);

    // delta through the activation, then weight/bias gradients
    for (std::size_t i = 0; i < out; ++i) {
      const double dz = delta[i] * activate_deriv(act, post[i]);
      bg[i] = dz;
      double* row = wg.data() + i * in;
      for (std::size_t j = 0; j < in; ++j) row[j] = dz * u[j];
    }

    delta_prev.assign(in, 0.0);
    const double* w = weights_[li].data();
    for (std::size_t i = 0; i < out; ++i) {
      const double dz = bg[i];
      const double* row = w + i * in;
      for (std::size_t j = 0; j < in; ++j) delta_prev[j] += row[j] * dz;
    }

    if (injection_ && injection_->layer == li) {
      const std::size_t base = layer_sizes_[li];
      for (std::size_t k = 0; k < injection_->width; ++k)
        grads.aux_grad[k] = delta_prev[base + k];
      delta_prev.resize(base);
    }
    delta.swap(delta_prev);
  }
}

GradientSet Mlp::backward(const ForwardTrace& trace,
                          const std::vector<double>& output_grad) const {
  GradientSet grads;
  backward(trace, output_grad, grads);
  return grads;
}

void Mlp::sgd_step(const GradientSet& grads, double learning_rate) {
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("sgd_step: learning rate must be positive");
  if (grads.weight_grads.size() != weights_.size())
    throw std::invalid_argument("sgd_step: gradient shape mismatch");
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (grads.weight_grads[l].size() != weights_[l].size() ||
        grads.bias_grads[l].size() != biases_[l].size())
      throw std::invalid_argument("sgd_step: gradient shape mismatch");
    for (std::size_t i = 0; i < weights_[l].size(); ++i)
      weights_[l][i] -= learning_rate * grads.weight_grads[l][i];
    for (std::size_t i = 0; i < biases_[l].size(); ++i)
      biases_[l][i] -= learning_rate * grads.bias_grads[l][i];
  }
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    flat.insert(flat.end(), weights_[l].begin(), weights_[l].end());
    flat.insert(flat.end(), biases_[l].begin(), biases_[l].end());
  }
  return flat;
}

void Mlp::unflatten(const std::vector<double>& params) {
  if (params.size() != param_count())
    throw std::invalid_argument("unflatten: expected " + std::to_string(param_count()) +
                                " parameters, got " + std::to_string(params.size()));
  std::size_t pos = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    std::copy(params.begin() + pos, params.begin() + pos + weights_[l].size(),
              weights_[l].begin());
    pos += weights_[l].size();
    std::copy(params.begin() + pos, params.begin() + pos + biases_[l].size(),
              biases_[l].begin());
    pos += biases_[l].size();
  }
}

GradientSet Mlp::make_gradients() const {
  GradientSet grads;
  grads.weight_grads.resize(weights_.size());
  grads.bias_grads.resize(biases_.size());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    grads.weight_grads[l].assign(weights_[l].size(), 0.0);
    grads.bias_grads[l].assign(biases_[l].size(), 0.0);
  }
  grads.aux_grad.assign(injection_ ? injection_->width : 0, 0.0);
  return grads;
}

// Checkpoint layout: layer sizes, activation tags, injection layer index (or
// "none"), then the flat parameter vector, one comma-separated line each.
void Mlp::save(const std::string& path) const {
  std::string text;
  for (std::size_t i = 0; i < layer_sizes_.size(); ++i) {
    if (i) text += ',';
    text += std::to_string(layer_sizes_[i]);
  }
  text += '\n';
  for (std::size_t i = 0; i < activations_.size(); ++i) {
    if (i) text += ',';
    text += activation_tag(activations_[i]);
  }
  text += '\n';
  text += injection_ ? std::to_string(injection_->layer) : "none";
  text += '\n';
  const std::vector<double> flat = flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (i) text += ',';
    format_double(text, flat[i]);
  }
  text += '\n';

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint file '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

Mlp Mlp::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint file '" + path + "'");
  std::string sizes_line, acts_line, inj_line, params_line;
  if (!std::getline(in, sizes_line) || !std::getline(in, acts_line) ||
      !std::getline(in, inj_line) || !std::getline(in, params_line))
    throw std::runtime_error("malformed checkpoint '" + path + "'");

  std::vector<std::size_t> sizes;
  for (const std::string& s : split_csv_line(sizes_line)) {
    const long v = std::stol(s);
    if (v <= 0) throw std::runtime_error("malformed checkpoint '" + path + "'");
    sizes.push_back(static_cast<std::size_t>(v));
  }
  std::vector<Activation> acts;
  for (const std::string& s : split_csv_line(acts_line)) acts.push_back(activation_from_tag(s));

  std::vector<double> params;
  for (const std::string& s : split_csv_line(params_line)) params.push_back(std::stod(s));

  std::optional<Injection> injection;
  if (inj_line != "none") {
    const long idx = std::stol(inj_line);
    if (idx < 0 || static_cast<std::size_t>(idx) >= sizes.size() - 1)
      throw std::runtime_error("checkpoint injection index out of range");
    // The aux width is not stored; recover it from the parameter count.
    std::size_t base_count = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
      base_count += sizes[l + 1] * sizes[l] + sizes[l + 1];
    const std::size_t out_inj = sizes[idx + 1];
    if (params.size() < base_count || (params.size() - base_count) % out_inj != 0)
      throw std::runtime_error("checkpoint parameter count inconsistent with header");
    const std::size_t width = (params.size() - base_count) / out_inj;
    if (width == 0) throw std::runtime_error("checkpoint parameter count inconsistent with header");
    injection = Injection{static_cast<std::size_t>(idx), width};
  }

  Mlp net(sizes, acts, 0, injection);
  net.unflatten(params);
  return net;
}

}  // namespace mcbench
