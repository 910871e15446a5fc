#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftcrl/dual.hpp"

namespace ftcrl::nn {

enum class OutputHead { linear, sigmoid };

std::string to_string(OutputHead head);
OutputHead head_from_string(const std::string& name);

// Fixed multilayer perceptron topology: tanh on hidden layers, the head on
// the last layer. layer_sizes includes the input width.
struct NetworkSpec {
  std::vector<int> layer_sizes;
  OutputHead head = OutputHead::linear;

  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  int layer_count() const { return static_cast<int>(layer_sizes.size()) - 1; }
  std::size_t param_count() const;
  void validate() const;

  bool operator==(const NetworkSpec&) const = default;
};

// Flat parameter array for one network. Layout per layer: weights row-major
// by output neuron (w[o * fan_in + i]), then biases.
struct ParameterVector {
  NetworkSpec spec;
  std::vector<double> values;

  static ParameterVector zeros(NetworkSpec spec);
  // Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer.
  static ParameterVector random_init(NetworkSpec spec, std::uint64_t seed);

  void validate() const;
};

template <class T>
struct LayerView {
  std::span<T> weights;
  std::span<T> biases;
  int fan_in = 0;
  int fan_out = 0;
};

template <class T>
std::vector<LayerView<T>> layer_views(const NetworkSpec& spec, std::span<T> values) {
  std::vector<LayerView<T>> views;
  std::size_t off = 0;
  for (int l = 1; l < static_cast<int>(spec.layer_sizes.size()); ++l) {
    int in = spec.layer_sizes[l - 1];
    int out = spec.layer_sizes[l];
    LayerView<T> v;
    v.weights = values.subspan(off, static_cast<std::size_t>(in) * out);
    off += static_cast<std::size_t>(in) * out;
    v.biases = values.subspan(off, out);
    off += out;
    v.fan_in = in;
    v.fan_out = out;
    views.push_back(v);
  }
  return views;
}

// Scratch buffers for one traced forward pass. post[0] is the input; post[l]
// holds layer l's post-activation output (after the head for the last layer).
template <class T>
struct Workspace {
  std::vector<std::vector<T>> post;
};

template <class T>
inline T sigmoid(T z) {
  using std::exp;
  if (z >= T(0.0)) {
    return T(1.0) / (T(1.0) + exp(-z));
  }
  T e = exp(z);
  return e / (T(1.0) + e);
}

template <class T>
std::span<const T> forward_traced(const NetworkSpec& spec, std::span<const T> params,
                                  std::span<const double> input, Workspace<T>& ws) {
  using std::tanh;
  int layers = spec.layer_count();
  ws.post.resize(layers + 1);
  ws.post[0].assign(input.begin(), input.end());
  std::size_t off = 0;
  for (int l = 1; l <= layers; ++l) {
    int in = spec.layer_sizes[l - 1];
    int out = spec.layer_sizes[l];
    const std::vector<T>& x = ws.post[l - 1];
    std::vector<T>& y = ws.post[l];
    y.assign(out, T(0.0));
    for (int o = 0; o < out; ++o) {
      T z = params[off + static_cast<std::size_t>(in) * out + o];  // bias
      const T* w = params.data() + off + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) z += w[i] * x[i];
      if (l < layers) {
        y[o] = tanh(z);
      } else if (spec.head == OutputHead::sigmoid) {
        y[o] = sigmoid(z);
      } else {
        y[o] = z;
      }
    }
    off += static_cast<std::size_t>(in) * out + out;
  }
  return ws.post[layers];
}

// Accumulates d(loss)/d(params) into d_params given d(loss)/d(outputs).
// Requires the workspace of a previous forward_traced call on `params`.
template <class T>
void backprop(const NetworkSpec& spec, std::span<const T> params, const Workspace<T>& ws,
              std::span<const T> d_output, std::span<T> d_params) {
  int layers = spec.layer_count();
  std::vector<T> delta(d_output.begin(), d_output.end());
  // Head derivative: sigmoid y(1-y); linear passes through.
  if (spec.head == OutputHead::sigmoid) {
    const std::vector<T>& y = ws.post[layers];
    for (std::size_t o = 0; o < delta.size(); ++o) delta[o] *= y[o] * (T(1.0) - y[o]);
  }
  std::size_t off = params.size();
  std::vector<T> prev;
  for (int l = layers; l >= 1; --l) {
    int in = spec.layer_sizes[l - 1];
    int out = spec.layer_sizes[l];
    off -= static_cast<std::size_t>(in) * out + out;
    const std::vector<T>& x = ws.post[l - 1];
    for (int o = 0; o < out; ++o) {
      d_params[off + static_cast<std::size_t>(in) * out + o] += delta[o];
      T* dw = d_params.data() + off + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) dw[i] += delta[o] * x[i];
    }
    if (l > 1) {
      prev.assign(in, T(0.0));
      for (int o = 0; o < out; ++o) {
        const T* w = params.data() + off + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) prev[i] += w[i] * delta[o];
      }
      // tanh'(z) = 1 - y^2 at the previous layer's stored output.
      for (int i = 0; i < in; ++i) prev[i] *= T(1.0) - x[i] * x[i];
      delta = prev;
    }
  }
}

std::vector<double> forward(const ParameterVector& params, std::span<const double> input);

// A differentiable scalar objective over one network: a batch of inputs plus,
// per sample, the objective term and its derivative with respect to the
// network outputs. Terms acting on the parameters directly (penalties,
// constants) go through param_term.
class BatchObjective {
 public:
  virtual ~BatchObjective() = default;
  virtual std::size_t size() const = 0;
  virtual std::span<const double> input(std::size_t i) const = 0;
  // Returns the term's value and writes d(term)/d(output) to d_output.
  virtual double sample_term(std::size_t i, std::span<const double> output,
                             std::span<double> d_output) const = 0;
  virtual double param_term(std::span<const double> params, std::span<double> d_params) const;
};

double objective_value(const ParameterVector& params, const BatchObjective& objective);
// Reverse-mode gradient of the objective with respect to the parameters.
std::vector<double> gradient(const ParameterVector& params, const BatchObjective& objective,
                             double* value_out = nullptr);

enum class Direction { descent, ascent };

// Adam with bias correction; epsilon sits outside the square root.
struct AdamState {
  double alpha = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  std::vector<double> m;
  std::vector<double> v;

  static AdamState init(std::size_t size, double alpha, double beta1 = 0.9,
                        double beta2 = 0.999);
  void validate(std::size_t param_count) const;
};

std::pair<ParameterVector, AdamState> adam_step(const AdamState& state,
                                                const ParameterVector& params,
                                                std::span<const double> grad,
                                                Direction direction);

// High-precision decimal text encoding; round-trips doubles bit-exactly.
void write_params(std::ostream& out, const ParameterVector& params);
ParameterVector read_params(std::istream& in, const std::string& source_name = "<stream>");

std::string format_double(double x);
double parse_double(const std::string& text, const std::string& context);

}  // namespace ftcrl::nn
