#include "ftcrl/nn.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "ftcrl/rng.hpp"

namespace ftcrl::nn {

std::string to_string(OutputHead head) {
  return head == OutputHead::sigmoid ? "sigmoid" : "linear";
}

OutputHead head_from_string(const std::string& name) {
  if (name == "sigmoid") return OutputHead::sigmoid;
  if (name == "linear") return OutputHead::linear;
  throw std::invalid_argument("unknown output head '" + name + "'");
}

std::size_t NetworkSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) {
    n += static_cast<std::size_t>(layer_sizes[l - 1] + 1) * layer_sizes[l];
  }
  return n;
}

void NetworkSpec::validate() const {
  if (layer_sizes.size() < 3) {
    throw std::invalid_argument("network needs at least one hidden layer");
  }
  for (int s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("layer sizes must be positive");
  }
}

ParameterVector ParameterVector::zeros(NetworkSpec spec) {
  spec.validate();
  std::size_t n = spec.param_count();
  return ParameterVector{std::move(spec), std::vector<double>(n, 0.0)};
}

ParameterVector ParameterVector::random_init(NetworkSpec spec, std::uint64_t seed) {
  ParameterVector p = zeros(std::move(spec));
  std::mt19937_64 gen(seed);
  auto views = layer_views<double>(p.spec, std::span<double>(p.values));
  for (auto& layer : views) {
    double bound = 1.0 / std::sqrt(static_cast<double>(layer.fan_in));
    for (double& w : layer.weights) w = rng::uniform(gen, -bound, bound);
    for (double& b : layer.biases) b = rng::uniform(gen, -bound, bound);
  }
  return p;
}

void ParameterVector::validate() const {
  spec.validate();
  if (values.size() != spec.param_count()) {
    throw std::invalid_argument("parameter vector length " + std::to_string(values.size()) +
                                " does not match spec count " +
                                std::to_string(spec.param_count()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw std::invalid_argument("parameter " + std::to_string(i) + " is not finite");
    }
  }
}

std::vector<double> forward(const ParameterVector& params, std::span<const double> input) {
  if (static_cast<int>(input.size()) != params.spec.input_size()) {
    throw std::invalid_argument("input size " + std::to_string(input.size()) +
                                " does not match network input " +
                                std::to_string(params.spec.input_size()));
  }
  if (params.values.size() != params.spec.param_count()) {
    throw std::invalid_argument("parameter vector length does not match spec");
  }
  Workspace<double> ws;
  auto out = forward_traced<double>(params.spec, params.values, input, ws);
  return std::vector<double>(out.begin(), out.end());
}

double BatchObjective::param_term(std::span<const double>, std::span<double>) const {
  return 0.0;
}

double objective_value(const ParameterVector& params, const BatchObjective& objective) {
  Workspace<double> ws;
  std::vector<double> d_out(params.spec.output_size());
  double total = 0.0;
  for (std::size_t i = 0; i < objective.size(); ++i) {
    auto out = forward_traced<double>(params.spec, params.values, objective.input(i), ws);
    std::vector<double> out_copy(out.begin(), out.end());
    total += objective.sample_term(i, out_copy, d_out);
  }
  std::vector<double> d_params(params.values.size(), 0.0);
  total += objective.param_term(params.values, d_params);
  return total;
}

std::vector<double> gradient(const ParameterVector& params, const BatchObjective& objective,
                             double* value_out) {
  Workspace<double> ws;
  std::vector<double> grad(params.values.size(), 0.0);
  std::vector<double> d_out(params.spec.output_size());
  double total = 0.0;
  for (std::size_t i = 0; i < objective.size(); ++i) {
    auto out = forward_traced<double>(params.spec, params.values, objective.input(i), ws);
    std::vector<double> out_copy(out.begin(), out.end());
    std::fill(d_out.begin(), d_out.end(), 0.0);
    total += objective.sample_term(i, out_copy, d_out);
    backprop<double>(params.spec, params.values, ws, d_out, grad);
  }
  total += objective.param_term(params.values, grad);
  if (!std::isfinite(total)) {
    throw std::runtime_error("objective value is not finite: " + format_double(total));
  }
  if (value_out) *value_out = total;
  return grad;
}

AdamState AdamState::init(std::size_t size, double alpha, double beta1, double beta2) {
  AdamState s;
  s.alpha = alpha;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.m.assign(size, 0.0);
  s.v.assign(size, 0.0);
  return s;
}

void AdamState::validate(std::size_t param_count) const {
  if (m.size() != param_count || v.size() != param_count) {
    throw std::invalid_argument("optimizer state size does not match parameter count");
  }
  if (alpha < 0.0 || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw std::invalid_argument("invalid Adam hyperparameters");
  }
}

std::pair<ParameterVector, AdamState> adam_step(const AdamState& state,
                                                const ParameterVector& params,
                                                std::span<const double> grad,
                                                Direction direction) {
  state.validate(params.values.size());
  if (grad.size() != params.values.size()) {
    throw std::invalid_argument("gradient length " + std::to_string(grad.size()) +
                                " does not match parameter count " +
                                std::to_string(params.values.size()));
  }
  ParameterVector next = params;
  AdamState ns = state;
  ns.step_count = state.step_count + 1;
  double bc1 = 1.0 - std::pow(ns.beta1, static_cast<double>(ns.step_count));
  double bc2 = 1.0 - std::pow(ns.beta2, static_cast<double>(ns.step_count));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    // Ascent on an objective is exactly descent on its negation.
    double g = direction == Direction::descent ? grad[i] : -grad[i];
    ns.m[i] = ns.beta1 * ns.m[i] + (1.0 - ns.beta1) * g;
    ns.v[i] = ns.beta2 * ns.v[i] + (1.0 - ns.beta2) * g * g;
    double m_hat = ns.m[i] / bc1;
    double v_hat = ns.v[i] / bc2;
    next.values[i] -= ns.alpha * m_hat / (std::sqrt(v_hat) + ns.epsilon);
    if (!std::isfinite(next.values[i])) {
      throw std::runtime_error("parameter " + std::to_string(i) +
                               " became non-finite after optimizer step");
    }
  }
  return {std::move(next), std::move(ns)};
}

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& context) {
  double out = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc() || res.ptr != last) {
    throw std::runtime_error(context + ": not a decimal number: '" + text + "'");
  }
  if (!std::isfinite(out)) {
    throw std::runtime_error(context + ": value is not finite: '" + text + "'");
  }
  return out;
}

void write_params(std::ostream& out, const ParameterVector& params) {
  params.validate();
  out << "ftcrl-params 1\n";
  out << "layers";
  for (int s : params.spec.layer_sizes) out << ' ' << s;
  out << '\n';
  out << "head " << to_string(params.spec.head) << '\n';
  out << "count " << params.values.size() << '\n';
  for (double v : params.values) out << format_double(v) << '\n';
}

ParameterVector read_params(std::istream& in, const std::string& source_name) {
  auto fail = [&](const std::string& msg) -> std::runtime_error {
    return std::runtime_error(source_name + ": " + msg);
  };
  std::string line;
  if (!std::getline(in, line) || line != "ftcrl-params 1") {
    throw fail("missing or unsupported header");
  }
  if (!std::getline(in, line) || line.rfind("layers ", 0) != 0) {
    throw fail("missing layers line");
  }
  NetworkSpec spec;
  {
    std::istringstream ls(line.substr(7));
    int s;
    while (ls >> s) spec.layer_sizes.push_back(s);
  }
  if (!std::getline(in, line) || line.rfind("head ", 0) != 0) {
    throw fail("missing head line");
  }
  spec.head = head_from_string(line.substr(5));
  spec.validate();
  if (!std::getline(in, line) || line.rfind("count ", 0) != 0) {
    throw fail("missing count line");
  }
  std::size_t count = 0;
  {
    std::istringstream cs(line.substr(6));
    if (!(cs >> count)) throw fail("bad count line");
  }
  if (count != spec.param_count()) {
    throw fail("count " + std::to_string(count) + " does not match topology count " +
               std::to_string(spec.param_count()));
  }
  ParameterVector params{spec, {}};
  params.values.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) {
      throw fail("value " + std::to_string(i) + ": unexpected end of data");
    }
    params.values.push_back(
        parse_double(line, source_name + ": value " + std::to_string(i)));
  }
  return params;
}

}  // namespace ftcrl::nn
