#include "doctest.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "ftcrl/nn.hpp"
#include "ftcrl/rng.hpp"
#include "test_util.hpp"

using namespace ftcrl;
using nn::NetworkSpec;
using nn::OutputHead;
using nn::ParameterVector;

namespace {

NetworkSpec make_spec(std::vector<int> sizes, OutputHead head) {
  NetworkSpec s;
  s.layer_sizes = std::move(sizes);
  s.head = head;
  return s;
}

// Squared error against fixed targets, the workhorse objective for
// finite-difference checks.
class SquaredError : public nn::BatchObjective {
 public:
  SquaredError(std::vector<std::vector<double>> inputs, std::vector<std::vector<double>> targets)
      : inputs_(std::move(inputs)), targets_(std::move(targets)) {}

  std::size_t size() const override { return inputs_.size(); }
  std::span<const double> input(std::size_t i) const override { return inputs_[i]; }
  double sample_term(std::size_t i, std::span<const double> output,
                     std::span<double> d_output) const override {
    double term = 0.0;
    for (std::size_t o = 0; o < output.size(); ++o) {
      const double e = output[o] - targets_[i][o];
      term += e * e;
      d_output[o] = 2.0 * e;
    }
    return term;
  }

 private:
  std::vector<std::vector<double>> inputs_;
  std::vector<std::vector<double>> targets_;
};

class ConstantObjective : public nn::BatchObjective {
 public:
  explicit ConstantObjective(double value) : value_(value) {}
  std::size_t size() const override { return 0; }
  std::span<const double> input(std::size_t) const override { return {}; }
  double sample_term(std::size_t, std::span<const double>, std::span<double>) const override {
    return 0.0;
  }
  double param_term(std::span<const double>, std::span<double>) const override { return value_; }

 private:
  double value_;
};

class HalfNormSquared : public nn::BatchObjective {
 public:
  std::size_t size() const override { return 0; }
  std::span<const double> input(std::size_t) const override { return {}; }
  double sample_term(std::size_t, std::span<const double>, std::span<double>) const override {
    return 0.0;
  }
  double param_term(std::span<const double> params, std::span<double> d_params) const override {
    double v = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      v += 0.5 * params[i] * params[i];
      d_params[i] += params[i];
    }
    return v;
  }
};

std::vector<double> random_vec(std::mt19937_64& gen, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng::uniform(gen, lo, hi);
  return v;
}

}  // namespace

TEST_CASE("network spec parameter counts") {
  CHECK(make_spec({4, 32, 32, 1}, OutputHead::sigmoid).param_count() == 1249);
  CHECK(make_spec({6, 64, 64, 6}, OutputHead::sigmoid).param_count() == 6 * 64 + 64 + 64 * 64 + 64 + 64 * 6 + 6);
  CHECK(make_spec({1, 1, 1}, OutputHead::linear).param_count() == 4);

  const NetworkSpec spec = make_spec({3, 5, 2}, OutputHead::sigmoid);
  CHECK(ParameterVector::zeros(spec).values.size() == spec.param_count());
  CHECK(ParameterVector::random_init(spec, 7).values.size() == spec.param_count());

  CHECK_THROWS(make_spec({4, 1}, OutputHead::linear).validate());  // no hidden layer
  CHECK_THROWS(make_spec({4, 0, 1}, OutputHead::linear).validate());
  CHECK_THROWS(make_spec({}, OutputHead::linear).validate());
}

TEST_CASE("forward on zero parameters") {
  const std::vector<double> input = {0.3, -1.0, 2.0};
  auto linear = ParameterVector::zeros(make_spec({3, 4, 2}, OutputHead::linear));
  for (double y : nn::forward(linear, input)) CHECK(y == 0.0);

  auto sigm = ParameterVector::zeros(make_spec({3, 4, 2}, OutputHead::sigmoid));
  for (double y : nn::forward(sigm, input)) CHECK(y == 0.5);
}

TEST_CASE("forward matches hand evaluation on a one-unit chain") {
  // One hidden unit: y = w2 * tanh(w1 * x + b1) + b2.
  ParameterVector p = ParameterVector::zeros(make_spec({1, 1, 1}, OutputHead::linear));
  p.values = {1.0, 0.0, 1.0, 0.0};  // w1, b1, w2, b2
  const auto out = nn::forward(p, std::vector<double>{0.5});
  REQUIRE(out.size() == 1);
  CHECK(out[0] == std::tanh(0.5));
  CHECK(out[0] == doctest::Approx(0.46211715726000974).epsilon(1e-15));
}

TEST_CASE("forward is pure and rejects dimension mismatches") {
  const auto p = ParameterVector::random_init(make_spec({4, 8, 3}, OutputHead::sigmoid), 11);
  const std::vector<double> input = {0.1, -0.2, 0.3, -0.4};
  const auto a = nn::forward(p, input);
  const auto b = nn::forward(p, input);
  CHECK(a == b);
  for (double y : a) {
    CHECK(y > 0.0);
    CHECK(y < 1.0);
  }
  CHECK_THROWS_WITH_AS(nn::forward(p, std::vector<double>{1.0, 2.0}),
                       doctest::Contains("input size"), std::invalid_argument);
}

TEST_CASE("random_init is seeded and bounded by 1/sqrt(fan_in)") {
  const NetworkSpec spec = make_spec({9, 5, 2}, OutputHead::linear);
  const auto a = ParameterVector::random_init(spec, 42);
  const auto b = ParameterVector::random_init(spec, 42);
  const auto c = ParameterVector::random_init(spec, 43);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);

  const auto views = nn::layer_views<const double>(spec, a.values);
  for (const auto& layer : views) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.fan_in));
    for (double w : layer.weights) CHECK(std::fabs(w) <= bound);
    for (double bias : layer.biases) CHECK(std::fabs(bias) <= bound);
  }
}

TEST_CASE("gradient of a constant objective is zero") {
  const auto p = ParameterVector::random_init(make_spec({2, 3, 1}, OutputHead::linear), 5);
  double value = 0.0;
  const auto g = nn::gradient(p, ConstantObjective(3.5), &value);
  CHECK(value == 3.5);
  for (double gi : g) CHECK(gi == 0.0);
}

TEST_CASE("gradient of half the squared norm is the parameter vector") {
  const auto p = ParameterVector::random_init(make_spec({2, 3, 2}, OutputHead::sigmoid), 6);
  const auto g = nn::gradient(p, HalfNormSquared());
  REQUIRE(g.size() == p.values.size());
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == p.values[i]);
}

TEST_CASE("gradient matches finite differences on a two-hidden-layer net") {
  const NetworkSpec spec = make_spec({2, 4, 4, 1}, OutputHead::linear);
  const auto p = ParameterVector::random_init(spec, 17);
  SquaredError obj({{0.2, -0.4}, {1.0, 0.5}, {-0.7, 0.9}}, {{0.3}, {-0.2}, {0.8}});

  const auto analytic = nn::gradient(p, obj);
  const auto fd = testutil::fd_gradient(
      p, [&obj](const ParameterVector& q) { return nn::objective_value(q, obj); });
  CHECK(testutil::worst_mismatch(analytic, fd) == analytic.size());
}

TEST_CASE("gradient matches finite differences across random instances") {
  const std::vector<NetworkSpec> specs = {
      make_spec({2, 4, 4, 1}, OutputHead::linear),
      make_spec({3, 5, 2}, OutputHead::sigmoid),
      make_spec({4, 8, 3}, OutputHead::sigmoid),
      make_spec({2, 3, 3, 2}, OutputHead::linear),
  };
  std::mt19937_64 gen(99);
  int instances = 0;
  for (const NetworkSpec& spec : specs) {
    for (int rep = 0; rep < 6; ++rep) {
      const auto p = ParameterVector::random_init(spec, gen());
      std::vector<std::vector<double>> inputs;
      std::vector<std::vector<double>> targets;
      for (int s = 0; s < 3; ++s) {
        inputs.push_back(random_vec(gen, spec.input_size(), -1.0, 1.0));
        targets.push_back(random_vec(gen, spec.output_size(), -1.0, 1.0));
      }
      SquaredError obj(inputs, targets);
      const auto analytic = nn::gradient(p, obj);
      const auto fd = testutil::fd_gradient(
          p, [&obj](const ParameterVector& q) { return nn::objective_value(q, obj); });
      CHECK(testutil::worst_mismatch(analytic, fd) == analytic.size());
      ++instances;
    }
  }
  CHECK(instances >= 20);
}

TEST_CASE("gradient rejects a non-finite objective") {
  const auto p = ParameterVector::random_init(make_spec({2, 3, 1}, OutputHead::linear), 3);
  CHECK_THROWS_WITH_AS(nn::gradient(p, ConstantObjective(std::numeric_limits<double>::infinity())),
                       doctest::Contains("not finite"), std::runtime_error);
}

TEST_CASE("directional derivatives through dual numbers match finite differences") {
  const NetworkSpec spec = make_spec({3, 4, 2}, OutputHead::sigmoid);
  const auto p = ParameterVector::random_init(spec, 23);
  std::mt19937_64 gen(24);
  const std::vector<double> dir = random_vec(gen, p.values.size(), -1.0, 1.0);
  const std::vector<double> input = {0.4, -0.1, 0.7};

  std::vector<nn::Dual> dual_params(p.values.size());
  for (std::size_t i = 0; i < dual_params.size(); ++i)
    dual_params[i] = nn::Dual{p.values[i], dir[i]};
  nn::Workspace<nn::Dual> ws;
  const auto out = nn::forward_traced<nn::Dual>(spec, dual_params, input, ws);

  const double h = 1e-6;
  for (std::size_t o = 0; o < out.size(); ++o) {
    ParameterVector up = p;
    ParameterVector down = p;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      up.values[i] += h * dir[i];
      down.values[i] -= h * dir[i];
    }
    const double fd = (nn::forward(up, input)[o] - nn::forward(down, input)[o]) / (2.0 * h);
    CHECK(out[o].v == nn::forward(p, input)[o]);
    CHECK(out[o].d == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("adam leaves parameters unchanged on a zero gradient") {
  const auto p = ParameterVector::random_init(make_spec({2, 3, 1}, OutputHead::linear), 8);
  auto state = nn::AdamState::init(p.values.size(), 0.002);
  const auto [next, ns] = nn::adam_step(state, p, std::vector<double>(p.values.size(), 0.0),
                                        nn::Direction::descent);
  CHECK(next.values == p.values);
  CHECK(ns.step_count == 1);
  for (double m : ns.m) CHECK(m == 0.0);
  for (double v : ns.v) CHECK(v == 0.0);
}

TEST_CASE("adam first step matches the hand-evaluated formula") {
  NetworkSpec spec = make_spec({1, 1, 1}, OutputHead::linear);
  ParameterVector p = ParameterVector::zeros(spec);
  p.values = {0.25, -0.5, 1.5, 0.0};
  const std::vector<double> grad = {1.0, 1.0, 1.0, 1.0};
  auto state = nn::AdamState::init(p.values.size(), 0.002);

  // Hand recursion at t=1: m=0.1*g, v=0.001*g^2, bias-corrected by
  // (1-0.9) and (1-0.999), so the step is alpha*mhat/(sqrt(vhat)+eps).
  const double m = 0.1 * 1.0;
  const double v = 0.001 * 1.0;
  const double mhat = m / (1.0 - std::pow(0.9, 1.0));
  const double vhat = v / (1.0 - std::pow(0.999, 1.0));
  const double step = 0.002 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(step == doctest::Approx(0.002 / (1.0 + 1e-8)).epsilon(1e-9));

  const auto [next, ns] = nn::adam_step(state, p, grad, nn::Direction::descent);
  for (std::size_t i = 0; i < p.values.size(); ++i)
    CHECK(next.values[i] == doctest::Approx(p.values[i] - step).epsilon(1e-15));
  CHECK(ns.step_count == 1);
}

TEST_CASE("adam second step differs from the first on identical gradients") {
  ParameterVector p = ParameterVector::zeros(make_spec({1, 1, 1}, OutputHead::linear));
  const std::vector<double> grad = {1.0, 1.0, 1.0, 1.0};
  auto s0 = nn::AdamState::init(p.values.size(), 0.002);
  const auto [p1, s1] = nn::adam_step(s0, p, grad, nn::Direction::descent);
  const auto [p2, s2] = nn::adam_step(s1, p1, grad, nn::Direction::descent);
  const double d1 = p1.values[0] - p.values[0];
  const double d2 = p2.values[0] - p1.values[0];
  CHECK(d1 != d2);
  CHECK(s2.step_count == 2);

  // Independent two-step recursion.
  double m = 0.0, v = 0.0;
  double x = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * 1.0;
    v = 0.999 * v + 0.001 * 1.0;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    x -= 0.002 * mhat / (std::sqrt(vhat) + 1e-8);
  }
  CHECK(p2.values[0] == doctest::Approx(x).epsilon(1e-15));
}

TEST_CASE("adam ascent equals descent on the negated gradient bit-exactly") {
  std::mt19937_64 gen(31);
  const auto p = ParameterVector::random_init(make_spec({3, 4, 2}, OutputHead::sigmoid), 32);
  const auto grad = random_vec(gen, p.values.size(), -2.0, 2.0);
  std::vector<double> neg(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) neg[i] = -grad[i];

  auto state = nn::AdamState::init(p.values.size(), 0.01);
  const auto [up, s1] = nn::adam_step(state, p, grad, nn::Direction::ascent);
  const auto [dn, s2] = nn::adam_step(state, p, neg, nn::Direction::descent);
  CHECK(up.values == dn.values);
}

TEST_CASE("adam rejects mismatched lengths and non-finite gradients") {
  const auto p = ParameterVector::zeros(make_spec({1, 1, 1}, OutputHead::linear));
  auto state = nn::AdamState::init(p.values.size(), 0.002);
  CHECK_THROWS_AS(nn::adam_step(state, p, std::vector<double>{1.0}, nn::Direction::descent),
                  std::invalid_argument);
  std::vector<double> bad(p.values.size(), 0.0);
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(nn::adam_step(state, p, bad, nn::Direction::descent));
}

TEST_CASE("parameter serialization round-trips bit-exactly") {
  const auto p = ParameterVector::random_init(make_spec({4, 32, 32, 1}, OutputHead::sigmoid), 555);
  std::ostringstream out;
  nn::write_params(out, p);
  std::istringstream in(out.str());
  const auto q = nn::read_params(in, "buffer");
  CHECK(q.spec == p.spec);
  REQUIRE(q.values.size() == p.values.size());
  for (std::size_t i = 0; i < p.values.size(); ++i) CHECK(q.values[i] == p.values[i]);

  std::mt19937_64 gen(556);
  for (int rep = 0; rep < 100; ++rep) {
    const auto input = random_vec(gen, 4, -2.0, 2.0);
    CHECK(nn::forward(p, input) == nn::forward(q, input));
  }
}

TEST_CASE("corrupted parameter text names the broken value") {
  auto p = ParameterVector::random_init(make_spec({2, 3, 1}, OutputHead::linear), 77);
  std::ostringstream out;
  nn::write_params(out, p);
  std::string text = out.str();
  const std::string needle = nn::format_double(p.values[5]);
  const auto pos = text.find(needle);
  REQUIRE(pos != std::string::npos);
  text.replace(pos, needle.size(), "not-a-number");
  std::istringstream in(text);
  CHECK_THROWS_WITH_AS(nn::read_params(in, "broken.params"), doctest::Contains("value"),
                       std::runtime_error);
}

TEST_CASE("decimal formatting survives extreme doubles") {
  for (double x : {0.1, 1.0 / 3.0, -0.0, 1e-300, 4.9406564584124654e-324,
                   1.7976931348623157e308, 123456.789012345678}) {
    const double back = nn::parse_double(nn::format_double(x), "test");
    CHECK(std::signbit(back) == std::signbit(x));
    CHECK(back == x);
  }
}
