#include "ftcrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ftcrl/rng.hpp"

namespace ftcrl::env {

std::string to_string(Kind kind) {
  return kind == Kind::cartpole ? "cartpole" : "fueltank";
}

Kind kind_from_string(const std::string& name) {
  if (name == "cartpole") return Kind::cartpole;
  if (name == "fueltank") return Kind::fueltank;
  throw std::invalid_argument("unknown environment kind '" + name + "'");
}

void CartPoleParams::validate() const {
  if (!(cart_mass > 0.0)) throw std::invalid_argument("cart_mass must be positive");
  if (!(pole_mass > 0.0)) throw std::invalid_argument("pole_mass must be positive");
  if (!(pole_half_length > 0.0)) {
    throw std::invalid_argument("pole_half_length must be positive");
  }
  if (force_mag == 0.0 || !std::isfinite(force_mag)) {
    throw std::invalid_argument("force_mag must be nonzero and finite");
  }
}

CartStepResult cartpole_step(const CartPoleParams& params, const CartState& state, int action) {
  if (action != 0 && action != 1) {
    throw std::invalid_argument("cart-pole action must be 0 or 1");
  }
  params.validate();
  double force = action == 1 ? params.force_mag : -params.force_mag;
  double total_mass = params.cart_mass + params.pole_mass;
  double polemass_length = params.pole_mass * params.pole_half_length;
  double cos_t = std::cos(state.theta);
  double sin_t = std::sin(state.theta);
  double temp = (force + polemass_length * state.theta_dot * state.theta_dot * sin_t) / total_mass;
  double theta_acc = (kGravity * sin_t - cos_t * temp) /
                     (params.pole_half_length *
                      (4.0 / 3.0 - params.pole_mass * cos_t * cos_t / total_mass));
  double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

  CartStepResult res;
  // Semi-implicit Euler: velocities first, positions with the new velocities.
  res.next.x_dot = state.x_dot + kTau * x_acc;
  res.next.x = state.x + kTau * res.next.x_dot;
  res.next.theta_dot = state.theta_dot + kTau * theta_acc;
  res.next.theta = state.theta + kTau * res.next.theta_dot;

  auto failed = [](const CartState& s) {
    return std::abs(s.theta) > kThetaLimitRad || std::abs(s.x) > kXLimit;
  };
  res.done = failed(state) || failed(res.next);
  res.reward = res.done ? 0.0 : 1.0;
  if (!std::isfinite(res.next.x) || !std::isfinite(res.next.x_dot) ||
      !std::isfinite(res.next.theta) || !std::isfinite(res.next.theta_dot)) {
    throw std::runtime_error("cart-pole state became non-finite");
  }
  return res;
}

CartState cartpole_reset(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  CartState s;
  s.x = rng::uniform(gen, -0.05, 0.05);
  s.x_dot = rng::uniform(gen, -0.05, 0.05);
  s.theta = rng::uniform(gen, -0.05, 0.05);
  s.theta_dot = rng::uniform(gen, -0.05, 0.05);
  return s;
}

void FuelTankParams::validate() const {
  for (double r : resistances) {
    if (!(r > 0.0)) throw std::invalid_argument("resistances must be positive");
  }
  for (double p : pump_rates) {
    if (!(p >= 0.0)) throw std::invalid_argument("pump_rates must be non-negative");
  }
  for (double e : engine_rates) {
    if (!(e >= 0.0)) throw std::invalid_argument("engine_rates must be non-negative");
  }
  for (double l : leak_rates) {
    if (!(l >= 0.0)) throw std::invalid_argument("leak_rates must be non-negative");
  }
  for (double q : tank_positions) {
    if (!std::isfinite(q)) throw std::invalid_argument("tank_positions must be finite");
  }
}

double solve_manifold_level(std::span<const double> levels, std::span<const double> caps,
                            std::span<const double> resistances, std::span<const int> open) {
  // f(h) = sum over open tanks of min(cap_i, (level_i - h)/R_i) is continuous,
  // piecewise linear and non-increasing. Term i clamps to cap_i for
  // h <= level_i - cap_i * R_i. Walk the breakpoints in ascending order and
  // solve the linear piece where f crosses zero.
  std::vector<double> kinks;
  kinks.reserve(open.size());
  for (int i : open) {
    kinks.push_back(levels[i] - caps[i] * resistances[i]);
  }
  std::sort(kinks.begin(), kinks.end());

  auto eval = [&](double h) {
    double f = 0.0;
    for (int i : open) f += std::min(caps[i], (levels[i] - h) / resistances[i]);
    return f;
  };

  // At or below the first kink every term is clamped; f = sum of caps >= 0.
  // If that sum is zero the flows are all zero and any such h works.
  double cap_sum = 0.0;
  for (int i : open) cap_sum += caps[i];
  if (cap_sum <= 0.0) return kinks.front();

  // f(kinks[0]) = cap_sum > 0, so scan from the second kink for the first
  // point where f drops to zero or below. The root then sits on the piece
  // whose unclamped set is every tank with a kink at or before prev_h.
  double prev_h = kinks.front();
  for (std::size_t m = 1; m < kinks.size(); ++m) {
    if (eval(kinks[m]) <= 0.0) {
      double s1 = 0.0, s2 = 0.0, c = 0.0;
      for (int i : open) {
        double kink_i = levels[i] - caps[i] * resistances[i];
        if (kink_i <= prev_h) {
          s1 += 1.0 / resistances[i];
          s2 += levels[i] / resistances[i];
        } else {
          c += caps[i];
        }
      }
      return (c + s2) / s1;
    }
    prev_h = kinks[m];
  }
  // Beyond the last kink every term is unclamped.
  double s1 = 0.0, s2 = 0.0;
  for (int i : open) {
    s1 += 1.0 / resistances[i];
    s2 += levels[i] / resistances[i];
  }
  return s2 / s1;
}

FuelStepResult fueltank_step(const FuelTankParams& params, const FuelState& state,
                             std::span<const int> valves, FuelAudit* audit) {
  if (valves.size() != static_cast<std::size_t>(kTankCount)) {
    throw std::invalid_argument("valve action must have 6 entries, got " +
                                std::to_string(valves.size()));
  }
  params.validate();
  for (double l : state.levels) {
    if (!(l >= 0.0)) throw std::invalid_argument("tank levels must be non-negative");
  }

  FuelStepResult res;
  res.next = state;

  std::vector<int> open;
  for (int i = 0; i < kTankCount; ++i) {
    if (valves[i] != 0) open.push_back(i);
  }

  // Transfer through the shared manifold. A single open tank has no partner,
  // so nothing moves. Outflow is capped by the pump rate and by the fuel
  // actually present; the level cap keeps transfers from overdrawing a tank.
  if (open.size() >= 2) {
    std::array<double, kTankCount> caps{};
    for (int i : open) caps[i] = std::min(params.pump_rates[i], state.levels[i]);
    double h = solve_manifold_level(state.levels, caps, params.resistances, open);
    for (int i : open) {
      double flow = std::min(caps[i], (state.levels[i] - h) / params.resistances[i]);
      res.next.levels[i] -= flow;
      if (res.next.levels[i] < 0.0) res.next.levels[i] = 0.0;  // guards rounding only
    }
  }

  double engine_draw = 0.0;
  for (int e = 0; e < kEngineCount; ++e) {
    int tank = kEngineFeedTank[e];
    double draw = std::min(params.engine_rates[e], res.next.levels[tank]);
    res.next.levels[tank] -= draw;
    engine_draw += draw;
  }

  double leak_draw = 0.0;
  for (int i = 0; i < kTankCount; ++i) {
    double draw = std::min(params.leak_rates[i], res.next.levels[i]);
    res.next.levels[i] -= draw;
    leak_draw += draw;
  }

  if (audit) {
    audit->engine_draw = engine_draw;
    audit->leak_draw = leak_draw;
  }

  double total = 0.0;
  double moment = 0.0;
  for (int i = 0; i < kTankCount; ++i) {
    total += res.next.levels[i];
    moment += params.tank_positions[i] * res.next.levels[i];
  }
  double outboard = total > 0.0 ? (res.next.levels[0] + res.next.levels[kTankCount - 1]) / total
                                : 0.0;
  res.reward = -params.reward.balance * std::abs(moment) +
               params.reward.extremity * outboard -
               params.reward.fuel_loss * (engine_draw + leak_draw);
  res.done = total <= 0.0;
  return res;
}

FuelState fueltank_reset(const FuelTankParams& params) {
  params.validate();
  FuelState s;
  s.levels.fill(kNominalFill);
  return s;
}

Kind kind_of(const ProcessParams& params) {
  return std::holds_alternative<CartPoleParams>(params) ? Kind::cartpole : Kind::fueltank;
}

void validate(const ProcessParams& params) {
  std::visit([](const auto& p) { p.validate(); }, params);
}

namespace {

double apply_edit(const FieldEdit& edit, double current, const std::string& fault_name) {
  switch (edit.op) {
    case EditOp::set:
      return edit.value;
    case EditOp::scale:
      return current * edit.value;
    case EditOp::negate:
      return -current;
    case EditOp::disable:
      return 0.0;
  }
  throw std::invalid_argument("fault '" + fault_name + "': unknown edit op");
}

// Parses "name" or "name[index]"; returns index or -1.
std::pair<std::string, int> split_field(const std::string& field) {
  auto open = field.find('[');
  if (open == std::string::npos) return {field, -1};
  auto close = field.find(']', open);
  if (close == std::string::npos || close != field.size() - 1) {
    throw std::invalid_argument("malformed field '" + field + "'");
  }
  int idx = std::stoi(field.substr(open + 1, close - open - 1));
  return {field.substr(0, open), idx};
}

}  // namespace

CartPoleParams inject_fault(const CartPoleParams& nominal, const FaultSpec& fault) {
  CartPoleParams out = nominal;
  for (const FieldEdit& e : fault.edits) {
    auto [name, idx] = split_field(e.field);
    if (idx >= 0) {
      throw std::invalid_argument("fault '" + fault.name + "': cart-pole field '" + e.field +
                                  "' is not indexed");
    }
    double* target = nullptr;
    if (name == "cart_mass" || name == "m_c") target = &out.cart_mass;
    else if (name == "pole_mass" || name == "m_p") target = &out.pole_mass;
    else if (name == "pole_half_length" || name == "l") target = &out.pole_half_length;
    else if (name == "force_mag" || name == "F") target = &out.force_mag;
    else {
      throw std::invalid_argument("fault '" + fault.name + "': unknown cart-pole field '" +
                                  name + "'");
    }
    *target = apply_edit(e, *target, fault.name);
  }
  out.validate();
  return out;
}

FuelTankParams inject_fault(const FuelTankParams& nominal, const FaultSpec& fault) {
  FuelTankParams out = nominal;
  for (const FieldEdit& e : fault.edits) {
    auto [name, idx] = split_field(e.field);
    double* target = nullptr;
    int limit = kTankCount;
    if (name == "resistances") target = out.resistances.data();
    else if (name == "pump_rates") target = out.pump_rates.data();
    else if (name == "leak_rates") target = out.leak_rates.data();
    else if (name == "tank_positions") target = out.tank_positions.data();
    else if (name == "engine_rates") {
      target = out.engine_rates.data();
      limit = kEngineCount;
    } else {
      throw std::invalid_argument("fault '" + fault.name + "': unknown fuel-tank field '" +
                                  name + "'");
    }
    if (idx < 0 || idx >= limit) {
      throw std::invalid_argument("fault '" + fault.name + "': field '" + e.field +
                                  "' index out of range");
    }
    target[idx] = apply_edit(e, target[idx], fault.name);
  }
  out.validate();
  return out;
}

ProcessParams inject_fault(const ProcessParams& nominal, const FaultSpec& fault) {
  if (const auto* cp = std::get_if<CartPoleParams>(&nominal)) {
    return inject_fault(*cp, fault);
  }
  return inject_fault(std::get<FuelTankParams>(nominal), fault);
}

namespace {

class CartPoleSim final : public Simulator {
 public:
  CartPoleSim(CartPoleParams params, int cap) : params_(params), cap_(cap) {
    params_.validate();
  }

  std::vector<double> reset(std::uint64_t seed) override {
    state_ = cartpole_reset(seed);
    steps_ = 0;
    return obs();
  }

  StepOut step(std::uint32_t action) override {
    CartStepResult r = cartpole_step(params_, state_, static_cast<int>(action & 1u));
    state_ = r.next;
    ++steps_;
    StepOut out;
    out.obs = obs();
    out.reward = r.reward;
    out.done = r.done || steps_ >= cap_;
    return out;
  }

  int obs_dim() const override { return 4; }
  int action_bits() const override { return 1; }
  Kind kind() const override { return Kind::cartpole; }

 private:
  std::vector<double> obs() const {
    return {state_.x, state_.x_dot, state_.theta, state_.theta_dot};
  }

  CartPoleParams params_;
  CartState state_;
  int cap_;
  int steps_ = 0;
};

class FuelTankSim final : public Simulator {
 public:
  FuelTankSim(FuelTankParams params, int cap) : params_(params), cap_(cap) {
    params_.validate();
  }

  std::vector<double> reset(std::uint64_t) override {
    state_ = fueltank_reset(params_);
    steps_ = 0;
    return obs();
  }

  StepOut step(std::uint32_t action) override {
    std::array<int, kTankCount> valves;
    for (int i = 0; i < kTankCount; ++i) valves[i] = (action >> i) & 1u;
    FuelStepResult r = fueltank_step(params_, state_, valves);
    state_ = r.next;
    ++steps_;
    StepOut out;
    out.obs = obs();
    out.reward = r.reward;
    out.done = r.done || steps_ >= cap_;
    return out;
  }

  int obs_dim() const override { return kTankCount; }
  int action_bits() const override { return kTankCount; }
  Kind kind() const override { return Kind::fueltank; }

 private:
  std::vector<double> obs() const {
    std::vector<double> o(kTankCount);
    for (int i = 0; i < kTankCount; ++i) o[i] = state_.levels[i] / kNominalFill;
    return o;
  }

  FuelTankParams params_;
  FuelState state_;
  int cap_;
  int steps_ = 0;
};

}  // namespace

std::unique_ptr<Simulator> make_simulator(const ProcessParams& params, int max_episode_steps) {
  if (max_episode_steps < 1) {
    throw std::invalid_argument("max_episode_steps must be positive");
  }
  if (const auto* cp = std::get_if<CartPoleParams>(&params)) {
    return std::make_unique<CartPoleSim>(*cp, max_episode_steps);
  }
  return std::make_unique<FuelTankSim>(std::get<FuelTankParams>(params), max_episode_steps);
}

}  // namespace ftcrl::env
