#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace ftcrl::env {

enum class Kind { cartpole, fueltank };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& name);

struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double force_mag = 10.0;  // signed; negative reverses the actuator

  void validate() const;
};

struct CartState {
  double x = 0.0;
  double x_dot = 0.0;
  double theta = 0.0;
  double theta_dot = 0.0;
};

struct CartStepResult {
  CartState next;
  double reward = 0.0;
  bool done = false;
};

inline constexpr double kTau = 0.02;
inline constexpr double kGravity = 9.8;
inline constexpr double kThetaLimitRad = 12.0 * 3.14159265358979323846 / 180.0;
inline constexpr double kXLimit = 2.4;

// One semi-implicit Euler step of the classic cart-pole dynamics.
// action: 0 pushes with -force_mag, 1 pushes with +force_mag.
CartStepResult cartpole_step(const CartPoleParams& params, const CartState& state, int action);

// All four state components uniform in [-0.05, 0.05].
CartState cartpole_reset(std::uint64_t seed);

struct FuelRewardWeights {
  double balance = 1.0;
  double extremity = 0.5;
  double fuel_loss = 1.0;
};

inline constexpr int kTankCount = 6;
inline constexpr int kEngineCount = 2;
inline constexpr double kNominalFill = 50.0;
// Engines draw from the two inboard tanks.
inline constexpr int kEngineFeedTank[kEngineCount] = {2, 3};

struct FuelTankParams {
  std::array<double, kTankCount> resistances{100, 100, 100, 100, 100, 100};
  std::array<double, kTankCount> pump_rates{0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
  std::array<double, kEngineCount> engine_rates{0.1, 0.1};
  std::array<double, kTankCount> tank_positions{-3, -2, -1, 1, 2, 3};
  std::array<double, kTankCount> leak_rates{0, 0, 0, 0, 0, 0};
  FuelRewardWeights reward;

  void validate() const;
};

struct FuelState {
  std::array<double, kTankCount> levels{};
};

struct FuelStepResult {
  FuelState next;
  double reward = 0.0;
  bool done = false;
};

// Fuel removed from the system during one step, for conservation audits.
struct FuelAudit {
  double engine_draw = 0.0;
  double leak_draw = 0.0;
};

// Common manifold level h such that the open-valve flows
// f_i = min(cap_i, (level_i - h) / R_i) sum to zero. Piecewise linear in h,
// solved exactly from the clamp breakpoints. `open` lists tank indices.
double solve_manifold_level(std::span<const double> levels, std::span<const double> caps,
                            std::span<const double> resistances, std::span<const int> open);

// One step: manifold transfer through open valves, engine draw, leaks.
// valves must hold 6 entries (0 closed, 1 open).
FuelStepResult fueltank_step(const FuelTankParams& params, const FuelState& state,
                             std::span<const int> valves, FuelAudit* audit = nullptr);

FuelState fueltank_reset(const FuelTankParams& params);

using ProcessParams = std::variant<CartPoleParams, FuelTankParams>;

Kind kind_of(const ProcessParams& params);
void validate(const ProcessParams& params);

enum class EditOp { set, scale, negate, disable };

struct FieldEdit {
  std::string field;  // e.g. "cart_mass", "force_mag", "resistances[1]"
  EditOp op = EditOp::set;
  double value = 0.0;
};

struct FaultSpec {
  std::string name;
  std::vector<FieldEdit> edits;
};

// Applies the edits to a copy of the nominal parameters and validates the
// result. Unknown fields and invariant-violating edits are rejected.
CartPoleParams inject_fault(const CartPoleParams& nominal, const FaultSpec& fault);
FuelTankParams inject_fault(const FuelTankParams& nominal, const FaultSpec& fault);
ProcessParams inject_fault(const ProcessParams& nominal, const FaultSpec& fault);

struct StepOut {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
};

// Stateful rollout wrapper over the pure step functions. Tracks the episode
// step count and reports done when the cap is reached. Fuel-tank
// observations are levels scaled by the nominal fill so they sit near the
// active range of tanh units.
class Simulator {
 public:
  virtual ~Simulator() = default;
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  virtual StepOut step(std::uint32_t action) = 0;
  virtual int obs_dim() const = 0;
  virtual int action_bits() const = 0;
  virtual Kind kind() const = 0;
};

std::unique_ptr<Simulator> make_simulator(const ProcessParams& params, int max_episode_steps);

}  // namespace ftcrl::env
