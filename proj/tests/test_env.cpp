#include "doctest.h"

#include <cmath>
#include <limits>

#include "ftcrl/env.hpp"
#include "ftcrl/rng.hpp"

using namespace ftcrl;
using env::CartPoleParams;
using env::CartState;
using env::FuelState;
using env::FuelTankParams;

namespace {

CartState random_cart_state(std::mt19937_64& gen) {
  CartState s;
  s.x = rng::uniform(gen, -2.0, 2.0);
  s.x_dot = rng::uniform(gen, -3.0, 3.0);
  s.theta = rng::uniform(gen, -0.2, 0.2);
  s.theta_dot = rng::uniform(gen, -2.0, 2.0);
  return s;
}

bool same_state(const CartState& a, const CartState& b) {
  return a.x == b.x && a.x_dot == b.x_dot && a.theta == b.theta && a.theta_dot == b.theta_dot;
}

env::FaultSpec fault(std::string name, std::vector<env::FieldEdit> edits) {
  env::FaultSpec f;
  f.name = std::move(name);
  f.edits = std::move(edits);
  return f;
}

double total_fuel(const FuelState& s) {
  double t = 0.0;
  for (double level : s.levels) t += level;
  return t;
}

}  // namespace

TEST_CASE("cart-pole step from the origin matches a hand-evaluated Euler step") {
  const CartPoleParams p;  // (1, 0.1, 0.5, 10)
  const CartState origin;
  const auto result = env::cartpole_step(p, origin, 1);  // push right

  // Hand recurrence of the classic dynamics at theta = 0, all rates zero.
  const double total_mass = p.cart_mass + p.pole_mass;
  const double polemass_length = p.pole_mass * p.pole_half_length;
  const double temp = p.force_mag / total_mass;
  const double theta_acc =
      (0.0 - temp) / (p.pole_half_length *
                      (4.0 / 3.0 - p.pole_mass / total_mass));
  const double x_acc = temp - polemass_length * theta_acc / total_mass;
  CHECK(theta_acc < 0.0);  // the pole tips against the push
  CHECK(theta_acc == doctest::Approx(-14.634146341463415).epsilon(1e-15));
  CHECK(x_acc == doctest::Approx(9.75609756097561).epsilon(1e-15));

  // Semi-implicit Euler: velocities first, then positions.
  CHECK(result.next.x_dot == doctest::Approx(env::kTau * x_acc).epsilon(1e-15));
  CHECK(result.next.x == doctest::Approx(env::kTau * env::kTau * x_acc).epsilon(1e-15));
  CHECK(result.next.theta_dot == doctest::Approx(env::kTau * theta_acc).epsilon(1e-15));
  CHECK(result.next.theta == doctest::Approx(env::kTau * env::kTau * theta_acc).epsilon(1e-15));
  CHECK(result.reward == 1.0);
  CHECK_FALSE(result.done);
}

TEST_CASE("cart-pole terminates past the tilt limit regardless of action") {
  CartState s;
  s.theta = 13.0 * 3.14159265358979323846 / 180.0;
  for (int action : {0, 1}) {
    const auto r = env::cartpole_step(CartPoleParams{}, s, action);
    CHECK(r.done);
    CHECK(r.reward == 0.0);
  }
  CartState far;
  far.x = 2.5;
  CHECK(env::cartpole_step(CartPoleParams{}, far, 0).done);
}

TEST_CASE("cart-pole force reversal swaps left and right exactly") {
  std::mt19937_64 gen(404);
  for (int rep = 0; rep < 200; ++rep) {
    CartPoleParams p;
    p.cart_mass = rng::uniform(gen, 0.5, 3.0);
    p.pole_mass = rng::uniform(gen, 0.05, 0.4);
    p.pole_half_length = rng::uniform(gen, 0.2, 1.0);
    p.force_mag = rng::uniform(gen, 5.0, 20.0);
    CartPoleParams flipped = p;
    flipped.force_mag = -p.force_mag;

    const CartState s = random_cart_state(gen);
    const auto left = env::cartpole_step(p, s, 0);
    const auto right = env::cartpole_step(flipped, s, 1);
    CHECK(same_state(left.next, right.next));
    CHECK(left.reward == right.reward);
    CHECK(left.done == right.done);
  }
}

TEST_CASE("cart-pole step is deterministic and rejects non-finite states") {
  std::mt19937_64 gen(405);
  const CartState s = random_cart_state(gen);
  const auto a = env::cartpole_step(CartPoleParams{}, s, 1);
  const auto b = env::cartpole_step(CartPoleParams{}, s, 1);
  CHECK(same_state(a.next, b.next));

  CartState bad;
  bad.x_dot = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(env::cartpole_step(CartPoleParams{}, bad, 0));
}

TEST_CASE("cart-pole reset is seeded and bounded") {
  const CartState a = env::cartpole_reset(9001);
  const CartState b = env::cartpole_reset(9001);
  const CartState c = env::cartpole_reset(9002);
  CHECK(same_state(a, b));
  CHECK_FALSE(same_state(a, c));
  for (double v : {a.x, a.x_dot, a.theta, a.theta_dot}) {
    CHECK(v >= -0.05);
    CHECK(v <= 0.05);
  }
}

TEST_CASE("simulator enforces the episode step cap") {
  FuelTankParams p;
  p.engine_rates = {0.0, 0.0};  // nothing changes, so only the cap can end it
  auto sim = env::make_simulator(p, 37);
  sim->reset(1);
  for (int t = 1; t <= 36; ++t) CHECK_FALSE(sim->step(0).done);
  CHECK(sim->step(0).done);
}

TEST_CASE("fuel observations are levels scaled by the nominal fill") {
  auto sim = env::make_simulator(FuelTankParams{}, 500);
  const auto obs = sim->reset(3);
  REQUIRE(obs.size() == 6);
  for (double o : obs) CHECK(o == 1.0);
  CHECK(sim->obs_dim() == 6);
  CHECK(sim->action_bits() == 6);
}

TEST_CASE("closed valves and idle engines leave fuel levels unchanged") {
  FuelTankParams p;
  p.engine_rates = {0.0, 0.0};
  const FuelState s = env::fueltank_reset(p);
  const auto r = env::fueltank_step(p, s, std::vector<int>{0, 0, 0, 0, 0, 0});
  CHECK(r.next.levels == s.levels);
  // Balanced nominal fill: moment term zero, outboard fraction 100/300.
  CHECK(r.reward == doctest::Approx(0.5 * (100.0 / 300.0)).epsilon(1e-12));
}

TEST_CASE("manifold level solves the two-tank example exactly") {
  const std::vector<double> levels = {10.0, 2.0};
  const std::vector<double> caps = {100.0, 100.0};
  const std::vector<double> resistances = {1.0, 1.0};
  const std::vector<int> open = {0, 1};
  const double h = env::solve_manifold_level(levels, caps, resistances, open);
  CHECK(h == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("fuel flows from the fuller tank toward the emptier one") {
  FuelTankParams p;
  p.engine_rates = {0.0, 0.0};
  p.pump_rates = {10, 10, 10, 10, 10, 10};
  p.resistances = {1, 1, 1, 1, 1, 1};
  FuelState s;
  s.levels = {10.0, 2.0, 0.0, 0.0, 0.0, 0.0};
  const auto r = env::fueltank_step(p, s, std::vector<int>{1, 1, 0, 0, 0, 0});
  CHECK(r.next.levels[0] == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(r.next.levels[1] == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(total_fuel(r.next) == doctest::Approx(total_fuel(s)).epsilon(1e-12));
}

TEST_CASE("a single open valve moves nothing") {
  FuelTankParams p;
  p.engine_rates = {0.0, 0.0};
  FuelState s = env::fueltank_reset(p);
  s.levels[0] = 17.0;
  const auto r = env::fueltank_step(p, s, std::vector<int>{1, 0, 0, 0, 0, 0});
  CHECK(r.next.levels == s.levels);
}

TEST_CASE("symmetric tanks stay mirror-symmetric under symmetric valves") {
  std::mt19937_64 gen(406);
  for (int rep = 0; rep < 100; ++rep) {
    FuelTankParams p;
    const double e = rng::uniform(gen, 0.0, 0.2);
    p.engine_rates = {e, e};
    for (int i = 0; i < 3; ++i) {
      const double r = rng::uniform(gen, 10.0, 200.0);
      const double pump = rng::uniform(gen, 0.0, 0.5);
      p.resistances[i] = p.resistances[5 - i] = r;
      p.pump_rates[i] = p.pump_rates[5 - i] = pump;
    }
    FuelState s;
    for (int i = 0; i < 3; ++i) s.levels[i] = s.levels[5 - i] = rng::uniform(gen, 0.0, 60.0);
    std::vector<int> valves(6);
    for (int i = 0; i < 3; ++i) valves[i] = valves[5 - i] = rng::uniform01(gen) < 0.5 ? 1 : 0;

    const auto r = env::fueltank_step(p, s, valves);
    for (int i = 0; i < 3; ++i)
      CHECK(r.next.levels[i] == doctest::Approx(r.next.levels[5 - i]).epsilon(1e-12));
  }
}

TEST_CASE("fuel is conserved across random trajectories") {
  std::mt19937_64 gen(407);
  for (int traj = 0; traj < 4; ++traj) {
    FuelTankParams p;
    for (auto& r : p.resistances) r = rng::uniform(gen, 20.0, 300.0);
    for (auto& q : p.pump_rates) q = rng::uniform(gen, 0.0, 0.3);
    p.engine_rates = {rng::uniform(gen, 0.0, 0.2), rng::uniform(gen, 0.0, 0.2)};
    if (traj % 2 == 1)
      for (auto& l : p.leak_rates) l = rng::uniform(gen, 0.0, 0.05);

    FuelState s = env::fueltank_reset(p);
    const double initial = total_fuel(s);
    double removed = 0.0;
    for (int t = 0; t < 1000; ++t) {
      std::vector<int> valves(6);
      for (int& v : valves) v = rng::uniform01(gen) < 0.5 ? 1 : 0;
      env::FuelAudit audit;
      const auto r = env::fueltank_step(p, s, valves, &audit);
      removed += audit.engine_draw + audit.leak_draw;
      s = r.next;
      for (double level : s.levels) CHECK(level >= 0.0);
      if (r.done) break;
    }
    CHECK(total_fuel(s) + removed == doctest::Approx(initial).epsilon(1e-12));
    CHECK(std::fabs(total_fuel(s) + removed - initial) <= 1e-9);
  }
}

TEST_CASE("fuel step rejects malformed valve vectors") {
  const FuelTankParams p;
  const FuelState s = env::fueltank_reset(p);
  CHECK_THROWS(env::fueltank_step(p, s, std::vector<int>{1, 0, 1}));
}

TEST_CASE("fault injection reproduces the held-out cart-pole process") {
  const CartPoleParams nominal;  // (1, 0.1, 0.5, 10)
  const auto pprime = env::inject_fault(
      nominal, fault("pprime", {{"cart_mass", env::EditOp::scale, 1.5},
                                {"pole_mass", env::EditOp::scale, 1.25},
                                {"pole_half_length", env::EditOp::scale, 1.5},
                                {"force_mag", env::EditOp::set, -12.0}}));
  CHECK(pprime.cart_mass == 1.5);
  CHECK(pprime.pole_mass == 0.125);
  CHECK(pprime.pole_half_length == 0.75);
  CHECK(pprime.force_mag == -12.0);
  CHECK(nominal.cart_mass == 1.0);  // original untouched
}

TEST_CASE("identity fault leaves parameters unchanged") {
  const CartPoleParams nominal;
  const auto same = env::inject_fault(nominal, fault("noop", {}));
  CHECK(same.cart_mass == nominal.cart_mass);
  CHECK(same.pole_mass == nominal.pole_mass);
  CHECK(same.pole_half_length == nominal.pole_half_length);
  CHECK(same.force_mag == nominal.force_mag);
}

TEST_CASE("fault injection reproduces the asymmetric fuel fault") {
  const FuelTankParams nominal;
  const auto faulty = env::inject_fault(
      nominal, fault("g7", {{"resistances[1]", env::EditOp::set, 75.0},
                            {"resistances[4]", env::EditOp::set, 75.0},
                            {"pump_rates[1]", env::EditOp::disable, 0.0},
                            {"engine_rates[0]", env::EditOp::set, 0.05}}));
  CHECK(faulty.resistances == std::array<double, 6>{100, 75, 100, 100, 75, 100});
  CHECK(faulty.pump_rates[1] == 0.0);
  CHECK(faulty.engine_rates[0] == 0.05);
  CHECK(faulty.engine_rates[1] == 0.1);
}

TEST_CASE("fault injection rejects invariant-violating and unknown edits") {
  const CartPoleParams nominal;
  CHECK_THROWS_WITH_AS(
      env::inject_fault(nominal, fault("zero-mass", {{"cart_mass", env::EditOp::set, 0.0}})),
      doctest::Contains("cart_mass"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      env::inject_fault(nominal, fault("typo", {{"cart_masss", env::EditOp::set, 1.0}})),
      doctest::Contains("typo"), std::invalid_argument);
  const FuelTankParams fuel;
  CHECK_THROWS(env::inject_fault(fuel, fault("bad-index", {{"resistances[6]", env::EditOp::set, 1.0}})));
  CHECK_THROWS(env::inject_fault(fuel, fault("negate-pump", {{"pump_rates[0]", env::EditOp::negate, 0.0}})));
}

TEST_CASE("simulator resets are reproducible per seed") {
  auto sim = env::make_simulator(CartPoleParams{}, 500);
  const auto a = sim->reset(12345);
  std::vector<env::StepOut> path_a;
  for (int t = 0; t < 20; ++t) path_a.push_back(sim->step(t % 2));
  const auto b = sim->reset(12345);
  CHECK(a == b);
  for (int t = 0; t < 20; ++t) {
    const auto out = sim->step(t % 2);
    CHECK(out.obs == path_a[t].obs);
    CHECK(out.reward == path_a[t].reward);
    CHECK(out.done == path_a[t].done);
  }
}
