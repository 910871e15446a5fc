#include "ftcrl/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ftcrl::config {

using json = nlohmann::json;

namespace {

env::FaultSpec fault(std::string name, std::vector<env::FieldEdit> edits) {
  env::FaultSpec f;
  f.name = std::move(name);
  f.edits = std::move(edits);
  return f;
}

env::FieldEdit set(std::string field, double value) {
  return {std::move(field), env::EditOp::set, value};
}
env::FieldEdit scale(std::string field, double value) {
  return {std::move(field), env::EditOp::scale, value};
}
env::FieldEdit disable(std::string field) {
  return {std::move(field), env::EditOp::disable, 0.0};
}

std::vector<env::FaultSpec> cartpole_faults() {
  return {
      fault("f1", {}),
      fault("f2", {set("cart_mass", 1.5)}),
      fault("f3", {set("cart_mass", 2.0), set("pole_mass", 0.2), set("force_mag", 15.0)}),
      fault("f4", {set("cart_mass", 2.0), set("pole_mass", 0.15), set("force_mag", 15.0)}),
      fault("f5", {set("force_mag", -10.0)}),
      fault("f6", {set("force_mag", -12.0)}),
      fault("f7", {set("cart_mass", 2.0), set("pole_mass", 0.2), set("force_mag", -15.0)}),
      fault("pprime", {scale("cart_mass", 1.5), scale("pole_mass", 1.25),
                       scale("pole_half_length", 1.5), set("force_mag", -12.0)}),
  };
}

std::vector<env::FaultSpec> fueltank_faults() {
  return {
      fault("g1", {set("resistances[3]", 70.0), set("resistances[4]", 80.0),
                   set("resistances[5]", 90.0), disable("pump_rates[3]"),
                   set("engine_rates[0]", 0.05)}),
      fault("g2", {set("resistances[3]", 70.0), set("resistances[4]", 80.0),
                   set("resistances[5]", 90.0), disable("pump_rates[0]"),
                   disable("pump_rates[3]"), set("engine_rates[0]", 0.05)}),
      fault("g3", {set("resistances[3]", 150.0), set("resistances[4]", 200.0),
                   set("engine_rates[1]", 0.05)}),
      fault("g4", {set("resistances[3]", 150.0), set("resistances[4]", 200.0),
                   disable("pump_rates[4]"), disable("pump_rates[5]"),
                   set("engine_rates[1]", 0.05)}),
      fault("g5", {set("resistances[0]", 90.0), set("resistances[3]", 70.0),
                   set("resistances[4]", 80.0), set("resistances[5]", 90.0),
                   disable("pump_rates[2]"), set("engine_rates[0]", 0.05)}),
      fault("g6", {set("resistances[0]", 90.0), set("resistances[3]", 70.0),
                   set("resistances[4]", 80.0), set("resistances[5]", 90.0),
                   disable("pump_rates[0]"), disable("pump_rates[2]"),
                   disable("pump_rates[5]"), set("engine_rates[0]", 0.05)}),
      fault("g7", {set("resistances[1]", 75.0), set("resistances[4]", 75.0),
                   disable("pump_rates[1]"), set("engine_rates[0]", 0.05)}),
      fault("pprime", {set("resistances[1]", 75.0), set("resistances[4]", 75.0),
                       disable("pump_rates[1]"), set("engine_rates[0]", 0.05)}),
  };
}

std::string edit_op_name(env::EditOp op) {
  switch (op) {
    case env::EditOp::set: return "set";
    case env::EditOp::scale: return "scale";
    case env::EditOp::negate: return "negate";
    case env::EditOp::disable: return "disable";
  }
  throw std::logic_error("unhandled edit op");
}

env::EditOp edit_op_from(const std::string& name, const std::string& where) {
  if (name == "set") return env::EditOp::set;
  if (name == "scale") return env::EditOp::scale;
  if (name == "negate") return env::EditOp::negate;
  if (name == "disable") return env::EditOp::disable;
  throw std::invalid_argument(where + ": unknown edit op '" + name +
                              "' (expected set, scale, negate or disable)");
}

// Rejects keys outside the allowed set so misspelled options fail loudly
// instead of silently keeping a default.
void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        ok = true;
        break;
      }
    }
    if (!ok) throw std::invalid_argument(where + ": unknown key '" + item.key() + "'");
  }
}

double get_number(const json& obj, const char* key, double fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw std::invalid_argument(where + "." + key + " must be a number");
  return v.get<double>();
}

long get_integer(const json& obj, const char* key, long fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) throw std::invalid_argument(where + "." + key + " must be an integer");
  return v.get<long>();
}

std::string get_string(const json& obj, const char* key, std::string fallback,
                       const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_string()) throw std::invalid_argument(where + "." + key + " must be a string");
  return v.get<std::string>();
}

template <std::size_t N>
void get_array(const json& obj, const char* key, std::array<double, N>& out,
               const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_array() || v.size() != N)
    throw std::invalid_argument(where + "." + key + " must be an array of " + std::to_string(N) +
                                " numbers");
  for (std::size_t i = 0; i < N; ++i) {
    if (!v[i].is_number())
      throw std::invalid_argument(where + "." + key + " must contain only numbers");
    out[i] = v[i].get<double>();
  }
}

void parse_env_section(const json& j, Config& cfg) {
  check_keys(j, {"kind", "max_episode_steps", "cartpole", "fueltank"}, "env");
  cfg.max_episode_steps =
      static_cast<int>(get_integer(j, "max_episode_steps", cfg.max_episode_steps, "env"));
  const env::Kind kind = env::kind_of(cfg.process);
  if (kind == env::Kind::cartpole && j.contains("cartpole")) {
    const json& c = j.at("cartpole");
    check_keys(c, {"cart_mass", "pole_mass", "pole_half_length", "force_mag"}, "env.cartpole");
    auto& p = std::get<env::CartPoleParams>(cfg.process);
    p.cart_mass = get_number(c, "cart_mass", p.cart_mass, "env.cartpole");
    p.pole_mass = get_number(c, "pole_mass", p.pole_mass, "env.cartpole");
    p.pole_half_length = get_number(c, "pole_half_length", p.pole_half_length, "env.cartpole");
    p.force_mag = get_number(c, "force_mag", p.force_mag, "env.cartpole");
  }
  if (kind == env::Kind::fueltank && j.contains("fueltank")) {
    const json& f = j.at("fueltank");
    check_keys(f,
               {"resistances", "pump_rates", "engine_rates", "tank_positions", "leak_rates",
                "reward_weights"},
               "env.fueltank");
    auto& p = std::get<env::FuelTankParams>(cfg.process);
    get_array(f, "resistances", p.resistances, "env.fueltank");
    get_array(f, "pump_rates", p.pump_rates, "env.fueltank");
    get_array(f, "engine_rates", p.engine_rates, "env.fueltank");
    get_array(f, "tank_positions", p.tank_positions, "env.fueltank");
    get_array(f, "leak_rates", p.leak_rates, "env.fueltank");
    if (f.contains("reward_weights")) {
      const json& w = f.at("reward_weights");
      check_keys(w, {"balance", "extremity", "fuel_loss"}, "env.fueltank.reward_weights");
      p.reward.balance = get_number(w, "balance", p.reward.balance, "env.fueltank.reward_weights");
      p.reward.extremity =
          get_number(w, "extremity", p.reward.extremity, "env.fueltank.reward_weights");
      p.reward.fuel_loss =
          get_number(w, "fuel_loss", p.reward.fuel_loss, "env.fueltank.reward_weights");
    }
  }
  const char* other = kind == env::Kind::cartpole ? "fueltank" : "cartpole";
  if (j.contains(other))
    throw std::invalid_argument(std::string("env.") + other + " does not apply to kind '" +
                                env::to_string(kind) + "'");
}

void parse_ppo_section(const json& j, Config& cfg) {
  check_keys(j, {"alpha", "beta1", "beta2", "epochs", "t_update", "gamma", "eps_clip", "hidden"},
             "ppo");
  auto& p = cfg.ppo;
  p.alpha = get_number(j, "alpha", p.alpha, "ppo");
  p.beta1 = get_number(j, "beta1", p.beta1, "ppo");
  p.beta2 = get_number(j, "beta2", p.beta2, "ppo");
  p.epochs = static_cast<int>(get_integer(j, "epochs", p.epochs, "ppo"));
  p.t_update = static_cast<int>(get_integer(j, "t_update", p.t_update, "ppo"));
  p.gamma = get_number(j, "gamma", p.gamma, "ppo");
  p.eps_clip = get_number(j, "eps_clip", p.eps_clip, "ppo");
  if (j.contains("hidden")) {
    const json& h = j.at("hidden");
    if (!h.is_array() || h.empty())
      throw std::invalid_argument("ppo.hidden must be a non-empty array of integers");
    cfg.hidden.clear();
    for (const json& v : h) {
      if (!v.is_number_integer())
        throw std::invalid_argument("ppo.hidden must contain only integers");
      cfg.hidden.push_back(v.get<int>());
    }
  }
}

void parse_meta_section(const json& j, Config& cfg) {
  check_keys(j,
             {"alpha_in", "alpha_out", "k_in", "k_out", "rank", "complement_size", "variant",
              "gamma", "eps_clip", "memory_size", "maml_tasks", "family_jitter"},
             "meta");
  auto& m = cfg.meta;
  m.alpha_in = get_number(j, "alpha_in", m.alpha_in, "meta");
  m.alpha_out = get_number(j, "alpha_out", m.alpha_out, "meta");
  m.k_in = static_cast<int>(get_integer(j, "k_in", m.k_in, "meta"));
  m.k_out = static_cast<int>(get_integer(j, "k_out", m.k_out, "meta"));
  m.rank = static_cast<std::size_t>(get_integer(j, "rank", static_cast<long>(m.rank), "meta"));
  m.complement_size = static_cast<std::size_t>(
      get_integer(j, "complement_size", static_cast<long>(m.complement_size), "meta"));
  if (j.contains("variant"))
    m.variant = meta::variant_from_string(get_string(j, "variant", "", "meta"));
  m.gamma = get_number(j, "gamma", m.gamma, "meta");
  m.eps_clip = get_number(j, "eps_clip", m.eps_clip, "meta");
  m.memory_size = static_cast<std::size_t>(
      get_integer(j, "memory_size", static_cast<long>(m.memory_size), "meta"));
  m.maml_tasks = static_cast<int>(get_integer(j, "maml_tasks", m.maml_tasks, "meta"));
  cfg.family_jitter = get_number(j, "family_jitter", cfg.family_jitter, "meta");
}

void parse_faults_section(const json& j, Config& cfg) {
  if (!j.is_array()) throw std::invalid_argument("faults must be an array");
  cfg.faults.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& f = j[i];
    const std::string where = "faults[" + std::to_string(i) + "]";
    if (!f.is_object()) throw std::invalid_argument(where + " must be an object");
    check_keys(f, {"name", "edits"}, where);
    env::FaultSpec spec;
    spec.name = get_string(f, "name", "", where);
    if (spec.name.empty()) throw std::invalid_argument(where + ".name must be a non-empty string");
    if (f.contains("edits")) {
      const json& edits = f.at("edits");
      if (!edits.is_array()) throw std::invalid_argument(where + ".edits must be an array");
      for (std::size_t k = 0; k < edits.size(); ++k) {
        const json& e = edits[k];
        const std::string ew = where + ".edits[" + std::to_string(k) + "]";
        if (!e.is_object()) throw std::invalid_argument(ew + " must be an object");
        check_keys(e, {"field", "op", "value"}, ew);
        env::FieldEdit edit;
        edit.field = get_string(e, "field", "", ew);
        if (edit.field.empty()) throw std::invalid_argument(ew + ".field must be a non-empty string");
        edit.op = edit_op_from(get_string(e, "op", "set", ew), ew);
        const bool needs_value = edit.op == env::EditOp::set || edit.op == env::EditOp::scale;
        if (needs_value && !e.contains("value"))
          throw std::invalid_argument(ew + ": op '" + edit_op_name(edit.op) + "' needs a value");
        edit.value = get_number(e, "value", 0.0, ew);
        spec.edits.push_back(std::move(edit));
      }
    }
    cfg.faults.push_back(std::move(spec));
  }
}

void parse_runs_section(const json& j, Config& cfg) {
  check_keys(j, {"train_steps", "adapt_steps", "curation_buffer", "adapt_fault"}, "runs");
  auto& r = cfg.runs;
  r.train_steps = get_integer(j, "train_steps", r.train_steps, "runs");
  r.adapt_steps = get_integer(j, "adapt_steps", r.adapt_steps, "runs");
  r.curation_buffer = get_integer(j, "curation_buffer", r.curation_buffer, "runs");
  r.adapt_fault = get_string(j, "adapt_fault", r.adapt_fault, "runs");
}

}  // namespace

const env::FaultSpec* Config::find_fault(const std::string& name) const {
  for (const auto& f : faults)
    if (f.name == name) return &f;
  return nullptr;
}

void Config::finalize() {
  int obs = 0;
  int bits = 0;
  if (env::kind_of(process) == env::Kind::cartpole) {
    obs = 4;
    bits = 1;
  } else {
    obs = env::kTankCount;
    bits = env::kTankCount;
  }
  ppo.action_spec.layer_sizes.assign(1, obs);
  ppo.action_spec.layer_sizes.insert(ppo.action_spec.layer_sizes.end(), hidden.begin(),
                                     hidden.end());
  ppo.action_spec.layer_sizes.push_back(bits);
  ppo.action_spec.head = nn::OutputHead::sigmoid;
  ppo.value_spec.layer_sizes = ppo.action_spec.layer_sizes;
  ppo.value_spec.layer_sizes.back() = 1;
  ppo.value_spec.head = nn::OutputHead::linear;
}

std::vector<std::string> Config::problems() const {
  std::vector<std::string> out;
  try {
    env::validate(process);
  } catch (const std::exception& e) {
    out.push_back(std::string("env: ") + e.what());
  }
  if (max_episode_steps < 1) out.push_back("env.max_episode_steps must be >= 1");
  if (hidden.empty()) out.push_back("ppo.hidden must have at least one layer");
  for (int h : hidden)
    if (h < 1) {
      out.push_back("ppo.hidden sizes must be >= 1");
      break;
    }
  for (const auto& p : ppo.problems()) out.push_back("ppo." + p);
  for (const auto& p : meta.problems()) out.push_back("meta." + p);
  if (!(family_jitter >= 0.0 && family_jitter < 1.0))
    out.push_back("meta.family_jitter must be in [0, 1)");
  for (std::size_t i = 0; i < faults.size(); ++i) {
    if (faults[i].name.empty()) {
      out.push_back("faults[" + std::to_string(i) + "] has an empty name");
      continue;
    }
    for (std::size_t k = 0; k < i; ++k)
      if (faults[k].name == faults[i].name)
        out.push_back("duplicate fault name '" + faults[i].name + "'");
    try {
      env::inject_fault(process, faults[i]);
    } catch (const std::exception& e) {
      out.push_back("fault '" + faults[i].name + "': " + e.what());
    }
  }
  if (runs.train_steps < 1) out.push_back("runs.train_steps must be >= 1");
  if (runs.adapt_steps < 1) out.push_back("runs.adapt_steps must be >= 1");
  if (runs.curation_buffer < 1) out.push_back("runs.curation_buffer must be >= 1");
  if (!find_fault(runs.adapt_fault))
    out.push_back("runs.adapt_fault '" + runs.adapt_fault + "' is not a configured fault");
  return out;
}

void Config::validate() const {
  const auto list = problems();
  if (list.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& p : list) msg += "\n  - " + p;
  throw std::invalid_argument(msg);
}

Config default_config(env::Kind kind) {
  Config cfg;
  if (kind == env::Kind::cartpole) {
    cfg.process = env::CartPoleParams{};
    cfg.hidden = {32, 32};
    cfg.ppo.t_update = 500;
    cfg.meta.alpha_out = 0.002;
    cfg.meta.k_in = 0;
    cfg.meta.k_out = 5;
    cfg.meta.memory_size = 2000;
    cfg.faults = cartpole_faults();
    cfg.runs.curation_buffer = 500;
  } else {
    cfg.process = env::FuelTankParams{};
    cfg.hidden = {64, 64};
    cfg.ppo.t_update = 1000;
    cfg.meta.alpha_out = 0.001;
    cfg.meta.k_in = 3;
    cfg.meta.k_out = 3;
    cfg.meta.memory_size = 4000;
    cfg.faults = fueltank_faults();
    cfg.runs.curation_buffer = 1000;
  }
  cfg.finalize();
  return cfg;
}

Config parse_config(const std::string& text, const std::string& source_name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(source_name + ": " + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument(source_name + ": top level must be an object");
  check_keys(j, {"env", "ppo", "meta", "faults", "runs"}, "config");

  env::Kind kind = env::Kind::cartpole;
  if (j.contains("env")) {
    const json& e = j.at("env");
    if (!e.is_object()) throw std::invalid_argument("env must be an object");
    kind = env::kind_from_string(get_string(e, "kind", "cartpole", "env"));
  }
  Config cfg = default_config(kind);
  if (j.contains("env")) parse_env_section(j.at("env"), cfg);
  if (j.contains("ppo")) parse_ppo_section(j.at("ppo"), cfg);
  if (j.contains("meta")) parse_meta_section(j.at("meta"), cfg);
  if (j.contains("faults")) parse_faults_section(j.at("faults"), cfg);
  if (j.contains("runs")) parse_runs_section(j.at("runs"), cfg);
  cfg.finalize();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

std::string config_to_json(const Config& config) {
  json j;
  const env::Kind kind = env::kind_of(config.process);
  json e;
  e["kind"] = env::to_string(kind);
  e["max_episode_steps"] = config.max_episode_steps;
  if (kind == env::Kind::cartpole) {
    const auto& p = std::get<env::CartPoleParams>(config.process);
    e["cartpole"] = {{"cart_mass", p.cart_mass},
                     {"pole_mass", p.pole_mass},
                     {"pole_half_length", p.pole_half_length},
                     {"force_mag", p.force_mag}};
  } else {
    const auto& p = std::get<env::FuelTankParams>(config.process);
    e["fueltank"] = {{"resistances", p.resistances},
                     {"pump_rates", p.pump_rates},
                     {"engine_rates", p.engine_rates},
                     {"tank_positions", p.tank_positions},
                     {"leak_rates", p.leak_rates},
                     {"reward_weights",
                      {{"balance", p.reward.balance},
                       {"extremity", p.reward.extremity},
                       {"fuel_loss", p.reward.fuel_loss}}}};
  }
  j["env"] = e;
  j["ppo"] = {{"alpha", config.ppo.alpha},     {"beta1", config.ppo.beta1},
              {"beta2", config.ppo.beta2},     {"epochs", config.ppo.epochs},
              {"t_update", config.ppo.t_update}, {"gamma", config.ppo.gamma},
              {"eps_clip", config.ppo.eps_clip}, {"hidden", config.hidden}};
  j["meta"] = {{"alpha_in", config.meta.alpha_in},
               {"alpha_out", config.meta.alpha_out},
               {"k_in", config.meta.k_in},
               {"k_out", config.meta.k_out},
               {"rank", config.meta.rank},
               {"complement_size", config.meta.complement_size},
               {"variant", meta::to_string(config.meta.variant)},
               {"gamma", config.meta.gamma},
               {"eps_clip", config.meta.eps_clip},
               {"memory_size", config.meta.memory_size},
               {"maml_tasks", config.meta.maml_tasks},
               {"family_jitter", config.family_jitter}};
  json faults = json::array();
  for (const auto& f : config.faults) {
    json edits = json::array();
    for (const auto& edit : f.edits) {
      json e2 = {{"field", edit.field}, {"op", edit_op_name(edit.op)}};
      if (edit.op == env::EditOp::set || edit.op == env::EditOp::scale) e2["value"] = edit.value;
      edits.push_back(std::move(e2));
    }
    faults.push_back(json{{"name", f.name}, {"edits", std::move(edits)}});
  }
  j["faults"] = std::move(faults);
  j["runs"] = {{"train_steps", config.runs.train_steps},
               {"adapt_steps", config.runs.adapt_steps},
               {"curation_buffer", config.runs.curation_buffer},
               {"adapt_fault", config.runs.adapt_fault}};
  return j.dump(2);
}

}  // namespace ftcrl::config
