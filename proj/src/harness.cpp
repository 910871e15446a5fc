#include "ftcrl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "ftcrl/meta.hpp"
#include "ftcrl/rng.hpp"

namespace ftcrl::harness {

namespace fs = std::filesystem;

namespace {

struct Controller {
  nn::ParameterVector policy;
  nn::ParameterVector value;
};

Controller load_nominal(const fs::path& root) {
  if (!store::has_policy(root, "nominal") || !store::has_policy(root, "nominal.value")) {
    throw std::invalid_argument("store '" + root.string() +
                                "' has no nominal policy; run train-nominal first");
  }
  return {store::load_policy(root, "nominal"), store::load_policy(root, "nominal.value")};
}

std::string run_summary_json(const config::Config& cfg) { return config::config_to_json(cfg); }

void record_run(const fs::path& root, const config::Config& cfg, const std::string& run_id,
                const std::string& method, const std::string& fault_label, std::uint64_t seed,
                long steps, const ppo::TrainResult& result) {
  store::write_rewards_csv(store::run_dir(root, run_id) / "rewards.csv", result.log);
  store::RunRecord record;
  record.run_id = run_id;
  record.env_kind = env::to_string(env::kind_of(cfg.process));
  record.method = method;
  record.fault_label = fault_label;
  record.seed = seed;
  record.steps = steps;
  record.total_reward = result.total_reward;
  record.config_json = run_summary_json(cfg);
  store::append_run_record(root, record);
}

ppo::TrainResult train_on(const config::Config& cfg, const env::ProcessParams& process,
                          const Controller& start, long steps, std::uint64_t train_seed) {
  auto sim = env::make_simulator(process, cfg.max_episode_steps);
  return ppo::ppo_train(*sim, start.policy, start.value, cfg.ppo, steps, train_seed);
}

}  // namespace

RunOutcome cmd_train_nominal(const config::Config& cfg, std::uint64_t seed,
                             const fs::path& store_root) {
  cfg.validate();
  store::init_store(store_root);
  const std::string run_id = "nominal-s" + std::to_string(seed);
  if (store::has_run(store_root, run_id) || store::has_policy(store_root, "nominal")) {
    throw std::invalid_argument("store '" + store_root.string() +
                                "' already holds a nominal policy");
  }

  Controller start;
  start.policy =
      nn::ParameterVector::random_init(cfg.ppo.action_spec, rng::derive_seed(seed, "init/action"));
  start.value =
      nn::ParameterVector::random_init(cfg.ppo.value_spec, rng::derive_seed(seed, "init/value"));

  const long steps = cfg.runs.train_steps;
  ppo::TrainResult result =
      train_on(cfg, cfg.process, start, steps, rng::derive_seed(seed, "train/nominal"));

  const std::string kind = env::to_string(env::kind_of(cfg.process));
  store::save_policy(store_root, result.policy, {"nominal", kind, "nominal", steps});
  store::save_policy(store_root, result.value, {"nominal.value", kind, "nominal", steps});
  record_run(store_root, cfg, run_id, "ppo", "", seed, steps, result);
  return {run_id, result.total_reward, result.episodes,
          store::run_dir(store_root, run_id) / "rewards.csv"};
}

std::vector<std::string> cmd_build_complement(const config::Config& cfg,
                                              std::vector<std::string> fault_names,
                                              std::uint64_t seed, const fs::path& store_root) {
  cfg.validate();
  if (fault_names.empty()) {
    for (const auto& f : cfg.faults)
      if (f.name != cfg.runs.adapt_fault) fault_names.push_back(f.name);
  }
  for (const auto& name : fault_names) {
    if (!cfg.find_fault(name))
      throw std::invalid_argument("fault '" + name + "' is not a configured fault");
  }
  if (fault_names.size() < cfg.meta.complement_size) {
    throw std::invalid_argument(
        "fault list has " + std::to_string(fault_names.size()) +
        " entries, fewer than the complement size " + std::to_string(cfg.meta.complement_size));
  }
  const Controller nominal = load_nominal(store_root);

  const std::string kind = env::to_string(env::kind_of(cfg.process));
  const long steps = cfg.runs.train_steps;
  for (const auto& name : fault_names) {
    if (store::has_policy(store_root, name)) {
      throw std::invalid_argument("policy '" + name + "' already exists in store '" +
                                  store_root.string() + "'");
    }
    const env::ProcessParams faulty = env::inject_fault(cfg.process, *cfg.find_fault(name));
    ppo::TrainResult result = train_on(cfg, faulty, nominal, steps,
                                       rng::derive_seed(seed, "train/fault/" + name));
    store::save_policy(store_root, result.policy, {name, kind, name, steps});
    record_run(store_root, cfg, "train-" + name + "-s" + std::to_string(seed), "ppo", name, seed,
               steps, result);
  }

  // Divergence is measured where behavior differs: a uniform survey policy
  // reaches the disturbed states that expose each policy's corrective reflex,
  // which the trained controller's narrow balanced trajectory never visits.
  auto sim = env::make_simulator(cfg.process, cfg.max_episode_steps);
  const nn::ParameterVector surveyor = nn::ParameterVector::zeros(cfg.ppo.action_spec);
  ppo::Memory buffer =
      ppo::collect_memory(*sim, surveyor, static_cast<std::size_t>(cfg.runs.curation_buffer),
                          rng::derive_seed(seed, "curation/buffer"));
  meta::PolicyComplement candidates = store::load_complement(store_root, fault_names);
  std::vector<double> d_totals;
  meta::PolicyComplement curated =
      meta::curate_complement(candidates, cfg.meta.complement_size, buffer, &d_totals);

  std::vector<std::string> labels;
  for (const auto& entry : curated.entries) labels.push_back(entry.provenance);
  store::save_curated_set(store_root, labels, d_totals);
  return labels;
}

RunOutcome cmd_adapt(const config::Config& cfg, const AdaptOptions& options, std::uint64_t seed,
                     const fs::path& store_root) {
  cfg.validate();
  if (options.method != "emaml" && options.method != "maml" && options.method != "ppo") {
    throw std::invalid_argument("unknown method '" + options.method +
                                "' (expected emaml, maml or ppo)");
  }
  const std::string fault_name = options.fault.empty() ? cfg.runs.adapt_fault : options.fault;
  const env::FaultSpec* fault = cfg.find_fault(fault_name);
  if (!fault) throw std::invalid_argument("fault '" + fault_name + "' is not a configured fault");

  meta::MetaConfig mcfg = cfg.meta;
  if (options.rank > 0) mcfg.rank = options.rank;
  if (!options.variant.empty()) mcfg.variant = meta::variant_from_string(options.variant);
  mcfg.validate();

  // All method/complement mismatches are reported before any simulation.
  meta::PolicyComplement complement;
  if (options.method == "emaml") {
    const std::vector<std::string> labels = store::curated_labels(store_root);
    if (labels.empty()) {
      throw std::invalid_argument("store '" + store_root.string() +
                                  "' has no curated complement; run build-complement first");
    }
    if (mcfg.rank > labels.size()) {
      throw std::invalid_argument("rank " + std::to_string(mcfg.rank) +
                                  " exceeds the curated complement size " +
                                  std::to_string(labels.size()));
    }
    complement = store::load_complement(store_root, labels);
  }
  const Controller nominal = load_nominal(store_root);

  std::string run_id = options.method;
  if (options.method == "emaml") run_id += "-r" + std::to_string(mcfg.rank);
  run_id += "-" + fault_name + "-s" + std::to_string(seed);
  if (store::has_run(store_root, run_id)) {
    throw std::invalid_argument("run '" + run_id + "' already exists in store '" +
                                store_root.string() + "'");
  }

  const env::ProcessParams faulty = env::inject_fault(cfg.process, *fault);
  auto sim = env::make_simulator(faulty, cfg.max_episode_steps);
  // The buffer and training seeds ignore the method so methods pair at equal
  // seeds: identical buffers, identical environment streams.
  ppo::Memory buffer =
      ppo::collect_memory(*sim, nominal.policy, mcfg.memory_size,
                          rng::derive_seed(seed, "adapt/" + fault_name + "/buffer"));

  Controller start = nominal;
  std::vector<meta::ScoreRow> scores;
  if (options.method == "emaml") {
    meta::MetaUpdateResult update =
        meta::emaml_meta_update(nominal.policy, buffer, complement, mcfg);
    if (update.empty_complement)
      std::cerr << "warning: empty complement, controller parameters unchanged\n";
    start.policy = std::move(update.params);
    scores = std::move(update.scores);
  } else if (options.method == "maml") {
    meta::ProcessFamily family{cfg.process, cfg.family_jitter};
    start.policy =
        meta::maml_train(nominal.policy, family, mcfg, cfg.max_episode_steps,
                   rng::derive_seed(seed, "adapt/" + fault_name + "/maml-meta"));
  }

  const long steps = cfg.runs.adapt_steps;
  ppo::TrainResult result = ppo::ppo_train(
      *sim, start.policy, start.value, cfg.ppo, steps,
      rng::derive_seed(seed, "adapt/" + fault_name + "/train"));

  const std::string kind = env::to_string(env::kind_of(cfg.process));
  store::save_policy(store_root, result.policy,
                     {run_id, kind, options.method + "/" + fault_name, steps});
  record_run(store_root, cfg, run_id, options.method, fault_name, seed, steps, result);

  if (options.method == "emaml") {
    std::ostringstream csv;
    csv << "provenance,score,selected\n";
    for (const meta::ScoreRow& row : scores)
      csv << row.provenance << ',' << nn::format_double(row.score) << ','
          << (row.selected ? 1 : 0) << '\n';
    store::atomic_write(store::run_dir(store_root, run_id) / "scores.csv", csv.str());
  }
  return {run_id, result.total_reward, result.episodes,
          store::run_dir(store_root, run_id) / "rewards.csv"};
}

void cmd_report(const fs::path& store_root, const std::vector<std::string>& run_ids,
                const fs::path& out_path) {
  if (run_ids.empty()) throw std::invalid_argument("report needs at least one run id");
  for (const auto& id : run_ids) {
    if (!store::has_run(store_root, id))
      throw std::invalid_argument("run '" + id + "' not found in store '" + store_root.string() +
                                  "'");
  }

  // Per run: episode-end steps with the cumulative total reward so far.
  std::vector<std::vector<std::pair<long, double>>> series;
  for (const auto& id : run_ids) {
    std::vector<ppo::EpisodeLog> log =
        store::read_rewards_csv(store::run_dir(store_root, id) / "rewards.csv");
    std::vector<std::pair<long, double>> s;
    double total = 0.0;
    for (const ppo::EpisodeLog& row : log) {
      total += row.reward;
      s.emplace_back(row.step, total);
    }
    series.push_back(std::move(s));
  }

  std::vector<long> grid;
  for (const auto& s : series)
    for (const auto& [step, value] : s) grid.push_back(step);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const long last_step = grid.empty() ? 0 : grid.back();

  std::ostringstream out;
  out << "step";
  for (std::size_t i = 0; i < run_ids.size(); ++i) {
    const bool padded = series[i].empty() || series[i].back().first < last_step;
    out << ',' << run_ids[i] << (padded ? ":padded" : "");
  }
  if (run_ids.size() > 1) out << ",mean,spread";
  out << '\n';

  std::vector<std::size_t> cursor(series.size(), 0);
  for (long step : grid) {
    out << step;
    std::vector<double> values;
    for (std::size_t i = 0; i < series.size(); ++i) {
      while (cursor[i] < series[i].size() && series[i][cursor[i]].first <= step) ++cursor[i];
      // Cumulative total of the episodes finished by this step; 0 before the
      // first episode ends, the final total once a shorter run is exhausted.
      const double value = cursor[i] == 0 ? 0.0 : series[i][cursor[i] - 1].second;
      values.push_back(value);
      out << ',' << nn::format_double(value);
    }
    if (values.size() > 1) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double ss = 0.0;
      for (double v : values) ss += (v - mean) * (v - mean);
      const double spread = std::sqrt(ss / static_cast<double>(values.size() - 1));
      out << ',' << nn::format_double(mean) << ',' << nn::format_double(spread);
    }
    out << '\n';
  }
  store::atomic_write(out_path, out.str());
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"fault-tolerant control experiments: PPO with e-MAML recovery"};
  app.require_subcommand(1);

  std::string config_path;
  std::string env_name = "cartpole";
  std::string store_path;
  std::string out_path;
  std::vector<std::string> fault_names;
  std::vector<std::string> run_ids;
  AdaptOptions adapt;
  std::uint64_t seed = 1;
  long steps = 0;

  const auto add_common = [&](CLI::App* cmd) {
    CLI::Option* opt_config =
        cmd->add_option("--config", config_path, "JSON config file (defaults when omitted)")
            ->check(CLI::ExistingFile);
    cmd->add_option("--env", env_name, "process kind when no config file is given")
        ->check(CLI::IsMember({"cartpole", "fueltank"}))
        ->excludes(opt_config);
    cmd->add_option("--store", store_path, "policy store directory")->required();
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--steps", steps, "override the configured step budget");
  };

  CLI::App* train = app.add_subcommand("train-nominal", "train the controller on the nominal process");
  add_common(train);

  CLI::App* build = app.add_subcommand(
      "build-complement", "train fault policies from the nominal controller and curate them");
  add_common(build);
  build->add_option("--faults", fault_names, "fault names to train (default: all but the adapt fault)")
      ->delimiter(',');

  CLI::App* adapt_cmd =
      app.add_subcommand("adapt", "inject a fault, re-initialize the controller and re-train");
  add_common(adapt_cmd);
  adapt_cmd->add_option("--method", adapt.method, "recovery method")
      ->required()
      ->check(CLI::IsMember({"emaml", "maml", "ppo"}));
  adapt_cmd->add_option("--rank", adapt.rank, "policies kept by ranked selection (emaml)");
  adapt_cmd->add_option("--variant", adapt.variant, "outer update rule")
      ->check(CLI::IsMember({"maml", "fomaml", "reptile"}));
  adapt_cmd->add_option("--fault", adapt.fault, "fault to inject (default from config)");

  CLI::App* report = app.add_subcommand("report", "align runs into one comparison CSV");
  report->add_option("--store", store_path, "policy store directory")->required();
  report->add_option("--runs", run_ids, "run ids to align")->required()->delimiter(',');
  report->add_option("--out", out_path, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (report->parsed()) {
      cmd_report(store_path, run_ids, out_path);
      std::cout << "wrote " << out_path << " (" << run_ids.size() << " runs)\n";
      return 0;
    }
    config::Config cfg = config_path.empty()
                             ? config::default_config(env::kind_from_string(env_name))
                             : config::load_config(config_path);
    if (steps > 0) {
      cfg.runs.train_steps = steps;
      cfg.runs.adapt_steps = steps;
    }
    if (train->parsed()) {
      RunOutcome outcome = cmd_train_nominal(cfg, seed, store_path);
      std::cout << "run " << outcome.run_id << ": " << outcome.episodes << " episodes, total reward "
                << nn::format_double(outcome.total_reward) << '\n';
    } else if (build->parsed()) {
      std::vector<std::string> labels = cmd_build_complement(cfg, fault_names, seed, store_path);
      std::cout << "curated complement:";
      for (const auto& label : labels) std::cout << ' ' << label;
      std::cout << '\n';
    } else if (adapt_cmd->parsed()) {
      RunOutcome outcome = cmd_adapt(cfg, adapt, seed, store_path);
      std::cout << "run " << outcome.run_id << ": " << outcome.episodes << " episodes, total reward "
                << nn::format_double(outcome.total_reward) << '\n';
    }
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ftcrl::harness
