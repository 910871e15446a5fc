#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftcrl/env.hpp"
#include "ftcrl/meta.hpp"
#include "ftcrl/ppo.hpp"

namespace ftcrl::config {

struct RunSettings {
  long train_steps = 30000;   // nominal and per-fault policy training
  long adapt_steps = 30000;   // post-fault recovery training
  long curation_buffer = 500; // nominal-process buffer for divergence curation
  std::string adapt_fault = "pprime";
};

// Effective experiment configuration. Defaults depend only on the process
// kind; a config file overrides individual fields on top of those defaults,
// so an empty file reproduces the stock protocol.
struct Config {
  env::ProcessParams process;  // nominal process
  int max_episode_steps = 500;
  std::vector<int> hidden = {32, 32};  // shared by action and value nets
  ppo::PpoConfig ppo;                  // specs filled by finalize()
  meta::MetaConfig meta;
  double family_jitter = 0.2;  // meta-training process family half-width
  std::vector<env::FaultSpec> faults;
  RunSettings runs;

  const env::FaultSpec* find_fault(const std::string& name) const;

  // Builds the network specs from the process dimensions and hidden sizes.
  void finalize();

  // Returns every problem found; empty means valid.
  std::vector<std::string> problems() const;
  // Throws std::invalid_argument listing all problems at once.
  void validate() const;
};

Config default_config(env::Kind kind);

// Parses a JSON config document on top of the kind's defaults. Unknown keys
// are rejected so typos cannot silently fall back to defaults.
Config parse_config(const std::string& text, const std::string& source_name);
Config load_config(const std::string& path);

// Serializes the effective configuration; parse_config() round-trips it.
std::string config_to_json(const Config& config);

}  // namespace ftcrl::config
