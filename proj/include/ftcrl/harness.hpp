#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ftcrl/config.hpp"
#include "ftcrl/store.hpp"

namespace ftcrl::harness {

struct RunOutcome {
  std::string run_id;
  double total_reward = 0.0;
  long episodes = 0;
  std::filesystem::path rewards_csv;
};

// Trains the controller on the nominal process and stores it as "nominal"
// (value net as "nominal.value") together with its reward log.
RunOutcome cmd_train_nominal(const config::Config& cfg, std::uint64_t seed,
                             const std::filesystem::path& store_root);

// Trains one policy per named fault from the nominal parameters, stores each
// under its fault name, then curates the set down to complement_size by total
// divergence on a nominal-process buffer. Empty fault_names means every
// configured fault except runs.adapt_fault. Returns the retained labels.
std::vector<std::string> cmd_build_complement(const config::Config& cfg,
                                              std::vector<std::string> fault_names,
                                              std::uint64_t seed,
                                              const std::filesystem::path& store_root);

struct AdaptOptions {
  std::string method = "emaml";  // emaml | maml | ppo
  std::string fault;             // empty: runs.adapt_fault
  std::size_t rank = 0;          // 0: meta.rank
  std::string variant;           // empty: meta.variant
};

// Injects the fault, buffers memory_size post-fault steps, re-initializes the
// controller per the method (emaml meta-update, maml meta-initialization over
// the nominal family, or the nominal parameters unchanged), then PPO-trains on
// the faulty process. Buffer and training seeds do not depend on the method,
// so different methods form matched pairs at equal seeds.
RunOutcome cmd_adapt(const config::Config& cfg, const AdaptOptions& options, std::uint64_t seed,
                     const std::filesystem::path& store_root);

// Writes a CSV aligning the runs' cumulative rewards on the union of their
// episode-end steps: one column per run, plus mean and spread (sample standard
// deviation) columns when more than one run is given. Runs that end before the
// last grid step hold their final value and carry a ":padded" header mark.
void cmd_report(const std::filesystem::path& store_root, const std::vector<std::string>& run_ids,
                const std::filesystem::path& out_path);

// Full command-line interface. Returns 0 on success, 2 on validation errors,
// 1 on runtime errors.
int cli_main(int argc, const char* const* argv);

}  // namespace ftcrl::harness
