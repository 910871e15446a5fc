#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ftcrl/meta.hpp"
#include "ftcrl/nn.hpp"
#include "ftcrl/ppo.hpp"

namespace ftcrl::store {

// Directory layout under the store root:
//   manifest                    index of policies, runs and the curated set
//   policies/<id>.params        one network each, decimal text
//   runs/<run_id>/rewards.csv   per-episode log of one run
struct PolicyMeta {
  std::string id;
  std::string env_kind;
  std::string provenance;
  long trained_steps = 0;
};

struct RunRecord {
  std::string run_id;
  std::string env_kind;
  std::string method;
  std::string fault_label;
  std::uint64_t seed = 0;
  long steps = 0;
  double total_reward = 0.0;
  std::string config_json;  // snapshot of the effective configuration
};

void init_store(const std::filesystem::path& root);

// Writes the parameter file and manifest entry; rejects duplicate ids.
// Files land via write-to-temp-then-rename, so a crashed write never leaves
// a loadable half-record.
std::string save_policy(const std::filesystem::path& root, const nn::ParameterVector& params,
                        const PolicyMeta& meta);

bool has_policy(const std::filesystem::path& root, const std::string& id);
nn::ParameterVector load_policy(const std::filesystem::path& root, const std::string& id);
PolicyMeta policy_meta(const std::filesystem::path& root, const std::string& id);

// Loads the policies with the given provenance labels, in label order.
// Every missing label is reported; mixed topologies are rejected.
meta::PolicyComplement load_complement(const std::filesystem::path& root,
                                       std::span<const std::string> labels);

// Records which policies form the curated complement, with their total
// divergence scores and a curation timestamp.
void save_curated_set(const std::filesystem::path& root, std::span<const std::string> labels,
                      std::span<const double> d_totals);
std::vector<std::string> curated_labels(const std::filesystem::path& root);

void append_run_record(const std::filesystem::path& root, const RunRecord& record);
bool has_run(const std::filesystem::path& root, const std::string& run_id);

std::filesystem::path run_dir(const std::filesystem::path& root, const std::string& run_id);

void write_rewards_csv(const std::filesystem::path& file,
                       std::span<const ppo::EpisodeLog> log);
std::vector<ppo::EpisodeLog> read_rewards_csv(const std::filesystem::path& file);

// Writes content to a sibling temp file and renames it into place.
void atomic_write(const std::filesystem::path& file, const std::string& content);

}  // namespace ftcrl::store
