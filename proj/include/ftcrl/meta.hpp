#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ftcrl/env.hpp"
#include "ftcrl/nn.hpp"
#include "ftcrl/ppo.hpp"

namespace ftcrl::meta {

enum class Variant { maml, fomaml, reptile };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

struct MetaConfig {
  double alpha_in = 0.001;
  double alpha_out = 0.002;
  int k_in = 0;
  int k_out = 5;
  std::size_t rank = 4;             // entries kept by ranked selection
  std::size_t complement_size = 4;  // entries kept by divergence curation
  Variant variant = Variant::fomaml;
  double gamma = 0.99;
  double eps_clip = 0.2;
  std::size_t memory_size = 2000;  // post-fault buffer / meta trajectory length
  int maml_tasks = 4;              // processes sampled per outer iteration

  std::vector<std::string> problems() const;
  void validate() const;
};

struct ComplementEntry {
  nn::ParameterVector params;
  std::string provenance;  // label of the fault the policy was trained on
  long trained_steps = 0;
};

struct PolicyComplement {
  std::vector<ComplementEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  // All entries must share one topology.
  void validate() const;
};

// Sum over the buffer of pi(u_t|s_t) * R_t, the probability each candidate
// assigns to the action actually taken weighted by the discounted return.
// Probabilities are the raw head outputs; no logs are involved. The score is
// an ordinal fitness measure, not an unbiased return estimate. The gamma
// overloads weight by raw discounted returns; the returns overloads accept a
// caller-supplied weighting (the meta-update pipeline passes standardized
// returns so that agreement with the collecting policy carries no premium).
double expected_return_score(const nn::ParameterVector& candidate, const ppo::Memory& memory,
                             std::span<const double> returns);
double expected_return_score(const nn::ParameterVector& candidate, const ppo::Memory& memory,
                             double gamma);

struct ScoredEntry {
  std::size_t index = 0;  // position in the input complement
  double score = 0.0;
};

// Scores every entry and sorts best-first; equal scores keep input order.
std::vector<ScoredEntry> score_complement(const PolicyComplement& complement,
                                          const ppo::Memory& memory,
                                          std::span<const double> returns);
std::vector<ScoredEntry> score_complement(const PolicyComplement& complement,
                                          const ppo::Memory& memory, double gamma);

PolicyComplement rank_and_select(const PolicyComplement& complement, const ppo::Memory& memory,
                                 std::size_t r, std::span<const double> returns);
PolicyComplement rank_and_select(const PolicyComplement& complement, const ppo::Memory& memory,
                                 std::size_t r, double gamma);

// Clipped importance-weighted gain over a fixed buffer:
//   mean_t min(rho_t * R_t, clip(rho_t, 1-eps, 1+eps) * R_t)
// with rho_t = exp(log pi(u_t|s_t) - behavior_log_probs_t). No environment
// interaction is involved; ascent on this gain is the meta-level objective.
double memory_gain(const nn::ParameterVector& policy, const ppo::Memory& memory,
                   std::span<const double> behavior_log_probs,
                   std::span<const double> returns, double eps_clip);

std::vector<double> memory_gain_gradient(const nn::ParameterVector& policy,
                                         const ppo::Memory& memory,
                                         std::span<const double> behavior_log_probs,
                                         std::span<const double> returns, double eps_clip,
                                         double* value_out = nullptr);

// Exact Hessian-vector product of the gain, via dual numbers pushed through
// the gradient computation.
std::vector<double> memory_gain_hvp(const nn::ParameterVector& policy,
                                    const ppo::Memory& memory,
                                    std::span<const double> behavior_log_probs,
                                    std::span<const double> returns, double eps_clip,
                                    std::span<const double> direction);

// One task's contribution to the outer update.
struct InnerResult {
  nn::ParameterVector theta_final;            // parameters after the inner steps
  std::vector<double> test_gradient;          // gain gradient at theta_final
  // (d theta_final / d theta_root)^T * test_gradient, required by the
  // second-order variant; identity Jacobian makes it equal test_gradient.
  std::optional<std::vector<double>> jacobian_product;
};

// Outer update direction:
//   maml:    sum_i jacobian_product_i
//   fomaml:  sum_i test_gradient_i
//   reptile: sum_i (theta_final_i - theta_out)
std::vector<double> delta_theta(Variant variant, const nn::ParameterVector& theta_out,
                                std::span<const InnerResult> results);

struct ScoreRow {
  std::string provenance;
  double score = 0.0;
  bool selected = false;
};

struct MetaUpdateResult {
  nn::ParameterVector params;
  std::vector<ScoreRow> scores;  // best-first
  bool empty_complement = false;
};

// Re-initializes the controller from the complement: ranks entries on the
// buffer, fine-tunes the top r on it (k_in ascent steps each), and applies
// k_out outer updates of alpha_out * delta_theta. Never steps an environment.
// An empty complement returns the input parameters with a warning flag.
MetaUpdateResult emaml_meta_update(const nn::ParameterVector& theta,
                                   const ppo::Memory& memory,
                                   const PolicyComplement& complement,
                                   const MetaConfig& config);

// Distribution over processes for meta-training: the base parameters with
// each physical field scaled by an independent uniform factor in
// [1 - jitter, 1 + jitter]. Signs are preserved.
struct ProcessFamily {
  env::ProcessParams base;
  double jitter = 0.2;

  env::ProcessParams sample(std::mt19937_64& gen) const;
  void validate() const;
};

// Gradient-based meta-initialization over a family of processes: per outer
// iteration, sample maml_tasks processes, adapt a copy of the current
// initialization with k_in on-policy ascent steps on each, and combine test
// gain gradients through delta_theta.
nn::ParameterVector maml_train(const nn::ParameterVector& theta, const ProcessFamily& family,
                               const MetaConfig& config, int max_episode_steps,
                               std::uint64_t seed);

// Jensen-Shannon divergence between two Bernoulli distributions given their
// success probabilities; natural log, so the range is [0, ln 2].
double jsd_bernoulli(double pa, double pb);

// Mean over buffer states of the per-bit Jensen-Shannon divergence between
// the two policies' action distributions, summed over bits.
double js_divergence(const nn::ParameterVector& a, const nn::ParameterVector& b,
                     const ppo::Memory& memory);

// Row sums of the pairwise divergence matrix, one per entry.
std::vector<double> total_divergences(const PolicyComplement& complement,
                                      const ppo::Memory& memory);

// Keeps the s entries whose total divergence from the rest is largest;
// equal totals keep input order.
PolicyComplement curate_complement(const PolicyComplement& candidates, std::size_t s,
                                   const ppo::Memory& memory,
                                   std::vector<double>* d_total_out = nullptr);

}  // namespace ftcrl::meta
