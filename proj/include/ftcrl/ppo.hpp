#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ftcrl/env.hpp"
#include "ftcrl/nn.hpp"

namespace ftcrl::ppo {

// Probabilities are clamped to this band before logs are taken, so
// log-probabilities and importance ratios stay finite for extreme parameters.
inline constexpr double kMinProb = 1e-7;

// Rollout buffer. Actions are bit masks: bit j is the j-th Bernoulli output
// (cart-pole uses bit 0, the fuel tanks use bits 0..5). episode_starts holds
// the indices (> 0) where a new episode begins; index 0 is an implicit start.
struct Memory {
  std::vector<std::vector<double>> states;
  std::vector<std::uint32_t> actions;
  std::vector<double> rewards;
  std::vector<double> log_probs_old;
  std::vector<std::size_t> episode_starts;

  std::size_t size() const { return states.size(); }
  void add(std::vector<double> state, std::uint32_t action, double reward, double log_prob);
  // Marks the next added sample as the first of a new episode.
  void mark_episode_end();
  void clear();
  void validate() const;

 private:
  bool pending_boundary_ = false;
};

struct PpoConfig {
  double alpha = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int epochs = 3;
  int t_update = 500;
  double gamma = 0.99;
  double eps_clip = 0.2;
  nn::NetworkSpec action_spec;
  nn::NetworkSpec value_spec;

  // Returns every problem found; empty means valid.
  std::vector<std::string> problems() const;
  void validate() const;
};

// Per-bit open/right probabilities, clamped to [kMinProb, 1 - kMinProb].
std::vector<double> action_distribution(const nn::ParameterVector& policy,
                                        std::span<const double> state);

// Joint probability of `action` without clamping; the product of raw
// Bernoulli head outputs. Used where probabilities are weights, not logs.
double action_probability(const nn::ParameterVector& policy, std::span<const double> state,
                          std::uint32_t action);

double action_log_prob(const nn::ParameterVector& policy, std::span<const double> state,
                       std::uint32_t action);

std::uint32_t sample_action(const nn::ParameterVector& policy, std::span<const double> state,
                            std::mt19937_64& gen, double* log_prob_out = nullptr);

// Discounted returns with the recurrence R_t = r_t + gamma * R_{t+1},
// restarted at each episode boundary.
std::vector<double> discounted_returns(std::span<const double> rewards,
                                       std::span<const std::size_t> episode_starts,
                                       double gamma);
std::vector<double> discounted_returns(const Memory& memory, double gamma);

// Zero-mean, unit-spread rescaling (sample standard deviation); a constant or
// single-element input maps to all zeros. Deterministic in the input.
std::vector<double> standardize(std::span<const double> values);

// Discounted returns standardized over the whole batch. Gradient updates and
// buffer scoring consume this form so the update scale is independent of
// episode length; raw returns stay available through discounted_returns.
std::vector<double> standardized_returns(const Memory& memory, double gamma);

// Clipped-surrogate PPO loss:
//   policy term: -mean_t min(rho_t * A_t, clip(rho_t, 1-eps, 1+eps) * A_t)
//   with rho_t = exp(log pi(u_t|s_t) - log_probs_old_t), A_t = R_t - V(s_t)
//   value term: mean_t (V(s_t) - R_t)^2
//   total: policy term + 0.5 * value term
double ppo_loss(const nn::ParameterVector& policy, const nn::ParameterVector& value,
                const Memory& memory, std::span<const double> returns, double eps_clip);

struct PpoLossGrad {
  double loss = 0.0;
  std::vector<double> d_policy;
  std::vector<double> d_value;
};

// Exact gradient of ppo_loss with respect to both parameter vectors,
// including the advantage's dependence on the value network.
PpoLossGrad ppo_loss_gradient(const nn::ParameterVector& policy,
                              const nn::ParameterVector& value, const Memory& memory,
                              std::span<const double> returns, double eps_clip);

struct EpisodeLog {
  long step = 0;     // global environment step at the row's last step
  long episode = 0;  // 1-based episode index
  double reward = 0.0;
  long wall_ms = 0;
};

struct TrainResult {
  nn::ParameterVector policy;
  nn::ParameterVector value;
  std::vector<EpisodeLog> log;
  double total_reward = 0.0;
  long episodes = 0;
};

// On-policy PPO: collect t_update steps, then `epochs` full-batch Adam
// descents on ppo_loss, clear the buffer, repeat. The final partial episode,
// if any, is logged with the last step's stamp.
TrainResult ppo_train(env::Simulator& sim, const nn::ParameterVector& policy,
                      const nn::ParameterVector& value, const PpoConfig& config,
                      long total_steps, std::uint64_t seed);

// Runs the policy without updates and returns the filled buffer.
Memory collect_memory(env::Simulator& sim, const nn::ParameterVector& policy,
                      std::size_t steps, std::uint64_t seed);

namespace detail {

// Templated per-sample policy math shared with the meta-learning gains.
// Computes log pi(action|state) and leaves the traced activations in ws.
template <class T>
T traced_log_prob(const nn::NetworkSpec& spec, std::span<const T> params,
                  std::span<const double> state, std::uint32_t action,
                  nn::Workspace<T>& ws) {
  using std::log;
  auto out = nn::forward_traced<T>(spec, params, state, ws);
  T total(0.0);
  for (std::size_t j = 0; j < out.size(); ++j) {
    T p = out[j];
    if (p < T(kMinProb)) p = T(kMinProb);
    if (p > T(1.0 - kMinProb)) p = T(1.0 - kMinProb);
    total += (action >> j) & 1u ? log(p) : log(T(1.0) - p);
  }
  return total;
}

// d(log pi)/d(head output) for the traced sample; zero where the clamp is
// active, matching the flat spots of the clamped objective.
template <class T>
void log_prob_output_grad(std::span<const T> out, std::uint32_t action, T weight,
                          std::span<T> d_out) {
  for (std::size_t j = 0; j < out.size(); ++j) {
    T p = out[j];
    bool low = p < T(kMinProb);
    bool high = p > T(1.0 - kMinProb);
    if (low || high) {
      d_out[j] = T(0.0);
      continue;
    }
    d_out[j] = (action >> j) & 1u ? weight / p : -weight / (T(1.0) - p);
  }
}

}  // namespace detail

}  // namespace ftcrl::ppo
