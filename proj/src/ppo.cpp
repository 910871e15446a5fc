#include "ftcrl/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ftcrl/rng.hpp"

namespace ftcrl::ppo {

void Memory::add(std::vector<double> state, std::uint32_t action, double reward,
                 double log_prob) {
  if (pending_boundary_ && !states.empty()) {
    episode_starts.push_back(states.size());
  }
  pending_boundary_ = false;
  states.push_back(std::move(state));
  actions.push_back(action);
  rewards.push_back(reward);
  log_probs_old.push_back(log_prob);
}

void Memory::mark_episode_end() { pending_boundary_ = true; }

void Memory::clear() {
  states.clear();
  actions.clear();
  rewards.clear();
  log_probs_old.clear();
  episode_starts.clear();
  pending_boundary_ = false;
}

void Memory::validate() const {
  std::size_t n = states.size();
  if (actions.size() != n || rewards.size() != n || log_probs_old.size() != n) {
    throw std::invalid_argument("memory channels have mismatched lengths");
  }
  std::size_t prev = 0;
  for (std::size_t b : episode_starts) {
    if (b == 0 || b >= n) {
      throw std::invalid_argument("episode boundary " + std::to_string(b) + " out of range");
    }
    if (b <= prev) throw std::invalid_argument("episode boundaries must be increasing");
    prev = b;
  }
}

std::vector<std::string> PpoConfig::problems() const {
  std::vector<std::string> out;
  if (!(alpha >= 0.0)) out.push_back("ppo.alpha must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) out.push_back("ppo.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) out.push_back("ppo.beta2 must be in [0, 1)");
  if (epochs < 1) out.push_back("ppo.epochs must be at least 1");
  if (t_update < 1) out.push_back("ppo.t_update must be at least 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) out.push_back("ppo.gamma must be in (0, 1]");
  if (!(eps_clip > 0.0)) out.push_back("ppo.eps_clip must be positive");
  return out;
}

void PpoConfig::validate() const {
  auto out = problems();
  if (!out.empty()) {
    std::string msg = out.front();
    for (std::size_t i = 1; i < out.size(); ++i) msg += "; " + out[i];
    throw std::invalid_argument(msg);
  }
}

std::vector<double> action_distribution(const nn::ParameterVector& policy,
                                        std::span<const double> state) {
  if (policy.spec.head != nn::OutputHead::sigmoid) {
    throw std::invalid_argument("action distribution needs a sigmoid head");
  }
  std::vector<double> p = nn::forward(policy, state);
  for (double& v : p) v = std::clamp(v, kMinProb, 1.0 - kMinProb);
  return p;
}

double action_probability(const nn::ParameterVector& policy, std::span<const double> state,
                          std::uint32_t action) {
  std::vector<double> p = nn::forward(policy, state);
  double prob = 1.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    prob *= (action >> j) & 1u ? p[j] : 1.0 - p[j];
  }
  return prob;
}

double action_log_prob(const nn::ParameterVector& policy, std::span<const double> state,
                       std::uint32_t action) {
  nn::Workspace<double> ws;
  return detail::traced_log_prob<double>(policy.spec, policy.values, state, action, ws);
}

std::uint32_t sample_action(const nn::ParameterVector& policy, std::span<const double> state,
                            std::mt19937_64& gen, double* log_prob_out) {
  std::vector<double> p = action_distribution(policy, state);
  std::uint32_t action = 0;
  double logp = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    bool bit = rng::bernoulli(gen, p[j]);
    if (bit) action |= 1u << j;
    logp += bit ? std::log(p[j]) : std::log(1.0 - p[j]);
  }
  if (log_prob_out) *log_prob_out = logp;
  return action;
}

std::vector<double> discounted_returns(std::span<const double> rewards,
                                       std::span<const std::size_t> episode_starts,
                                       double gamma) {
  std::vector<double> returns(rewards.size());
  if (rewards.empty()) return returns;
  std::vector<bool> is_start(rewards.size(), false);
  for (std::size_t b : episode_starts) {
    if (b >= rewards.size()) {
      throw std::invalid_argument("episode boundary " + std::to_string(b) + " out of range");
    }
    is_start[b] = true;
  }
  std::size_t n = rewards.size();
  returns[n - 1] = rewards[n - 1];
  for (std::size_t t = n - 1; t-- > 0;) {
    returns[t] = is_start[t + 1] ? rewards[t] : rewards[t] + gamma * returns[t + 1];
  }
  return returns;
}

std::vector<double> discounted_returns(const Memory& memory, double gamma) {
  return discounted_returns(memory.rewards, memory.episode_starts, gamma);
}

std::vector<double> standardize(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  if (out.size() < 2) {
    std::fill(out.begin(), out.end(), 0.0);
    return out;
  }
  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(out.size());
  double var = 0.0;
  for (double v : out) var += (v - mean) * (v - mean);
  double sd = std::sqrt(var / static_cast<double>(out.size() - 1));
  for (double& v : out) v = (v - mean) / (sd + 1e-7);
  return out;
}

std::vector<double> standardized_returns(const Memory& memory, double gamma) {
  return standardize(discounted_returns(memory, gamma));
}

namespace {

struct SampleTerms {
  double rho = 0.0;
  double clipped = 0.0;     // clip(rho, 1-eps, 1+eps)
  bool unclipped_min = false;  // which branch min() selected (ties: unclipped)
  double advantage = 0.0;
  double v = 0.0;
};

SampleTerms sample_terms(double log_pi, double log_old, double v, double ret, double eps_clip,
                         std::size_t index) {
  SampleTerms s;
  s.rho = std::exp(log_pi - log_old);
  if (!std::isfinite(s.rho)) {
    throw std::runtime_error("importance ratio is not finite at sample " +
                             std::to_string(index));
  }
  s.clipped = std::clamp(s.rho, 1.0 - eps_clip, 1.0 + eps_clip);
  s.v = v;
  s.advantage = ret - v;
  s.unclipped_min = s.rho * s.advantage <= s.clipped * s.advantage;
  return s;
}

void check_sizes(const nn::ParameterVector& policy, const nn::ParameterVector& value,
                 const Memory& memory, std::span<const double> returns) {
  memory.validate();
  if (returns.size() != memory.size()) {
    throw std::invalid_argument("returns length does not match memory size");
  }
  if (memory.size() == 0) throw std::invalid_argument("memory is empty");
  if (policy.spec.head != nn::OutputHead::sigmoid) {
    throw std::invalid_argument("policy network needs a sigmoid head");
  }
  if (value.spec.head != nn::OutputHead::linear || value.spec.output_size() != 1) {
    throw std::invalid_argument("value network needs a scalar linear head");
  }
}

}  // namespace

double ppo_loss(const nn::ParameterVector& policy, const nn::ParameterVector& value,
                const Memory& memory, std::span<const double> returns, double eps_clip) {
  check_sizes(policy, value, memory, returns);
  nn::Workspace<double> ws;
  double policy_sum = 0.0;
  double value_sum = 0.0;
  std::size_t n = memory.size();
  for (std::size_t t = 0; t < n; ++t) {
    double log_pi = detail::traced_log_prob<double>(policy.spec, policy.values,
                                                    memory.states[t], memory.actions[t], ws);
    double v = nn::forward_traced<double>(value.spec, value.values, memory.states[t], ws)[0];
    SampleTerms s =
        sample_terms(log_pi, memory.log_probs_old[t], v, returns[t], eps_clip, t);
    policy_sum += std::min(s.rho * s.advantage, s.clipped * s.advantage);
    value_sum += (v - returns[t]) * (v - returns[t]);
  }
  double inv_n = 1.0 / static_cast<double>(n);
  return -policy_sum * inv_n + 0.5 * value_sum * inv_n;
}

PpoLossGrad ppo_loss_gradient(const nn::ParameterVector& policy,
                              const nn::ParameterVector& value, const Memory& memory,
                              std::span<const double> returns, double eps_clip) {
  check_sizes(policy, value, memory, returns);
  PpoLossGrad out;
  out.d_policy.assign(policy.values.size(), 0.0);
  out.d_value.assign(value.values.size(), 0.0);
  nn::Workspace<double> ws_p;
  nn::Workspace<double> ws_v;
  std::vector<double> d_head(policy.spec.output_size());
  std::size_t n = memory.size();
  double inv_n = 1.0 / static_cast<double>(n);
  double policy_sum = 0.0;
  double value_sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    double log_pi = detail::traced_log_prob<double>(policy.spec, policy.values,
                                                    memory.states[t], memory.actions[t], ws_p);
    double v =
        nn::forward_traced<double>(value.spec, value.values, memory.states[t], ws_v)[0];
    SampleTerms s =
        sample_terms(log_pi, memory.log_probs_old[t], v, returns[t], eps_clip, t);
    policy_sum += std::min(s.rho * s.advantage, s.clipped * s.advantage);
    value_sum += (v - returns[t]) * (v - returns[t]);

    // Policy network: only the unclipped branch depends on log pi; the
    // clipped branch, when selected, sits on a flat section of the clamp.
    if (s.unclipped_min) {
      double d_log_pi = -inv_n * s.rho * s.advantage;
      detail::log_prob_output_grad<double>(ws_p.post.back(), memory.actions[t],
                                           d_log_pi, d_head);
      nn::backprop<double>(policy.spec, policy.values, ws_p, d_head, out.d_policy);
    }

    // Value network: the advantage inside the selected min branch plus the
    // squared-error term.
    double branch_coef = s.unclipped_min ? s.rho : s.clipped;
    double d_v = inv_n * branch_coef + inv_n * (v - returns[t]);
    double d_v_span[1] = {d_v};
    nn::backprop<double>(value.spec, value.values, ws_v, d_v_span, out.d_value);
  }
  out.loss = -policy_sum * inv_n + 0.5 * value_sum * inv_n;
  if (!std::isfinite(out.loss)) {
    throw std::runtime_error("loss is not finite: " + nn::format_double(out.loss));
  }
  return out;
}

namespace {

void check_net_shapes(const env::Simulator& sim, const nn::ParameterVector& policy,
                      const nn::ParameterVector& value) {
  if (policy.spec.input_size() != sim.obs_dim() ||
      policy.spec.output_size() != sim.action_bits()) {
    throw std::invalid_argument("policy network shape does not match the environment");
  }
  if (value.spec.input_size() != sim.obs_dim() || value.spec.output_size() != 1) {
    throw std::invalid_argument("value network shape does not match the environment");
  }
}

}  // namespace

TrainResult ppo_train(env::Simulator& sim, const nn::ParameterVector& policy,
                      const nn::ParameterVector& value, const PpoConfig& config,
                      long total_steps, std::uint64_t seed) {
  config.validate();
  policy.validate();
  value.validate();
  check_net_shapes(sim, policy, value);
  if (total_steps < 0) throw std::invalid_argument("total_steps must be non-negative");

  TrainResult res{policy, value, {}, 0.0, 0};
  nn::AdamState opt_p =
      nn::AdamState::init(policy.values.size(), config.alpha, config.beta1, config.beta2);
  nn::AdamState opt_v =
      nn::AdamState::init(value.values.size(), config.alpha, config.beta1, config.beta2);
  std::mt19937_64 gen(seed);
  Memory mem;
  auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&start]() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start)
        .count();
  };

  std::vector<double> obs = sim.reset(gen());
  double ep_reward = 0.0;
  long ep_steps = 0;

  for (long step = 1; step <= total_steps; ++step) {
    double logp = 0.0;
    std::uint32_t action = sample_action(res.policy, obs, gen, &logp);
    env::StepOut s = sim.step(action);
    mem.add(std::move(obs), action, s.reward, logp);
    obs = std::move(s.obs);
    ep_reward += s.reward;
    ++ep_steps;
    res.total_reward += s.reward;

    if (s.done) {
      ++res.episodes;
      res.log.push_back({step, res.episodes, ep_reward, elapsed_ms()});
      ep_reward = 0.0;
      ep_steps = 0;
      obs = sim.reset(gen());
      mem.mark_episode_end();
    }

    if (mem.size() == static_cast<std::size_t>(config.t_update)) {
      std::vector<double> returns = standardized_returns(mem, config.gamma);
      for (int e = 0; e < config.epochs; ++e) {
        PpoLossGrad g =
            ppo_loss_gradient(res.policy, res.value, mem, returns, config.eps_clip);
        std::tie(res.policy, opt_p) =
            nn::adam_step(opt_p, res.policy, g.d_policy, nn::Direction::descent);
        std::tie(res.value, opt_v) =
            nn::adam_step(opt_v, res.value, g.d_value, nn::Direction::descent);
      }
      mem.clear();
    }
  }

  if (ep_steps > 0) {
    ++res.episodes;
    res.log.push_back({total_steps, res.episodes, ep_reward, elapsed_ms()});
  }
  return res;
}

Memory collect_memory(env::Simulator& sim, const nn::ParameterVector& policy,
                      std::size_t steps, std::uint64_t seed) {
  policy.validate();
  std::mt19937_64 gen(seed);
  Memory mem;
  std::vector<double> obs = sim.reset(gen());
  for (std::size_t step = 0; step < steps; ++step) {
    double logp = 0.0;
    std::uint32_t action = sample_action(policy, obs, gen, &logp);
    env::StepOut s = sim.step(action);
    mem.add(std::move(obs), action, s.reward, logp);
    obs = std::move(s.obs);
    if (s.done) {
      obs = sim.reset(gen());
      mem.mark_episode_end();
    }
  }
  return mem;
}

}  // namespace ftcrl::ppo
