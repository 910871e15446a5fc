#include "ftcrl/meta.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ftcrl/dual.hpp"
#include "ftcrl/rng.hpp"

namespace ftcrl::meta {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::maml: return "maml";
    case Variant::fomaml: return "fomaml";
    case Variant::reptile: return "reptile";
  }
  return "fomaml";
}

Variant variant_from_string(const std::string& name) {
  if (name == "maml") return Variant::maml;
  if (name == "fomaml") return Variant::fomaml;
  if (name == "reptile") return Variant::reptile;
  throw std::invalid_argument("unknown meta variant '" + name + "'");
}

std::vector<std::string> MetaConfig::problems() const {
  std::vector<std::string> out;
  if (!(alpha_in >= 0.0)) out.push_back("meta.alpha_in must be non-negative");
  if (!(alpha_out >= 0.0)) out.push_back("meta.alpha_out must be non-negative");
  if (k_in < 0) out.push_back("meta.k_in must be non-negative");
  if (k_out < 1) out.push_back("meta.k_out must be at least 1");
  if (rank < 1) out.push_back("meta.rank must be at least 1");
  if (complement_size < 1) out.push_back("meta.complement_size must be at least 1");
  if (rank > complement_size) {
    out.push_back("meta.rank must not exceed meta.complement_size");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) out.push_back("meta.gamma must be in (0, 1]");
  if (!(eps_clip > 0.0)) out.push_back("meta.eps_clip must be positive");
  if (memory_size < 1) out.push_back("meta.memory_size must be at least 1");
  if (maml_tasks < 1) out.push_back("meta.maml_tasks must be at least 1");
  return out;
}

void MetaConfig::validate() const {
  auto out = problems();
  if (!out.empty()) {
    std::string msg = out.front();
    for (std::size_t i = 1; i < out.size(); ++i) msg += "; " + out[i];
    throw std::invalid_argument(msg);
  }
}

void PolicyComplement::validate() const {
  for (const ComplementEntry& e : entries) {
    e.params.validate();
    if (!(e.params.spec == entries.front().params.spec)) {
      throw std::invalid_argument("complement entries have mixed network topologies");
    }
  }
}

double expected_return_score(const nn::ParameterVector& candidate, const ppo::Memory& memory,
                             std::span<const double> returns) {
  memory.validate();
  if (returns.size() != memory.size()) {
    throw std::invalid_argument("returns length does not match memory size");
  }
  double score = 0.0;
  for (std::size_t t = 0; t < memory.size(); ++t) {
    score += ppo::action_probability(candidate, memory.states[t], memory.actions[t]) *
             returns[t];
  }
  return score;
}

double expected_return_score(const nn::ParameterVector& candidate, const ppo::Memory& memory,
                             double gamma) {
  memory.validate();
  std::vector<double> returns = ppo::discounted_returns(memory, gamma);
  return expected_return_score(candidate, memory, returns);
}

std::vector<ScoredEntry> score_complement(const PolicyComplement& complement,
                                          const ppo::Memory& memory,
                                          std::span<const double> returns) {
  complement.validate();
  std::vector<ScoredEntry> scored;
  scored.reserve(complement.size());
  for (std::size_t i = 0; i < complement.size(); ++i) {
    scored.push_back(
        {i, expected_return_score(complement.entries[i].params, memory, returns)});
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredEntry& a, const ScoredEntry& b) { return a.score > b.score; });
  return scored;
}

std::vector<ScoredEntry> score_complement(const PolicyComplement& complement,
                                          const ppo::Memory& memory, double gamma) {
  std::vector<double> returns = ppo::discounted_returns(memory, gamma);
  return score_complement(complement, memory, returns);
}

PolicyComplement rank_and_select(const PolicyComplement& complement, const ppo::Memory& memory,
                                 std::size_t r, std::span<const double> returns) {
  if (complement.empty() && r > 0) {
    throw std::invalid_argument("cannot select from an empty complement");
  }
  if (r > complement.size()) {
    throw std::invalid_argument("selection count " + std::to_string(r) +
                                " exceeds complement size " +
                                std::to_string(complement.size()));
  }
  std::vector<ScoredEntry> scored = score_complement(complement, memory, returns);
  PolicyComplement out;
  for (std::size_t k = 0; k < r; ++k) {
    out.entries.push_back(complement.entries[scored[k].index]);
  }
  return out;
}

PolicyComplement rank_and_select(const PolicyComplement& complement, const ppo::Memory& memory,
                                 std::size_t r, double gamma) {
  std::vector<double> returns = ppo::discounted_returns(memory, gamma);
  return rank_and_select(complement, memory, r, returns);
}

namespace {

// Gain value and gradient in one pass, templated so duals can ride through.
template <class T>
T gain_with_grad(const nn::NetworkSpec& spec, std::span<const T> params,
                 const ppo::Memory& memory, std::span<const double> behavior_log_probs,
                 std::span<const double> returns, double eps_clip, std::vector<T>& grad) {
  using std::exp;
  std::size_t n = memory.size();
  if (n == 0) throw std::invalid_argument("memory is empty");
  if (behavior_log_probs.size() != n || returns.size() != n) {
    throw std::invalid_argument("behavior log-probs and returns must match memory size");
  }
  nn::Workspace<T> ws;
  std::vector<T> d_head(spec.output_size());
  grad.assign(params.size(), T(0.0));
  T total(0.0);
  T inv_n(1.0 / static_cast<double>(n));
  for (std::size_t t = 0; t < n; ++t) {
    T log_pi = ppo::detail::traced_log_prob<T>(spec, params, memory.states[t],
                                               memory.actions[t], ws);
    T rho = exp(log_pi - T(behavior_log_probs[t]));
    if (!std::isfinite(nn::value_of(rho))) {
      throw std::runtime_error("importance ratio is not finite at sample " +
                               std::to_string(t));
    }
    T clipped = rho;
    if (clipped < T(1.0 - eps_clip)) clipped = T(1.0 - eps_clip);
    if (clipped > T(1.0 + eps_clip)) clipped = T(1.0 + eps_clip);
    T r(returns[t]);
    T unclipped_term = rho * r;
    T clipped_term = clipped * r;
    bool use_unclipped = !(clipped_term < unclipped_term);
    total += use_unclipped ? unclipped_term : clipped_term;
    if (use_unclipped) {
      // d(gain)/d(log pi) = inv_n * rho * R on the unclipped branch; the
      // clipped branch is flat in the parameters when selected.
      T d_log_pi = inv_n * rho * r;
      ppo::detail::log_prob_output_grad<T>(ws.post.back(), memory.actions[t], d_log_pi,
                                           d_head);
      nn::backprop<T>(spec, params, ws, d_head, grad);
    }
  }
  return total * inv_n;
}

}  // namespace

double memory_gain(const nn::ParameterVector& policy, const ppo::Memory& memory,
                   std::span<const double> behavior_log_probs,
                   std::span<const double> returns, double eps_clip) {
  memory.validate();
  std::vector<double> grad;
  return gain_with_grad<double>(policy.spec, policy.values, memory, behavior_log_probs,
                                returns, eps_clip, grad);
}

std::vector<double> memory_gain_gradient(const nn::ParameterVector& policy,
                                         const ppo::Memory& memory,
                                         std::span<const double> behavior_log_probs,
                                         std::span<const double> returns, double eps_clip,
                                         double* value_out) {
  memory.validate();
  std::vector<double> grad;
  double value = gain_with_grad<double>(policy.spec, policy.values, memory,
                                        behavior_log_probs, returns, eps_clip, grad);
  if (value_out) *value_out = value;
  return grad;
}

std::vector<double> memory_gain_hvp(const nn::ParameterVector& policy,
                                    const ppo::Memory& memory,
                                    std::span<const double> behavior_log_probs,
                                    std::span<const double> returns, double eps_clip,
                                    std::span<const double> direction) {
  memory.validate();
  if (direction.size() != policy.values.size()) {
    throw std::invalid_argument("direction length does not match parameter count");
  }
  std::vector<nn::Dual> dual_params(policy.values.size());
  for (std::size_t i = 0; i < dual_params.size(); ++i) {
    dual_params[i] = nn::Dual(policy.values[i], direction[i]);
  }
  std::vector<nn::Dual> grad;
  gain_with_grad<nn::Dual>(policy.spec, dual_params, memory, behavior_log_probs, returns,
                           eps_clip, grad);
  std::vector<double> hvp(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) hvp[i] = grad[i].d;
  return hvp;
}

std::vector<double> delta_theta(Variant variant, const nn::ParameterVector& theta_out,
                                std::span<const InnerResult> results) {
  std::size_t n = theta_out.values.size();
  std::vector<double> delta(n, 0.0);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const InnerResult& r = results[i];
    switch (variant) {
      case Variant::maml: {
        if (!r.jacobian_product) {
          throw std::invalid_argument(
              "second-order variant needs jacobian products; task " + std::to_string(i) +
              " has none");
        }
        if (r.jacobian_product->size() != n) {
          throw std::invalid_argument("jacobian product length mismatch");
        }
        for (std::size_t k = 0; k < n; ++k) delta[k] += (*r.jacobian_product)[k];
        break;
      }
      case Variant::fomaml: {
        if (r.test_gradient.size() != n) {
          throw std::invalid_argument("test gradient length mismatch");
        }
        for (std::size_t k = 0; k < n; ++k) delta[k] += r.test_gradient[k];
        break;
      }
      case Variant::reptile: {
        if (r.theta_final.values.size() != n) {
          throw std::invalid_argument("inner parameter length mismatch");
        }
        for (std::size_t k = 0; k < n; ++k) {
          delta[k] += r.theta_final.values[k] - theta_out.values[k];
        }
        break;
      }
    }
  }
  return delta;
}

namespace {

// Inner fine-tuning on a fixed buffer: k_in plain ascent steps on the gain,
// ratios anchored to the starting parameters' own log-probabilities. For the
// second-order variant the chain of (I + alpha_in * H) factors through the
// visited iterates is applied to the test gradient.
InnerResult fine_tune_on_memory(const nn::ParameterVector& start, const ppo::Memory& memory,
                                std::span<const double> behavior_log_probs,
                                std::span<const double> returns, const MetaConfig& config) {
  nn::ParameterVector phi = start;
  std::vector<nn::ParameterVector> iterates;
  for (int k = 0; k < config.k_in; ++k) {
    if (config.variant == Variant::maml) iterates.push_back(phi);
    std::vector<double> g = memory_gain_gradient(phi, memory, behavior_log_probs, returns,
                                                 config.eps_clip);
    for (std::size_t i = 0; i < phi.values.size(); ++i) {
      phi.values[i] += config.alpha_in * g[i];
    }
  }
  InnerResult res;
  res.test_gradient = memory_gain_gradient(phi, memory, behavior_log_probs, returns,
                                           config.eps_clip);
  if (config.variant == Variant::maml) {
    std::vector<double> v = res.test_gradient;
    for (auto it = iterates.rbegin(); it != iterates.rend(); ++it) {
      std::vector<double> hv = memory_gain_hvp(*it, memory, behavior_log_probs, returns,
                                               config.eps_clip, v);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += config.alpha_in * hv[i];
    }
    res.jacobian_product = std::move(v);
  }
  res.theta_final = std::move(phi);
  return res;
}

}  // namespace

MetaUpdateResult emaml_meta_update(const nn::ParameterVector& theta,
                                   const ppo::Memory& memory,
                                   const PolicyComplement& complement,
                                   const MetaConfig& config) {
  theta.validate();
  MetaUpdateResult result;
  result.params = theta;
  if (complement.empty()) {
    result.empty_complement = true;
    return result;
  }
  complement.validate();
  memory.validate();
  for (const ComplementEntry& e : complement.entries) {
    if (!(e.params.spec == theta.spec)) {
      throw std::invalid_argument("complement entry '" + e.provenance +
                                  "' does not match the controller topology");
    }
  }
  if (config.rank > complement.size()) {
    throw std::invalid_argument("rank " + std::to_string(config.rank) +
                                " exceeds complement size " +
                                std::to_string(complement.size()));
  }

  // Standardized returns for both ranking and the gain: with raw positive
  // returns the score rewards plain agreement with the collecting policy;
  // centering makes it reward agreement on above-average outcomes only.
  std::vector<double> returns = ppo::standardized_returns(memory, config.gamma);

  std::vector<ScoredEntry> scored = score_complement(complement, memory, returns);
  for (std::size_t k = 0; k < scored.size(); ++k) {
    result.scores.push_back({complement.entries[scored[k].index].provenance,
                             scored[k].score, k < config.rank});
  }

  // Ratio anchors: each selected entry's own log-probabilities on the buffer.
  std::vector<std::vector<double>> anchors(config.rank);
  for (std::size_t k = 0; k < config.rank; ++k) {
    const nn::ParameterVector& p = complement.entries[scored[k].index].params;
    anchors[k].resize(memory.size());
    for (std::size_t t = 0; t < memory.size(); ++t) {
      anchors[k][t] = ppo::action_log_prob(p, memory.states[t], memory.actions[t]);
    }
  }

  for (int k_out = 0; k_out < config.k_out; ++k_out) {
    std::vector<InnerResult> inner;
    inner.reserve(config.rank);
    for (std::size_t k = 0; k < config.rank; ++k) {
      inner.push_back(fine_tune_on_memory(complement.entries[scored[k].index].params,
                                          memory, anchors[k], returns, config));
    }
    std::vector<double> delta = delta_theta(config.variant, result.params, inner);
    for (std::size_t i = 0; i < result.params.values.size(); ++i) {
      result.params.values[i] += config.alpha_out * delta[i];
    }
  }
  result.params.validate();
  return result;
}

void ProcessFamily::validate() const {
  env::validate(base);
  if (!(jitter >= 0.0 && jitter < 1.0)) {
    throw std::invalid_argument("family jitter must be in [0, 1)");
  }
}

env::ProcessParams ProcessFamily::sample(std::mt19937_64& gen) const {
  auto factor = [&gen, this]() { return rng::uniform(gen, 1.0 - jitter, 1.0 + jitter); };
  if (const auto* cp = std::get_if<env::CartPoleParams>(&base)) {
    env::CartPoleParams p = *cp;
    p.cart_mass *= factor();
    p.pole_mass *= factor();
    p.pole_half_length *= factor();
    p.force_mag *= factor();
    return p;
  }
  env::FuelTankParams p = std::get<env::FuelTankParams>(base);
  for (double& r : p.resistances) r *= factor();
  for (double& r : p.pump_rates) r *= factor();
  for (double& r : p.engine_rates) r *= factor();
  return p;
}

nn::ParameterVector maml_train(const nn::ParameterVector& theta, const ProcessFamily& family,
                               const MetaConfig& config, int max_episode_steps,
                               std::uint64_t seed) {
  theta.validate();
  family.validate();
  nn::ParameterVector out = theta;
  std::mt19937_64 gen(seed);

  for (int k_out = 0; k_out < config.k_out; ++k_out) {
    std::vector<InnerResult> inner;
    inner.reserve(config.maml_tasks);
    for (int task = 0; task < config.maml_tasks; ++task) {
      env::ProcessParams process = family.sample(gen);
      auto sim = env::make_simulator(process, max_episode_steps);

      nn::ParameterVector phi = out;
      std::vector<nn::ParameterVector> iterates;
      std::vector<ppo::Memory> buffers;
      for (int k = 0; k < config.k_in; ++k) {
        ppo::Memory mem = ppo::collect_memory(*sim, phi, config.memory_size, gen());
        std::vector<double> returns = ppo::standardized_returns(mem, config.gamma);
        std::vector<double> g = memory_gain_gradient(phi, mem, mem.log_probs_old, returns,
                                                     config.eps_clip);
        if (config.variant == Variant::maml) {
          iterates.push_back(phi);
          buffers.push_back(std::move(mem));
        }
        for (std::size_t i = 0; i < phi.values.size(); ++i) {
          phi.values[i] += config.alpha_in * g[i];
        }
      }

      ppo::Memory test_mem = ppo::collect_memory(*sim, phi, config.memory_size, gen());
      std::vector<double> test_returns = ppo::standardized_returns(test_mem, config.gamma);
      InnerResult res;
      res.test_gradient = memory_gain_gradient(phi, test_mem, test_mem.log_probs_old,
                                               test_returns, config.eps_clip);
      if (config.variant == Variant::maml) {
        std::vector<double> v = res.test_gradient;
        for (std::size_t k = iterates.size(); k-- > 0;) {
          std::vector<double> returns =
              ppo::standardized_returns(buffers[k], config.gamma);
          std::vector<double> hv =
              memory_gain_hvp(iterates[k], buffers[k], buffers[k].log_probs_old, returns,
                              config.eps_clip, v);
          for (std::size_t i = 0; i < v.size(); ++i) v[i] += config.alpha_in * hv[i];
        }
        res.jacobian_product = std::move(v);
      }
      res.theta_final = std::move(phi);
      inner.push_back(std::move(res));
    }
    std::vector<double> delta = delta_theta(config.variant, out, inner);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      out.values[i] += config.alpha_out * delta[i];
    }
  }
  out.validate();
  return out;
}

double jsd_bernoulli(double pa, double pb) {
  auto kl_term = [](double p, double q) { return p > 0.0 ? p * std::log(p / q) : 0.0; };
  double m1 = 0.5 * (pa + pb);
  double m0 = 0.5 * ((1.0 - pa) + (1.0 - pb));
  return 0.5 * (kl_term(pa, m1) + kl_term(1.0 - pa, m0)) +
         0.5 * (kl_term(pb, m1) + kl_term(1.0 - pb, m0));
}

double js_divergence(const nn::ParameterVector& a, const nn::ParameterVector& b,
                     const ppo::Memory& memory) {
  memory.validate();
  if (memory.size() == 0) throw std::invalid_argument("memory is empty");
  if (!(a.spec == b.spec)) {
    throw std::invalid_argument("policies have different network topologies");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < memory.size(); ++t) {
    std::vector<double> pa = ppo::action_distribution(a, memory.states[t]);
    std::vector<double> pb = ppo::action_distribution(b, memory.states[t]);
    for (std::size_t j = 0; j < pa.size(); ++j) total += jsd_bernoulli(pa[j], pb[j]);
  }
  return total / static_cast<double>(memory.size());
}

std::vector<double> total_divergences(const PolicyComplement& complement,
                                      const ppo::Memory& memory) {
  complement.validate();
  memory.validate();
  if (memory.size() == 0) throw std::invalid_argument("memory is empty");
  std::size_t n = complement.size();
  // Cache per-entry distributions over the buffer; pairs then reuse them.
  std::vector<std::vector<std::vector<double>>> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    probs[i].reserve(memory.size());
    for (std::size_t t = 0; t < memory.size(); ++t) {
      probs[i].push_back(
          ppo::action_distribution(complement.entries[i].params, memory.states[t]));
    }
  }
  std::vector<double> totals(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = 0.0;
      for (std::size_t t = 0; t < memory.size(); ++t) {
        for (std::size_t b = 0; b < probs[i][t].size(); ++b) {
          d += jsd_bernoulli(probs[i][t][b], probs[j][t][b]);
        }
      }
      d /= static_cast<double>(memory.size());
      totals[i] += d;
      totals[j] += d;
    }
  }
  return totals;
}

PolicyComplement curate_complement(const PolicyComplement& candidates, std::size_t s,
                                   const ppo::Memory& memory,
                                   std::vector<double>* d_total_out) {
  if (s > candidates.size()) {
    throw std::invalid_argument("curated size " + std::to_string(s) +
                                " exceeds candidate count " +
                                std::to_string(candidates.size()));
  }
  std::vector<double> totals = total_divergences(candidates, memory);
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&totals](std::size_t a, std::size_t b) { return totals[a] > totals[b]; });
  PolicyComplement out;
  if (d_total_out) d_total_out->clear();
  for (std::size_t k = 0; k < s; ++k) {
    out.entries.push_back(candidates.entries[order[k]]);
    if (d_total_out) d_total_out->push_back(totals[order[k]]);
  }
  return out;
}

}  // namespace ftcrl::meta
