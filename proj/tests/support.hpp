#pragma once

// Helpers shared by the test binaries: finite differences, small fixtures,
// and synthetic run records for the analytics oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prefbench/prefbench.hpp"

namespace pbtest {

using namespace prefbench;

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Five-point stencil; truncation error O(h^4).
inline double five_point_diff(const std::function<double(double)>& f, double x, double h) {
  return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12.0 * h);
}

inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

// Log-probs of realistic magnitude for sequences of 1..64 tokens.
inline PairLogProbs random_pair(Rng& rng) {
  PairLogProbs p;
  p.len_w = 1 + static_cast<int>(rng.below(64));
  p.len_l = 1 + static_cast<int>(rng.below(64));
  p.s_w_theta = -3.0 * p.len_w * rng.uniform();
  p.s_l_theta = -3.0 * p.len_l * rng.uniform();
  p.s_w_ref = -3.0 * p.len_w * rng.uniform();
  p.s_l_ref = -3.0 * p.len_l * rng.uniform();
  return p;
}

inline ObjectiveConfig random_objective(Method m, Rng& rng) {
  const GridSpec grid;
  auto pick = [&](const std::vector<double>& v) { return v[rng.below(v.size())]; };
  switch (m) {
    case Method::dpo: return {m, pick(grid.dpo_beta), std::nullopt};
    case Method::simpo: return {m, pick(grid.simpo_beta), pick(grid.simpo_gamma)};
    case Method::lndpo: return {m, pick(grid.lndpo_beta), std::nullopt};
  }
  return {};
}

// Loss derivative check against a five-point stencil in each argument.
inline double max_loss_grad_error(const ObjectiveConfig& cfg, const PairLogProbs& p) {
  const auto analytic = po_loss(cfg, p);
  auto at_w = [&](double x) {
    auto q = p;
    q.s_w_theta = x;
    return po_loss(cfg, q).loss;
  };
  auto at_l = [&](double x) {
    auto q = p;
    q.s_l_theta = x;
    return po_loss(cfg, q).loss;
  };
  const double h = 1e-3;
  return std::max(rel_err(analytic.d_s_w_theta, five_point_diff(at_w, p.s_w_theta, h)),
                  rel_err(analytic.d_s_l_theta, five_point_diff(at_l, p.s_l_theta, h)));
}

// Worst relative error between the analytic gradient of the mean *PO loss and
// central differences (h = 1e-5), over `n_logits` randomly chosen entries of a
// theta perturbed away from the reference.
inline double full_chain_max_error(const ObjectiveConfig& objective, const DatasetBundle& data,
                                   const PolicyParams& ref, std::uint64_t seed, int n_logits = 50) {
  Rng rng(seed);
  PolicyParams theta = freeze(ref, Role::theta);
  for (double& v : theta.logits()) v += 0.5 * (rng.uniform() - 0.5);
  const auto cache = reference_logprobs(ref, data);
  const ReferenceCache* cache_ptr = uses_reference(objective.method) ? &cache : nullptr;

  std::vector<std::size_t> all(data.train.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<double> grad(theta.logits().size(), 0.0);
  po_batch_loss(theta, cache_ptr, data, all, objective, grad);

  double worst = 0.0;
  for (int k = 0; k < n_logits; ++k) {
    const auto idx = static_cast<std::size_t>(rng.below(theta.logits().size()));
    auto f = [&](double x) {
      PolicyParams t = theta;
      t.logits()[idx] = x;
      return po_mean_loss(t, cache_ptr, data, objective);
    };
    worst = std::max(worst, rel_err(grad[idx], central_diff(f, theta.logits()[idx], 1e-5)));
  }
  return worst;
}

// Two policies over {bos, a, eos} whose only random choice is the first
// token: a with probability pa, else eos. After a, eos follows with
// probability 1, so every response is a single step.
inline PolicyParams two_point_policy(double pa) {
  PolicyParams p(3, 1, 0, 2, Role::theta);
  auto first = p.row(p.initial_context());
  first[0] = -800.0;
  first[1] = std::log(pa);
  first[2] = std::log(1.0 - pa);
  auto after_a = p.row(1);
  after_a[0] = -800.0;
  after_a[1] = -800.0;
  after_a[2] = 0.0;
  return p;
}

inline EnvConfig small_env() {
  EnvConfig env = default_env_config();
  env.data_sampler.max_len = 24;
  return env;
}

inline DatasetBundle small_bundle(std::size_t n_train, std::size_t n_eval, std::uint64_t seed,
                                  const EnvConfig& env = small_env()) {
  return build_dataset(env, n_train, n_eval, make_data_policy(env, seed), seed);
}

inline PolicyParams random_policy(int vocab, int order, TokenId bos, TokenId eos, std::uint64_t seed,
                                  double scale = 1.0) {
  PolicyParams p(vocab, order, bos, eos, Role::theta);
  Rng rng(seed);
  for (double& v : p.logits()) v = scale * (2.0 * rng.uniform() - 1.0);
  return p;
}

inline TrialConfig trial(Method m, double beta, std::optional<double> gamma, double lr, int epochs,
                         int batch = 8, std::uint64_t seed = 1) {
  TrialConfig t;
  t.objective = {m, beta, gamma};
  t.learning_rate = lr;
  t.epochs = epochs;
  t.batch_size = batch;
  t.seed = seed;
  return t;
}

// An ok record whose evaluation is built from per-sample gold scores.
inline RunRecord make_record(const TrialConfig& t, const std::vector<double>& scores,
                             const std::string& prompt_hash = "h0", double length = 10.0, double kl = 1.0) {
  RunRecord r;
  r.trial = t;
  r.trial_id = trial_id(t);
  EvalReport e;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    SampleEval s;
    s.prompt_id = i;
    s.gold_score = scores[i];
    s.length = static_cast<int>(length);
    s.logp_theta = kl;
    s.logp_sft = 0.0;
    s.chosen_score = 0.0;
    s.sft_score = 0.0;
    s.sft_length = 5;
    e.per_sample.push_back(s);
  }
  summarize(e);
  e.prompt_set_hash = prompt_hash;
  r.eval = e;
  return r;
}

}  // namespace pbtest
