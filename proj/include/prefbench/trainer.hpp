#pragma once

// SFT on chosen responses, checkpoint selection by gold score, then
// preference optimization of a copy of the SFT policy against a frozen
// reference. Gradients are averaged over each minibatch and applied with Adam.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefbench/error.hpp"
#include "prefbench/numeric.hpp"
#include "prefbench/objectives.hpp"
#include "prefbench/optimizer.hpp"
#include "prefbench/policy.hpp"
#include "prefbench/random.hpp"
#include "prefbench/synthenv.hpp"

namespace prefbench {

struct TrialConfig {
  ObjectiveConfig objective;
  double learning_rate = 1e-3;
  int epochs = 1;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    objective.validate();
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning rate must be finite and nonnegative");
    }
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }

  friend bool operator==(const TrialConfig&, const TrialConfig&) = default;
};

inline nlohmann::json to_json(const TrialConfig& t) {
  nlohmann::json j = {{"method", to_string(t.objective.method)},
                      {"beta", t.objective.beta},
                      {"learning_rate", t.learning_rate},
                      {"epochs", t.epochs},
                      {"batch_size", t.batch_size},
                      {"seed", t.seed}};
  j["gamma"] = t.objective.gamma ? nlohmann::json(*t.objective.gamma) : nlohmann::json(nullptr);
  return j;
}

inline TrialConfig trial_from_json(const nlohmann::json& j) {
  TrialConfig t;
  t.objective.method = method_from_string(j.at("method").get<std::string>());
  t.objective.beta = j.at("beta").get<double>();
  if (j.contains("gamma") && !j.at("gamma").is_null()) t.objective.gamma = j.at("gamma").get<double>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.epochs = j.at("epochs").get<int>();
  t.batch_size = j.at("batch_size").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

// Content hash of the full trial configuration (seed included).
inline std::string trial_id(const TrialConfig& t) { return hex64(hash_string(to_json(t).dump())); }

struct SftConfig {
  double learning_rate = 1e-2;
  int epochs = 1;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const SftConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

enum class Stage { sft, po };

struct Checkpoint {
  PolicyParams params;
  Stage stage = Stage::sft;
  nlohmann::json hyper;  // TrialConfig or SftConfig as JSON
  std::vector<double> loss_trace;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json j = policy_to_json(c.params);
  j["stage"] = c.stage == Stage::sft ? "sft" : "po";
  j["hyper"] = c.hyper;
  j["loss_trace"] = c.loss_trace;
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint c;
  c.params = policy_from_json(j);
  const auto stage = j.value("stage", std::string("sft"));
  if (stage != "sft" && stage != "po") throw ConfigError("unknown checkpoint stage '" + stage + "'");
  c.stage = stage == "sft" ? Stage::sft : Stage::po;
  c.hyper = j.value("hyper", nlohmann::json::object());
  c.loss_trace = j.value("loss_trace", std::vector<double>{});
  return c;
}

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace detail

inline Checkpoint sft_train(const PolicyParams& init, const DatasetBundle& data, const SftConfig& cfg) {
  if (data.train.empty()) throw ConfigError("SFT needs a nonempty training set");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("SFT epochs and batch_size must be >= 1");
  if (!(cfg.learning_rate >= 0.0)) throw ConfigError("SFT learning rate must be nonnegative");

  Checkpoint out{freeze(init, Role::sft), Stage::sft, to_json(cfg), {}};
  auto& params = out.params;
  AdamState adam(params.logits().size());
  std::vector<double> grad(params.logits().size());
  const std::size_t n = data.train.size();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::shuffled_indices(n, derive_seed(cfg.seed, "sft_shuffle", epoch));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const auto& ex = data.train[order[b]];
        // Ascent on log-likelihood is descent on its negation.
        epoch_loss -= accumulate_seq_logprob_grad(params, ex.prompt, ex.chosen, -scale, grad);
      }
      optimizer_step(adam, params.logits(), grad, cfg.learning_rate);
    }
    out.loss_trace.push_back(epoch_loss / static_cast<double>(n));
  }
  return out;
}

// Reference log-probabilities of (chosen, rejected) for every train pair.
struct ReferenceCache {
  std::vector<double> chosen;
  std::vector<double> rejected;
};

inline ReferenceCache reference_logprobs(const PolicyParams& ref, const DatasetBundle& data) {
  ReferenceCache cache;
  cache.chosen.reserve(data.train.size());
  cache.rejected.reserve(data.train.size());
  for (const auto& ex : data.train) {
    cache.chosen.push_back(seq_logprob(ref, ex.prompt, ex.chosen));
    cache.rejected.push_back(seq_logprob(ref, ex.prompt, ex.rejected));
  }
  return cache;
}

// Mean preference loss over the selected pairs. When grad is nonempty the
// gradient of that mean with respect to theta's logits is added into it.
inline double po_batch_loss(const PolicyParams& theta, const ReferenceCache* ref,
                            const DatasetBundle& data, std::span<const std::size_t> indices,
                            const ObjectiveConfig& objective, std::span<double> grad) {
  if (uses_reference(objective.method) && ref == nullptr) {
    throw ConfigError(std::string(to_string(objective.method)) + " needs a reference policy");
  }
  const double scale = 1.0 / static_cast<double>(indices.size());
  double total = 0.0;
  for (std::size_t i : indices) {
    const auto& ex = data.train[i];
    PairLogProbs p;
    p.s_w_theta = seq_logprob(theta, ex.prompt, ex.chosen);
    p.s_l_theta = seq_logprob(theta, ex.prompt, ex.rejected);
    p.len_w = static_cast<int>(ex.chosen.size());
    p.len_l = static_cast<int>(ex.rejected.size());
    if (uses_reference(objective.method)) {
      p.s_w_ref = ref->chosen[i];
      p.s_l_ref = ref->rejected[i];
    }
    const LossResult r = po_loss(objective, p);
    total += r.loss;
    if (!grad.empty()) {
      accumulate_seq_logprob_grad(theta, ex.prompt, ex.chosen, scale * r.d_s_w_theta, grad);
      accumulate_seq_logprob_grad(theta, ex.prompt, ex.rejected, scale * r.d_s_l_theta, grad);
    }
  }
  return total * scale;
}

inline double po_mean_loss(const PolicyParams& theta, const ReferenceCache* ref,
                           const DatasetBundle& data, const ObjectiveConfig& objective) {
  std::vector<std::size_t> all(data.train.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return po_batch_loss(theta, ref, data, all, objective, {});
}

// theta starts as a copy of the SFT policy. The reference is a frozen copy
// of the same checkpoint and is never touched by SimPO.
inline Checkpoint po_train(const Checkpoint& sft, const DatasetBundle& data, const TrialConfig& trial) {
  if (sft.stage != Stage::sft) throw ConfigError("preference training must start from an SFT checkpoint");
  if (data.train.empty()) throw ConfigError("preference training needs a nonempty training set");
  trial.validate();

  std::optional<ReferenceCache> ref;
  if (uses_reference(trial.objective.method)) {
    ref = reference_logprobs(freeze(sft.params, Role::ref), data);
  }

  Checkpoint out{freeze(sft.params, Role::theta), Stage::po, to_json(trial), {}};
  auto& theta = out.params;
  AdamState adam(theta.logits().size());
  std::vector<double> grad(theta.logits().size());
  const std::size_t n = data.train.size();

  for (int epoch = 0; epoch < trial.epochs; ++epoch) {
    const auto order = detail::shuffled_indices(n, derive_seed(trial.seed, "po_shuffle", epoch));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += trial.batch_size) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(trial.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const double batch_loss =
          po_batch_loss(theta, ref ? &*ref : nullptr, data, batch, trial.objective, grad);
      epoch_loss += batch_loss * static_cast<double>(batch.size());
      optimizer_step(adam, theta.logits(), grad, trial.learning_rate);
    }
    out.loss_trace.push_back(epoch_loss / static_cast<double>(n));
  }
  return out;
}

struct SftSelection {
  std::size_t best = 0;
  std::vector<double> mean_scores;
};

// Highest mean gold score on the eval prompts wins; ties keep the lowest index.
inline SftSelection select_best_sft(const std::vector<Checkpoint>& candidates,
                                    const std::vector<Sequence>& eval_prompts,
                                    const SamplerConfig& sampler, const GoldRewardSpec& gold,
                                    const VocabSpec& vocab, std::uint64_t seed) {
  if (candidates.empty()) throw ConfigError("SFT selection needs at least one candidate");
  if (eval_prompts.empty()) throw ConfigError("SFT selection needs eval prompts");
  SftSelection sel;
  for (const auto& c : candidates) {
    const auto responses = generate(c.params, eval_prompts, sampler, seed);
    std::vector<double> scores;
    scores.reserve(responses.size());
    for (const auto& r : responses) scores.push_back(gold_reward(gold, vocab, r));
    sel.mean_scores.push_back(mean_of(scores));
  }
  for (std::size_t i = 1; i < sel.mean_scores.size(); ++i) {
    if (sel.mean_scores[i] > sel.mean_scores[sel.best]) sel.best = i;
  }
  return sel;
}

// Policy that follows the reward greedily: it cycles through helpful tokens
// (never repeating one) and does not stop on its own, so the sampler's
// max_len truncation ends every response. With positive w_help this is the
// analytic optimum of the class-count terms.
inline PolicyParams make_greedy_policy(const VocabSpec& vocab, int order, double margin = 60.0) {
  PolicyParams p(vocab.size, order, vocab.bos, vocab.eos, Role::theta);
  const auto helpful = vocab.tokens_of(TokenClass::helpful);
  if (helpful.empty()) throw ConfigError("greedy policy needs at least one helpful token");
  for (std::size_t ctx = 0; ctx < p.num_contexts(); ++ctx) {
    const auto prev = static_cast<TokenId>(ctx % static_cast<std::size_t>(vocab.size));
    auto row = p.row(ctx);
    std::fill(row.begin(), row.end(), -margin);
    std::size_t pick = 0;
    for (std::size_t h = 0; h < helpful.size(); ++h) {
      if (helpful[h] == prev) pick = (h + 1) % helpful.size();
    }
    row[helpful[pick]] = margin;
  }
  return p;
}

}  // namespace prefbench
