#pragma once

// Order-k autoregressive softmax policy. One row of logits per context,
// where a context is the last k tokens of the bos-padded prompt+response.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefbench/error.hpp"
#include "prefbench/numeric.hpp"
#include "prefbench/random.hpp"

namespace prefbench {

using TokenId = std::int32_t;
using Sequence = std::vector<TokenId>;

enum class Role { theta, ref, sft, data };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::theta: return "theta";
    case Role::ref: return "ref";
    case Role::sft: return "sft";
    case Role::data: return "data";
  }
  return "?";
}

inline Role role_from_string(const std::string& s) {
  if (s == "theta") return Role::theta;
  if (s == "ref") return Role::ref;
  if (s == "sft") return Role::sft;
  if (s == "data") return Role::data;
  throw ConfigError("unknown policy role '" + s + "'");
}

struct SamplerConfig {
  double temperature = 0.7;
  double top_p = 0.95;
  int max_len = 256;

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw ConfigError("sampler.temperature must be a positive finite number");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("sampler.top_p must lie in (0, 1]");
    if (max_len < 1) throw ConfigError("sampler.max_len must be >= 1");
  }
};

class PolicyParams {
 public:
  PolicyParams() = default;

  PolicyParams(int vocab_size, int order, TokenId bos, TokenId eos, Role role)
      : vocab_size_(vocab_size), order_(order), bos_(bos), eos_(eos), role_(role) {
    if (vocab_size < 1) throw ConfigError("policy vocab size must be >= 1");
    if (order < 1) throw ConfigError("policy order must be >= 1");
    if (bos < 0 || bos >= vocab_size || eos < 0 || eos >= vocab_size) {
      throw ConfigError("bos/eos must be valid token ids");
    }
    std::size_t contexts = 1;
    for (int i = 0; i < order; ++i) contexts *= static_cast<std::size_t>(vocab_size);
    num_contexts_ = contexts;
    logits_.assign(contexts * static_cast<std::size_t>(vocab_size), 0.0);
  }

  int vocab_size() const { return vocab_size_; }
  int order() const { return order_; }
  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  Role role() const { return role_; }
  void set_role(Role r) { role_ = r; }
  std::size_t num_contexts() const { return num_contexts_; }

  std::span<double> logits() { return logits_; }
  std::span<const double> logits() const { return logits_; }

  std::span<double> row(std::size_t ctx) {
    return std::span<double>(logits_).subspan(ctx * vocab_size_, vocab_size_);
  }
  std::span<const double> row(std::size_t ctx) const {
    return std::span<const double>(logits_).subspan(ctx * vocab_size_, vocab_size_);
  }

  // Context with every slot holding bos.
  std::size_t initial_context() const {
    std::size_t ctx = 0;
    for (int i = 0; i < order_; ++i) ctx = ctx * vocab_size_ + static_cast<std::size_t>(bos_);
    return ctx;
  }
  std::size_t advance(std::size_t ctx, TokenId tok) const {
    return (ctx * vocab_size_ + static_cast<std::size_t>(tok)) % num_contexts_;
  }

  void check_token(TokenId tok) const {
    if (tok < 0 || tok >= vocab_size_) {
      throw DomainError("token id " + std::to_string(tok) + " outside vocabulary of size " +
                        std::to_string(vocab_size_));
    }
  }

  void check_finite() const {
    for (double v : logits_) {
      if (!std::isfinite(v)) throw DomainError("policy logits contain a non-finite value");
    }
  }

  bool same_shape(const PolicyParams& o) const {
    return vocab_size_ == o.vocab_size_ && order_ == o.order_ && bos_ == o.bos_ && eos_ == o.eos_;
  }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  int vocab_size_ = 0;
  int order_ = 1;
  TokenId bos_ = 0;
  TokenId eos_ = 0;
  Role role_ = Role::theta;
  std::size_t num_contexts_ = 0;
  std::vector<double> logits_;
};

// Independent value copy tagged with the requested role.
inline PolicyParams freeze(const PolicyParams& params, Role role) {
  PolicyParams copy = params;
  copy.set_role(role);
  return copy;
}

inline std::size_t context_after_prompt(const PolicyParams& params, std::span<const TokenId> prompt) {
  std::size_t ctx = params.initial_context();
  for (TokenId t : prompt) {
    params.check_token(t);
    ctx = params.advance(ctx, t);
  }
  return ctx;
}

// log pi(y | x), summed over every token of y including the terminal eos.
inline double seq_logprob(const PolicyParams& params, std::span<const TokenId> prompt,
                          std::span<const TokenId> response) {
  std::size_t ctx = context_after_prompt(params, prompt);
  double total = 0.0;
  for (TokenId t : response) {
    params.check_token(t);
    const auto row = params.row(ctx);
    total += row[t] - log_sum_exp(row);
    ctx = params.advance(ctx, t);
  }
  return total;
}

// Adds scale * d seq_logprob / d logits into a dense gradient buffer shaped like
// params.logits(). Returns seq_logprob.
inline double accumulate_seq_logprob_grad(const PolicyParams& params,
                                          std::span<const TokenId> prompt,
                                          std::span<const TokenId> response, double scale,
                                          std::span<double> grad) {
  const std::size_t vocab = static_cast<std::size_t>(params.vocab_size());
  std::size_t ctx = context_after_prompt(params, prompt);
  double total = 0.0;
  for (TokenId t : response) {
    params.check_token(t);
    const auto row = params.row(ctx);
    const double lse = log_sum_exp(row);
    total += row[t] - lse;
    double* g = grad.data() + ctx * vocab;
    for (std::size_t j = 0; j < vocab; ++j) g[j] -= scale * std::exp(row[j] - lse);
    g[t] += scale;
    ctx = params.advance(ctx, t);
  }
  return total;
}

// Gradient rows keyed by context index; only visited contexts appear.
struct SparseGrad {
  std::map<std::size_t, std::vector<double>> rows;
};

struct LogprobWithGrad {
  double value = 0.0;
  SparseGrad grad;
};

inline LogprobWithGrad seq_logprob_grad(const PolicyParams& params, std::span<const TokenId> prompt,
                                        std::span<const TokenId> response) {
  const std::size_t vocab = static_cast<std::size_t>(params.vocab_size());
  LogprobWithGrad out;
  std::vector<double> probs(vocab);
  std::size_t ctx = context_after_prompt(params, prompt);
  for (TokenId t : response) {
    params.check_token(t);
    const auto row = params.row(ctx);
    softmax(row, probs);
    out.value += row[t] - log_sum_exp(row);
    auto& g = out.grad.rows[ctx];
    if (g.empty()) g.assign(vocab, 0.0);
    for (std::size_t j = 0; j < vocab; ++j) g[j] -= probs[j];
    g[t] += 1.0;
    ctx = params.advance(ctx, t);
  }
  return out;
}

// Keeps the smallest most-probable prefix whose mass reaches top_p and
// renormalizes it. Ties in probability keep the lower token id first.
inline std::vector<double> nucleus(std::span<const double> probs, double top_p) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<double> out(probs.size(), 0.0);
  double kept = 0.0;
  std::size_t n_kept = 0;
  for (std::size_t idx : order) {
    kept += probs[idx];
    ++n_kept;
    if (kept >= top_p) break;
  }
  for (std::size_t i = 0; i < n_kept; ++i) out[order[i]] = probs[order[i]] / kept;
  return out;
}

// One autoregressive draw. If max_len tokens come out without eos, eos is
// appended, so every returned response is terminated.
inline Sequence sample(const PolicyParams& params, std::span<const TokenId> prompt,
                       const SamplerConfig& cfg, Rng& rng) {
  const std::size_t vocab = static_cast<std::size_t>(params.vocab_size());
  std::vector<double> probs(vocab);
  std::size_t ctx = context_after_prompt(params, prompt);
  Sequence out;
  while (static_cast<int>(out.size()) < cfg.max_len) {
    softmax(params.row(ctx), probs, cfg.temperature);
    const auto tok = static_cast<TokenId>(
        cfg.top_p >= 1.0 ? rng.categorical(probs) : rng.categorical(nucleus(probs, cfg.top_p)));
    out.push_back(tok);
    if (tok == params.eos()) return out;
    ctx = params.advance(ctx, tok);
  }
  out.push_back(params.eos());
  return out;
}

// One response per prompt. Prompt i draws from its own stream
// Rng(derive_seed(seed, "generate", i)), so results do not depend on the
// order or thread in which prompts are processed.
inline std::vector<Sequence> generate(const PolicyParams& params, const std::vector<Sequence>& prompts,
                                      const SamplerConfig& cfg, std::uint64_t seed) {
  std::vector<Sequence> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng rng(derive_seed(seed, "generate", i));
    out.push_back(sample(params, prompts[i], cfg, rng));
  }
  return out;
}

// ---- checkpoint format -----------------------------------------------------
// {"header": {"V", "k", "bos", "eos", "role"}, "logits": [...]}

inline nlohmann::json policy_to_json(const PolicyParams& p) {
  nlohmann::json j;
  j["header"] = {{"V", p.vocab_size()},
                 {"k", p.order()},
                 {"bos", p.bos()},
                 {"eos", p.eos()},
                 {"role", to_string(p.role())}};
  j["logits"] = std::vector<double>(p.logits().begin(), p.logits().end());
  return j;
}

inline PolicyParams policy_from_json(const nlohmann::json& j) {
  try {
    const auto& h = j.at("header");
    PolicyParams p(h.at("V").get<int>(), h.at("k").get<int>(), h.at("bos").get<TokenId>(),
                   h.at("eos").get<TokenId>(), role_from_string(h.at("role").get<std::string>()));
    const auto values = j.at("logits").get<std::vector<double>>();
    if (values.size() != p.logits().size()) {
      throw ConfigError("checkpoint logits have " + std::to_string(values.size()) +
                        " entries, header implies " + std::to_string(p.logits().size()));
    }
    std::copy(values.begin(), values.end(), p.logits().begin());
    p.check_finite();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline std::uint64_t policy_hash(const PolicyParams& p) {
  Fnv1a h;
  h.u64(static_cast<std::uint64_t>(p.vocab_size())).u64(static_cast<std::uint64_t>(p.order()));
  h.u64(static_cast<std::uint64_t>(p.bos())).u64(static_cast<std::uint64_t>(p.eos()));
  h.bytes(p.logits().data(), p.logits().size() * sizeof(double));
  return h.value();
}

}  // namespace prefbench
