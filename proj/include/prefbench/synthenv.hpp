#pragma once

// Synthetic preference task: a class-labelled vocabulary, two prompt
// distributions (train and out-of-distribution eval), a gold reward and
// Bradley-Terry labelled preference pairs.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefbench/error.hpp"
#include "prefbench/numeric.hpp"
#include "prefbench/policy.hpp"
#include "prefbench/random.hpp"

namespace prefbench {

enum class TokenClass { special, helpful, toxic, neutral };

inline const char* to_string(TokenClass c) {
  switch (c) {
    case TokenClass::special: return "special";
    case TokenClass::helpful: return "helpful";
    case TokenClass::toxic: return "toxic";
    case TokenClass::neutral: return "neutral";
  }
  return "?";
}

inline TokenClass token_class_from_string(const std::string& s) {
  if (s == "helpful") return TokenClass::helpful;
  if (s == "toxic") return TokenClass::toxic;
  if (s == "neutral") return TokenClass::neutral;
  if (s == "special") return TokenClass::special;
  throw ConfigError("unknown token class '" + s + "'");
}

struct VocabSpec {
  int size = 0;
  TokenId bos = 0;
  TokenId eos = 1;
  std::vector<TokenClass> class_of;  // indexed by token id; bos/eos are special

  void validate() const {
    if (size < 2) throw ConfigError("env.vocab.size must be >= 2");
    if (bos == eos) throw ConfigError("env.vocab.bos and env.vocab.eos must differ");
    if (bos < 0 || bos >= size || eos < 0 || eos >= size) {
      throw ConfigError("env.vocab.bos/eos must be < env.vocab.size");
    }
    if (static_cast<int>(class_of.size()) != size) {
      throw ConfigError("env.vocab.classes must assign a class to every token");
    }
    for (int t = 0; t < size; ++t) {
      const bool special = (t == bos || t == eos);
      if (special != (class_of[t] == TokenClass::special)) {
        throw ConfigError("env.vocab.classes: exactly bos and eos are special (token " +
                          std::to_string(t) + ")");
      }
    }
  }

  std::vector<TokenId> tokens_of(TokenClass c) const {
    std::vector<TokenId> out;
    for (int t = 0; t < size; ++t) {
      if (class_of[t] == c) out.push_back(t);
    }
    return out;
  }
};

struct PromptDistribution {
  std::vector<double> weights;  // indexed by token id, zero on bos/eos
  int min_len = 1;
  int max_len = 1;

  void validate(const VocabSpec& vocab, const std::string& name) const {
    if (static_cast<int>(weights.size()) != vocab.size) {
      throw ConfigError(name + ".weights must have one entry per token");
    }
    double total = 0.0;
    for (int t = 0; t < vocab.size; ++t) {
      if (!(weights[t] >= 0.0)) throw ConfigError(name + ".weights must be nonnegative");
      if (vocab.class_of[t] == TokenClass::special && weights[t] != 0.0) {
        throw ConfigError(name + ".weights must be zero on bos/eos");
      }
      total += weights[t];
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError(name + ".weights must sum to 1");
    if (min_len < 1 || min_len > max_len) {
      throw ConfigError(name + ".length_range must satisfy 1 <= min <= max");
    }
  }

  // Rescales arbitrary nonnegative weights to sum to one.
  void normalize() {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw ConfigError("prompt distribution has no mass");
    // Already-normalized weights are kept bit for bit so configs round-trip.
    if (std::abs(total - 1.0) <= 1e-12) return;
    for (double& w : weights) w /= total;
  }
};

struct GoldRewardSpec {
  double w_help = 1.0;
  double w_toxic = 2.0;
  double w_len = 0.05;
  double w_rep = 0.5;
  int len_cap = 40;

  void validate() const {
    if (len_cap < 1) throw ConfigError("env.reward.len_cap must be >= 1");
  }
};

struct PreferenceExample {
  Sequence prompt;
  Sequence chosen;
  Sequence rejected;
  bool flipped = false;

  friend bool operator==(const PreferenceExample&, const PreferenceExample&) = default;
};

struct DatasetBundle {
  std::vector<PreferenceExample> train;
  std::vector<Sequence> eval_prompts;
  std::vector<Sequence> eval_chosen;

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

// Shape of the data-generating policy. Logit offsets per class, a bonus for
// staying in the class of the previous token, and seeded jitter.
struct DataPolicySpec {
  double helpful_logit = 0.0;
  double toxic_logit = 0.0;
  double neutral_logit = 0.0;
  double eos_logit = 0.0;
  double stickiness = 0.0;
  double jitter = 0.0;
};

struct EnvConfig {
  VocabSpec vocab;
  PromptDistribution train_prompts;
  PromptDistribution eval_prompts;
  GoldRewardSpec reward;
  DataPolicySpec data_policy;
  SamplerConfig data_sampler{1.0, 1.0, 64};
  double label_noise = 0.0;
  bool deterministic_labels = false;
  int resample_budget = 16;
  int order = 1;

  void validate() const {
    vocab.validate();
    train_prompts.validate(vocab, "env.train_prompts");
    eval_prompts.validate(vocab, "env.eval_prompts");
    reward.validate();
    data_sampler.validate();
    if (!(label_noise >= 0.0 && label_noise <= 0.5)) {
      throw ConfigError("env.label_noise must lie in [0, 0.5]");
    }
    if (resample_budget < 1) throw ConfigError("env.resample_budget must be >= 1");
    if (order < 1) throw ConfigError("env.order must be >= 1");
  }
};

// ---- operations ------------------------------------------------------------

inline std::vector<Sequence> gen_prompts(const PromptDistribution& dist, std::size_t n,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sequence> out;
  out.reserve(n);
  const auto span_len = static_cast<std::uint64_t>(dist.max_len - dist.min_len + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const int len = dist.min_len + static_cast<int>(rng.below(span_len));
    Sequence p(len);
    for (auto& tok : p) tok = static_cast<TokenId>(rng.categorical(dist.weights));
    out.push_back(std::move(p));
  }
  return out;
}

// Counts and length exclude the terminal eos.
inline double gold_reward(const GoldRewardSpec& spec, const VocabSpec& vocab,
                          std::span<const TokenId> response) {
  if (response.empty() || response.back() != vocab.eos) {
    throw MalformedResponse("response is not terminated by eos");
  }
  const auto content = response.first(response.size() - 1);
  int helpful = 0;
  int toxic = 0;
  int repeats = 0;
  for (std::size_t i = 0; i < content.size(); ++i) {
    const TokenId t = content[i];
    if (t < 0 || t >= vocab.size) throw DomainError("token id outside vocabulary");
    if (vocab.class_of[t] == TokenClass::helpful) ++helpful;
    if (vocab.class_of[t] == TokenClass::toxic) ++toxic;
    if (i > 0 && content[i - 1] == t) ++repeats;
  }
  const int len = static_cast<int>(content.size());
  return spec.w_help * helpful - spec.w_toxic * toxic +
         spec.w_len * std::min(len, spec.len_cap) - spec.w_rep * repeats;
}

// Bradley-Terry probability that the first response is preferred.
inline double preference_probability(double r1, double r2) { return sigmoid(r1 - r2); }

struct LabeledPair {
  Sequence chosen;
  Sequence rejected;
  bool flipped = false;
};

// Draws a Bradley-Terry label (or takes the argmax in deterministic mode,
// ties favouring y1), then flips it with probability `noise`.
inline LabeledPair label_pair(const Sequence& y1, const Sequence& y2, double r1, double r2,
                              double noise, Rng& rng, bool deterministic = false) {
  if (!(noise >= 0.0 && noise <= 0.5)) throw DomainError("label noise must lie in [0, 0.5]");
  if (y1 == y2) throw DegeneratePair("identical responses cannot form a preference pair");
  const double u_pref = rng.uniform();
  const double u_flip = rng.uniform();
  bool first_wins = deterministic ? (r1 >= r2) : (u_pref < preference_probability(r1, r2));
  const bool flipped = u_flip < noise;
  if (flipped) first_wins = !first_wins;
  return first_wins ? LabeledPair{y1, y2, flipped} : LabeledPair{y2, y1, flipped};
}

// Order-1 data policy built from DataPolicySpec. bos is never emitted.
inline PolicyParams make_data_policy(const EnvConfig& env, std::uint64_t seed) {
  const auto& vocab = env.vocab;
  const auto& spec = env.data_policy;
  PolicyParams p(vocab.size, env.order, vocab.bos, vocab.eos, Role::data);
  Rng rng(seed);
  auto base = [&](TokenId t) {
    if (t == vocab.eos) return spec.eos_logit;
    switch (vocab.class_of[t]) {
      case TokenClass::helpful: return spec.helpful_logit;
      case TokenClass::toxic: return spec.toxic_logit;
      case TokenClass::neutral: return spec.neutral_logit;
      case TokenClass::special: break;
    }
    return -30.0;
  };
  for (std::size_t ctx = 0; ctx < p.num_contexts(); ++ctx) {
    const auto prev = static_cast<TokenId>(ctx % static_cast<std::size_t>(vocab.size));
    auto row = p.row(ctx);
    for (TokenId t = 0; t < vocab.size; ++t) {
      double v = base(t);
      if (t != vocab.eos && t != vocab.bos) {
        if (vocab.class_of[prev] == vocab.class_of[t]) v += spec.stickiness;
        v += spec.jitter * (2.0 * rng.uniform() - 1.0);
      }
      row[t] = v;
    }
  }
  return p;
}

inline std::vector<double> unigram_frequencies(const std::vector<Sequence>& corpus, int vocab_size) {
  std::vector<double> freq(vocab_size, 0.0);
  double total = 0.0;
  for (const auto& s : corpus) {
    for (TokenId t : s) {
      freq[t] += 1.0;
      total += 1.0;
    }
  }
  if (total > 0.0) {
    for (double& f : freq) f /= total;
  }
  return freq;
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

namespace detail {

inline std::pair<Sequence, Sequence> sample_distinct_pair(const PolicyParams& policy,
                                                          const Sequence& prompt,
                                                          const SamplerConfig& cfg, int budget,
                                                          Rng& rng) {
  Sequence y1 = sample(policy, prompt, cfg, rng);
  Sequence y2 = sample(policy, prompt, cfg, rng);
  for (int attempt = 0; y1 == y2; ++attempt) {
    if (attempt >= budget) {
      throw GenerationFailure("could not draw two distinct responses within " +
                              std::to_string(budget) + " resamples");
    }
    y2 = sample(policy, prompt, cfg, rng);
  }
  return {std::move(y1), std::move(y2)};
}

}  // namespace detail

inline DatasetBundle build_dataset(const EnvConfig& env, std::size_t n_train, std::size_t n_eval,
                                   const PolicyParams& data_policy, std::uint64_t seed) {
  data_policy.check_finite();
  env.data_sampler.validate();
  DatasetBundle bundle;
  const auto train_prompts = gen_prompts(env.train_prompts, n_train, derive_seed(seed, "train_prompts", 0));
  Rng pair_rng(derive_seed(seed, "train_pairs", 0));
  bundle.train.reserve(n_train);
  for (const auto& prompt : train_prompts) {
    auto [y1, y2] = detail::sample_distinct_pair(data_policy, prompt, env.data_sampler,
                                                 env.resample_budget, pair_rng);
    const double r1 = gold_reward(env.reward, env.vocab, y1);
    const double r2 = gold_reward(env.reward, env.vocab, y2);
    auto labeled = label_pair(y1, y2, r1, r2, env.label_noise, pair_rng, env.deterministic_labels);
    bundle.train.push_back(
        {prompt, std::move(labeled.chosen), std::move(labeled.rejected), labeled.flipped});
  }

  bundle.eval_prompts = gen_prompts(env.eval_prompts, n_eval, derive_seed(seed, "eval_prompts", 0));
  Rng eval_rng(derive_seed(seed, "eval_pairs", 0));
  bundle.eval_chosen.reserve(n_eval);
  for (const auto& prompt : bundle.eval_prompts) {
    auto [y1, y2] = detail::sample_distinct_pair(data_policy, prompt, env.data_sampler,
                                                 env.resample_budget, eval_rng);
    const double r1 = gold_reward(env.reward, env.vocab, y1);
    const double r2 = gold_reward(env.reward, env.vocab, y2);
    bundle.eval_chosen.push_back(r1 >= r2 ? std::move(y1) : std::move(y2));
  }
  return bundle;
}

inline std::uint64_t prompt_set_hash(const std::vector<Sequence>& prompts) {
  Fnv1a h;
  h.u64(prompts.size());
  for (const auto& p : prompts) {
    h.u64(p.size());
    for (TokenId t : p) h.u64(static_cast<std::uint64_t>(t));
  }
  return h.value();
}

// ---- serialization -----------------------------------------------------------

inline nlohmann::json example_to_json(const PreferenceExample& ex) {
  return {{"prompt", ex.prompt}, {"chosen", ex.chosen}, {"rejected", ex.rejected},
          {"flipped", ex.flipped}};
}

inline PreferenceExample example_from_json(const nlohmann::json& j) {
  PreferenceExample ex;
  ex.prompt = j.at("prompt").get<Sequence>();
  ex.chosen = j.at("chosen").get<Sequence>();
  ex.rejected = j.at("rejected").get<Sequence>();
  ex.flipped = j.at("flipped").get<bool>();
  return ex;
}

inline nlohmann::json to_json(const VocabSpec& v) {
  std::vector<std::string> classes;
  for (auto c : v.class_of) classes.emplace_back(to_string(c));
  return {{"size", v.size}, {"bos", v.bos}, {"eos", v.eos}, {"classes", classes}};
}

inline VocabSpec vocab_from_json(const nlohmann::json& j) {
  VocabSpec v;
  v.size = j.at("size").get<int>();
  v.bos = j.at("bos").get<TokenId>();
  v.eos = j.at("eos").get<TokenId>();
  for (const auto& c : j.at("classes")) v.class_of.push_back(token_class_from_string(c.get<std::string>()));
  return v;
}

inline nlohmann::json to_json(const PromptDistribution& d) {
  return {{"weights", d.weights}, {"length_range", {d.min_len, d.max_len}}};
}

inline PromptDistribution prompt_distribution_from_json(const nlohmann::json& j) {
  PromptDistribution d;
  d.weights = j.at("weights").get<std::vector<double>>();
  const auto range = j.at("length_range").get<std::vector<int>>();
  if (range.size() != 2) throw ConfigError("length_range must be [min, max]");
  d.min_len = range[0];
  d.max_len = range[1];
  return d;
}

inline nlohmann::json to_json(const GoldRewardSpec& g) {
  return {{"w_help", g.w_help}, {"w_toxic", g.w_toxic}, {"w_len", g.w_len},
          {"w_rep", g.w_rep}, {"len_cap", g.len_cap}};
}

inline GoldRewardSpec reward_from_json(const nlohmann::json& j) {
  GoldRewardSpec g;
  g.w_help = j.value("w_help", g.w_help);
  g.w_toxic = j.value("w_toxic", g.w_toxic);
  g.w_len = j.value("w_len", g.w_len);
  g.w_rep = j.value("w_rep", g.w_rep);
  g.len_cap = j.value("len_cap", g.len_cap);
  return g;
}

inline nlohmann::json to_json(const SamplerConfig& s) {
  return {{"temperature", s.temperature}, {"top_p", s.top_p}, {"max_len", s.max_len}};
}

inline SamplerConfig sampler_from_json(const nlohmann::json& j, SamplerConfig defaults) {
  defaults.temperature = j.value("temperature", defaults.temperature);
  defaults.top_p = j.value("top_p", defaults.top_p);
  defaults.max_len = j.value("max_len", defaults.max_len);
  return defaults;
}

inline nlohmann::json to_json(const DataPolicySpec& d) {
  return {{"helpful_logit", d.helpful_logit}, {"toxic_logit", d.toxic_logit},
          {"neutral_logit", d.neutral_logit}, {"eos_logit", d.eos_logit},
          {"stickiness", d.stickiness},       {"jitter", d.jitter}};
}

inline DataPolicySpec data_policy_from_json(const nlohmann::json& j) {
  DataPolicySpec d;
  d.helpful_logit = j.value("helpful_logit", d.helpful_logit);
  d.toxic_logit = j.value("toxic_logit", d.toxic_logit);
  d.neutral_logit = j.value("neutral_logit", d.neutral_logit);
  d.eos_logit = j.value("eos_logit", d.eos_logit);
  d.stickiness = j.value("stickiness", d.stickiness);
  d.jitter = j.value("jitter", d.jitter);
  return d;
}

inline nlohmann::json to_json(const EnvConfig& e) {
  return {{"vocab", to_json(e.vocab)},
          {"train_prompts", to_json(e.train_prompts)},
          {"eval_prompts", to_json(e.eval_prompts)},
          {"reward", to_json(e.reward)},
          {"data_policy", to_json(e.data_policy)},
          {"data_sampler", to_json(e.data_sampler)},
          {"label_noise", e.label_noise},
          {"deterministic_labels", e.deterministic_labels},
          {"resample_budget", e.resample_budget},
          {"order", e.order}};
}

inline EnvConfig env_from_json(const nlohmann::json& j) {
  EnvConfig e;
  e.vocab = vocab_from_json(j.at("vocab"));
  e.train_prompts = prompt_distribution_from_json(j.at("train_prompts"));
  e.eval_prompts = prompt_distribution_from_json(j.at("eval_prompts"));
  if (j.contains("reward")) e.reward = reward_from_json(j.at("reward"));
  if (j.contains("data_policy")) e.data_policy = data_policy_from_json(j.at("data_policy"));
  if (j.contains("data_sampler")) e.data_sampler = sampler_from_json(j.at("data_sampler"), e.data_sampler);
  e.label_noise = j.value("label_noise", e.label_noise);
  e.deterministic_labels = j.value("deterministic_labels", e.deterministic_labels);
  e.resample_budget = j.value("resample_budget", e.resample_budget);
  e.order = j.value("order", e.order);
  return e;
}

// Shipped default: 16 tokens (bos, eos, 4 helpful, 3 toxic, 7 neutral). The
// train prompts lean on helpful/neutral tokens, the eval prompts on toxic ones.
inline EnvConfig default_env_config() {
  EnvConfig e;
  e.vocab.size = 16;
  e.vocab.bos = 0;
  e.vocab.eos = 1;
  e.vocab.class_of.assign(16, TokenClass::neutral);
  e.vocab.class_of[0] = TokenClass::special;
  e.vocab.class_of[1] = TokenClass::special;
  for (int t = 2; t <= 5; ++t) e.vocab.class_of[t] = TokenClass::helpful;
  for (int t = 6; t <= 8; ++t) e.vocab.class_of[t] = TokenClass::toxic;

  e.train_prompts.weights = {0, 0, 3, 3, 2, 2, 0.5, 0.5, 0.5, 3, 3, 3, 3, 1, 1, 1};
  e.train_prompts.min_len = 4;
  e.train_prompts.max_len = 12;
  e.train_prompts.normalize();
  e.eval_prompts.weights = {0, 0, 1, 1, 1, 1, 3, 3, 3, 1, 1, 1, 1, 3, 3, 3};
  e.eval_prompts.min_len = 2;
  e.eval_prompts.max_len = 16;
  e.eval_prompts.normalize();

  e.data_policy = {0.0, -0.5, 0.3, 0.5, 1.0, 0.5};
  return e;
}

}  // namespace prefbench
