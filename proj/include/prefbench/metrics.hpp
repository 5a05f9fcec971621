#pragma once

// Evaluation metrics over generated responses: mean gold score, win rate vs
// the dataset's chosen response and vs the SFT policy, a sampled KL estimate
// against SFT, and response length.

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefbench/error.hpp"
#include "prefbench/numeric.hpp"
#include "prefbench/policy.hpp"
#include "prefbench/synthenv.hpp"

namespace prefbench {

inline double mean_score(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("mean_score of an empty list");
  return mean_of(scores);
}

struct WinRate {
  double win = 0.0;
  double tie = 0.0;
  double loss() const { return 1.0 - win - tie; }
};

// Ties are not wins: a counts only where it is strictly higher.
inline WinRate win_rate(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("win_rate needs aligned score lists");
  if (a.empty()) throw DomainError("win_rate of empty score lists");
  std::size_t wins = 0;
  std::size_t ties = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) ++wins;
    else if (a[i] == b[i]) ++ties;
  }
  const auto n = static_cast<double>(a.size());
  return {static_cast<double>(wins) / n, static_cast<double>(ties) / n};
}

struct KlEstimate {
  double mean = 0.0;
  std::vector<double> per_sample;
};

// Mean over prompts of log pi_theta(y|x) - log pi_sft(y|x) with y drawn from
// theta using cfg. A biased estimator of KL(theta || sft) whenever cfg is not
// the plain sampler (temperature 1, top_p 1).
inline KlEstimate kl_vs_sft(const PolicyParams& theta, const PolicyParams& sft,
                            const std::vector<Sequence>& prompts, const SamplerConfig& cfg,
                            std::uint64_t seed) {
  if (!theta.same_shape(sft)) throw DomainError("kl_vs_sft needs policies over the same vocabulary");
  if (prompts.empty()) throw DomainError("kl_vs_sft needs at least one prompt");
  const auto responses = generate(theta, prompts, cfg, seed);
  KlEstimate out;
  out.per_sample.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    out.per_sample.push_back(seq_logprob(theta, prompts[i], responses[i]) -
                             seq_logprob(sft, prompts[i], responses[i]));
  }
  out.mean = mean_of(out.per_sample);
  return out;
}

struct LengthStats {
  double mean = 0.0;
  int p50 = 0;
  int p90 = 0;
  std::map<int, std::size_t> histogram;  // length -> count
};

// Lengths are |y| including the terminal eos; percentiles are nearest-rank.
inline LengthStats length_stats(std::span<const int> lengths) {
  if (lengths.empty()) throw DomainError("length_stats of an empty list");
  std::vector<int> sorted(lengths.begin(), lengths.end());
  std::sort(sorted.begin(), sorted.end());
  LengthStats s;
  double total = 0.0;
  for (int l : sorted) {
    total += l;
    ++s.histogram[l];
  }
  s.mean = total / static_cast<double>(sorted.size());
  s.p50 = sorted[nearest_rank_index(50.0, sorted.size())];
  s.p90 = sorted[nearest_rank_index(90.0, sorted.size())];
  return s;
}

inline LengthStats length_stats(const std::vector<Sequence>& responses) {
  std::vector<int> lengths;
  lengths.reserve(responses.size());
  for (const auto& r : responses) lengths.push_back(static_cast<int>(r.size()));
  return length_stats(lengths);
}

struct SampleEval {
  std::size_t prompt_id = 0;
  Sequence response;  // kept in memory, not serialized by default
  double gold_score = 0.0;
  int length = 0;
  double logp_theta = 0.0;
  double logp_sft = 0.0;
  double chosen_score = 0.0;
  double sft_score = 0.0;
  int sft_length = 0;

  double log_ratio() const { return logp_theta - logp_sft; }
};

struct EvalReport {
  double mean_score = 0.0;
  double win_vs_chosen = 0.0;
  double tie_vs_chosen = 0.0;
  double win_vs_sft = 0.0;
  double tie_vs_sft = 0.0;
  double kl_vs_sft = 0.0;
  double mean_length = 0.0;
  std::string prompt_set_hash;
  std::vector<SampleEval> per_sample;
};

namespace detail {

template <typename F>
std::vector<double> column(const std::vector<SampleEval>& rows, F f) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(static_cast<double>(f(r)));
  return out;
}

}  // namespace detail

// Fills the aggregate fields from per_sample.
inline void summarize(EvalReport& r) {
  using detail::column;
  const auto& rows = r.per_sample;
  const auto gold = column(rows, [](const SampleEval& s) { return s.gold_score; });
  const auto chosen = column(rows, [](const SampleEval& s) { return s.chosen_score; });
  const auto sft = column(rows, [](const SampleEval& s) { return s.sft_score; });
  r.mean_score = mean_score(gold);
  const auto vs_chosen = win_rate(gold, chosen);
  const auto vs_sft = win_rate(gold, sft);
  r.win_vs_chosen = vs_chosen.win;
  r.tie_vs_chosen = vs_chosen.tie;
  r.win_vs_sft = vs_sft.win;
  r.tie_vs_sft = vs_sft.tie;
  r.kl_vs_sft = mean_of(column(rows, [](const SampleEval& s) { return s.log_ratio(); }));
  r.mean_length = mean_of(column(rows, [](const SampleEval& s) { return s.length; }));
}

// theta and sft generate on each eval prompt from the same per-prompt stream,
// so the win-vs-SFT comparison is paired and evaluate(sft, sft) ties everywhere.
inline EvalReport evaluate(const PolicyParams& theta, const PolicyParams& sft, const DatasetBundle& bundle,
                           const GoldRewardSpec& gold, const VocabSpec& vocab, const SamplerConfig& cfg,
                           std::uint64_t seed) {
  if (!theta.same_shape(sft)) throw DomainError("evaluate needs policies over the same vocabulary");
  if (bundle.eval_prompts.empty()) throw DomainError("evaluate needs eval prompts");
  if (bundle.eval_chosen.size() != bundle.eval_prompts.size()) {
    throw DomainError("eval_chosen must align with eval_prompts");
  }
  cfg.validate();
  theta.check_finite();
  const auto& prompts = bundle.eval_prompts;
  const auto responses = generate(theta, prompts, cfg, seed);
  const auto sft_responses = generate(sft, prompts, cfg, seed);

  EvalReport r;
  r.prompt_set_hash = hex64(prompt_set_hash(prompts));
  r.per_sample.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    SampleEval s;
    s.prompt_id = i;
    s.response = responses[i];
    s.gold_score = gold_reward(gold, vocab, responses[i]);
    s.length = static_cast<int>(responses[i].size());
    s.logp_theta = seq_logprob(theta, prompts[i], responses[i]);
    s.logp_sft = seq_logprob(sft, prompts[i], responses[i]);
    s.chosen_score = gold_reward(gold, vocab, bundle.eval_chosen[i]);
    s.sft_score = gold_reward(gold, vocab, sft_responses[i]);
    s.sft_length = static_cast<int>(sft_responses[i].size());
    r.per_sample.push_back(std::move(s));
  }
  summarize(r);
  return r;
}

// ---- serialization -----------------------------------------------------------

inline nlohmann::json to_json(const EvalReport& r, bool with_responses = false) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : r.per_sample) {
    nlohmann::json row = {{"prompt_id", s.prompt_id},       {"gold_score", s.gold_score},
                          {"length", s.length},             {"logp_theta", s.logp_theta},
                          {"logp_sft", s.logp_sft},         {"chosen_score", s.chosen_score},
                          {"sft_score", s.sft_score},       {"sft_length", s.sft_length}};
    if (with_responses) row["response"] = s.response;
    rows.push_back(std::move(row));
  }
  return {{"mean_score", r.mean_score},
          {"win_vs_chosen", r.win_vs_chosen},
          {"tie_vs_chosen", r.tie_vs_chosen},
          {"win_vs_sft", r.win_vs_sft},
          {"tie_vs_sft", r.tie_vs_sft},
          {"kl_vs_sft", r.kl_vs_sft},
          {"mean_length", r.mean_length},
          {"prompt_set_hash", r.prompt_set_hash},
          {"per_sample", std::move(rows)}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.mean_score = j.at("mean_score").get<double>();
  r.win_vs_chosen = j.at("win_vs_chosen").get<double>();
  r.tie_vs_chosen = j.at("tie_vs_chosen").get<double>();
  r.win_vs_sft = j.at("win_vs_sft").get<double>();
  r.tie_vs_sft = j.at("tie_vs_sft").get<double>();
  r.kl_vs_sft = j.at("kl_vs_sft").get<double>();
  r.mean_length = j.at("mean_length").get<double>();
  r.prompt_set_hash = j.at("prompt_set_hash").get<std::string>();
  for (const auto& row : j.at("per_sample")) {
    SampleEval s;
    s.prompt_id = row.at("prompt_id").get<std::size_t>();
    s.gold_score = row.at("gold_score").get<double>();
    s.length = row.at("length").get<int>();
    s.logp_theta = row.at("logp_theta").get<double>();
    s.logp_sft = row.at("logp_sft").get<double>();
    s.chosen_score = row.at("chosen_score").get<double>();
    s.sft_score = row.at("sft_score").get<double>();
    s.sft_length = row.at("sft_length").get<int>();
    if (row.contains("response")) s.response = row.at("response").get<Sequence>();
    r.per_sample.push_back(std::move(s));
  }
  return r;
}

inline std::string per_sample_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "prompt_id,length,gold_score,logp_theta,logp_sft\n";
  for (const auto& s : r.per_sample) {
    out << s.prompt_id << ',' << s.length << ',' << format_double(s.gold_score) << ','
        << format_double(s.logp_theta) << ',' << format_double(s.logp_sft) << '\n';
  }
  return out.str();
}

}  // namespace prefbench
