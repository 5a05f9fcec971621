#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "support.hpp"

using namespace prefbench;
using Catch::Approx;

TEST_CASE("default vocabulary and prompt distributions validate", "[synthenv]") {
  const auto env = default_env_config();
  REQUIRE_NOTHROW(env.validate());
  CHECK(env.vocab.tokens_of(TokenClass::helpful).size() == 4);
  CHECK(env.vocab.tokens_of(TokenClass::toxic).size() == 3);
  CHECK(env.vocab.tokens_of(TokenClass::neutral).size() == 7);

  auto bad = env;
  bad.train_prompts.weights[env.vocab.eos] = 0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = env;
  bad.label_noise = 0.6;
  CHECK_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("env.label_noise"));
}

TEST_CASE("gen_prompts", "[synthenv]") {
  const auto env = default_env_config();
  CHECK(gen_prompts(env.train_prompts, 0, 1).empty());
  CHECK(gen_prompts(env.train_prompts, 100, 7) == gen_prompts(env.train_prompts, 100, 7));
  CHECK(gen_prompts(env.train_prompts, 100, 7) != gen_prompts(env.train_prompts, 100, 8));

  const auto train = gen_prompts(env.train_prompts, 10000, 1);
  const auto ood = gen_prompts(env.eval_prompts, 10000, 2);
  for (const auto& p : train) {
    REQUIRE(static_cast<int>(p.size()) >= env.train_prompts.min_len);
    REQUIRE(static_cast<int>(p.size()) <= env.train_prompts.max_len);
    for (TokenId t : p) REQUIRE(env.vocab.class_of[t] != TokenClass::special);
  }
  const auto f_train = unigram_frequencies(train, env.vocab.size);
  const auto f_ood = unigram_frequencies(ood, env.vocab.size);
  CHECK(total_variation(f_train, f_ood) > 0.1);

  // Empirical frequencies follow the normalized weights.
  for (int t = 0; t < env.vocab.size; ++t) {
    CHECK(f_train[t] == Approx(env.train_prompts.weights[t]).margin(0.01));
  }
}

TEST_CASE("gold reward", "[synthenv]") {
  const auto env = default_env_config();
  const auto& v = env.vocab;
  const GoldRewardSpec defaults;
  const TokenId h1 = 2, h2 = 3, tox = 6, n1 = 9, n2 = 10, n3 = 11;

  CHECK(gold_reward(defaults, v, Sequence{h1, h2, tox, v.eos}) == Approx(0.15).epsilon(1e-12));
  CHECK(gold_reward(defaults, v, Sequence{n1, n2, n3, v.eos}) == Approx(0.15).epsilon(1e-12));
  CHECK(gold_reward(GoldRewardSpec{0, 0, 0, 0, 40}, v, Sequence{h1, tox, tox, n1, v.eos}) == 0.0);
  CHECK(gold_reward(defaults, v, Sequence{v.eos}) == 0.0);
  // one adjacent repeat
  CHECK(gold_reward(defaults, v, Sequence{h1, h1, v.eos}) == Approx(2.0 + 0.1 - 0.5));

  Sequence long_resp(60, n1);
  for (std::size_t i = 1; i < long_resp.size(); i += 2) long_resp[i] = n2;
  long_resp.push_back(v.eos);
  CHECK(gold_reward(defaults, v, long_resp) == Approx(0.05 * 40));

  CHECK_THROWS_AS(gold_reward(defaults, v, Sequence{h1, h2}), MalformedResponse);
  CHECK_THROWS_AS(gold_reward(defaults, v, Sequence{}), MalformedResponse);
}

TEST_CASE("Bradley-Terry labels", "[synthenv]") {
  CHECK(preference_probability(3.0, 3.0) == 0.5);
  CHECK(preference_probability(2.0, 1.0) == Approx(0.7310585786300049).epsilon(1e-15));

  const Sequence a{2, 1}, b{9, 1};
  Rng rng(5);
  CHECK_THROWS_AS(label_pair(a, a, 0, 0, 0.0, rng), DegeneratePair);
  CHECK_THROWS_AS(label_pair(a, b, 0, 0, 0.7, rng), DomainError);

  const int n = 10000;
  int flips = 0;
  int first = 0;
  for (int i = 0; i < n; ++i) {
    const auto lp = label_pair(a, b, 1.0, 0.0, 0.5, rng);
    flips += lp.flipped ? 1 : 0;
    const auto clean = label_pair(a, b, 1.0, 0.0, 0.0, rng);
    first += clean.chosen == a ? 1 : 0;
  }
  const double sigma_flip = std::sqrt(n * 0.25);
  CHECK(std::abs(flips - n * 0.5) < 3 * sigma_flip);
  const double p = sigmoid(1.0);
  CHECK(std::abs(first - n * p) < 3 * std::sqrt(n * p * (1 - p)));

  const auto det = label_pair(a, b, -1.0, 0.0, 0.0, rng, true);
  CHECK(det.chosen == b);
  CHECK_FALSE(det.flipped);
}

TEST_CASE("build_dataset", "[synthenv]") {
  auto env = pbtest::small_env();
  const auto policy = make_data_policy(env, 3);

  const auto empty = build_dataset(env, 0, 4, policy, 1);
  CHECK(empty.train.empty());
  CHECK(empty.eval_prompts.size() == 4);

  const auto b1 = build_dataset(env, 200, 50, policy, 9);
  const auto b2 = build_dataset(env, 200, 50, policy, 9);
  REQUIRE(b1 == b2);
  std::string s1, s2;
  for (const auto& ex : b1.train) s1 += example_to_json(ex).dump() + '\n';
  for (const auto& ex : b2.train) s2 += example_to_json(ex).dump() + '\n';
  CHECK(s1 == s2);
  CHECK(b1.eval_chosen.size() == b1.eval_prompts.size());
  for (const auto& ex : b1.train) {
    REQUIRE(ex.chosen != ex.rejected);
    REQUIRE(ex.chosen.back() == env.vocab.eos);
    REQUIRE(ex.rejected.back() == env.vocab.eos);
  }

  env.deterministic_labels = true;
  const auto det = build_dataset(env, 300, 0, policy, 4);
  for (const auto& ex : det.train) {
    REQUIRE(gold_reward(env.reward, env.vocab, ex.chosen) >= gold_reward(env.reward, env.vocab, ex.rejected));
  }

  // Labels carry signal: chosen beats rejected on average under BT sampling.
  env.deterministic_labels = false;
  const auto bt = build_dataset(env, 500, 0, policy, 4);
  double margin = 0.0;
  for (const auto& ex : bt.train) {
    margin += gold_reward(env.reward, env.vocab, ex.chosen) - gold_reward(env.reward, env.vocab, ex.rejected);
  }
  CHECK(margin / 500.0 > 0.5);
}

TEST_CASE("label noise flips about epsilon of the pairs", "[synthenv]") {
  auto env = pbtest::small_env();
  env.label_noise = 0.25;
  const auto bundle = build_dataset(env, 4000, 0, make_data_policy(env, 1), 2);
  int flips = 0;
  for (const auto& ex : bundle.train) flips += ex.flipped ? 1 : 0;
  CHECK(std::abs(flips - 1000.0) < 3 * std::sqrt(4000 * 0.25 * 0.75));
}

TEST_CASE("resample budget exhaustion", "[synthenv]") {
  auto env = pbtest::small_env();
  // A policy that always stops at once can never produce two distinct responses.
  PolicyParams stuck(env.vocab.size, 1, env.vocab.bos, env.vocab.eos, Role::data);
  for (std::size_t c = 0; c < stuck.num_contexts(); ++c) stuck.row(c)[env.vocab.eos] = 500.0;
  CHECK_THROWS_AS(build_dataset(env, 1, 0, stuck, 0), GenerationFailure);
}

TEST_CASE("env json round trip", "[synthenv]") {
  auto env = default_env_config();
  env.label_noise = 0.1;
  env.reward.w_len = 0.125;
  const auto back = env_from_json(to_json(env));
  CHECK(to_json(back) == to_json(env));
  CHECK(back.vocab.class_of == env.vocab.class_of);
  CHECK(back.train_prompts.weights == env.train_prompts.weights);
}
