#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "oracles.hpp"

using namespace prefbench;
using Catch::Approx;

namespace {

RunRecord scored(Method m, double beta, std::optional<double> gamma, double score, std::uint64_t seed = 1) {
  return pbtest::make_record(pbtest::trial(m, beta, gamma, 1e-2, 1, 64, seed), {score});
}

}  // namespace

TEST_CASE("top_k_runs", "[analytics]") {
  std::vector<RunRecord> records;
  for (int i = 0; i < 20; ++i) records.push_back(scored(Method::dpo, 0.1, std::nullopt, i, i));
  const auto top = top_k_runs(records, 10.0);
  REQUIRE(top.size() == 2);
  CHECK(top[0].eval->mean_score == 19.0);
  CHECK(top[1].eval->mean_score == 18.0);
  CHECK(top_k_runs(records, 100.0).size() == 20);
  CHECK_THROWS_AS(top_k_runs(records, 0.0), DomainError);
  CHECK_THROWS_AS(top_k_runs(records, 101.0), DomainError);

  // Ties go to the smaller trial id.
  std::vector<RunRecord> tied{scored(Method::dpo, 0.1, std::nullopt, 1.0, 1),
                              scored(Method::dpo, 0.1, std::nullopt, 1.0, 2)};
  const auto first = top_k_runs(tied, 1.0)[0].trial_id;
  CHECK(first == std::min(tied[0].trial_id, tied[1].trial_id));
}

TEST_CASE("percentile_run", "[analytics]") {
  std::vector<RunRecord> one{scored(Method::simpo, 2.0, 1.0, 3.5)};
  for (double p : {0.0, 37.0, 100.0}) CHECK(percentile_run(one, p).trial_id == one[0].trial_id);

  std::vector<RunRecord> four;
  for (int s : {4, 1, 3, 2}) four.push_back(scored(Method::dpo, 0.1, std::nullopt, s, s));
  CHECK(percentile_run(four, 75.0).eval->mean_score == 3.0);
  CHECK(percentile_run(four, 100.0).trial_id == top_k_runs(four, 1.0)[0].trial_id);
  CHECK_THROWS_AS(percentile_run({}, 50.0), DomainError);
}

TEST_CASE("head_to_head", "[analytics]") {
  const auto a = pbtest::make_record(pbtest::trial(Method::dpo, 0.1, std::nullopt, 1e-2, 1), {1, 2, 3});
  const auto b = pbtest::make_record(pbtest::trial(Method::simpo, 2.0, 1.0, 1e-2, 1), {3, 2, 1});
  auto w = head_to_head(a, b);
  CHECK(w.win == Approx(1.0 / 3.0));
  CHECK(w.tie == Approx(1.0 / 3.0));
  w = head_to_head(a, a);
  CHECK(w.win == 0.0);
  CHECK(w.tie == 1.0);

  const auto other = pbtest::make_record(pbtest::trial(Method::lndpo, 2.0, std::nullopt, 1e-2, 1), {1, 2, 3}, "h1");
  CHECK_THROWS_AS(head_to_head(a, other), IncomparableRecords);
}

TEST_CASE("percent change reproduces the published anchors", "[analytics]") {
  CHECK(percent_change(92.4, 119.8) == -22.9);
  CHECK(percent_change(1.6048, 1.6) == 0.3);
  CHECK(percent_change(119.8, 119.8) == 0.0);
  CHECK_THROWS_AS(percent_change(1.0, 0.0), DomainError);
}

TEST_CASE("best_table", "[analytics]") {
  auto dpo = scored(Method::dpo, 0.1, std::nullopt, 1.6);
  dpo.eval->mean_length = 119.8;
  auto simpo = scored(Method::simpo, 2.0, 1.0, 1.6048);
  simpo.eval->mean_length = 92.4;
  auto weak = scored(Method::simpo, 2.5, 1.0, 0.5);
  const std::vector<RunRecord> records{dpo, simpo, weak};

  const auto t = best_table(records, {Method::dpo, Method::simpo});
  CHECK(t.best_trial.at(Method::simpo) == simpo.trial_id);
  for (const auto& row : t.rows) {
    if (row.metric == "mean_length") {
      CHECK(row.dpo == 119.8);
      CHECK(*row.percent.at(Method::simpo) == -22.9);
    }
    if (row.metric == "mean_score") CHECK(*row.percent.at(Method::simpo) == 0.3);
  }
  CHECK_THROWS_AS(best_table(records, {Method::simpo}), ConfigError);
  CHECK_THROWS_AS(best_table(records, {Method::dpo, Method::lndpo}), ConfigError);

  const auto rep = build_report(records);
  const auto& csv = rep.tables.at("best_table.csv");
  CHECK(csv.find("mean_length,119.8") != std::string::npos);
  CHECK(csv.find(",-22.9") != std::string::npos);
  CHECK(csv.find(",0.3\n") != std::string::npos);
}

TEST_CASE("distribution_summary", "[analytics]") {
  const std::vector<double> same(9, 2.5);
  const auto d = distribution_summary(same);
  std::size_t occupied = 0;
  for (auto c : d.counts) occupied += c > 0 ? 1 : 0;
  CHECK(occupied == 1);
  CHECK(d.counts.size() == 20);
  CHECK(d.median == 2.5);

  const auto e = distribution_summary(std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 10, 4.0);
  CHECK(e.counts.back() == 2);
  CHECK(e.counts.front() == 1);
  CHECK(e.mean == 5.0);
  CHECK(e.median == 5.0);
  CHECK(*e.baseline == 4.0);
  CHECK_THROWS_AS(distribution_summary(std::vector<double>{}), DomainError);
}

TEST_CASE("hyperparam_series", "[analytics]") {
  std::vector<RunRecord> one{scored(Method::dpo, 0.3, std::nullopt, 2.0)};
  const auto s = hyperparam_series(one, "beta");
  CHECK(s.points.size() == 1);
  CHECK(s.groups.size() == 1);
  CHECK_THROWS_AS(hyperparam_series(one, "rho"), DomainError);
  CHECK_THROWS_AS(hyperparam_series(one, "gamma"), DomainError);

  std::vector<RunRecord> dpo;
  const GridSpec grid;
  Rng rng(1);
  for (int i = 0; i < 60; ++i) {
    dpo.push_back(scored(Method::dpo, grid.dpo_beta[rng.below(5)], std::nullopt, rng.uniform(), i));
  }
  CHECK(hyperparam_series(dpo, "beta").groups.size() <= 5);
}

TEST_CASE("analytics match brute-force oracles", "[analytics][property]") {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto table = pbtest::random_table(rng);
    INFO("table " << i);
    REQUIRE(pbtest::check_table(table.records, rng).empty());
  }
}

TEST_CASE("build_report", "[analytics]") {
  Rng rng(6);
  std::vector<RunRecord> records;
  while (records.size() < 3 || records_of(records, Method::dpo).empty()) {
    records = pbtest::random_table(rng, 30).records;
  }
  const auto a = build_report(records);
  std::vector<RunRecord> reversed(records.rbegin(), records.rend());
  const auto b = build_report(reversed);
  CHECK(a.json.dump() == b.json.dump());
  CHECK(a.tables == b.tables);
  CHECK(a.json.at("n_records") == records.size());
  for (const char* name : {"best_table.csv", "h2h_best.csv", "h2h_p75.csv", "distribution_bins.csv",
                           "series_points.csv", "series_groups.csv", "topk_pools.csv"}) {
    CHECK(a.tables.count(name) == 1);
  }
  CHECK_THROWS_AS(build_report({}), ConfigError);
}
