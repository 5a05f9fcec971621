#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "support.hpp"

using namespace prefbench;

namespace {

struct Fixture {
  EnvConfig env = pbtest::small_env();
  DatasetBundle data = pbtest::small_bundle(48, 16, 1);
  Checkpoint sft;
  SweepContext ctx;

  Fixture() {
    PolicyParams init(env.vocab.size, 1, env.vocab.bos, env.vocab.eos, Role::theta);
    sft = sft_train(init, data, SftConfig{3e-2, 1, 16, 0});
    ctx = SweepContext{&data, env.vocab, env.reward, SamplerConfig{0.7, 0.95, 32}, 77};
  }
};

std::string dump_all(const std::vector<RunRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + '\n';
  return out;
}

}  // namespace

TEST_CASE("expand_grid cardinality and order", "[sweep]") {
  GridSpec spec;
  spec.methods = {Method::dpo};
  CHECK(expand_grid(spec, 0).size() == 30);

  spec.methods = {Method::simpo};
  spec.learning_rates = {1e-2};
  spec.epochs = {1};
  CHECK(expand_grid(spec, 0).size() == 24);

  GridSpec full;
  const auto a = expand_grid(full, 3);
  const auto b = expand_grid(full, 3);
  REQUIRE(a.size() == 30 + 4 * 6 * 6 + 6 * 6);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(trial_id(a[i]) == trial_id(b[i]));
    ids.insert(trial_id(a[i]));
  }
  CHECK(ids.size() == a.size());
  CHECK(a.front().objective.method == Method::dpo);
  CHECK(a.back().objective.method == Method::lndpo);

  // Seeds depend on the trial's own settings, not on its position.
  GridSpec narrow = full;
  narrow.dpo_beta = {0.1};
  const auto n = expand_grid(narrow, 3);
  bool found = false;
  for (const auto& t : a) {
    if (t.objective.method == Method::dpo && t.objective.beta == 0.1 && t.learning_rate == n[0].learning_rate &&
        t.epochs == n[0].epochs) {
      CHECK(t.seed == n[0].seed);
      found = true;
    }
  }
  CHECK(found);
  CHECK(expand_grid(full, 4)[0].seed != a[0].seed);

  GridSpec bad;
  bad.dpo_beta = {};
  CHECK_THROWS_AS(expand_grid(bad, 0), ConfigError);
  bad = GridSpec{};
  bad.learning_rates = {};
  CHECK_THROWS_AS(expand_grid(bad, 0), ConfigError);
}

TEST_CASE("run_sweep is deterministic across parallelism", "[sweep]") {
  Fixture f;
  GridSpec spec;
  spec.dpo_beta = {0.1, 0.5};
  spec.simpo_beta = {2.0};
  spec.simpo_gamma = {0.5, 1.0};
  spec.lndpo_beta = {1.0, 3.0};
  spec.learning_rates = {1e-2};
  spec.epochs = {1, 2};
  spec.batch_size = 16;
  const auto trials = expand_grid(spec, 11);

  const auto serial = run_sweep(trials, f.ctx, f.sft, 1);
  const auto parallel = run_sweep(trials, f.ctx, f.sft, 4);
  REQUIRE(serial.size() == trials.size());
  CHECK(dump_all(serial) == dump_all(parallel));
  for (std::size_t i = 1; i < serial.size(); ++i) CHECK(serial[i - 1].trial_id < serial[i].trial_id);
  for (const auto& r : serial) CHECK(r.status == RunStatus::ok);

  std::size_t calls = 0;
  run_sweep(trials, f.ctx, f.sft, 3, [&](const RunRecord& r, const Checkpoint* ck) {
    ++calls;
    CHECK(ck != nullptr);
    CHECK(r.eval.has_value());
  });
  CHECK(calls == trials.size());
}

TEST_CASE("a poisoned trial fails alone", "[sweep]") {
  Fixture f;
  auto trials = expand_grid(
      [] {
        GridSpec s;
        s.methods = {Method::dpo};
        s.dpo_beta = {0.1, 0.3};
        s.learning_rates = {1e-2};
        s.epochs = {1};
        s.batch_size = 16;
        return s;
      }(),
      0);
  auto poison = trials[0];
  poison.learning_rate = std::numeric_limits<double>::quiet_NaN();
  trials.push_back(poison);
  auto inf_beta = trials[1];
  inf_beta.objective.beta = std::numeric_limits<double>::infinity();
  trials.push_back(inf_beta);

  const auto records = run_sweep(trials, f.ctx, f.sft, 2);
  REQUIRE(records.size() == 4);
  int failed = 0;
  for (const auto& r : records) {
    if (r.status == RunStatus::failed) {
      ++failed;
      CHECK_FALSE(r.error.empty());
      CHECK_FALSE(r.eval.has_value());
    } else {
      CHECK(r.eval.has_value());
    }
  }
  CHECK(failed == 2);
}

TEST_CASE("non-finite loss marks a run failed", "[sweep]") {
  Fixture f;
  // A checkpoint with a NaN logit poisons every loss.
  Checkpoint bad = f.sft;
  bad.params.logits()[5] = std::numeric_limits<double>::quiet_NaN();
  const auto rec = run_trial(pbtest::trial(Method::simpo, 2.0, 1.0, 1e-2, 1, 16), f.ctx, bad);
  CHECK(rec.status == RunStatus::failed);
}

TEST_CASE("empty sweep and record round trip", "[sweep]") {
  Fixture f;
  CHECK(run_sweep({}, f.ctx, f.sft, 4).empty());

  const auto rec = run_trial(pbtest::trial(Method::lndpo, 2.0, std::nullopt, 1e-2, 1, 16), f.ctx, f.sft);
  REQUIRE(rec.status == RunStatus::ok);
  const auto text = to_json(rec).dump();
  CHECK(to_json(run_record_from_json(nlohmann::json::parse(text))).dump() == text);
  CHECK(text.find("wall_time") == std::string::npos);

  auto j = nlohmann::json::parse(text);
  j["eval"] = nullptr;
  CHECK_THROWS_AS(run_record_from_json(j), ConfigError);
}
