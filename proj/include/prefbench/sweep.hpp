#pragma once

// Grid expansion and the parallel trial runner. Every trial owns its policy
// and rng streams; the dataset and SFT checkpoint are shared read-only.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "prefbench/error.hpp"
#include "prefbench/metrics.hpp"
#include "prefbench/objectives.hpp"
#include "prefbench/random.hpp"
#include "prefbench/synthenv.hpp"
#include "prefbench/trainer.hpp"

namespace prefbench {

struct GridSpec {
  std::vector<double> dpo_beta{0.01, 0.05, 0.1, 0.3, 0.5};
  std::vector<double> simpo_beta{1.0, 1.5, 2.0, 2.5};
  std::vector<double> simpo_gamma{0.5, 0.8, 1.0, 1.2, 1.4, 1.6};
  std::vector<double> lndpo_beta{1.0, 1.5, 2.0, 2.5, 3.0, 3.5};
  std::vector<double> learning_rates{1e-3, 3e-3, 1e-2};
  std::vector<int> epochs{1, 3};
  int batch_size = 64;
  std::vector<Method> methods{Method::dpo, Method::simpo, Method::lndpo};

  void validate() const {
    auto positive = [](const std::vector<double>& v, const char* name) {
      if (v.empty()) throw ConfigError(std::string("po.") + name + " must be nonempty");
      for (double x : v) {
        if (!(x > 0.0) || !std::isfinite(x)) {
          throw ConfigError(std::string("po.") + name + " values must be positive");
        }
      }
    };
    if (methods.empty()) throw ConfigError("po.methods must be nonempty");
    for (Method m : methods) {
      if (m == Method::dpo) positive(dpo_beta, "dpo_beta");
      if (m == Method::lndpo) positive(lndpo_beta, "lndpo_beta");
      if (m == Method::simpo) {
        positive(simpo_beta, "simpo_beta");
        if (simpo_gamma.empty()) throw ConfigError("po.simpo_gamma must be nonempty");
        for (double g : simpo_gamma) {
          if (!(g >= 0.0)) throw ConfigError("po.simpo_gamma values must be >= 0");
        }
      }
    }
    positive(learning_rates, "learning_rates");
    if (epochs.empty()) throw ConfigError("po.epochs must be nonempty");
    for (int e : epochs) {
      if (e < 1) throw ConfigError("po.epochs values must be >= 1");
    }
    if (batch_size < 1) throw ConfigError("po.batch_size must be >= 1");
  }
};

// Cartesian product per method, in method order then beta, gamma, learning
// rate, epochs. A trial's seed is derived from the master seed and the
// trial's hyperparameters, so adding grid points never reseeds existing ones.
inline std::vector<TrialConfig> expand_grid(const GridSpec& spec, std::uint64_t master_seed) {
  spec.validate();
  std::vector<TrialConfig> out;
  auto emit = [&](Method m, double beta, std::optional<double> gamma) {
    for (double lr : spec.learning_rates) {
      for (int ep : spec.epochs) {
        TrialConfig t;
        t.objective = {m, beta, gamma};
        t.learning_rate = lr;
        t.epochs = ep;
        t.batch_size = spec.batch_size;
        t.seed = 0;
        t.seed = derive_seed(master_seed, "po_trial", hash_string(to_json(t).dump()));
        out.push_back(t);
      }
    }
  };
  for (Method m : spec.methods) {
    switch (m) {
      case Method::dpo:
        for (double b : spec.dpo_beta) emit(m, b, std::nullopt);
        break;
      case Method::simpo:
        for (double b : spec.simpo_beta) {
          for (double g : spec.simpo_gamma) emit(m, b, g);
        }
        break;
      case Method::lndpo:
        for (double b : spec.lndpo_beta) emit(m, b, std::nullopt);
        break;
    }
  }
  return out;
}

enum class RunStatus { ok, failed };

struct RunRecord {
  std::string trial_id;
  TrialConfig trial;
  RunStatus status = RunStatus::ok;
  std::string error;
  std::vector<double> loss_trace;
  std::optional<EvalReport> eval;
  double wall_time = 0.0;  // seconds; not part of the serialized record
};

// Wall time is left out so that records are reproducible byte for byte.
inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json j = {{"trial_id", r.trial_id},
                      {"trial", to_json(r.trial)},
                      {"status", r.status == RunStatus::ok ? "ok" : "failed"},
                      {"error", r.error},
                      {"loss_trace", r.loss_trace}};
  j["eval"] = r.eval ? to_json(*r.eval) : nlohmann::json(nullptr);
  return j;
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.trial_id = j.at("trial_id").get<std::string>();
  r.trial = trial_from_json(j.at("trial"));
  const auto status = j.at("status").get<std::string>();
  if (status != "ok" && status != "failed") throw ConfigError("unknown record status '" + status + "'");
  r.status = status == "ok" ? RunStatus::ok : RunStatus::failed;
  r.error = j.value("error", std::string());
  r.loss_trace = j.value("loss_trace", std::vector<double>{});
  if (j.contains("eval") && !j.at("eval").is_null()) r.eval = eval_report_from_json(j.at("eval"));
  if (r.status == RunStatus::ok && !r.eval) throw ConfigError("ok record without an evaluation");
  return r;
}

// Shared, read-only inputs of every trial.
struct SweepContext {
  const DatasetBundle* data = nullptr;
  VocabSpec vocab;
  GoldRewardSpec gold;
  SamplerConfig eval_sampler;
  std::uint64_t eval_seed = 0;
};

using TrialCallback = std::function<void(const RunRecord&, const Checkpoint*)>;

inline RunRecord run_trial(const TrialConfig& trial, const SweepContext& ctx, const Checkpoint& sft,
                           Checkpoint* trained = nullptr) {
  RunRecord rec;
  rec.trial = trial;
  rec.trial_id = trial_id(trial);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Checkpoint ck = po_train(sft, *ctx.data, trial);
    rec.loss_trace = ck.loss_trace;
    for (double l : ck.loss_trace) {
      if (!std::isfinite(l)) throw TrainingAborted("non-finite training loss");
    }
    rec.eval = evaluate(ck.params, sft.params, *ctx.data, ctx.gold, ctx.vocab, ctx.eval_sampler, ctx.eval_seed);
    rec.status = RunStatus::ok;
    if (trained) *trained = std::move(ck);
  } catch (const std::exception& e) {
    rec.status = RunStatus::failed;
    rec.error = e.what();
    rec.eval.reset();
  }
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// Runs every trial on up to `parallelism` threads. A failing trial yields a
// failed record and never stops the others. The result is sorted by trial id.
inline std::vector<RunRecord> run_sweep(const std::vector<TrialConfig>& trials, const SweepContext& ctx,
                                        const Checkpoint& sft, int parallelism,
                                        const TrialCallback& on_done = {}) {
  std::vector<RunRecord> records(trials.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < trials.size(); i = next++) {
      Checkpoint ck;
      records[i] = run_trial(trials[i], ctx, sft, &ck);
      if (on_done) {
        std::lock_guard<std::mutex> lock(callback_mutex);
        on_done(records[i], records[i].status == RunStatus::ok ? &ck : nullptr);
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::max(1, parallelism));
  if (n_threads == 1 || trials.size() <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(n_threads, trials.size()); ++t) pool.emplace_back(worker);
  }
  std::sort(records.begin(), records.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.trial_id < b.trial_id; });
  return records;
}

}  // namespace prefbench
