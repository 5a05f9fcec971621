#pragma once

// Pipeline subcommands behind the prefbench CLI. Output layout under the
// output root:
//
//   data/train.jsonl  data/eval.jsonl  data/bundle.json  data/manifest.json
//   sft/candidates/<i>.json  sft/checkpoint.json  sft/selection.json
//   sweeps/<sweep-id>/records.jsonl  report.json  timings.jsonl  tables/*.csv
//   sweeps/<sweep-id>/trials/<trial-id>/checkpoint.json
//   eval/<checkpoint-hash>.json

#include <fcntl.h>
#include <unistd.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefbench/analytics.hpp"
#include "prefbench/config.hpp"
#include "prefbench/error.hpp"
#include "prefbench/metrics.hpp"
#include "prefbench/policy.hpp"
#include "prefbench/random.hpp"
#include "prefbench/sweep.hpp"
#include "prefbench/synthenv.hpp"
#include "prefbench/trainer.hpp"

namespace prefbench {

namespace fs = std::filesystem;

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> parallelism;
  bool quiet = false;
};

// Component names used with derive_seed(master, name, index).
namespace seeds {
inline constexpr const char* kDataPolicy = "data_policy";
inline constexpr const char* kDataset = "dataset";
inline constexpr const char* kSft = "sft";
inline constexpr const char* kSftSelect = "sft_select";
inline constexpr const char* kEval = "eval";
}  // namespace seeds

// ---- file helpers ----------------------------------------------------------------

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Write-then-rename so readers never see a half-written file.
inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << content;
    if (!out) throw ConfigError("short write to " + tmp.string());
  }
  fs::rename(tmp, p);
}

inline void append_line(const fs::path& p, const std::string& line) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::app);
  if (!out) throw ConfigError("cannot append to " + p.string());
  out << line << '\n';
}

inline std::string file_hash(const fs::path& p) { return hex64(hash_string(read_file(p))); }

// Exclusive lock on an output directory for the lifetime of the object.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".prefbench.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw ConfigError("output directory " + dir.string() + " is locked by another run (remove " +
                        path_.string() + " if no run is active)");
    }
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

// ---- context ---------------------------------------------------------------------

struct RunContext {
  AppConfig config;
  fs::path out;

  fs::path data_dir() const { return out / "data"; }
  fs::path sft_dir() const { return out / "sft"; }
  fs::path sweeps_dir() const { return out / "sweeps"; }
};

inline RunContext make_context(const CliOptions& opts) {
  if (opts.config_path.empty()) throw ConfigError("--config is required");
  RunContext ctx{load_app_config(opts.config_path), {}};
  if (opts.seed) ctx.config.seed = *opts.seed;
  if (opts.parallelism) {
    if (*opts.parallelism < 1) throw ConfigError("--parallelism must be >= 1");
    ctx.config.parallelism = *opts.parallelism;
  }
  if (opts.out) {
    ctx.out = *opts.out;
  } else if (const char* env = std::getenv("PREFBENCH_OUT"); env != nullptr && *env != '\0') {
    ctx.out = env;
  } else {
    ctx.out = ctx.config.output_dir;
  }
  return ctx;
}

inline void log_line(const CliOptions& opts, const std::string& msg) {
  if (!opts.quiet) std::cerr << msg << '\n';
}

// ---- dataset files ------------------------------------------------------------------

inline void save_dataset(const fs::path& dir, const DatasetBundle& bundle, const nlohmann::json& meta) {
  std::string train;
  for (const auto& ex : bundle.train) train += example_to_json(ex).dump() + '\n';
  std::string eval;
  for (std::size_t i = 0; i < bundle.eval_prompts.size(); ++i) {
    eval += nlohmann::json{{"prompt", bundle.eval_prompts[i]}, {"chosen", bundle.eval_chosen[i]}}.dump() + '\n';
  }
  write_file(dir / "train.jsonl", train);
  write_file(dir / "eval.jsonl", eval);
  write_file(dir / "bundle.json", meta.dump(2) + '\n');
  nlohmann::json manifest;
  for (const char* name : {"train.jsonl", "eval.jsonl", "bundle.json"}) manifest["files"][name] = file_hash(dir / name);
  manifest["seed"] = meta.at("seed");
  write_file(dir / "manifest.json", manifest.dump(2) + '\n');
}

struct LoadedData {
  DatasetBundle bundle;
  EnvConfig env;
  std::string manifest_hash;
};

inline LoadedData load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw ConfigError("no dataset in " + dir.string() + "; run `prefbench gen-data --config ...` first");
  }
  LoadedData d;
  auto parse_lines = [](const fs::path& p, auto&& fn) {
    std::istringstream in(read_file(p));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        fn(nlohmann::json::parse(line));
      } catch (const std::exception& e) {
        throw ConfigError(p.string() + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  };
  parse_lines(dir / "train.jsonl", [&](const nlohmann::json& j) { d.bundle.train.push_back(example_from_json(j)); });
  parse_lines(dir / "eval.jsonl", [&](const nlohmann::json& j) {
    d.bundle.eval_prompts.push_back(j.at("prompt").get<Sequence>());
    d.bundle.eval_chosen.push_back(j.at("chosen").get<Sequence>());
  });
  const auto meta = nlohmann::json::parse(read_file(dir / "bundle.json"));
  d.env = env_from_json(meta.at("env"));
  d.manifest_hash = file_hash(dir / "manifest.json");
  return d;
}

// ---- gen-data -----------------------------------------------------------------------

inline int cmd_gen_data(const CliOptions& opts) {
  const auto ctx = make_context(opts);
  DirLock lock(ctx.out);
  const auto& c = ctx.config;
  const auto policy = make_data_policy(c.env, derive_seed(c.seed, seeds::kDataPolicy, 0));
  const auto bundle = build_dataset(c.env, c.n_train, c.n_eval, policy, derive_seed(c.seed, seeds::kDataset, 0));
  nlohmann::json meta = {{"env", to_json(c.env)},
                         {"seed", c.seed},
                         {"n_train", c.n_train},
                         {"n_eval", c.n_eval},
                         {"prompt_set_hash", hex64(prompt_set_hash(bundle.eval_prompts))},
                         {"data_policy", policy_to_json(policy)}};
  save_dataset(ctx.data_dir(), bundle, meta);
  std::size_t flipped = 0;
  for (const auto& ex : bundle.train) flipped += ex.flipped ? 1 : 0;
  log_line(opts, "wrote " + std::to_string(bundle.train.size()) + " pairs (" + std::to_string(flipped) +
                     " flipped) and " + std::to_string(bundle.eval_prompts.size()) + " eval prompts to " +
                     ctx.data_dir().string());
  return 0;
}

// ---- sft --------------------------------------------------------------------------------

inline int cmd_sft(const CliOptions& opts) {
  const auto ctx = make_context(opts);
  DirLock lock(ctx.out);
  const auto& c = ctx.config;
  const auto data = load_dataset(ctx.data_dir());
  const PolicyParams init(data.env.vocab.size, data.env.order, data.env.vocab.bos, data.env.vocab.eos, Role::sft);

  std::vector<Checkpoint> candidates;
  nlohmann::json rows = nlohmann::json::array();
  std::size_t index = 0;
  for (double lr : c.sft.learning_rates) {
    for (int epochs : c.sft.epochs) {
      SftConfig sc{lr, epochs, c.sft.batch_size, derive_seed(c.seed, seeds::kSft, index)};
      candidates.push_back(sft_train(init, data.bundle, sc));
      write_file(ctx.sft_dir() / "candidates" / (std::to_string(index) + ".json"),
                 checkpoint_to_json(candidates.back()).dump() + '\n');
      ++index;
    }
  }
  const auto sel = select_best_sft(candidates, data.bundle.eval_prompts, c.eval_sampler, data.env.reward,
                                   data.env.vocab, derive_seed(c.seed, seeds::kSftSelect, 0));
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    rows.push_back({{"index", i},
                    {"hyper", candidates[i].hyper},
                    {"final_train_loss", candidates[i].loss_trace.back()},
                    {"mean_score", sel.mean_scores[i]},
                    {"selected", i == sel.best}});
  }
  const auto& winner = candidates[sel.best];
  write_file(ctx.sft_dir() / "checkpoint.json", checkpoint_to_json(winner).dump() + '\n');
  nlohmann::json report = {{"candidates", rows},
                           {"selected", sel.best},
                           {"winner_hash", hex64(policy_hash(winner.params))},
                           {"data_manifest", data.manifest_hash}};
  write_file(ctx.sft_dir() / "selection.json", report.dump(2) + '\n');
  log_line(opts, "selected SFT candidate " + std::to_string(sel.best) + " of " + std::to_string(candidates.size()) +
                     " (mean score " + format_double(sel.mean_scores[sel.best]) + ")");
  return 0;
}

// ---- sweep / report ----------------------------------------------------------------------

// Corrupt lines are reported with their 1-based line number.
inline std::vector<RunRecord> read_records(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("records file " + path.string() + " does not exist");
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t n = 0;
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(run_record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": corrupt record: " + e.what());
    }
  }
  return out;
}

inline std::string records_text(std::vector<RunRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.trial_id < b.trial_id; });
  std::string text;
  for (const auto& r : records) text += to_json(r).dump() + '\n';
  return text;
}

inline void write_report(const fs::path& dir, const SweepReport& rep) {
  write_file(dir / "report.json", rep.json.dump(2) + '\n');
  for (const auto& [name, csv] : rep.tables) write_file(dir / "tables" / name, csv);
}

// Rebuilds the report from the records on disk.
inline SweepReport report_from_records_file(const fs::path& records_path) {
  const auto records = read_records(records_path);
  if (records.empty()) throw ConfigError("no runs in " + records_path.string());
  return build_report(records);
}

inline std::string sweep_id(const LoadedData& data, const PolicyParams& sft, const AppConfig& c) {
  Fnv1a h;
  h.str(data.manifest_hash).u64(policy_hash(sft)).u64(c.seed);
  h.str(to_json(c.eval_sampler).dump());
  return hex64(h.value());
}

inline std::vector<Method> methods_for(const std::string& selector, const GridSpec& grid) {
  if (selector == "all") return grid.methods;
  return {method_from_string(selector)};
}

struct SweepOutcome {
  fs::path dir;
  std::size_t ran = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
};

inline SweepOutcome run_sweep_command(const CliOptions& opts, const std::string& method) {
  const auto ctx = make_context(opts);
  DirLock lock(ctx.out);
  const auto& c = ctx.config;
  const auto data = load_dataset(ctx.data_dir());
  if (!fs::exists(ctx.sft_dir() / "checkpoint.json")) {
    throw ConfigError("no SFT checkpoint in " + ctx.sft_dir().string() + "; run `prefbench sft --config ...` first");
  }
  const auto sft = checkpoint_from_json(nlohmann::json::parse(read_file(ctx.sft_dir() / "checkpoint.json")));

  GridSpec grid = c.po;
  grid.methods = methods_for(method, c.po);
  const auto trials = expand_grid(grid, c.seed);

  SweepOutcome outcome;
  outcome.dir = ctx.sweeps_dir() / sweep_id(data, sft.params, c);
  const fs::path records_path = outcome.dir / "records.jsonl";

  std::vector<RunRecord> done;
  std::set<std::string> done_ids;
  if (fs::exists(records_path)) {
    done = read_records(records_path);
    for (const auto& r : done) done_ids.insert(r.trial_id);
  }
  std::vector<TrialConfig> todo;
  for (const auto& t : trials) {
    if (done_ids.count(trial_id(t)) == 0) todo.push_back(t);
  }
  outcome.skipped = trials.size() - todo.size();
  outcome.ran = todo.size();

  SweepContext sweep_ctx{&data.bundle, data.env.vocab, data.env.reward, c.eval_sampler,
                         derive_seed(c.seed, seeds::kEval, 0)};
  std::size_t finished = 0;
  auto on_done = [&](const RunRecord& rec, const Checkpoint* ck) {
    append_line(records_path, to_json(rec).dump());
    append_line(outcome.dir / "timings.jsonl",
                nlohmann::json{{"trial_id", rec.trial_id}, {"wall_time", rec.wall_time}}.dump());
    if (ck) write_file(outcome.dir / "trials" / rec.trial_id / "checkpoint.json", checkpoint_to_json(*ck).dump() + '\n');
    ++finished;
    log_line(opts, "[" + std::to_string(finished) + "/" + std::to_string(todo.size()) + "] " + rec.trial_id + " " +
                       to_string(rec.trial.objective.method) +
                       (rec.status == RunStatus::ok ? " score " + format_double(rec.eval->mean_score)
                                                    : " FAILED: " + rec.error));
  };
  auto fresh = run_sweep(todo, sweep_ctx, sft, c.parallelism, on_done);
  for (const auto& r : fresh) outcome.failed += r.status == RunStatus::failed ? 1 : 0;
  done.insert(done.end(), fresh.begin(), fresh.end());

  // Canonical order on disk regardless of completion order.
  write_file(records_path, records_text(done));
  write_report(outcome.dir, report_from_records_file(records_path));
  return outcome;
}

inline int cmd_sweep(const CliOptions& opts, const std::string& method) {
  const auto outcome = run_sweep_command(opts, method);
  log_line(opts, "sweep " + outcome.dir.string() + ": ran " + std::to_string(outcome.ran) + ", skipped " +
                     std::to_string(outcome.skipped) + ", failed " + std::to_string(outcome.failed));
  return 0;
}

inline int cmd_report(const CliOptions& opts, const std::string& records_path, const std::string& out_dir) {
  const fs::path records(records_path);
  const auto rep = report_from_records_file(records);
  const fs::path dir = out_dir.empty() ? records.parent_path() : fs::path(out_dir);
  write_report(dir, rep);
  log_line(opts, "wrote " + (dir / "report.json").string());
  return 0;
}

// ---- eval ---------------------------------------------------------------------------------

inline int cmd_eval(const CliOptions& opts, const std::string& checkpoint_path) {
  const auto ctx = make_context(opts);
  const auto& c = ctx.config;
  const auto data = load_dataset(ctx.data_dir());
  if (!fs::exists(ctx.sft_dir() / "checkpoint.json")) {
    throw ConfigError("no SFT checkpoint in " + ctx.sft_dir().string() + "; run `prefbench sft --config ...` first");
  }
  const auto sft = checkpoint_from_json(nlohmann::json::parse(read_file(ctx.sft_dir() / "checkpoint.json")));
  const auto theta = checkpoint_from_json(nlohmann::json::parse(read_file(checkpoint_path)));
  const auto report = evaluate(theta.params, sft.params, data.bundle, data.env.reward, data.env.vocab,
                               c.eval_sampler, derive_seed(c.seed, seeds::kEval, 0));
  const fs::path dest = ctx.out / "eval" / (hex64(policy_hash(theta.params)) + ".json");
  write_file(dest, to_json(report).dump(2) + '\n');
  std::cout << nlohmann::json{{"mean_score", report.mean_score},       {"win_vs_chosen", report.win_vs_chosen},
                              {"win_vs_sft", report.win_vs_sft},       {"kl_vs_sft", report.kl_vs_sft},
                              {"mean_length", report.mean_length},     {"report", dest.string()}}
                   .dump(2)
            << '\n';
  return 0;
}

}  // namespace prefbench
