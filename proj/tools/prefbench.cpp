// prefbench: synthetic preference-optimization lab.
//
//   prefbench gen-data --config configs/desk.json
//   prefbench sft      --config configs/desk.json
//   prefbench sweep    --config configs/desk.json --method all --parallelism 4
//   prefbench report   --records OUT/sweeps/<id>/records.jsonl
//   prefbench eval     --config configs/desk.json --checkpoint PATH
//
// Exit codes: 0 success, 1 runtime/config error, 2 usage error.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "prefbench/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Preference-optimization lab: synthetic data, SFT, DPO/SimPO/LN-DPO sweeps and robustness reports"};
  app.require_subcommand(1);

  prefbench::CliOptions opts;
  std::uint64_t seed = 0;
  int parallelism = 1;
  std::string out;

  auto add_globals = [&](CLI::App* cmd, bool needs_config) {
    auto* cfg = cmd->add_option("--config", opts.config_path, "Config file (JSON)")->check(CLI::ExistingFile);
    if (needs_config) cfg->required();
    cmd->add_option("--seed", seed, "Master seed (overrides run.seed)");
    cmd->add_option("--out", out, "Output root (default: $PREFBENCH_OUT, then run.output_dir)");
    cmd->add_option("--parallelism", parallelism, "Concurrent trials")->check(CLI::PositiveNumber);
    cmd->add_flag("--quiet", opts.quiet, "Suppress progress output");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic preference dataset");
  add_globals(gen, true);

  auto* sft = app.add_subcommand("sft", "Train the SFT grid and select the best checkpoint");
  add_globals(sft, true);

  std::string method = "all";
  auto* sweep = app.add_subcommand("sweep", "Run the preference-optimization grid and write the report");
  add_globals(sweep, true);
  sweep->add_option("--method", method, "Which objective(s) to sweep")
      ->check(CLI::IsMember({"all", "dpo", "simpo", "lndpo"}));

  std::string records;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Recompute report.json and tables from records.jsonl");
  report->add_option("--records", records, "Path to records.jsonl")->required();
  report->add_option("--out", report_out, "Directory for report.json (default: next to the records)");
  report->add_flag("--quiet", opts.quiet, "Suppress progress output");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Evaluate one checkpoint against the SFT policy");
  add_globals(eval, true);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  for (auto* cmd : {gen, sft, sweep, eval}) {
    if (cmd->parsed()) {
      if (cmd->count("--seed") > 0) opts.seed = seed;
      if (cmd->count("--parallelism") > 0) opts.parallelism = parallelism;
      if (cmd->count("--out") > 0) opts.out = out;
    }
  }

  try {
    if (gen->parsed()) return prefbench::cmd_gen_data(opts);
    if (sft->parsed()) return prefbench::cmd_sft(opts);
    if (sweep->parsed()) return prefbench::cmd_sweep(opts, method);
    if (report->parsed()) return prefbench::cmd_report(opts, records, report_out);
    if (eval->parsed()) return prefbench::cmd_eval(opts, checkpoint);
  } catch (const prefbench::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
