#pragma once

// Robustness analytics over a set of RunRecords. Everything here is a pure
// function of the records; the SweepReport has no state of its own.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefbench/error.hpp"
#include "prefbench/metrics.hpp"
#include "prefbench/numeric.hpp"
#include "prefbench/sweep.hpp"

namespace prefbench {

inline std::vector<RunRecord> ok_records(const std::vector<RunRecord>& records) {
  std::vector<RunRecord> out;
  for (const auto& r : records) {
    if (r.status == RunStatus::ok && r.eval) out.push_back(r);
  }
  return out;
}

inline std::vector<RunRecord> records_of(const std::vector<RunRecord>& records, Method m) {
  std::vector<RunRecord> out;
  for (const auto& r : records) {
    if (r.trial.objective.method == m && r.status == RunStatus::ok && r.eval) out.push_back(r);
  }
  return out;
}

namespace detail {

inline double score_of(const RunRecord& r) { return r.eval->mean_score; }

// Best first: higher mean score, then lower trial id.
inline bool better(const RunRecord& a, const RunRecord& b) {
  if (score_of(a) != score_of(b)) return score_of(a) > score_of(b);
  return a.trial_id < b.trial_id;
}

// Successful runs ordered best first; sorts pointers to avoid copying records.
inline std::vector<const RunRecord*> ranked(const std::vector<RunRecord>& ok) {
  std::vector<const RunRecord*> order;
  order.reserve(ok.size());
  for (const auto& r : ok) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const RunRecord* a, const RunRecord* b) { return better(*a, *b); });
  return order;
}

}  // namespace detail

// The best ceil(k/100 * N) runs by mean score, best first.
inline std::vector<RunRecord> top_k_runs(const std::vector<RunRecord>& records, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw DomainError("top-k percentage must lie in (0, 100]");
  const auto ok = ok_records(records);
  if (ok.empty()) throw DomainError("top_k_runs needs at least one successful run");
  const auto order = detail::ranked(ok);
  const auto take = static_cast<std::size_t>(std::ceil(k_percent * static_cast<double>(ok.size()) / 100.0));
  std::vector<RunRecord> out;
  for (std::size_t i = 0; i < std::clamp<std::size_t>(take, 1, ok.size()); ++i) out.push_back(*order[i]);
  return out;
}

// Nearest-rank percentile of the mean-score distribution. Ascending order is
// the exact reverse of top_k_runs' order, so p = 100 gives top_k_runs' first run.
inline RunRecord percentile_run(const std::vector<RunRecord>& records, double p) {
  const auto ok = ok_records(records);
  if (ok.empty()) throw DomainError("percentile_run needs at least one successful run");
  const auto order = detail::ranked(ok);
  return *order[ok.size() - 1 - nearest_rank_index(p, ok.size())];
}

// Per-sample win rate of a over b, paired by prompt id.
inline WinRate head_to_head(const RunRecord& a, const RunRecord& b) {
  if (!a.eval || !b.eval) throw IncomparableRecords("head-to-head needs two evaluated runs");
  if (a.eval->prompt_set_hash != b.eval->prompt_set_hash) {
    throw IncomparableRecords("runs " + a.trial_id + " and " + b.trial_id +
                              " were evaluated on different prompt sets");
  }
  std::map<std::size_t, double> b_scores;
  for (const auto& s : b.eval->per_sample) b_scores[s.prompt_id] = s.gold_score;
  if (b_scores.size() != a.eval->per_sample.size()) {
    throw IncomparableRecords("runs " + a.trial_id + " and " + b.trial_id + " cover different prompts");
  }
  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& s : a.eval->per_sample) {
    auto it = b_scores.find(s.prompt_id);
    if (it == b_scores.end()) throw IncomparableRecords("prompt ids do not match");
    xs.push_back(s.gold_score);
    ys.push_back(it->second);
  }
  return win_rate(xs, ys);
}

// Signed percent change relative to a base, rounded to one decimal.
inline double percent_change(double v, double base) {
  if (base == 0.0) throw DomainError("percent change against a zero base");
  return std::round(1000.0 * (v - base) / std::abs(base)) / 10.0;
}

inline const std::vector<std::string>& report_metrics() {
  static const std::vector<std::string> names{"mean_score", "mean_length", "kl_vs_sft", "win_vs_chosen",
                                              "win_vs_sft"};
  return names;
}

inline double metric_of(const EvalReport& e, const std::string& name) {
  if (name == "mean_score") return e.mean_score;
  if (name == "mean_length") return e.mean_length;
  if (name == "kl_vs_sft") return e.kl_vs_sft;
  if (name == "win_vs_chosen") return e.win_vs_chosen;
  if (name == "win_vs_sft") return e.win_vs_sft;
  throw DomainError("unknown metric '" + name + "'");
}

struct BestTableRow {
  std::string metric;
  double dpo = 0.0;
  std::map<Method, double> raw;
  std::map<Method, std::optional<double>> percent;  // nullopt when DPO's value is 0
};

struct BestTable {
  std::map<Method, std::string> best_trial;
  std::vector<BestTableRow> rows;
};

// Best run per method by mean score; DPO's metrics stay raw and the other
// methods are reported as percent change against them.
inline BestTable best_table(const std::vector<RunRecord>& records, const std::vector<Method>& methods) {
  if (std::find(methods.begin(), methods.end(), Method::dpo) == methods.end()) {
    throw ConfigError("best table needs DPO as its baseline");
  }
  BestTable t;
  std::map<Method, RunRecord> best;
  for (Method m : methods) {
    const auto runs = records_of(records, m);
    if (runs.empty()) throw ConfigError(std::string("best table: no successful ") + to_string(m) + " run");
    best.emplace(m, percentile_run(runs, 100.0));
    t.best_trial[m] = best.at(m).trial_id;
  }
  for (const auto& name : report_metrics()) {
    BestTableRow row;
    row.metric = name;
    row.dpo = metric_of(*best.at(Method::dpo).eval, name);
    for (Method m : methods) {
      const double v = metric_of(*best.at(m).eval, name);
      row.raw[m] = v;
      if (m == Method::dpo) continue;
      row.percent[m] = row.dpo == 0.0 ? std::nullopt : std::optional<double>(percent_change(v, row.dpo));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

struct DistributionSummary {
  double mean = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::optional<double> baseline;
  double bin_lo = 0.0;
  double bin_width = 0.0;
  std::vector<std::size_t> counts;
};

// Fixed-width histogram over [min, max]. A degenerate (constant) sample
// lands entirely in the first bin.
inline DistributionSummary distribution_summary(std::span<const double> values, int bins = 20,
                                                std::optional<double> baseline = std::nullopt) {
  if (values.empty()) throw DomainError("distribution_summary of an empty list");
  if (bins < 1) throw DomainError("histogram needs at least one bin");
  DistributionSummary d;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  d.min = sorted.front();
  d.max = sorted.back();
  d.mean = mean_of(values);
  const std::size_t n = sorted.size();
  d.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  d.baseline = baseline;
  d.bin_lo = d.min;
  d.bin_width = (d.max - d.min) / bins;
  d.counts.assign(bins, 0);
  for (double v : values) {
    std::size_t b = 0;
    if (d.bin_width > 0.0) {
      b = static_cast<std::size_t>(std::floor((v - d.min) / d.bin_width));
      b = std::min<std::size_t>(b, static_cast<std::size_t>(bins - 1));
    }
    ++d.counts[b];
  }
  return d;
}

struct SeriesPoint {
  double value = 0.0;
  double mean_score = 0.0;
  std::string trial_id;
};

struct SeriesGroup {
  double value = 0.0;
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double stddev = 0.0;  // population
};

struct HyperparamSeries {
  std::string param;
  std::vector<SeriesPoint> points;
  std::vector<SeriesGroup> groups;  // ascending by value
};

inline double hyperparam_value(const TrialConfig& t, const std::string& param) {
  if (param == "beta") return t.objective.beta;
  if (param == "gamma") {
    if (!t.objective.gamma) throw DomainError("gamma does not apply to " + std::string(to_string(t.objective.method)));
    return *t.objective.gamma;
  }
  if (param == "learning_rate") return t.learning_rate;
  if (param == "epochs") return t.epochs;
  throw DomainError("unknown hyperparameter '" + param + "'");
}

inline std::vector<std::string> hyperparams_of(Method m) {
  if (m == Method::simpo) return {"beta", "gamma", "learning_rate", "epochs"};
  return {"beta", "learning_rate", "epochs"};
}

// One point per successful run, grouped by the parameter's value.
inline HyperparamSeries hyperparam_series(const std::vector<RunRecord>& records, const std::string& param) {
  HyperparamSeries s;
  s.param = param;
  std::map<double, std::vector<double>> by_value;
  for (const auto& r : ok_records(records)) {
    const double v = hyperparam_value(r.trial, param);
    s.points.push_back({v, r.eval->mean_score, r.trial_id});
    by_value[v].push_back(r.eval->mean_score);
  }
  std::sort(s.points.begin(), s.points.end(), [](const SeriesPoint& a, const SeriesPoint& b) {
    return a.value != b.value ? a.value < b.value : a.trial_id < b.trial_id;
  });
  for (const auto& [v, scores] : by_value) {
    SeriesGroup g;
    g.value = v;
    g.count = scores.size();
    g.mean = mean_of(scores);
    g.min = *std::min_element(scores.begin(), scores.end());
    g.max = *std::max_element(scores.begin(), scores.end());
    double ss = 0.0;
    for (double x : scores) ss += (x - g.mean) * (x - g.mean);
    g.stddev = std::sqrt(ss / static_cast<double>(scores.size()));
    s.groups.push_back(g);
  }
  return s;
}

struct PoolStats {
  double mean = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
  std::size_t n = 0;
};

inline PoolStats pool_stats(std::vector<double> values) {
  if (values.empty()) throw DomainError("empty pool");
  std::sort(values.begin(), values.end());
  return {mean_of(values), values[nearest_rank_index(50.0, values.size())],
          values[nearest_rank_index(90.0, values.size())], values.size()};
}

struct TopKPool {
  double k_percent = 0.0;
  std::vector<std::string> trial_ids;
  PoolStats length;
  PoolStats kl;  // per-sample log pi_theta - log pi_sft
};

// Per-sample length and log-ratio data pooled over the top k% runs.
inline TopKPool top_k_pool(const std::vector<RunRecord>& records, double k_percent) {
  TopKPool pool;
  pool.k_percent = k_percent;
  std::vector<double> lengths;
  std::vector<double> ratios;
  for (const auto& r : top_k_runs(records, k_percent)) {
    pool.trial_ids.push_back(r.trial_id);
    for (const auto& s : r.eval->per_sample) {
      lengths.push_back(s.length);
      ratios.push_back(s.log_ratio());
    }
  }
  pool.length = pool_stats(std::move(lengths));
  pool.kl = pool_stats(std::move(ratios));
  return pool;
}

// ---- the sweep report ----------------------------------------------------------

struct SweepReport {
  nlohmann::json json;
  std::map<std::string, std::string> tables;  // file name -> CSV text
};

inline const std::vector<double>& top_k_levels() {
  static const std::vector<double> levels{1.0, 10.0, 25.0};
  return levels;
}

namespace detail {

inline std::string k_label(double k) {
  std::ostringstream s;
  s << k;
  return s.str();
}

// Percent changes are rounded to one decimal already; print them that way.
inline std::string one_decimal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

inline nlohmann::json to_json(const DistributionSummary& d) {
  return {{"mean", d.mean},       {"median", d.median},       {"min", d.min},
          {"max", d.max},         {"bin_lo", d.bin_lo},       {"bin_width", d.bin_width},
          {"counts", d.counts},   {"baseline", d.baseline ? nlohmann::json(*d.baseline) : nlohmann::json(nullptr)}};
}

inline nlohmann::json to_json(const PoolStats& p) {
  return {{"mean", p.mean}, {"p50", p.p50}, {"p90", p.p90}, {"n", p.n}};
}

inline nlohmann::json run_summary(const RunRecord& r) {
  nlohmann::json j = {{"trial_id", r.trial_id}, {"trial", prefbench::to_json(r.trial)}};
  for (const auto& m : report_metrics()) j[m] = metric_of(*r.eval, m);
  return j;
}

}  // namespace detail

inline SweepReport build_report(std::vector<RunRecord> records, int bins = 20) {
  using nlohmann::json;
  if (records.empty()) throw ConfigError("no runs to report on");
  // Canonical order, so sums (and the report) do not depend on input order.
  std::sort(records.begin(), records.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.trial_id < b.trial_id; });
  SweepReport rep;
  auto& j = rep.json;
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.status == RunStatus::failed ? 1 : 0;
  j["n_records"] = records.size();
  j["n_failed"] = failed;
  j["failure_rate"] = static_cast<double>(failed) / static_cast<double>(records.size());

  const auto ok = ok_records(records);
  std::vector<Method> present;
  for (Method m : {Method::dpo, Method::simpo, Method::lndpo}) {
    if (!records_of(records, m).empty()) present.push_back(m);
  }

  // SFT baseline: identical in every record (same eval seed and prompts).
  std::optional<EvalReport> sft_view;
  if (!ok.empty()) {
    EvalReport base = *ok.front().eval;
    for (auto& s : base.per_sample) {
      s.gold_score = s.sft_score;
      s.length = s.sft_length;
      s.logp_theta = s.logp_sft;
    }
    summarize(base);
    sft_view = base;
    j["prompt_set_hash"] = base.prompt_set_hash;
    j["sft_baseline"] = {{"mean_score", base.mean_score},       {"mean_length", base.mean_length},
                         {"kl_vs_sft", 0.0},                    {"win_vs_chosen", base.win_vs_chosen},
                         {"win_vs_sft", base.win_vs_sft}};
  } else {
    j["prompt_set_hash"] = nullptr;
    j["sft_baseline"] = nullptr;
  }

  std::ostringstream bins_csv;
  bins_csv << "method,metric,bin_lo,bin_hi,count\n";
  std::ostringstream series_csv;
  series_csv << "method,param,value,trial_id,mean_score\n";
  std::ostringstream groups_csv;
  groups_csv << "method,param,value,count,mean,min,max,stddev\n";
  std::ostringstream pools_csv;
  pools_csv << "method,k_percent,n_runs,length_mean,length_p50,length_p90,kl_mean,kl_p50,kl_p90\n";

  json methods = json::object();
  for (Method m : present) {
    const auto runs = records_of(records, m);
    const std::string name = to_string(m);
    json mj;
    mj["n_ok"] = runs.size();
    json dists = json::object();
    for (const auto& metric : report_metrics()) {
      std::vector<double> values;
      for (const auto& r : runs) values.push_back(metric_of(*r.eval, metric));
      std::optional<double> baseline;
      if (sft_view) baseline = metric == "kl_vs_sft" ? 0.0 : metric_of(*sft_view, metric);
      const auto d = distribution_summary(values, bins, baseline);
      dists[metric] = detail::to_json(d);
      for (std::size_t b = 0; b < d.counts.size(); ++b) {
        bins_csv << name << ',' << metric << ',' << format_double(d.bin_lo + b * d.bin_width) << ','
                 << format_double(d.bin_lo + (b + 1) * d.bin_width) << ',' << d.counts[b] << '\n';
      }
    }
    mj["distributions"] = std::move(dists);
    mj["best"] = detail::run_summary(percentile_run(runs, 100.0));
    mj["p75"] = detail::run_summary(percentile_run(runs, 75.0));

    json pools = json::object();
    for (double k : top_k_levels()) {
      const auto pool = top_k_pool(runs, k);
      pools[detail::k_label(k)] = {{"trial_ids", pool.trial_ids},
                                   {"length", detail::to_json(pool.length)},
                                   {"kl", detail::to_json(pool.kl)}};
      pools_csv << name << ',' << detail::k_label(k) << ',' << pool.trial_ids.size() << ','
                << format_double(pool.length.mean) << ',' << format_double(pool.length.p50) << ','
                << format_double(pool.length.p90) << ',' << format_double(pool.kl.mean) << ','
                << format_double(pool.kl.p50) << ',' << format_double(pool.kl.p90) << '\n';
    }
    mj["top_k"] = std::move(pools);

    json series = json::object();
    for (const auto& param : hyperparams_of(m)) {
      const auto s = hyperparam_series(runs, param);
      json groups = json::array();
      for (const auto& g : s.groups) {
        groups.push_back({{"value", g.value}, {"count", g.count}, {"mean", g.mean},
                          {"min", g.min},     {"max", g.max},     {"stddev", g.stddev}});
        groups_csv << name << ',' << param << ',' << format_double(g.value) << ',' << g.count << ','
                   << format_double(g.mean) << ',' << format_double(g.min) << ',' << format_double(g.max)
                   << ',' << format_double(g.stddev) << '\n';
      }
      for (const auto& p : s.points) {
        series_csv << name << ',' << param << ',' << format_double(p.value) << ',' << p.trial_id << ','
                   << format_double(p.mean_score) << '\n';
      }
      series[param] = std::move(groups);
    }
    mj["series"] = std::move(series);
    methods[name] = std::move(mj);
  }
  j["methods"] = std::move(methods);

  // Best-run table normalized to DPO.
  std::ostringstream best_csv;
  best_csv << "metric,dpo";
  for (Method m : present) {
    if (m != Method::dpo) best_csv << ',' << to_string(m) << "_raw," << to_string(m) << "_pct";
  }
  best_csv << '\n';
  if (std::find(present.begin(), present.end(), Method::dpo) != present.end()) {
    const auto table = best_table(records, present);
    json tj;
    json best_ids = json::object();
    for (const auto& [m, id] : table.best_trial) best_ids[to_string(m)] = id;
    tj["best_trial"] = std::move(best_ids);
    json rows = json::array();
    for (const auto& row : table.rows) {
      json rj = {{"metric", row.metric}, {"dpo", row.dpo}};
      best_csv << row.metric << ',' << format_double(row.dpo);
      for (Method m : present) {
        if (m == Method::dpo) continue;
        const auto pct = row.percent.at(m);
        rj[std::string(to_string(m)) + "_raw"] = row.raw.at(m);
        rj[std::string(to_string(m)) + "_pct"] = pct ? json(*pct) : json(nullptr);
        best_csv << ',' << format_double(row.raw.at(m)) << ',' << (pct ? detail::one_decimal(*pct) : "");
      }
      best_csv << '\n';
      rows.push_back(std::move(rj));
    }
    tj["rows"] = std::move(rows);
    j["best_table"] = std::move(tj);
  } else {
    j["best_table"] = nullptr;
  }

  // Head-to-head matrices (row method over column method).
  json h2h = json::object();
  for (const auto& [label, p] : {std::pair<std::string, double>{"best", 100.0}, {"p75", 75.0}}) {
    std::ostringstream csv;
    csv << "row_method,col_method,win,tie\n";
    json cells = json::array();
    for (Method a : present) {
      for (Method b : present) {
        if (a == b) continue;
        const auto ra = percentile_run(records_of(records, a), p);
        const auto rb = percentile_run(records_of(records, b), p);
        const auto w = head_to_head(ra, rb);
        cells.push_back({{"row", to_string(a)}, {"col", to_string(b)}, {"win", w.win}, {"tie", w.tie}});
        csv << to_string(a) << ',' << to_string(b) << ',' << format_double(w.win) << ','
            << format_double(w.tie) << '\n';
      }
    }
    h2h[label] = std::move(cells);
    rep.tables["h2h_" + label + ".csv"] = csv.str();
  }
  j["head_to_head"] = std::move(h2h);

  rep.tables["best_table.csv"] = best_csv.str();
  rep.tables["distribution_bins.csv"] = bins_csv.str();
  rep.tables["series_points.csv"] = series_csv.str();
  rep.tables["series_groups.csv"] = groups_csv.str();
  rep.tables["topk_pools.csv"] = pools_csv.str();
  return rep;
}

}  // namespace prefbench
