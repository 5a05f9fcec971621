#pragma once

// Application configuration (JSON, versioned). Missing keys fall back to the
// shipped defaults; prompt weights are normalized on load.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefbench/error.hpp"
#include "prefbench/objectives.hpp"
#include "prefbench/policy.hpp"
#include "prefbench/sweep.hpp"
#include "prefbench/synthenv.hpp"

namespace prefbench {

inline constexpr int kConfigSchemaVersion = 1;

struct SftGrid {
  std::vector<double> learning_rates{1e-2, 3e-2};
  std::vector<int> epochs{1, 3};
  int batch_size = 64;
};

struct AppConfig {
  EnvConfig env = default_env_config();
  std::size_t n_train = 2048;
  SftGrid sft;
  GridSpec po;
  SamplerConfig eval_sampler;  // temperature 0.7, top_p 0.95, max_len 256
  std::size_t n_eval = 512;
  std::uint64_t seed = 0;
  int parallelism = 1;
  std::string output_dir = "prefbench_out";

  void validate() const {
    env.validate();
    if (sft.learning_rates.empty()) throw ConfigError("sft.learning_rates must be nonempty");
    for (double lr : sft.learning_rates) {
      if (!(lr >= 0.0)) throw ConfigError("sft.learning_rates values must be >= 0");
    }
    if (sft.epochs.empty()) throw ConfigError("sft.epochs must be nonempty");
    for (int e : sft.epochs) {
      if (e < 1) throw ConfigError("sft.epochs values must be >= 1");
    }
    if (sft.batch_size < 1) throw ConfigError("sft.batch_size must be >= 1");
    po.validate();
    eval_sampler.validate();
    if (n_train < 1) throw ConfigError("env.n_train must be >= 1");
    if (n_eval < 1) throw ConfigError("eval.n_eval must be >= 1");
    if (parallelism < 1) throw ConfigError("run.parallelism must be >= 1");
  }
};

namespace detail {

inline std::vector<double> normalized(std::vector<double> w) {
  PromptDistribution d;
  d.weights = std::move(w);
  d.normalize();
  return d.weights;
}

// 1-based line of a dotted key path ("po.learning_rates"), found by looking
// for each component after the previous one. 0 if absent.
inline int line_of_key(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto dot = path.find('.', start);
    const auto part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    pos = text.find('"' + part + '"', pos);
    if (pos == std::string::npos) return 0;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  int line = 1;
  for (std::size_t i = 0; i < pos; ++i) line += text[i] == '\n' ? 1 : 0;
  return line;
}

inline int line_of_offset(const std::string& text, std::size_t offset) {
  int line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) line += text[i] == '\n' ? 1 : 0;
  return line;
}

}  // namespace detail

inline AppConfig app_config_from_json(const nlohmann::json& j) {
  AppConfig c;
  const int version = j.value("schema_version", -1);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("schema_version must be " + std::to_string(kConfigSchemaVersion));
  }
  try {
    if (j.contains("env")) {
      const auto& e = j.at("env");
      if (e.contains("vocab")) c.env.vocab = vocab_from_json(e.at("vocab"));
      if (e.contains("train_prompts")) {
        c.env.train_prompts = prompt_distribution_from_json(e.at("train_prompts"));
        c.env.train_prompts.weights = detail::normalized(c.env.train_prompts.weights);
      }
      if (e.contains("eval_prompts")) {
        c.env.eval_prompts = prompt_distribution_from_json(e.at("eval_prompts"));
        c.env.eval_prompts.weights = detail::normalized(c.env.eval_prompts.weights);
      }
      if (e.contains("reward")) c.env.reward = reward_from_json(e.at("reward"));
      if (e.contains("data_policy")) c.env.data_policy = data_policy_from_json(e.at("data_policy"));
      if (e.contains("data_sampler")) c.env.data_sampler = sampler_from_json(e.at("data_sampler"), c.env.data_sampler);
      c.env.label_noise = e.value("label_noise", c.env.label_noise);
      c.env.deterministic_labels = e.value("deterministic_labels", c.env.deterministic_labels);
      c.env.resample_budget = e.value("resample_budget", c.env.resample_budget);
      c.env.order = e.value("order", c.env.order);
      c.n_train = e.value("n_train", c.n_train);
    }
    if (j.contains("sft")) {
      const auto& s = j.at("sft");
      c.sft.learning_rates = s.value("learning_rates", c.sft.learning_rates);
      c.sft.epochs = s.value("epochs", c.sft.epochs);
      c.sft.batch_size = s.value("batch_size", c.sft.batch_size);
    }
    if (j.contains("po")) {
      const auto& p = j.at("po");
      c.po.dpo_beta = p.value("dpo_beta", c.po.dpo_beta);
      c.po.simpo_beta = p.value("simpo_beta", c.po.simpo_beta);
      c.po.simpo_gamma = p.value("simpo_gamma", c.po.simpo_gamma);
      c.po.lndpo_beta = p.value("lndpo_beta", c.po.lndpo_beta);
      c.po.learning_rates = p.value("learning_rates", c.po.learning_rates);
      c.po.epochs = p.value("epochs", c.po.epochs);
      c.po.batch_size = p.value("batch_size", c.po.batch_size);
      if (p.contains("methods")) {
        c.po.methods.clear();
        for (const auto& m : p.at("methods")) c.po.methods.push_back(method_from_string(m.get<std::string>()));
      }
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      if (e.contains("sampler")) c.eval_sampler = sampler_from_json(e.at("sampler"), c.eval_sampler);
      c.n_eval = e.value("n_eval", c.n_eval);
    }
    if (j.contains("run")) {
      const auto& r = j.at("run");
      c.seed = r.value("seed", c.seed);
      c.parallelism = r.value("parallelism", c.parallelism);
      c.output_dir = r.value("output_dir", c.output_dir);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config has a field of the wrong type: ") + e.what());
  }
  return c;
}

inline nlohmann::json to_json(const AppConfig& c) {
  std::vector<std::string> methods;
  for (Method m : c.po.methods) methods.emplace_back(to_string(m));
  nlohmann::json env = to_json(c.env);
  env["n_train"] = c.n_train;
  return {{"schema_version", kConfigSchemaVersion},
          {"env", env},
          {"sft", {{"learning_rates", c.sft.learning_rates}, {"epochs", c.sft.epochs}, {"batch_size", c.sft.batch_size}}},
          {"po",
           {{"methods", methods},
            {"dpo_beta", c.po.dpo_beta},
            {"simpo_beta", c.po.simpo_beta},
            {"simpo_gamma", c.po.simpo_gamma},
            {"lndpo_beta", c.po.lndpo_beta},
            {"learning_rates", c.po.learning_rates},
            {"epochs", c.po.epochs},
            {"batch_size", c.po.batch_size}}},
          {"eval", {{"sampler", to_json(c.eval_sampler)}, {"n_eval", c.n_eval}}},
          {"run", {{"seed", c.seed}, {"parallelism", c.parallelism}, {"output_dir", c.output_dir}}}};
}

// Parses and validates; errors come back as "<path>:<line>: <message>".
inline AppConfig parse_app_config(const std::string& text, const std::string& origin = "config") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ":" + std::to_string(detail::line_of_offset(text, e.byte)) +
                      ": invalid JSON: " + e.what());
  }
  try {
    AppConfig c = app_config_from_json(j);
    c.validate();
    return c;
  } catch (const ConfigError& e) {
    // Messages lead with the dotted field path.
    const std::string msg = e.what();
    const int line = detail::line_of_key(text, msg.substr(0, msg.find(' ')));
    throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
  }
}

inline AppConfig load_app_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ":0: cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_app_config(buf.str(), path);
}

}  // namespace prefbench
