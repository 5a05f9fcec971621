#pragma once

// Pairwise preference losses over sequence log-probabilities.
//
// Each loss is softplus(-z) for a method-specific margin z, and returns the
// derivatives with respect to log pi_theta(y_w|x) and log pi_theta(y_l|x):
//
//   DPO     z = beta * [(s_w - r_w) - (s_l - r_l)]
//   SimPO   z = beta * s_w / |y_w| - beta * s_l / |y_l| - gamma
//   LN-DPO  z = beta * (s_w - r_w) / |y_w| - beta * (s_l - r_l) / |y_l|
//
// where s = log pi_theta, r = log pi_ref and |y| counts the terminal eos.
// LN-DPO equals SimPO with the per-pair margin returned by adaptive_margin().

#include <cmath>
#include <optional>
#include <string>

#include "prefbench/error.hpp"
#include "prefbench/numeric.hpp"

namespace prefbench {

enum class Method { dpo, simpo, lndpo };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::dpo: return "dpo";
    case Method::simpo: return "simpo";
    case Method::lndpo: return "lndpo";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "dpo" || s == "DPO") return Method::dpo;
  if (s == "simpo" || s == "SIMPO" || s == "SimPO") return Method::simpo;
  if (s == "lndpo" || s == "LNDPO" || s == "LN-DPO") return Method::lndpo;
  throw ConfigError("unknown method '" + s + "'");
}

inline bool uses_reference(Method m) { return m != Method::simpo; }

struct ObjectiveConfig {
  Method method = Method::dpo;
  double beta = 0.1;
  std::optional<double> gamma;  // SimPO only

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be positive and finite");
    if (method == Method::simpo) {
      if (!gamma || !(*gamma >= 0.0) || !std::isfinite(*gamma)) {
        throw ConfigError("SimPO needs a nonnegative gamma");
      }
    } else if (gamma) {
      throw ConfigError("gamma is only meaningful for SimPO");
    }
  }

  friend bool operator==(const ObjectiveConfig&, const ObjectiveConfig&) = default;
};

struct PairLogProbs {
  double s_w_theta = 0.0;
  double s_l_theta = 0.0;
  std::optional<double> s_w_ref;
  std::optional<double> s_l_ref;
  int len_w = 1;
  int len_l = 1;
};

struct LossResult {
  double loss = 0.0;
  double d_s_w_theta = 0.0;
  double d_s_l_theta = 0.0;
};

namespace detail {

inline void require_reference(const PairLogProbs& p, const char* who) {
  if (!p.s_w_ref || !p.s_l_ref) {
    throw ConfigError(std::string(who) + " needs reference log-probabilities");
  }
}

inline void require_lengths(const PairLogProbs& p) {
  if (p.len_w < 1 || p.len_l < 1) throw DomainError("response lengths must be >= 1");
}

// loss = softplus(-z); dz/ds_w = a_w, dz/ds_l = -a_l
inline LossResult logistic_loss(double z, double a_w, double a_l) {
  const double s = sigmoid(-z);
  return {softplus(-z), -a_w * s, a_l * s};
}

}  // namespace detail

inline double implicit_reward(double s_theta, double s_ref) { return s_theta - s_ref; }

inline LossResult dpo_loss(const PairLogProbs& p, double beta) {
  detail::require_reference(p, "DPO");
  const double z = beta * (implicit_reward(p.s_w_theta, *p.s_w_ref) -
                           implicit_reward(p.s_l_theta, *p.s_l_ref));
  return detail::logistic_loss(z, beta, beta);
}

inline LossResult simpo_loss(const PairLogProbs& p, double beta, double gamma) {
  detail::require_lengths(p);
  const double a_w = beta / p.len_w;
  const double a_l = beta / p.len_l;
  const double z = a_w * p.s_w_theta - a_l * p.s_l_theta - gamma;
  return detail::logistic_loss(z, a_w, a_l);
}

inline LossResult lndpo_loss(const PairLogProbs& p, double beta) {
  detail::require_reference(p, "LN-DPO");
  detail::require_lengths(p);
  const double a_w = beta / p.len_w;
  const double a_l = beta / p.len_l;
  const double z = a_w * implicit_reward(p.s_w_theta, *p.s_w_ref) -
                   a_l * implicit_reward(p.s_l_theta, *p.s_l_ref);
  return detail::logistic_loss(z, a_w, a_l);
}

// gamma_{w,l} = beta * (log pi_ref(y_w|x) / |y_w| - log pi_ref(y_l|x) / |y_l|)
inline double adaptive_margin(const PairLogProbs& p, double beta) {
  detail::require_reference(p, "adaptive margin");
  detail::require_lengths(p);
  return beta * (*p.s_w_ref / p.len_w - *p.s_l_ref / p.len_l);
}

inline LossResult po_loss(const ObjectiveConfig& cfg, const PairLogProbs& p) {
  switch (cfg.method) {
    case Method::dpo: return dpo_loss(p, cfg.beta);
    case Method::simpo: return simpo_loss(p, cfg.beta, cfg.gamma.value_or(0.0));
    case Method::lndpo: return lndpo_loss(p, cfg.beta);
  }
  throw ConfigError("unknown objective");
}

}  // namespace prefbench
