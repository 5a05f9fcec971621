#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "prefbench/error.hpp"

namespace prefbench {

// log(1 + exp(x)) without overflow or cancellation.
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sum_exp(std::span<const double> values) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

// Writes softmax(values / temperature) into out.
inline void softmax(std::span<const double> values, std::span<double> out,
                    double temperature = 1.0) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v / temperature);
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = std::exp(values[i] / temperature - hi);
    total += out[i];
  }
  for (double& p : out) p /= total;
}

inline double mean_of(std::span<const double> values) {
  if (values.empty()) throw DomainError("mean of an empty list");
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc / static_cast<double>(values.size());
}

// Rank ceil(p/100 * n), clamped to [1, n]. Returns a zero-based index.
inline std::size_t nearest_rank_index(double percent, std::size_t n) {
  if (n == 0) throw DomainError("nearest-rank percentile of an empty list");
  if (!(percent >= 0.0 && percent <= 100.0)) {
    throw DomainError("percentile must lie in [0, 100]");
  }
  auto rank = static_cast<std::size_t>(std::ceil(percent * static_cast<double>(n) / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return rank - 1;
}

// Shortest form is not used for tables: every float goes out with 17
// significant digits so a reader can rebuild the exact double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace prefbench
