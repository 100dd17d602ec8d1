#pragma once

#include <algorithm>
#include <cmath>

namespace svyacd {

inline double expit(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Keep a probability strictly inside (0,1) for use in logs and denominators.
inline double clamp_unit_open(double p, double eps = 1e-12) {
  return std::clamp(p, eps, 1.0 - eps);
}

// Quantile of the standard normal distribution.
double normal_quantile(double p);

}  // namespace svyacd
