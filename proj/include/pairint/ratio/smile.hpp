#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "pairint/core/error.hpp"

namespace pairint {

/// SMILE estimate of KL(P || Q) from log-ratios f ~ log p/q evaluated on samples
/// of P and of Q:
///   mean_P[f] - log mean_Q[clip(exp f, e^-tau, e^tau)]
/// Only the Q-side exponential is clipped. tau = +inf gives the unclipped
/// Donsker-Varadhan plug-in.
inline double smile_kl(std::span<const double> f_on_p, std::span<const double> f_on_q, double tau) {
  if (f_on_p.empty() || f_on_q.empty()) throw DataError("smile_kl: empty input");
  if (!(tau > 0.0)) throw ConfigError("smile_kl: tau must be positive");
  double mean_p = 0.0;
  for (double v : f_on_p) {
    if (!std::isfinite(v)) throw DataError("smile_kl: non-finite log-ratio");
    mean_p += v;
  }
  mean_p /= static_cast<double>(f_on_p.size());
  // exp(clip(f)) == clip(exp(f)); clip in log space, then log-mean-exp.
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : f_on_q) {
    if (!std::isfinite(v)) throw DataError("smile_kl: non-finite log-ratio");
    hi = std::max(hi, std::clamp(v, -tau, tau));
  }
  double s = 0.0;
  for (double v : f_on_q) s += std::exp(std::clamp(v, -tau, tau) - hi);
  const double log_mean = hi + std::log(s / static_cast<double>(f_on_q.size()));
  return mean_p - log_mean;
}

}  // namespace pairint
