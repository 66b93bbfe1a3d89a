#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "selfreward/errors.hpp"
#include "selfreward/rng.hpp"

namespace selfreward {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// Next-token distribution over a vocabulary, held as logits. Tokens removed by truncation
/// carry a logit of -inf; every other logit is finite.
class TokenDistribution {
 public:
  explicit TokenDistribution(std::vector<double> logits) : logits_(std::move(logits)) {
    bool any = false;
    for (double l : logits_) {
      if (std::isnan(l) || l == std::numeric_limits<double>::infinity())
        fail(ErrorCode::numerical_error, "logits must be finite or -inf");
      any = any || std::isfinite(l);
    }
    if (!any) fail(ErrorCode::numerical_error, "distribution has empty support");
  }

  static TokenDistribution from_probabilities(std::span<const double> probs) {
    std::vector<double> logits(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] < 0.0) fail(ErrorCode::numerical_error, "negative probability");
      logits[i] = probs[i] > 0.0 ? std::log(probs[i]) : -std::numeric_limits<double>::infinity();
    }
    return TokenDistribution(std::move(logits));
  }

  std::size_t size() const { return logits_.size(); }
  const std::vector<double>& logits() const { return logits_; }

  std::vector<double> probabilities() const {
    const double m = *std::max_element(logits_.begin(), logits_.end());
    std::vector<double> p(logits_.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::isfinite(logits_[i]) ? std::exp(logits_[i] - m) : 0.0;
      z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
  }

  double log_prob(TokenId t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= logits_.size())
      fail(ErrorCode::unknown_token, "token " + std::to_string(t));
    const double m = *std::max_element(logits_.begin(), logits_.end());
    double z = 0.0;
    for (double l : logits_)
      if (std::isfinite(l)) z += std::exp(l - m);
    return logits_[static_cast<std::size_t>(t)] - m - std::log(z);
  }

  std::size_t support_size() const {
    return static_cast<std::size_t>(
        std::count_if(logits_.begin(), logits_.end(), [](double l) { return std::isfinite(l); }));
  }

 private:
  std::vector<double> logits_;
};

inline TokenDistribution apply_temperature(const TokenDistribution& dist, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    fail(ErrorCode::invalid_param, "temperature must be > 0");
  if (temperature == 1.0) return dist;
  std::vector<double> logits = dist.logits();
  for (double& l : logits)
    if (std::isfinite(l)) l /= temperature;
  return TokenDistribution(std::move(logits));
}

/// Nucleus truncation: keeps the smallest prefix of tokens (by descending probability, ties by
/// lower index) whose mass reaches p.
inline TokenDistribution top_p_truncate(const TokenDistribution& dist, double p) {
  if (!(p > 0.0 && p <= 1.0)) fail(ErrorCode::invalid_param, "top_p must be in (0,1]");
  if (p == 1.0) return dist;
  const auto probs = dist.probabilities();
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<double> logits = dist.logits();
  double cumulative = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    cumulative += probs[order[keep]];
    ++keep;
    if (cumulative >= p) break;
  }
  for (std::size_t i = keep; i < order.size(); ++i)
    logits[order[i]] = -std::numeric_limits<double>::infinity();
  return TokenDistribution(std::move(logits));
}

/// Inverse-CDF draw using one uniform variate; deterministic given u.
inline TokenId draw_token(const TokenDistribution& dist, double u) {
  const auto probs = dist.probabilities();
  double cumulative = 0.0;
  TokenId last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = static_cast<TokenId>(i);
    cumulative += probs[i];
    if (u < cumulative) return last;
  }
  return last;
}

inline TokenId sample_token(const TokenDistribution& dist, double temperature, double top_p,
                            RandomStream& rng) {
  return draw_token(top_p_truncate(apply_temperature(dist, temperature), top_p), rng.uniform());
}

}  // namespace selfreward
