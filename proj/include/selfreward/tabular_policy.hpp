#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "selfreward/model.hpp"

namespace selfreward {

/// Reference policy with an enumerated response set per prompt and one learnable logit per
/// (prompt, response). Sequence probabilities are a softmax over those logits, so losses and
/// gradients have closed forms. Responses must end with the end token and be distinct, which
/// makes the per-token view (next_token) an exact factorization of the same distribution.
class TabularPolicy final : public TokenPolicy {
 public:
  struct Entry {
    TokenSeq prompt;
    std::vector<TokenSeq> responses;
    std::size_t offset = 0;
  };

  TabularPolicy(std::size_t vocab_size, TokenId end_token)
      : vocab_size_(vocab_size), end_token_(end_token) {
    if (end_token < 0 || static_cast<std::size_t>(end_token) >= vocab_size)
      fail(ErrorCode::invalid_param, "end token outside vocabulary");
  }

  /// Registers a prompt; logits start at zero (uniform over its responses) unless given.
  void add_prompt(TokenSeq prompt, std::vector<TokenSeq> responses, std::vector<double> logits = {}) {
    check_tokens(prompt);
    if (responses.empty()) fail(ErrorCode::invalid_param, "prompt needs at least one response");
    if (index_.contains(prompt)) fail(ErrorCode::duplicate_id, "prompt registered twice");
    for (const auto& r : responses) {
      check_tokens(r);
      if (r.empty() || r.back() != end_token_)
        fail(ErrorCode::invalid_param, "tabular responses must end with the end token");
      if (std::find(r.begin(), r.end() - 1, end_token_) != r.end() - 1)
        fail(ErrorCode::invalid_param, "end token inside a response");
    }
    for (std::size_t i = 0; i < responses.size(); ++i)
      for (std::size_t j = i + 1; j < responses.size(); ++j)
        if (responses[i] == responses[j]) fail(ErrorCode::invalid_param, "duplicate response");
    if (logits.empty()) logits.assign(responses.size(), 0.0);
    if (logits.size() != responses.size()) fail(ErrorCode::invalid_param, "logit count mismatch");
    Entry e{std::move(prompt), std::move(responses), params_.size()};
    params_.insert(params_.end(), logits.begin(), logits.end());
    index_.emplace(e.prompt, entries_.size());
    entries_.push_back(std::move(e));
  }

  std::size_t vocab_size() const override { return vocab_size_; }
  TokenId end_token() const override { return end_token_; }

  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }
  const std::vector<Entry>& entries() const { return entries_; }

  const Entry& entry(std::span<const TokenId> prompt) const {
    const auto it = index_.find(TokenSeq(prompt.begin(), prompt.end()));
    if (it == index_.end()) fail(ErrorCode::precondition, "prompt not in table");
    return entries_[it->second];
  }

  /// Softmax over the prompt's response logits.
  std::vector<double> response_probabilities(std::span<const TokenId> prompt) const {
    const auto& e = entry(prompt);
    const std::span<const double> z(params_.data() + e.offset, e.responses.size());
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) total += (p[i] = std::exp(z[i] - m));
    for (double& v : p) v /= total;
    return p;
  }

  TokenDistribution next_token(std::span<const TokenId> prompt,
                               std::span<const TokenId> prefix) const override {
    const auto& e = entry(prompt);
    const auto probs = response_probabilities(prompt);
    std::vector<double> mass(vocab_size_, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < e.responses.size(); ++i) {
      const auto& r = e.responses[i];
      if (r.size() <= prefix.size() || !std::equal(prefix.begin(), prefix.end(), r.begin()))
        continue;
      mass[static_cast<std::size_t>(r[prefix.size()])] += probs[i];
      total += probs[i];
    }
    if (total <= 0.0) fail(ErrorCode::precondition, "prefix outside the policy's support");
    for (double& m : mass) m /= total;
    return TokenDistribution::from_probabilities(mass);
  }

  /// Closed form: logit minus log-partition. -inf for responses outside the table.
  double sequence_logprob(std::span<const TokenId> prompt,
                          std::span<const TokenId> response) const override {
    check_tokens(prompt);
    check_tokens(response);
    const auto& e = entry(prompt);
    const auto idx = find_response(e, response);
    if (!idx) return -std::numeric_limits<double>::infinity();
    return log_softmax_at(e, *idx);
  }

  std::vector<double> accumulate_gradient(std::span<const TokenExample> batch, const WeightFn& weights,
                                          std::span<double> grad, const DropoutSpec& /*dropout*/) const {
    require(grad.size() == params_.size(), "gradient buffer size mismatch");
    std::vector<double> logprobs(batch.size());
    std::vector<std::optional<std::size_t>> which(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& e = entry(batch[i].prompt);
      which[i] = find_response(e, batch[i].response);
      logprobs[i] = which[i] ? log_softmax_at(e, *which[i])
                             : -std::numeric_limits<double>::infinity();
    }
    const auto w = weights(logprobs);
    require(w.size() == batch.size(), "weight count mismatch");
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (!which[i] || w[i] == 0.0) continue;
      const auto& e = entry(batch[i].prompt);
      const auto p = response_probabilities(batch[i].prompt);
      for (std::size_t k = 0; k < p.size(); ++k)
        grad[e.offset + k] += w[i] * ((k == *which[i] ? 1.0 : 0.0) - p[k]);
    }
    return logprobs;
  }

 private:
  static std::optional<std::size_t> find_response(const Entry& e, std::span<const TokenId> response) {
    for (std::size_t i = 0; i < e.responses.size(); ++i)
      if (std::equal(response.begin(), response.end(), e.responses[i].begin(), e.responses[i].end()))
        return i;
    return std::nullopt;
  }

  double log_softmax_at(const Entry& e, std::size_t idx) const {
    const std::span<const double> z(params_.data() + e.offset, e.responses.size());
    const double m = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - m);
    return z[idx] - m - std::log(total);
  }

  std::size_t vocab_size_;
  TokenId end_token_;
  std::vector<double> params_;
  std::vector<Entry> entries_;
  std::map<TokenSeq, std::size_t> index_;
};

}  // namespace selfreward
