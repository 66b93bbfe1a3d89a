#pragma once

#include <concepts>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfreward/core.hpp"
#include "selfreward/distribution.hpp"

namespace selfreward {

/// Anything that turns a text prompt into a text completion: the toy policy behind its codec,
/// the fixed prompt generator, or an external endpoint. Judging is generation on a rendered
/// judge prompt, so this is also the judge interface.
class GenerationModel {
 public:
  virtual ~GenerationModel() = default;

  virtual std::string generate(std::string_view prompt, const DecodingParams& decoding) const = 0;

  /// Element i must equal generate(prompts[i], decodings[i]); backends override for speed.
  virtual std::vector<std::string> generate_batch(std::span<const std::string> prompts,
                                                  std::span<const DecodingParams> decodings) const {
    require(prompts.size() == decodings.size(), "generate_batch: size mismatch");
    std::vector<std::string> out;
    out.reserve(prompts.size());
    for (std::size_t i = 0; i < prompts.size(); ++i) out.push_back(generate(prompts[i], decodings[i]));
    return out;
  }
};

/// Token-level autoregressive policy.
class TokenPolicy {
 public:
  virtual ~TokenPolicy() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual TokenId end_token() const = 0;

  /// Untruncated next-token distribution given the prompt and the response so far.
  virtual TokenDistribution next_token(std::span<const TokenId> prompt,
                                       std::span<const TokenId> prefix) const = 0;

  /// log pi(response | prompt), summed over every response token (the end token included when
  /// present). Default is the chain rule over next_token.
  virtual double sequence_logprob(std::span<const TokenId> prompt,
                                  std::span<const TokenId> response) const {
    check_tokens(prompt);
    check_tokens(response);
    double total = 0.0;
    for (std::size_t k = 0; k < response.size(); ++k)
      total += next_token(prompt, response.first(k)).log_prob(response[k]);
    return total;
  }

  void check_tokens(std::span<const TokenId> tokens) const {
    for (TokenId t : tokens)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size())
        fail(ErrorCode::unknown_token, "token id " + std::to_string(t));
  }
};

/// Autoregressive sampling through temperature then nucleus truncation, seeded by
/// decoding.seed(). The end token is kept in the output when drawn.
inline TokenSeq sample(const TokenPolicy& policy, std::span<const TokenId> prompt,
                       const DecodingParams& decoding) {
  policy.check_tokens(prompt);
  RandomStream rng(decoding.seed());
  TokenSeq out;
  for (int step = 0; step < decoding.max_tokens(); ++step) {
    const TokenId t = sample_token(policy.next_token(prompt, out), decoding.temperature(),
                                   decoding.top_p(), rng);
    out.push_back(t);
    if (t == policy.end_token()) break;
  }
  return out;
}

inline double sequence_logprob(const TokenPolicy& policy, std::span<const TokenId> prompt,
                               std::span<const TokenId> response) {
  return policy.sequence_logprob(prompt, response);
}

struct TokenExample {
  TokenSeq prompt;
  TokenSeq response;
};

struct TokenPair {
  TokenSeq prompt;
  TokenSeq winner;
  TokenSeq loser;
};

struct DropoutSpec {
  double rate = 0.0;
  RandomStream* rng = nullptr;

  bool active() const { return rate > 0.0 && rng != nullptr; }
};

/// Maps the batch's log-probabilities to the coefficients w_i of sum_i w_i * grad log pi_i.
using WeightFn = std::function<std::vector<double>(std::span<const double>)>;

/// What the trainers need: a flat parameter vector and one fused forward/backward pass.
template <class P>
concept TrainablePolicy =
    std::derived_from<P, TokenPolicy> && std::copy_constructible<P> &&
    requires(P& p, const P& cp, std::span<const TokenExample> batch, const WeightFn& weights,
             std::span<double> grad, const DropoutSpec& dropout) {
      { cp.parameters() } -> std::same_as<std::span<const double>>;
      { p.mutable_parameters() } -> std::same_as<std::span<double>>;
      { cp.accumulate_gradient(batch, weights, grad, dropout) } -> std::same_as<std::vector<double>>;
    };

}  // namespace selfreward
