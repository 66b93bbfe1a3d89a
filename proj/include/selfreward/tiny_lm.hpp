#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "selfreward/model.hpp"

namespace selfreward {

struct TinyLmDims {
  std::size_t vocab = 0;
  std::size_t prompt_slots = 0;  // fixed prompt layout, shorter parts padded with token 0
  std::size_t max_steps = 0;     // longest response, end token included
  std::size_t embed = 64;
  std::size_t hidden = 64;
  // Match features: prompt slots [compare_offset, compare_offset + compare_len) are compared
  // with the generated prefix at offsets -compare_shift..compare_shift. 0 disables them.
  std::size_t compare_offset = 0;
  std::size_t compare_len = 0;
  std::size_t compare_shift = 1;

  friend bool operator==(const TinyLmDims&, const TinyLmDims&) = default;
};

/// Small autoregressive model. Every prompt slot and every already generated position has its
/// own token embedding table; the embeddings plus a step embedding are summed, squashed, and
/// sent through one hidden layer to the output logits:
///
///   h1 = tanh(b0 + P[k] + sum_s E_s[prompt_s] + sum_{j<k} G_j[prefix_j] + sum_{(i,d) match} C_{i,d})
///   h2 = tanh(W1 h1 + b1),  logits = W2 h2 + b2
///
/// The match term is a fixed comparison, learned only through its embeddings: C_{i,d} is added
/// when compared slot i holds the same token as generated position i+d. It lets the model
/// line a response under judgment up against its own answer, which a bag of embeddings
/// cannot do by itself.
///
/// Token 0 is padding and contributes nothing. Tokens marked non-emittable get -inf logits.
/// Dropout (training only) masks h1 and h2.
class TinyLM final : public TokenPolicy {
 public:
  TinyLM(TinyLmDims dims, TokenId end_token, std::vector<bool> emittable)
      : dims_(dims), end_token_(end_token), emittable_(std::move(emittable)) {
    if (dims_.vocab < 2 || dims_.prompt_slots < 1 || dims_.max_steps < 1 || dims_.embed < 1 || dims_.hidden < 1)
      fail(ErrorCode::invalid_param, "bad TinyLM dimensions");
    if (end_token < 0 || static_cast<std::size_t>(end_token) >= dims_.vocab)
      fail(ErrorCode::invalid_param, "end token outside vocabulary");
    if (emittable_.size() != dims_.vocab) fail(ErrorCode::invalid_param, "emittable mask size mismatch");
    if (dims_.compare_len > 0 && dims_.compare_offset + dims_.compare_len > dims_.prompt_slots)
      fail(ErrorCode::invalid_param, "compare window outside the prompt");
    const std::size_t D = dims_.embed, H = dims_.hidden, V = dims_.vocab;
    off_prompt_ = 0;
    off_gen_ = off_prompt_ + dims_.prompt_slots * V * D;
    off_step_ = off_gen_ + dims_.max_steps * V * D;
    off_cmp_ = off_step_ + dims_.max_steps * D;
    off_b0_ = off_cmp_ + dims_.compare_len * n_shifts() * D;
    off_w1_ = off_b0_ + D;
    off_b1_ = off_w1_ + H * D;
    off_w2_ = off_b1_ + H;
    off_b2_ = off_w2_ + V * H;
    params_.assign(off_b2_ + V, 0.0);
  }

  /// Small random embeddings, scaled dense layers, zero biases.
  void initialize(std::uint64_t seed) {
    RandomStream rng = seeded_rng(seed, "tiny-lm/init");
    const double emb_scale = 0.1;
    for (std::size_t i = off_prompt_; i < off_b0_; ++i) params_[i] = emb_scale * rng.normal();
    for (std::size_t i = off_b0_; i < off_w1_; ++i) params_[i] = 0.0;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(dims_.embed));
    for (std::size_t i = off_w1_; i < off_b1_; ++i) params_[i] = s1 * rng.normal();
    for (std::size_t i = off_b1_; i < off_w2_; ++i) params_[i] = 0.0;
    const double s2 = 1.0 / std::sqrt(static_cast<double>(dims_.hidden));
    for (std::size_t i = off_w2_; i < off_b2_; ++i) params_[i] = s2 * rng.normal();
    for (std::size_t i = off_b2_; i < params_.size(); ++i) params_[i] = 0.0;
  }

  const TinyLmDims& dims() const { return dims_; }
  const std::vector<bool>& emittable() const { return emittable_; }
  std::size_t vocab_size() const override { return dims_.vocab; }
  TokenId end_token() const override { return end_token_; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }

  TokenDistribution next_token(std::span<const TokenId> prompt, std::span<const TokenId> prefix) const override {
    check_context(prompt, prefix.size());
    check_tokens(prefix);
    Eigen::VectorXd x = input(prompt, prefix, prefix.size());
    const Eigen::VectorXd h1 = x.array().tanh().matrix();
    const Eigen::VectorXd h2 = (w1() * h1 + b1()).array().tanh().matrix();
    const Eigen::VectorXd z = w2() * h2 + b2();
    std::vector<double> logits(dims_.vocab);
    for (std::size_t v = 0; v < dims_.vocab; ++v)
      logits[v] = emittable_[v] ? z[static_cast<Eigen::Index>(v)] : -std::numeric_limits<double>::infinity();
    return TokenDistribution(std::move(logits));
  }

  double sequence_logprob(std::span<const TokenId> prompt, std::span<const TokenId> response) const override {
    check_tokens(response);
    double total = 0.0;
    for (std::size_t k = 0; k < response.size(); ++k)
      total += next_token(prompt, response.first(k)).log_prob(response[k]);
    return total;
  }

  /// grad += sum_i w_i * d log pi(response_i | prompt_i) / d params; returns the log pi values.
  std::vector<double> accumulate_gradient(std::span<const TokenExample> batch, const WeightFn& weights,
                                          std::span<double> grad, const DropoutSpec& dropout) const {
    require(grad.size() == params_.size(), "gradient buffer size mismatch");
    using Eigen::Index;
    const auto D = static_cast<Index>(dims_.embed), H = static_cast<Index>(dims_.hidden),
               V = static_cast<Index>(dims_.vocab);

    // One column per predicted token.
    struct Col {
      std::size_t example, step;
    };
    std::vector<Col> cols;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      check_context(batch[i].prompt, batch[i].response.size() == 0 ? 0 : batch[i].response.size() - 1);
      check_tokens(batch[i].response);
      for (std::size_t k = 0; k < batch[i].response.size(); ++k) cols.push_back({i, k});
    }
    const auto N = static_cast<Index>(cols.size());
    Eigen::MatrixXd x(D, N);
    for (Index c = 0; c < N; ++c) {
      const auto& ex = batch[cols[static_cast<std::size_t>(c)].example];
      const auto k = cols[static_cast<std::size_t>(c)].step;
      x.col(c) = input(ex.prompt, ex.response, k);
    }
    const Eigen::MatrixXd h1 = x.array().tanh().matrix();
    Eigen::MatrixXd m1, m2;
    const bool drop = dropout.active();
    const double keep_scale = drop ? 1.0 / (1.0 - dropout.rate) : 1.0;
    auto draw_mask = [&](Index rows) {
      Eigen::MatrixXd m(rows, N);
      for (Index c = 0; c < N; ++c)
        for (Index r = 0; r < rows; ++r) m(r, c) = dropout.rng->bernoulli(dropout.rate) ? 0.0 : keep_scale;
      return m;
    };
    if (drop) m1 = draw_mask(D);
    const Eigen::MatrixXd h1d = drop ? Eigen::MatrixXd(h1.cwiseProduct(m1)) : h1;
    Eigen::MatrixXd h2 = w1() * h1d;
    h2.colwise() += b1();
    h2 = h2.array().tanh().matrix();
    if (drop) m2 = draw_mask(H);
    const Eigen::MatrixXd h2d = drop ? Eigen::MatrixXd(h2.cwiseProduct(m2)) : h2;
    Eigen::MatrixXd z = w2() * h2d;
    z.colwise() += b2();

    // Softmax over emittable tokens, log-prob of each target.
    Eigen::MatrixXd probs(V, N);
    std::vector<double> logprobs(batch.size(), 0.0);
    for (Index c = 0; c < N; ++c) {
      double m = -std::numeric_limits<double>::infinity();
      for (Index v = 0; v < V; ++v)
        if (emittable_[static_cast<std::size_t>(v)]) m = std::max(m, z(v, c));
      double total = 0.0;
      for (Index v = 0; v < V; ++v) {
        const double p = emittable_[static_cast<std::size_t>(v)] ? std::exp(z(v, c) - m) : 0.0;
        probs(v, c) = p;
        total += p;
      }
      probs.col(c) /= total;
      const auto& col = cols[static_cast<std::size_t>(c)];
      const TokenId target = batch[col.example].response[col.step];
      logprobs[col.example] += emittable_[static_cast<std::size_t>(target)]
                                   ? z(target, c) - m - std::log(total)
                                   : -std::numeric_limits<double>::infinity();
    }

    const auto w = weights(logprobs);
    require(w.size() == batch.size(), "weight count mismatch");

    // d/dz of w_i * log p(target) is w_i * (onehot - p).
    Eigen::MatrixXd dz = -probs;
    for (Index c = 0; c < N; ++c) {
      const auto& col = cols[static_cast<std::size_t>(c)];
      dz(batch[col.example].response[col.step], c) += 1.0;
      dz.col(c) *= w[col.example];
    }
    Eigen::Map<Eigen::MatrixXd> g_w2(grad.data() + off_w2_, V, H);
    Eigen::Map<Eigen::VectorXd> g_b2(grad.data() + off_b2_, V);
    g_w2.noalias() += dz * h2d.transpose();
    g_b2 += dz.rowwise().sum();
    Eigen::MatrixXd dh2 = w2().transpose() * dz;
    if (drop) dh2 = dh2.cwiseProduct(m2);
    const Eigen::MatrixXd dpre2 = dh2.cwiseProduct((1.0 - h2.array().square()).matrix());
    Eigen::Map<Eigen::MatrixXd> g_w1(grad.data() + off_w1_, H, D);
    Eigen::Map<Eigen::VectorXd> g_b1(grad.data() + off_b1_, H);
    g_w1.noalias() += dpre2 * h1d.transpose();
    g_b1 += dpre2.rowwise().sum();
    Eigen::MatrixXd dh1 = w1().transpose() * dpre2;
    if (drop) dh1 = dh1.cwiseProduct(m1);
    const Eigen::MatrixXd dx = dh1.cwiseProduct((1.0 - h1.array().square()).matrix());

    Eigen::Map<Eigen::VectorXd> g_b0(grad.data() + off_b0_, D);
    g_b0 += dx.rowwise().sum();
    for (Index c = 0; c < N; ++c) {
      const auto& col = cols[static_cast<std::size_t>(c)];
      const auto& ex = batch[col.example];
      for_each_row(ex.prompt, ex.response, col.step, [&](std::size_t row) { add_to(grad, row, dx.col(c)); });
    }
    return logprobs;
  }

 private:
  void check_context(std::span<const TokenId> prompt, std::size_t prefix_len) const {
    if (prompt.size() != dims_.prompt_slots)
      fail(ErrorCode::context_overflow, "prompt has " + std::to_string(prompt.size()) + " slots, model expects " +
                                            std::to_string(dims_.prompt_slots));
    if (prefix_len >= dims_.max_steps)
      fail(ErrorCode::context_overflow, "response longer than " + std::to_string(dims_.max_steps) + " tokens");
    check_tokens(prompt);
  }

  std::size_t prompt_row(std::size_t slot, TokenId t) const {
    return off_prompt_ + (slot * dims_.vocab + static_cast<std::size_t>(t)) * dims_.embed;
  }
  std::size_t gen_row(std::size_t pos, TokenId t) const {
    return off_gen_ + (pos * dims_.vocab + static_cast<std::size_t>(t)) * dims_.embed;
  }

  std::size_t n_shifts() const { return 2 * dims_.compare_shift + 1; }

  // Calls f(offset) for every embedding row summed into the input at `step` (bias excluded).
  template <class F>
  void for_each_row(std::span<const TokenId> prompt, std::span<const TokenId> response, std::size_t step,
                    F&& f) const {
    f(off_step_ + step * dims_.embed);
    for (std::size_t s = 0; s < dims_.prompt_slots; ++s)
      if (prompt[s] != 0) f(prompt_row(s, prompt[s]));
    for (std::size_t j = 0; j < step; ++j)
      if (response[j] != 0) f(gen_row(j, response[j]));
    const auto shift = static_cast<std::ptrdiff_t>(dims_.compare_shift);
    for (std::size_t i = 0; i < dims_.compare_len; ++i) {
      const TokenId t = prompt[dims_.compare_offset + i];
      if (t == 0) continue;
      for (std::ptrdiff_t d = -shift; d <= shift; ++d) {
        const auto j = static_cast<std::ptrdiff_t>(i) + d;
        if (j < 0 || j >= static_cast<std::ptrdiff_t>(step) || response[static_cast<std::size_t>(j)] != t) continue;
        f(off_cmp_ + (i * n_shifts() + static_cast<std::size_t>(d + shift)) * dims_.embed);
      }
    }
  }

  Eigen::VectorXd input(std::span<const TokenId> prompt, std::span<const TokenId> response, std::size_t step) const {
    const auto D = static_cast<Eigen::Index>(dims_.embed);
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(params_.data() + off_b0_, D);
    for_each_row(prompt, response, step,
                 [&](std::size_t row) { x += Eigen::Map<const Eigen::VectorXd>(params_.data() + row, D); });
    return x;
  }

  template <class Vec>
  void add_to(std::span<double> grad, std::size_t offset, const Vec& v) const {
    for (Eigen::Index d = 0; d < v.size(); ++d) grad[offset + static_cast<std::size_t>(d)] += v[d];
  }

  Eigen::Map<const Eigen::MatrixXd> w1() const {
    return {params_.data() + off_w1_, static_cast<Eigen::Index>(dims_.hidden), static_cast<Eigen::Index>(dims_.embed)};
  }
  Eigen::Map<const Eigen::VectorXd> b1() const {
    return {params_.data() + off_b1_, static_cast<Eigen::Index>(dims_.hidden)};
  }
  Eigen::Map<const Eigen::MatrixXd> w2() const {
    return {params_.data() + off_w2_, static_cast<Eigen::Index>(dims_.vocab), static_cast<Eigen::Index>(dims_.hidden)};
  }
  Eigen::Map<const Eigen::VectorXd> b2() const {
    return {params_.data() + off_b2_, static_cast<Eigen::Index>(dims_.vocab)};
  }

  TinyLmDims dims_;
  TokenId end_token_;
  std::vector<bool> emittable_;
  std::vector<double> params_;
  std::size_t off_prompt_ = 0, off_gen_ = 0, off_step_ = 0, off_cmp_ = 0, off_b0_ = 0, off_w1_ = 0, off_b1_ = 0, off_w2_ = 0,
              off_b2_ = 0;
};

}  // namespace selfreward
