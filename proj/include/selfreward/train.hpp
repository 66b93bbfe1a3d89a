#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selfreward/json_io.hpp"
#include "selfreward/model.hpp"
#include "selfreward/rng.hpp"

namespace selfreward {

/// Cosine decay from lr_start at step 0 to lr_end at step == total.
inline double cosine_lr(long step, long total, double lr_start, double lr_end) {
  require(total >= 1 && step >= 0 && step <= total, "cosine_lr: need 0 <= step <= total, total >= 1");
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * frac));
}

struct OptimizerConfig {
  double lr_start = 0.0;
  double lr_end = 0.0;
  // Multiplies both endpoints. The reference rates were tuned for a 70B model.
  double lr_scale = 1e4;
  int batch_size = 16;
  double dropout = 0.1;
  long total_steps = 1000;
  long eval_every = 200;
  double momentum = 0.0;
  std::uint64_t seed = 0;

  double lr_at(long step) const {
    return lr_scale * cosine_lr(step, total_steps, lr_start, lr_end);
  }

  void validate() const {
    if (!(lr_end > 0.0 && lr_end <= lr_start))
      fail(ErrorCode::config_error, "need 0 < lr_end <= lr_start");
    if (!(lr_scale > 0.0)) fail(ErrorCode::config_error, "lr_scale must be > 0");
    if (batch_size < 1) fail(ErrorCode::config_error, "batch_size must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorCode::config_error, "dropout must be in [0,1)");
    if (total_steps < 1 || eval_every < 1) fail(ErrorCode::config_error, "steps must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorCode::config_error, "momentum must be in [0,1)");
  }
};

struct SftConfig : OptimizerConfig {
  SftConfig() {
    lr_start = 5.5e-6;
    lr_end = 1.1e-6;
  }
};

struct DpoConfig : OptimizerConfig {
  double beta = 0.1;

  DpoConfig() {
    lr_start = 1e-6;
    lr_end = 1e-7;
  }

  void validate() const {
    OptimizerConfig::validate();
    if (!(beta > 0.0) || !std::isfinite(beta)) fail(ErrorCode::config_error, "beta must be > 0");
  }
};

inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Mean negative log-likelihood of the response tokens; prompt tokens carry no loss.
inline double sft_loss(const TokenPolicy& policy, const TokenExample& example) {
  if (example.response.empty()) fail(ErrorCode::empty_target, "response has no tokens");
  return -policy.sequence_logprob(example.prompt, example.response) /
         static_cast<double>(example.response.size());
}

/// -log sigmoid(beta * ((lw - ref_w) - (ll - ref_l))).
inline double dpo_loss_from_logprobs(double policy_winner, double policy_loser, double ref_winner,
                                     double ref_loser, double beta) {
  const double margin = (policy_winner - ref_winner) - (policy_loser - ref_loser);
  if (!std::isfinite(margin)) fail(ErrorCode::numerical_error, "non-finite log-ratio margin");
  return -log_sigmoid(beta * margin);
}

inline double dpo_loss(const TokenPolicy& policy, const TokenPolicy& ref_policy, const TokenPair& pair,
                       double beta) {
  return dpo_loss_from_logprobs(policy.sequence_logprob(pair.prompt, pair.winner),
                                policy.sequence_logprob(pair.prompt, pair.loser),
                                ref_policy.sequence_logprob(pair.prompt, pair.winner),
                                ref_policy.sequence_logprob(pair.prompt, pair.loser), beta);
}

/// beta-scaled log-ratio difference; positive means the policy prefers the winner more than
/// the reference does.
inline double implicit_reward_margin(const TokenPolicy& policy, const TokenPolicy& ref_policy,
                                     const TokenPair& pair, double beta) {
  return beta * ((policy.sequence_logprob(pair.prompt, pair.winner) -
                  ref_policy.sequence_logprob(pair.prompt, pair.winner)) -
                 (policy.sequence_logprob(pair.prompt, pair.loser) -
                  ref_policy.sequence_logprob(pair.prompt, pair.loser)));
}

/// Gradient of the mean sft_loss over the batch, accumulated into grad. Returns the mean loss.
template <TrainablePolicy P>
double sft_gradient(const P& policy, std::span<const TokenExample> batch, std::span<double> grad,
                    const DropoutSpec& dropout = {}) {
  require(!batch.empty(), "sft_gradient: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch)
    if (ex.response.empty()) fail(ErrorCode::empty_target, "response has no tokens");
  const auto logprobs = policy.accumulate_gradient(
      batch,
      [&](std::span<const double>) {
        std::vector<double> w(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i)
          w[i] = -inv_b / static_cast<double>(batch[i].response.size());
        return w;
      },
      grad, dropout);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    loss -= logprobs[i] / static_cast<double>(batch[i].response.size());
  return loss * inv_b;
}

/// Gradient of the mean DPO loss with the reference log-probs precomputed
/// (ref_logprobs[2i] winner, [2i+1] loser). Returns the mean loss.
template <TrainablePolicy P>
double dpo_gradient(const P& policy, std::span<const TokenPair> pairs,
                    std::span<const double> ref_logprobs, double beta, std::span<double> grad,
                    const DropoutSpec& dropout = {}) {
  require(!pairs.empty(), "dpo_gradient: empty batch");
  require(ref_logprobs.size() == 2 * pairs.size(), "dpo_gradient: reference size mismatch");
  std::vector<TokenExample> items;
  items.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    items.push_back({p.prompt, p.winner});
    items.push_back({p.prompt, p.loser});
  }
  const double inv_b = 1.0 / static_cast<double>(pairs.size());
  double loss = 0.0;
  policy.accumulate_gradient(
      items,
      [&](std::span<const double> lp) {
        std::vector<double> w(lp.size());
        for (std::size_t j = 0; j < pairs.size(); ++j) {
          const double margin =
              (lp[2 * j] - ref_logprobs[2 * j]) - (lp[2 * j + 1] - ref_logprobs[2 * j + 1]);
          if (!std::isfinite(margin))
            fail(ErrorCode::numerical_error, "non-finite log-prob in pair " + std::to_string(j));
          loss -= log_sigmoid(beta * margin);
          const double s = sigmoid(-beta * margin);
          w[2 * j] = -beta * s * inv_b;
          w[2 * j + 1] = beta * s * inv_b;
        }
        return w;
      },
      grad, dropout);
  return loss * inv_b;
}

template <class P>
struct TrainResult {
  P policy;                      // early-stopped choice
  std::vector<long> snapshot_steps;
  std::size_t chosen = 0;        // index into snapshot_steps
  std::vector<Json> log;         // {step, lr, loss}
};

/// Walks checkpoints in order; a checkpoint replaces the current best only when its
/// win rate against it is strictly above one half.
template <class Checkpoint, class WinRate>
std::size_t early_stop(std::span<const Checkpoint> checkpoints, WinRate&& win_rate) {
  require(!checkpoints.empty(), "early_stop: no checkpoints");
  std::size_t best = 0;
  for (std::size_t i = 1; i < checkpoints.size(); ++i)
    if (win_rate(checkpoints[i], checkpoints[best]) > 0.5) best = i;
  return best;
}

/// Win rate of `candidate` against `best`, both given as full policies.
template <class P>
using ArenaCallback = std::function<double(const P& candidate, const P& best)>;

namespace detail {

// Shared SGD loop: batches drawn from a per-epoch seeded shuffle, cosine schedule,
// optional momentum, a snapshot every eval_every steps and at the end.
template <TrainablePolicy P, class BatchLoss>
TrainResult<P> run_training(P policy, std::size_t n_items, const OptimizerConfig& cfg,
                            std::string_view label, BatchLoss&& batch_loss,
                            const ArenaCallback<P>& arena) {
  RandomStream shuffle_rng = seeded_rng(cfg.seed, std::string(label) + "/shuffle");
  RandomStream dropout_rng = seeded_rng(cfg.seed, std::string(label) + "/dropout");
  std::vector<std::size_t> order(n_items);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_rng.shuffle(order);
  std::size_t cursor = 0;

  const std::size_t n_params = policy.parameters().size();
  std::vector<double> grad(n_params), velocity(cfg.momentum > 0.0 ? n_params : 0);
  std::vector<std::vector<double>> snapshots;
  TrainResult<P> result{policy, {}, 0, {}};

  double initial_loss = -1.0, window_loss = 0.0;
  long window_steps = 0;
  int bad_evals = 0;
  for (long step = 0; step < cfg.total_steps; ++step) {
    std::vector<std::size_t> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const DropoutSpec dropout{cfg.dropout, &dropout_rng};
    const double loss = batch_loss(policy, std::span<const std::size_t>(batch), std::span(grad), dropout);
    if (!std::isfinite(loss)) fail(ErrorCode::diverged, "non-finite loss at step " + std::to_string(step));
    if (initial_loss < 0.0) initial_loss = loss;
    const double lr = cfg.lr_at(step);
    auto params = policy.mutable_parameters();
    if (cfg.momentum > 0.0) {
      for (std::size_t k = 0; k < n_params; ++k) {
        velocity[k] = cfg.momentum * velocity[k] + grad[k];
        params[k] -= lr * velocity[k];
      }
    } else {
      for (std::size_t k = 0; k < n_params; ++k) params[k] -= lr * grad[k];
    }
    Json entry;
    entry["step"] = step;
    entry["lr"] = lr;
    entry["loss"] = loss;
    result.log.push_back(std::move(entry));
    window_loss += loss;
    ++window_steps;

    const bool at_eval = (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.total_steps;
    if (at_eval) {
      const double mean = window_loss / static_cast<double>(window_steps);
      bad_evals = mean > 10.0 * initial_loss ? bad_evals + 1 : 0;
      if (bad_evals >= 3) fail(ErrorCode::diverged, std::string(label) + " loss exceeded 10x initial");
      window_loss = 0.0;
      window_steps = 0;
      const auto p = policy.parameters();
      snapshots.emplace_back(p.begin(), p.end());
      result.snapshot_steps.push_back(step + 1);
    }
  }

  auto materialize = [&](std::size_t i) {
    P copy = policy;
    auto dst = copy.mutable_parameters();
    std::copy(snapshots[i].begin(), snapshots[i].end(), dst.begin());
    return copy;
  };
  if (arena && snapshots.size() > 1) {
    std::vector<std::size_t> idx(snapshots.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    result.chosen = early_stop(std::span<const std::size_t>(idx), [&](std::size_t cand, std::size_t best) {
      return arena(materialize(cand), materialize(best));
    });
  } else {
    result.chosen = snapshots.size() - 1;
  }
  result.policy = materialize(result.chosen);
  return result;
}

}  // namespace detail

/// Supervised fine-tuning on target tokens. The arena callback (may be empty) drives early
/// stopping; without it the final snapshot is returned.
template <TrainablePolicy P>
TrainResult<P> train_sft(P policy, std::span<const TokenExample> data, const SftConfig& cfg,
                         const ArenaCallback<P>& arena = {}) {
  require(!data.empty(), "train_sft: empty dataset");
  cfg.validate();
  std::vector<TokenExample> scratch;
  return detail::run_training(
      std::move(policy), data.size(), cfg, "sft",
      [&](const P& p, std::span<const std::size_t> idx, std::span<double> grad, const DropoutSpec& d) {
        scratch.clear();
        for (auto i : idx) scratch.push_back(data[i]);
        return sft_gradient(p, std::span<const TokenExample>(scratch), grad, d);
      },
      arena);
}

/// DPO against a frozen copy of the initial policy.
template <TrainablePolicy P>
TrainResult<P> train_dpo(const P& policy_init, std::span<const TokenPair> pairs, const DpoConfig& cfg,
                         const ArenaCallback<P>& arena = {}) {
  require(!pairs.empty(), "train_dpo: no preference pairs");
  cfg.validate();
  std::vector<double> ref(2 * pairs.size());
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    ref[2 * j] = policy_init.sequence_logprob(pairs[j].prompt, pairs[j].winner);
    ref[2 * j + 1] = policy_init.sequence_logprob(pairs[j].prompt, pairs[j].loser);
    if (!std::isfinite(ref[2 * j]) || !std::isfinite(ref[2 * j + 1]))
      fail(ErrorCode::numerical_error, "non-finite reference log-prob in pair " + std::to_string(j));
  }
  std::vector<TokenPair> scratch;
  std::vector<double> scratch_ref;
  return detail::run_training(
      P(policy_init), pairs.size(), cfg, "dpo",
      [&](const P& p, std::span<const std::size_t> idx, std::span<double> grad, const DropoutSpec& d) {
        scratch.clear();
        scratch_ref.clear();
        for (auto i : idx) {
          scratch.push_back(pairs[i]);
          scratch_ref.push_back(ref[2 * i]);
          scratch_ref.push_back(ref[2 * i + 1]);
        }
        return dpo_gradient(p, std::span<const TokenPair>(scratch), scratch_ref, cfg.beta, grad, d);
      },
      arena);
}

}  // namespace selfreward
