#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "selfreward/eval.hpp"
#include "selfreward/synthbench.hpp"
#include "selfreward/tabular_policy.hpp"
#include "selfreward/toy_model.hpp"
#include "selfreward/train.hpp"
#include "test_util.hpp"

using namespace selfreward;
using testutil::error_code_of;
using testutil::TempDir;

namespace {

class UniformPolicy final : public TokenPolicy {
 public:
  explicit UniformPolicy(std::size_t v) : v_(v) {}
  std::size_t vocab_size() const override { return v_; }
  TokenId end_token() const override { return 0; }
  TokenDistribution next_token(std::span<const TokenId>, std::span<const TokenId>) const override {
    return TokenDistribution(std::vector<double>(v_, 0.0));
  }

 private:
  std::size_t v_;
};

// Tabular policy whose reported gradient points the wrong way, to provoke divergence.
class AscendingPolicy final : public TokenPolicy {
 public:
  explicit AscendingPolicy(TabularPolicy inner) : inner_(std::move(inner)) {}
  std::size_t vocab_size() const override { return inner_.vocab_size(); }
  TokenId end_token() const override { return inner_.end_token(); }
  TokenDistribution next_token(std::span<const TokenId> p, std::span<const TokenId> r) const override {
    return inner_.next_token(p, r);
  }
  double sequence_logprob(std::span<const TokenId> p, std::span<const TokenId> r) const override {
    return inner_.sequence_logprob(p, r);
  }
  std::span<const double> parameters() const { return inner_.parameters(); }
  std::span<double> mutable_parameters() { return inner_.mutable_parameters(); }
  std::vector<double> accumulate_gradient(std::span<const TokenExample> batch, const WeightFn& weights,
                                          std::span<double> grad, const DropoutSpec& d) const {
    return inner_.accumulate_gradient(
        batch,
        [&](std::span<const double> lp) {
          auto w = weights(lp);
          for (double& x : w) x = -x;
          return w;
        },
        grad, d);
  }

 private:
  TabularPolicy inner_;
};

const std::vector<TokenSeq> kResponses{{1, 2, 0}, {1, 3, 0}, {2, 0}, {3, 3, 3, 0}, {0}};

TokenSeq prompt_of(int k);

TabularPolicy random_tabular(RandomStream& rng, int n_prompts, double scale = 1.0) {
  TabularPolicy p(4, 0);
  for (int k = 0; k < n_prompts; ++k) {
    std::vector<double> logits;
    for (std::size_t i = 0; i < kResponses.size(); ++i) logits.push_back(scale * rng.normal());
    p.add_prompt(prompt_of(k), kResponses, logits);
  }
  return p;
}

// distinct prompts over the three non-end tokens
TokenSeq prompt_of(int k) { return {k % 3 + 1, k / 3 % 3 + 1, k / 9 % 3 + 1}; }

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

template <class F>
std::vector<double> central_differences(TabularPolicy& p, F&& f, double h) {
  auto params = p.mutable_parameters();
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double fp = f(p);
    params[i] = saved - h;
    const double fm = f(p);
    params[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return norm(d) / std::max({norm(a), norm(b), 1e-300});
}

}  // namespace

TEST(CosineLr, PaperSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 1000, 5.5e-6, 1.1e-6), 5.5e-6);
  EXPECT_DOUBLE_EQ(cosine_lr(1000, 1000, 5.5e-6, 1.1e-6), 1.1e-6);
  EXPECT_NEAR(cosine_lr(500, 1000, 5.5e-6, 1.1e-6), 3.3e-6, 1e-18);
  for (long s = 0; s <= 1000; ++s) {
    const double lr = cosine_lr(s, 1000, 5.5e-6, 1.1e-6);
    EXPECT_GE(lr, 1.1e-6);
    EXPECT_LE(lr, 5.5e-6);
  }
  EXPECT_EQ(error_code_of([] { cosine_lr(11, 10, 1.0, 0.5); }), ErrorCode::precondition);
  EXPECT_EQ(error_code_of([] { cosine_lr(0, 0, 1.0, 0.5); }), ErrorCode::precondition);
}

TEST(CosineLr, ScaledDefaults) {
  SftConfig s;
  s.total_steps = 100;
  EXPECT_DOUBLE_EQ(s.lr_at(0), 5.5e-6 * 1e4);
  EXPECT_DOUBLE_EQ(s.lr_at(100), 1.1e-6 * 1e4);
  DpoConfig d;
  EXPECT_EQ(d.lr_start, 1e-6);
  EXPECT_EQ(d.lr_end, 1e-7);
  EXPECT_EQ(d.beta, 0.1);
  EXPECT_EQ(d.batch_size, 16);
  EXPECT_EQ(d.dropout, 0.1);
  EXPECT_EQ(d.eval_every, 200);
}

TEST(ConfigInvariants, Rejected) {
  DpoConfig d;
  d.beta = 0.0;
  EXPECT_EQ(error_code_of([&] { d.validate(); }), ErrorCode::config_error);
  SftConfig s;
  s.lr_end = 2 * s.lr_start;
  EXPECT_EQ(error_code_of([&] { s.validate(); }), ErrorCode::config_error);
  s = SftConfig();
  s.batch_size = 0;
  EXPECT_EQ(error_code_of([&] { s.validate(); }), ErrorCode::config_error);
}

TEST(SftLoss, UniformPolicy) {
  const UniformPolicy u(11);
  for (std::size_t prompt_len : {0u, 1u, 7u}) {
    const TokenExample ex{TokenSeq(prompt_len, 3), {4, 5, 6, 0}};
    EXPECT_NEAR(sft_loss(u, ex), std::log(11.0), 1e-12);
  }
}

TEST(SftLoss, PointMassAndTabular) {
  TabularPolicy point(4, 0);
  point.add_prompt({1}, {{2, 3, 0}});
  EXPECT_EQ(sft_loss(point, {{1}, {2, 3, 0}}), 0.0);

  auto rng = seeded_rng(1, "sft");
  const auto p = random_tabular(rng, 2);
  for (const auto& r : kResponses) {
    const TokenExample ex{prompt_of(1), r};
    EXPECT_NEAR(sft_loss(p, ex), -sequence_logprob(p, ex.prompt, r) / static_cast<double>(r.size()), 1e-15);
  }
  EXPECT_EQ(error_code_of([&] { sft_loss(p, {prompt_of(0), {}}); }), ErrorCode::empty_target);
}

TEST(DpoLoss, ZeroMarginIsLn2) {
  auto rng = seeded_rng(2, "dpo");
  const auto p = random_tabular(rng, 1);
  const TokenPair pair{prompt_of(0), kResponses[0], kResponses[3]};
  EXPECT_NEAR(dpo_loss(p, p, pair, 0.1), std::log(2.0), 1e-12);
  EXPECT_NEAR(dpo_loss_from_logprobs(-3.0, -5.0, -3.0, -5.0, 0.1), 0.6931471805599453, 1e-12);
}

TEST(DpoLoss, ScalarExamples) {
  EXPECT_NEAR(dpo_loss_from_logprobs(10.0, 0.0, 0.0, 0.0, 0.1), 0.31326168751822286, 1e-12);
  EXPECT_NEAR(dpo_loss_from_logprobs(10.0, 0.0, 0.0, 0.0, 0.1), std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_LT(dpo_loss_from_logprobs(1e4, 0.0, 0.0, 0.0, 0.1), 1e-300);
  EXPECT_NEAR(dpo_loss_from_logprobs(-1e4, 0.0, 0.0, 0.0, 0.1), 1e3, 1e-9);
  EXPECT_EQ(error_code_of([] { dpo_loss_from_logprobs(-INFINITY, 0.0, 0.0, 0.0, 0.1); }), ErrorCode::numerical_error);
}

TEST(DpoLoss, StrictlyDecreasingInMargin) {
  double prev = INFINITY;
  for (int i = 0; i < 100; ++i) {
    const double margin = -50.0 + i;
    const double loss = dpo_loss_from_logprobs(margin, 0.0, 0.0, 0.0, 0.1);
    EXPECT_LT(loss, prev) << margin;
    prev = loss;
  }
}

TEST(DpoLoss, ReferenceShiftInvariance) {
  // dyadic values keep every subtraction exact
  for (double c : {-3.0, 0.5, 17.0})
    EXPECT_EQ(dpo_loss_from_logprobs(-1.25, -2.5, -1.75, -3.0, 0.1),
              dpo_loss_from_logprobs(-1.25, -2.5, -1.75 + c, -3.0 + c, 0.1));

  TabularPolicy policy(4, 0), ref(4, 0), shifted(4, 0);
  const std::vector<double> z{0.25, -1.5, 0.75, 2.0, -0.125}, zp{1.0, 0.5, -0.25, -2.0, 0.375};
  policy.add_prompt({1, 1}, kResponses, zp);
  ref.add_prompt({1, 1}, kResponses, z);
  std::vector<double> zs = z;
  for (double& v : zs) v += 4.0;
  shifted.add_prompt({1, 1}, kResponses, zs);
  const TokenPair pair{{1, 1}, kResponses[2], kResponses[4]};
  EXPECT_EQ(dpo_loss(policy, ref, pair, 0.1), dpo_loss(policy, shifted, pair, 0.1));
  EXPECT_NE(dpo_loss(policy, ref, pair, 0.1), std::log(2.0));
}

TEST(Gradients, SftMatchesFiniteDifferences) {
  auto rng = seeded_rng(3, "grad/sft");
  double worst = 0.0;
  for (int point = 0; point < 100; ++point) {
    auto p = random_tabular(rng, 3, 2.0);
    std::vector<TokenExample> batch;
    for (int b = 0; b < 4; ++b)
      batch.push_back({prompt_of(static_cast<int>(rng.uniform_int(3))), kResponses[rng.uniform_int(kResponses.size())]});
    std::vector<double> grad(p.parameters().size(), 0.0);
    sft_gradient(p, std::span<const TokenExample>(batch), grad);
    const auto fd = central_differences(
        p,
        [&](const TabularPolicy& q) {
          double s = 0.0;
          for (const auto& ex : batch) s += sft_loss(q, ex);
          return s / static_cast<double>(batch.size());
        },
        1e-5);
    worst = std::max(worst, relative_error(grad, fd));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Gradients, DpoMatchesFiniteDifferences) {
  auto rng = seeded_rng(4, "grad/dpo");
  double worst = 0.0;
  for (int point = 0; point < 100; ++point) {
    auto p = random_tabular(rng, 3, 2.0);
    const auto ref = random_tabular(rng, 3, 2.0);
    std::vector<TokenPair> pairs;
    std::vector<double> ref_lp;
    for (int b = 0; b < 4; ++b) {
      const auto w = rng.uniform_int(kResponses.size());
      const auto l = (w + 1 + rng.uniform_int(kResponses.size() - 1)) % kResponses.size();
      TokenPair tp{prompt_of(static_cast<int>(rng.uniform_int(3))), kResponses[w], kResponses[l]};
      ref_lp.push_back(ref.sequence_logprob(tp.prompt, tp.winner));
      ref_lp.push_back(ref.sequence_logprob(tp.prompt, tp.loser));
      pairs.push_back(tp);
    }
    const double beta = 0.05 + rng.uniform();
    std::vector<double> grad(p.parameters().size(), 0.0);
    const double loss = dpo_gradient(p, std::span<const TokenPair>(pairs), ref_lp, beta, grad);
    auto mean_loss = [&](const TabularPolicy& q) {
      double s = 0.0;
      for (const auto& tp : pairs) s += dpo_loss(q, ref, tp, beta);
      return s / static_cast<double>(pairs.size());
    };
    EXPECT_NEAR(loss, mean_loss(p), 1e-12);
    worst = std::max(worst, relative_error(grad, central_differences(p, mean_loss, 1e-5)));
  }
  EXPECT_LT(worst, 1e-6);
}

namespace {

SftConfig fast_sft() {
  SftConfig cfg;
  cfg.lr_start = 2.0;
  cfg.lr_end = 1.0;
  cfg.lr_scale = 1.0;
  cfg.batch_size = 1;
  cfg.dropout = 0.0;
  cfg.total_steps = 2000;
  cfg.eval_every = 500;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST(TrainSft, SingleExampleFit) {
  TabularPolicy p(4, 0);
  p.add_prompt({1}, kResponses);
  const std::vector<TokenExample> data{{{1}, kResponses[3]}};
  const auto r = train_sft(p, std::span<const TokenExample>(data), fast_sft());
  EXPECT_LT(sft_loss(r.policy, data[0]), 0.01);
  EXPECT_EQ(r.snapshot_steps, (std::vector<long>{500, 1000, 1500, 2000}));
  EXPECT_EQ(r.chosen, 3u);
  ASSERT_EQ(r.log.size(), 2000u);
  EXPECT_DOUBLE_EQ(r.log[0]["lr"].get<double>(), 2.0);
}

TEST(TrainSft, EmptyDataset) {
  TabularPolicy p(4, 0);
  p.add_prompt({1}, kResponses);
  EXPECT_EQ(error_code_of([&] { train_sft(p, {}, fast_sft()); }), ErrorCode::precondition);
}

TEST(TrainSft, DeterministicOnToyModel) {
  TempDir dir;
  const auto lm = make_toy_lm(12, 10, 3);
  const std::vector<InstructionExample> rows{{"a", "Reverse the tokens: a b c", "c b a"},
                                             {"b", "Count the tokens: d e", "2"},
                                             {"c", "Sort the tokens: k c", "c k"}};
  const auto data = encode_examples(rows);
  SftConfig cfg;
  cfg.total_steps = 30;
  cfg.eval_every = 10;
  cfg.batch_size = 2;
  cfg.seed = 5;
  const auto a = train_sft(lm, std::span<const TokenExample>(data), cfg);
  const auto b = train_sft(lm, std::span<const TokenExample>(data), cfg);
  save_checkpoint(dir / "a.ckpt", a.policy, {"M1-a", 1, "M0", {}});
  save_checkpoint(dir / "b.ckpt", b.policy, {"M1-a", 1, "M0", {}});
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));
  EXPECT_NE(params_digest(a.policy.parameters()), params_digest(lm.parameters()));
  cfg.seed = 6;
  const auto c = train_sft(lm, std::span<const TokenExample>(data), cfg);
  EXPECT_NE(params_digest(c.policy.parameters()), params_digest(a.policy.parameters()));
}

TEST(TrainSft, DivergenceDetected) {
  TabularPolicy inner(4, 0);
  inner.add_prompt({1}, kResponses);
  const AscendingPolicy p(inner);
  const std::vector<TokenExample> data{{{1}, kResponses[2]}};
  auto cfg = fast_sft();
  cfg.eval_every = 20;
  EXPECT_EQ(error_code_of([&] { train_sft(p, std::span<const TokenExample>(data), cfg); }), ErrorCode::diverged);
}

TEST(TrainSft, ArenaCallbackPicksSnapshot) {
  TabularPolicy p(4, 0);
  p.add_prompt({1}, kResponses);
  const std::vector<TokenExample> data{{{1}, kResponses[3]}};
  // a judge that never prefers a later snapshot keeps the first one
  const auto r = train_sft(p, std::span<const TokenExample>(data), fast_sft(),
                           ArenaCallback<TabularPolicy>([](const TabularPolicy&, const TabularPolicy&) { return 0.5; }));
  EXPECT_EQ(r.chosen, 0u);
  const auto first = r.policy.response_probabilities(TokenSeq{1})[3];
  const auto r2 = train_sft(p, std::span<const TokenExample>(data), fast_sft(),
                            ArenaCallback<TabularPolicy>([](const TabularPolicy& c, const TabularPolicy& b) {
                              return c.response_probabilities(TokenSeq{1})[3] > b.response_probabilities(TokenSeq{1})[3] ? 1.0 : 0.0;
                            }));
  EXPECT_EQ(r2.chosen, 3u);
  EXPECT_GT(r2.policy.response_probabilities(TokenSeq{1})[3], first);
}

namespace {

DpoConfig fast_dpo() {
  DpoConfig cfg;
  cfg.lr_start = 1.0;
  cfg.lr_end = 0.1;
  cfg.lr_scale = 1.0;
  cfg.batch_size = 4;
  cfg.dropout = 0.0;
  cfg.total_steps = 400;
  cfg.eval_every = 100;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(TrainDpo, SinglePairMargin) {
  auto rng = seeded_rng(5, "dpo/single");
  const auto p = random_tabular(rng, 1);
  const std::vector<TokenPair> pairs{{prompt_of(0), kResponses[4], kResponses[0]}};
  const auto r = train_dpo(p, std::span<const TokenPair>(pairs), fast_dpo());
  EXPECT_GT(implicit_reward_margin(r.policy, p, pairs[0], 0.1), 0.0);
  EXPECT_LT(dpo_loss(r.policy, p, pairs[0], 0.1), std::log(2.0));
}

TEST(TrainDpo, MostMarginsPositive) {
  auto rng = seeded_rng(6, "dpo/many");
  const auto p = random_tabular(rng, 27);
  std::vector<TokenPair> pairs;
  for (int k = 0; k < 27; ++k) {
    const auto w = rng.uniform_int(kResponses.size());
    const auto l = (w + 1 + rng.uniform_int(kResponses.size() - 1)) % kResponses.size();
    pairs.push_back({prompt_of(k), kResponses[w], kResponses[l]});
  }
  auto cfg = fast_dpo();
  cfg.total_steps = 1000;
  const auto r = train_dpo(p, std::span<const TokenPair>(pairs), cfg);
  int positive = 0;
  for (const auto& tp : pairs) positive += implicit_reward_margin(r.policy, p, tp, cfg.beta) > 0.0;
  EXPECT_GE(positive, 25);  // at least 90%
}

TEST(TrainDpo, Preconditions) {
  auto rng = seeded_rng(7, "dpo/pre");
  const auto p = random_tabular(rng, 1);
  EXPECT_EQ(error_code_of([&] { train_dpo(p, {}, fast_dpo()); }), ErrorCode::precondition);
  auto cfg = fast_dpo();
  cfg.beta = 0.0;
  const std::vector<TokenPair> pairs{{prompt_of(0), kResponses[4], kResponses[0]}};
  EXPECT_EQ(error_code_of([&] { train_dpo(p, std::span<const TokenPair>(pairs), cfg); }), ErrorCode::config_error);
  const std::vector<TokenPair> unknown{{prompt_of(0), {3, 2, 0}, kResponses[0]}};
  EXPECT_EQ(error_code_of([&] { train_dpo(p, std::span<const TokenPair>(unknown), fast_dpo()); }),
            ErrorCode::numerical_error);
}

TEST(EarlyStop, Rules) {
  const std::vector<int> one{7};
  EXPECT_EQ(early_stop(std::span<const int>(one), [](int, int) { return 1.0; }), 0u);
  const std::vector<int> three{0, 1, 2};
  EXPECT_EQ(early_stop(std::span<const int>(three), [](int, int) { return 0.0; }), 0u);
  EXPECT_EQ(early_stop(std::span<const int>(three), [](int, int) { return 0.5; }), 0u);
  EXPECT_EQ(early_stop(std::span<const int>(three), [](int c, int b) { return c > b ? 0.51 : 0.49; }), 2u);
}

TEST(EarlyStop, OracleBestMiddleCheckpoint) {
  auto rng = seeded_rng(8, "early-stop");
  std::vector<std::string> prompts;
  std::vector<std::vector<std::string>> outputs(3);
  for (int i = 0; i < 50; ++i) {
    auto t = synth::random_task(rng);
    t.payload = {"a", "b", "c", "d"};
    prompts.push_back(synth::render_instruction(t));
    outputs[0].push_back(synth::join(synth::corrupt(t, 3, rng)));
    outputs[1].push_back(synth::join(synth::gold(t)));
    outputs[2].push_back(synth::join(synth::corrupt(t, 1, rng)));
  }
  const auto judge = synth::oracle_judge();
  const std::vector<std::size_t> ckpts{0, 1, 2};
  const auto chosen = early_stop(std::span<const std::size_t>(ckpts), [&](std::size_t c, std::size_t b) {
    return arena_on_responses(prompts, outputs[c], outputs[b], judge).win_rate_a();
  });
  EXPECT_EQ(chosen, 1u);
}
