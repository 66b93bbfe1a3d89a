#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selfreward/json_io.hpp"
#include "selfreward/model.hpp"

namespace selfreward {

/// Model scores and human ranks for one instruction's responses. human_rank: lower is better.
/// A NaN model score marks a response the judge could not score.
struct ScoredGroup {
  std::vector<double> model_scores;
  std::vector<int> human_ranks;
};

struct RankingMetrics {
  std::optional<double> pairwise_acc;
  std::optional<double> five_best_pct;
  std::optional<double> exact_match_pct;
  std::optional<double> spearman;
  std::optional<double> kendall_tau;
  std::size_t n_groups = 0;
  std::size_t n_pairs = 0;
};

namespace detail {

inline void check_group(const ScoredGroup& g) {
  require(g.model_scores.size() == g.human_ranks.size(), "scores/ranks size mismatch");
  require(g.model_scores.size() >= 2, "group needs >= 2 responses");
}

// Model order agrees with a strictly human-ordered pair (i better than j).
inline bool agrees(double score_better, double score_worse) {
  return score_better > score_worse;  // NaN compares false: counted as disagreement
}

// 1-based ranks with ties sharing the average of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Drops unscored responses; returns (model scores, inverted human ranks).
inline std::pair<std::vector<double>, std::vector<double>> scored_pairs(const ScoredGroup& g) {
  std::pair<std::vector<double>, std::vector<double>> out;
  for (std::size_t i = 0; i < g.model_scores.size(); ++i) {
    if (std::isnan(g.model_scores[i])) continue;
    out.first.push_back(g.model_scores[i]);
    out.second.push_back(-static_cast<double>(g.human_ranks[i]));
  }
  return out;
}

inline std::optional<double> mean_of_defined(const std::vector<std::optional<double>>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : v)
    if (x) {
      sum += *x;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace detail

inline std::size_t count_ordered_pairs(const ScoredGroup& g) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.human_ranks.size(); ++i)
    for (std::size_t j = i + 1; j < g.human_ranks.size(); ++j)
      if (g.human_ranks[i] != g.human_ranks[j]) ++n;
  return n;
}

/// Fraction of strictly human-ordered pairs whose model scores order them the same way.
/// Model ties count as disagreement. Absent when no pair is eligible.
inline std::optional<double> pairwise_accuracy(std::span<const ScoredGroup> groups) {
  std::size_t eligible = 0, agree = 0;
  for (const auto& g : groups) {
    detail::check_group(g);
    for (std::size_t i = 0; i < g.human_ranks.size(); ++i)
      for (std::size_t j = i + 1; j < g.human_ranks.size(); ++j) {
        if (g.human_ranks[i] == g.human_ranks[j]) continue;
        ++eligible;
        const bool i_better = g.human_ranks[i] < g.human_ranks[j];
        const bool ok = i_better ? detail::agrees(g.model_scores[i], g.model_scores[j])
                                 : detail::agrees(g.model_scores[j], g.model_scores[i]);
        if (ok) ++agree;
      }
  }
  if (eligible == 0) return std::nullopt;
  return static_cast<double>(agree) / static_cast<double>(eligible);
}

/// A group matches when the model has no ties at all and orders every strictly human-ordered
/// pair the human way (human ties leave the pair unconstrained).
inline bool group_exact_match(const ScoredGroup& g) {
  detail::check_group(g);
  const auto& s = g.model_scores;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 1; j < s.size(); ++j) {
      if (!(s[i] != s[j])) return false;  // tie or NaN
      if (g.human_ranks[i] == g.human_ranks[j]) continue;
      const bool model_i_better = s[i] > s[j];
      const bool human_i_better = g.human_ranks[i] < g.human_ranks[j];
      if (model_i_better != human_i_better) return false;
    }
  return true;
}

inline double exact_match_pct(std::span<const ScoredGroup> groups) {
  require(!groups.empty(), "exact_match_pct: no groups");
  std::size_t hits = 0;
  for (const auto& g : groups)
    if (group_exact_match(g)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(groups.size());
}

/// Among responses the model scored exactly 5.0, the fraction holding the (possibly tied)
/// best human rank of their group.
inline std::optional<double> five_best_pct(std::span<const ScoredGroup> groups) {
  std::size_t perfect = 0, best = 0;
  for (const auto& g : groups) {
    detail::check_group(g);
    const int top = *std::min_element(g.human_ranks.begin(), g.human_ranks.end());
    for (std::size_t i = 0; i < g.model_scores.size(); ++i)
      if (g.model_scores[i] == 5.0) {
        ++perfect;
        if (g.human_ranks[i] == top) ++best;
      }
  }
  if (perfect == 0) return std::nullopt;
  return static_cast<double>(best) / static_cast<double>(perfect);
}

/// Spearman rho between model scores and inverted human ranks, average-rank ties.
inline std::optional<double> spearman_group(const ScoredGroup& g) {
  detail::check_group(g);
  const auto [x, y] = detail::scored_pairs(g);
  if (x.size() < 2) return std::nullopt;
  return detail::pearson(detail::average_ranks(x), detail::average_ranks(y));
}

/// Kendall tau-b between model scores and inverted human ranks.
inline std::optional<double> kendall_group(const ScoredGroup& g) {
  detail::check_group(g);
  const auto [x, y] = detail::scored_pairs(g);
  long concordant = 0, discordant = 0, tied_x = 0, tied_y = 0, total = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      ++total;
      const bool tx = x[i] == x[j], ty = y[i] == y[j];
      if (tx) ++tied_x;
      if (ty) ++tied_y;
      if (tx || ty) continue;
      if ((x[i] < x[j]) == (y[i] < y[j])) ++concordant;
      else ++discordant;
    }
  const double denom = std::sqrt(static_cast<double>(total - tied_x) * static_cast<double>(total - tied_y));
  if (denom <= 0.0) return std::nullopt;
  return std::clamp(static_cast<double>(concordant - discordant) / denom, -1.0, 1.0);
}

/// Mean over groups with a defined coefficient.
inline std::optional<double> spearman(std::span<const ScoredGroup> groups) {
  std::vector<std::optional<double>> v;
  for (const auto& g : groups) v.push_back(spearman_group(g));
  return detail::mean_of_defined(v);
}

inline std::optional<double> kendall_tau(std::span<const ScoredGroup> groups) {
  std::vector<std::optional<double>> v;
  for (const auto& g : groups) v.push_back(kendall_group(g));
  return detail::mean_of_defined(v);
}

inline RankingMetrics compute_ranking_metrics(std::span<const ScoredGroup> groups) {
  RankingMetrics m;
  m.n_groups = groups.size();
  for (const auto& g : groups) m.n_pairs += count_ordered_pairs(g);
  m.pairwise_acc = pairwise_accuracy(groups);
  m.five_best_pct = five_best_pct(groups);
  if (!groups.empty()) m.exact_match_pct = exact_match_pct(groups);
  m.spearman = spearman(groups);
  m.kendall_tau = kendall_tau(groups);
  return m;
}

inline Json to_json(const RankingMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json j;
  j["pairwise_acc"] = opt(m.pairwise_acc);
  j["five_best_pct"] = opt(m.five_best_pct);
  j["exact_match_pct"] = opt(m.exact_match_pct);
  j["spearman"] = opt(m.spearman);
  j["kendall_tau"] = opt(m.kendall_tau);
  j["n_groups"] = m.n_groups;
  j["n_pairs"] = m.n_pairs;
  Json conv;
  conv["model_ties"] = "count as disagreement (pairwise) and fail the group (exact match)";
  conv["human_ties"] = "pair excluded from pairwise accuracy; unconstrained in exact match";
  conv["correlation_pooling"] = "mean over groups; zero-variance groups excluded";
  conv["spearman_ties"] = "average ranks";
  conv["kendall_variant"] = "tau-b";
  conv["five_best"] = "model mean score exactly 5.0";
  conv["unscorable"] = "counts as disagreement; dropped from correlations";
  j["conventions"] = std::move(conv);
  return j;
}

// ---------------------------------------------------------------------------------------
// Head-to-head arena

enum class Preference { first, second, none };
enum class Outcome { a, b, tie };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::a: return "A";
    case Outcome::b: return "B";
    case Outcome::tie: return "Tie";
  }
  return "?";
}

/// Judges one presentation order: which of (first, second) answers `prompt` better.
using PairwiseJudge =
    std::function<Preference(const std::string& prompt, const std::string& first, const std::string& second)>;

struct ArenaResult {
  long wins_a = 0;
  long wins_b = 0;
  long ties = 0;
  long failures = 0;  // judge calls that threw; the prompt counts as a tie

  long total() const { return wins_a + wins_b + ties; }
  double win_rate_a() const {
    return total() == 0 ? 0.5 : (static_cast<double>(wins_a) + 0.5 * static_cast<double>(ties)) /
                                    static_cast<double>(total());
  }
};

inline Json to_json(const ArenaResult& r) {
  Json j;
  j["wins_a"] = r.wins_a;
  j["wins_b"] = r.wins_b;
  j["ties"] = r.ties;
  j["failures"] = r.failures;
  j["win_rate_a"] = r.win_rate_a();
  return j;
}

/// Asks the judge in both presentation orders. A or B only when both orders agree.
inline Outcome head_to_head(const PairwiseJudge& judge, const std::string& prompt,
                            const std::string& response_a, const std::string& response_b,
                            long* failures = nullptr) {
  Preference ab, ba;
  try {
    ab = judge(prompt, response_a, response_b);
    ba = judge(prompt, response_b, response_a);
  } catch (const std::exception&) {
    if (failures) ++*failures;
    return Outcome::tie;
  }
  if (ab == Preference::first && ba == Preference::second) return Outcome::a;
  if (ab == Preference::second && ba == Preference::first) return Outcome::b;
  return Outcome::tie;
}

/// Seeds for prompt i are shared by both models, so identical models produce identical
/// responses.
inline std::vector<DecodingParams> arena_decodings(std::size_t n, const DecodingParams& decoding) {
  std::vector<DecodingParams> d;
  d.reserve(n);
  for (std::size_t i = 0; i < n; ++i) d.push_back(decoding.with_seed(derive_seed(decoding.seed(), i)));
  return d;
}

inline ArenaResult arena_on_responses(std::span<const std::string> prompts,
                                      std::span<const std::string> responses_a,
                                      std::span<const std::string> responses_b, const PairwiseJudge& judge) {
  require(!prompts.empty(), "arena: no prompts");
  require(responses_a.size() == prompts.size() && responses_b.size() == prompts.size(),
          "arena: response count mismatch");
  ArenaResult r;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    switch (head_to_head(judge, prompts[i], responses_a[i], responses_b[i], &r.failures)) {
      case Outcome::a: ++r.wins_a; break;
      case Outcome::b: ++r.wins_b; break;
      case Outcome::tie: ++r.ties; break;
    }
  }
  return r;
}

inline ArenaResult arena(const GenerationModel& model_a, const GenerationModel& model_b,
                         std::span<const std::string> prompts, const PairwiseJudge& judge,
                         const DecodingParams& decoding) {
  require(!prompts.empty(), "arena: no prompts");
  const auto decodings = arena_decodings(prompts.size(), decoding);
  const auto ra = model_a.generate_batch(prompts, decodings);
  const auto rb = model_b.generate_batch(prompts, decodings);
  return arena_on_responses(prompts, ra, rb, judge);
}

}  // namespace selfreward
