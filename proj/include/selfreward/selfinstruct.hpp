#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "selfreward/core.hpp"
#include "selfreward/model.hpp"

namespace selfreward {

enum class FilterVerdict { accepted, rejected_similarity, rejected_keyword, rejected_length };

inline std::string_view to_string(FilterVerdict v) {
  switch (v) {
    case FilterVerdict::accepted: return "accepted";
    case FilterVerdict::rejected_similarity: return "rejected_similarity";
    case FilterVerdict::rejected_keyword: return "rejected_keyword";
    case FilterVerdict::rejected_length: return "rejected_length";
  }
  return "?";
}

inline FilterVerdict parse_filter_verdict(std::string_view s) {
  for (auto v : {FilterVerdict::accepted, FilterVerdict::rejected_similarity, FilterVerdict::rejected_keyword,
                 FilterVerdict::rejected_length})
    if (to_string(v) == s) return v;
  fail(ErrorCode::invalid_record, "unknown filter verdict '" + std::string(s) + "'");
}

struct Demonstration {
  std::string id;
  std::string prompt;
};

/// A generated prompt before and after filtering. The verdict stays `accepted` until
/// filter_prompt has run.
struct PromptCandidate {
  std::string id;
  std::string text;
  std::vector<std::string> fewshot_demo_ids;
  FilterVerdict filter_verdict = FilterVerdict::accepted;
  double max_similarity = 0.0;
};

inline Json to_json(const PromptCandidate& c) {
  Json j;
  j["id"] = c.id;
  j["text"] = c.text;
  j["fewshot_demo_ids"] = c.fewshot_demo_ids;
  j["filter_verdict"] = std::string(to_string(c.filter_verdict));
  j["max_similarity"] = c.max_similarity;
  return j;
}

inline PromptCandidate prompt_candidate_from_json(const Json& j) {
  try {
    PromptCandidate c;
    c.id = j.at("id").get<std::string>();
    c.text = j.at("text").get<std::string>();
    c.fewshot_demo_ids = j.at("fewshot_demo_ids").get<std::vector<std::string>>();
    c.filter_verdict = parse_filter_verdict(j.at("filter_verdict").get<std::string>());
    c.max_similarity = j.value("max_similarity", 0.0);
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_record, e.what());
  }
}

struct FilterConfig {
  double rouge_l_threshold = 0.7;
  // Targets tasks a text-only model cannot do.
  std::vector<std::string> banned_keywords{"image", "picture", "file", "graph", "map", "draw", "plot"};
  int min_tokens = 3;
  int max_tokens = 256;

  void validate() const {
    if (!(rouge_l_threshold >= 0.0 && rouge_l_threshold <= 1.0))
      fail(ErrorCode::config_error, "rouge_l_threshold must be in [0,1]");
    if (min_tokens >= max_tokens) fail(ErrorCode::config_error, "min_tokens must be < max_tokens");
  }
};

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

inline std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// LCS F-measure over whitespace tokens.
inline double rouge_l(std::string_view a, std::string_view b) {
  const auto ta = split_whitespace(a), tb = split_whitespace(b);
  if (ta.empty() || tb.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(ta, tb));
  const double p = lcs / static_cast<double>(ta.size()), r = lcs / static_cast<double>(tb.size());
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

namespace detail {

inline std::vector<std::string> lowercase_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

}  // namespace detail

/// Whole-word, case-insensitive.
inline bool contains_keyword(std::string_view text, std::span<const std::string> keywords) {
  const auto words = detail::lowercase_words(text);
  for (const auto& k : keywords) {
    const auto kw = detail::lowercase_words(k);
    if (kw.empty()) continue;
    for (std::size_t i = 0; i + kw.size() <= words.size(); ++i)
      if (std::equal(kw.begin(), kw.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  }
  return false;
}

/// Similarity, then keywords, then length; the first failing check is recorded.
inline PromptCandidate filter_prompt(PromptCandidate candidate, std::span<const std::string> existing,
                                     const FilterConfig& cfg) {
  double best = 0.0;
  for (const auto& e : existing) best = std::max(best, rouge_l(candidate.text, e));
  candidate.max_similarity = best;
  const auto n_tokens = static_cast<int>(split_whitespace(candidate.text).size());
  if (!existing.empty() && best >= cfg.rouge_l_threshold)
    candidate.filter_verdict = FilterVerdict::rejected_similarity;
  else if (contains_keyword(candidate.text, cfg.banned_keywords))
    candidate.filter_verdict = FilterVerdict::rejected_keyword;
  else if (n_tokens < cfg.min_tokens || n_tokens > cfg.max_tokens)
    candidate.filter_verdict = FilterVerdict::rejected_length;
  else
    candidate.filter_verdict = FilterVerdict::accepted;
  return candidate;
}

inline constexpr std::size_t kFewshotSeed = 6;
inline constexpr std::size_t kFewshotGenerated = 2;
inline constexpr std::size_t kFewshotTotal = kFewshotSeed + kFewshotGenerated;

namespace detail {

// k distinct indices below n, in draw order.
inline std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k, RandomStream& rng,
                                                std::unordered_set<std::string>& taken,
                                                std::span<const Demonstration> from) {
  std::vector<std::size_t> out;
  std::unordered_set<std::size_t> seen;
  while (out.size() < k && seen.size() < n) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(n));
    if (!seen.insert(i).second) continue;
    if (!taken.insert(from[i].id).second) continue;
    out.push_back(i);
  }
  return out;
}

}  // namespace detail

/// Six seed demonstrations and two generated ones, backfilled from the seed set when the
/// generated pool is short, then shuffled.
inline std::vector<Demonstration> sample_fewshot_context(std::span<const Demonstration> seed_ift,
                                                         std::span<const Demonstration> generated_pool,
                                                         RandomStream& rng) {
  if (seed_ift.size() < kFewshotSeed) fail(ErrorCode::insufficient_seed, "need at least 6 seed IFT records");
  std::unordered_set<std::string> taken;
  std::vector<Demonstration> out;
  for (auto i : detail::sample_distinct(generated_pool.size(), kFewshotGenerated, rng, taken, generated_pool))
    out.push_back(generated_pool[i]);
  const std::size_t need_seed = kFewshotTotal - out.size();
  for (auto i : detail::sample_distinct(seed_ift.size(), need_seed, rng, taken, seed_ift)) out.push_back(seed_ift[i]);
  if (out.size() != kFewshotTotal) fail(ErrorCode::insufficient_seed, "not enough distinct demonstrations");
  rng.shuffle(out);
  return out;
}

inline constexpr std::string_view kSelfInstructHeader = "Come up with a series of tasks:\n";

/// Numbered task list ending in the next number as the cue.
inline std::string render_selfinstruct_prompt(std::span<const Demonstration> demos) {
  std::string out(kSelfInstructHeader);
  for (std::size_t i = 0; i < demos.size(); ++i)
    out += std::to_string(i + 1) + ". " + demos[i].prompt + "\n";
  out += std::to_string(demos.size() + 1) + ".";
  return out;
}

/// Demonstration texts of a rendered task list, or empty when `text` is not one.
inline std::optional<std::vector<std::string>> parse_selfinstruct_prompt(std::string_view text) {
  if (!text.starts_with(kSelfInstructHeader)) return std::nullopt;
  std::vector<std::string> demos;
  std::string_view rest = text.substr(kSelfInstructHeader.size());
  std::size_t expected = 1;
  while (true) {
    const std::string number = std::to_string(expected) + ".";
    if (!rest.starts_with(number)) return std::nullopt;
    rest.remove_prefix(number.size());
    if (rest.empty()) return demos;  // the cue
    const auto nl = rest.find('\n');
    if (nl == std::string_view::npos || rest.front() != ' ') return std::nullopt;
    demos.emplace_back(rest.substr(1, nl - 1));
    rest.remove_prefix(nl + 1);
    ++expected;
  }
}

namespace detail {

inline std::string_view strip_list_number(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && line[i] == '.') line.remove_prefix(i + 1);
  return trim(line);
}

}  // namespace detail

/// First non-empty line of the generator's continuation, list numbering removed.
inline PromptCandidate generate_prompt(const GenerationModel& generator, std::span<const Demonstration> context,
                                       const DecodingParams& decoding) {
  const auto text = generator.generate(render_selfinstruct_prompt(context), decoding);
  std::string_view rest = text;
  while (!rest.empty()) {
    const auto nl = rest.find('\n');
    const auto line = detail::strip_list_number(detail::trim(rest.substr(0, nl)));
    if (!line.empty()) {
      PromptCandidate c;
      c.text = std::string(line);
      for (const auto& d : context) c.fewshot_demo_ids.push_back(d.id);
      return c;
    }
    if (nl == std::string_view::npos) break;
    rest.remove_prefix(nl + 1);
  }
  fail(ErrorCode::empty_prompt, "generator produced no instruction");
}

/// n independent samples; candidate i uses a seed derived from decoding.seed and i.
inline std::vector<std::string> generate_candidates(const GenerationModel& model, const std::string& prompt,
                                                    int n, const DecodingParams& decoding) {
  require(n >= 2, "generate_candidates: need n >= 2");
  std::vector<std::string> prompts(static_cast<std::size_t>(n), prompt);
  std::vector<DecodingParams> decodings;
  for (int i = 0; i < n; ++i) decodings.push_back(decoding.with_seed(derive_seed(decoding.seed(), static_cast<std::uint64_t>(i))));
  return model.generate_batch(prompts, decodings);
}

}  // namespace selfreward
