#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfreward/core.hpp"
#include "selfreward/eval.hpp"
#include "selfreward/judge.hpp"
#include "selfreward/model.hpp"
#include "selfreward/selfinstruct.hpp"

namespace selfreward::synth {

// Token-transformation tasks whose gold answers are unique, so scoring is objective.

enum class Family { copy, reverse, sort, count, dedup };
inline constexpr std::array kFamilies{Family::copy, Family::reverse, Family::sort, Family::count, Family::dedup};
inline constexpr std::array<std::string_view, 5> kFamilyWords{"copy", "reverse", "sort", "count", "dedup"};
inline constexpr std::array<std::string_view, 5> kFamilyVerbs{"Copy", "Reverse", "Sort", "Count", "Dedup"};
inline constexpr std::array<std::string_view, 16> kLetters{"a", "b", "c", "d", "e", "f", "g", "h",
                                                           "i", "j", "k", "l", "m", "n", "o", "p"};
inline constexpr std::array<std::string_view, 10> kDigits{"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
inline constexpr std::size_t kMaxPayload = 6;
inline constexpr std::size_t kMaxCorruptedLength = 8;
inline constexpr std::string_view kInstructionInfix = " the tokens:";

using Tokens = std::vector<std::string>;

inline std::string_view family_word(Family f) { return kFamilyWords[static_cast<std::size_t>(f)]; }

struct TaskSpec {
  Family family = Family::copy;
  Tokens payload;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

inline bool is_letter(std::string_view w) {
  return std::find(kLetters.begin(), kLetters.end(), w) != kLetters.end();
}

inline Tokens gold(const TaskSpec& t) {
  Tokens out = t.payload;
  switch (t.family) {
    case Family::copy: break;
    case Family::reverse: std::reverse(out.begin(), out.end()); break;
    case Family::sort: std::sort(out.begin(), out.end()); break;
    case Family::count: out = {std::to_string(t.payload.size())}; break;
    case Family::dedup: {
      Tokens uniq;
      for (const auto& w : t.payload)
        if (std::find(uniq.begin(), uniq.end(), w) == uniq.end()) uniq.push_back(w);
      out = std::move(uniq);
      break;
    }
  }
  return out;
}

inline std::string join(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

inline std::string render_instruction(const TaskSpec& t) {
  return std::string(kFamilyVerbs[static_cast<std::size_t>(t.family)]) + std::string(kInstructionInfix) + " " +
         join(t.payload);
}

/// Inverse of render_instruction; empty for anything else (unknown verb, non-letter payload,
/// empty or over-long payload).
inline std::optional<TaskSpec> parse_instruction(std::string_view text) {
  const auto words = split_whitespace(text);
  if (words.size() < 4 || words[1] != "the" || words[2] != "tokens:") return std::nullopt;
  const auto verb = std::find(kFamilyVerbs.begin(), kFamilyVerbs.end(), words[0]);
  if (verb == kFamilyVerbs.end()) return std::nullopt;
  TaskSpec t;
  t.family = kFamilies[static_cast<std::size_t>(verb - kFamilyVerbs.begin())];
  for (std::size_t i = 3; i < words.size(); ++i) {
    if (!is_letter(words[i])) return std::nullopt;
    t.payload.push_back(words[i]);
  }
  if (t.payload.size() > kMaxPayload) return std::nullopt;
  return t;
}

inline std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// 5 for the gold answer, else floor(5 * (1 - ed/|gold|)) floored at 0.
inline int oracle_score(const TaskSpec& t, std::span<const std::string> response) {
  const auto g = gold(t);
  const auto ed = edit_distance(g, response);
  if (ed == 0) return 5;
  if (ed >= g.size()) return 0;
  return static_cast<int>((5 * (g.size() - ed)) / g.size());
}

inline int oracle_score(const TaskSpec& t, std::string_view response_text) {
  return oracle_score(t, split_whitespace(response_text));
}

inline std::string random_answer_token(RandomStream& rng) {
  // Letters and digits, so count answers and payload answers are both corruptible.
  const auto k = rng.uniform_int(kLetters.size() + kDigits.size());
  return std::string(k < kLetters.size() ? kLetters[k] : kDigits[k - kLetters.size()]);
}

/// One substitution, insertion or deletion whose result is no closer to gold than `current`.
/// Never empties the response and never grows it past kMaxCorruptedLength. Returns `current`
/// unchanged if twenty attempts fail to move away from gold.
inline Tokens corrupt_step(std::span<const std::string> gold_tokens, const Tokens& current, RandomStream& rng) {
  const auto base = edit_distance(gold_tokens, current);
  for (int attempt = 0; attempt < 20; ++attempt) {
    Tokens next = current;
    const auto op = rng.uniform_int(3);
    if (op == 0 && !next.empty()) {
      next[rng.uniform_int(next.size())] = random_answer_token(rng);
    } else if (op == 1 && next.size() < kMaxCorruptedLength) {
      next.insert(next.begin() + static_cast<std::ptrdiff_t>(rng.uniform_int(next.size() + 1)), random_answer_token(rng));
    } else if (op == 2 && next.size() > 1) {
      next.erase(next.begin() + static_cast<std::ptrdiff_t>(rng.uniform_int(next.size())));
    } else {
      continue;
    }
    if (edit_distance(gold_tokens, next) > base) return next;
  }
  return current;
}

inline Tokens corrupt(const TaskSpec& t, int depth, RandomStream& rng) {
  const auto g = gold(t);
  Tokens cur = g;
  for (int d = 0; d < depth; ++d) cur = corrupt_step(g, cur, rng);
  return cur;
}

inline TaskSpec random_task(RandomStream& rng) {
  TaskSpec t;
  t.family = kFamilies[rng.uniform_int(kFamilies.size())];
  const auto len = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(kMaxPayload)));
  for (std::size_t i = 0; i < len; ++i) t.payload.emplace_back(kLetters[rng.uniform_int(kLetters.size())]);
  return t;
}

struct WorldConfig {
  std::uint64_t seed = 1;
  std::size_t n_ift = 3200;
  std::size_t n_eft_groups = 3000;
  std::size_t n_validation = 200;
  std::size_t n_test = 400;
};

/// IFT examples, human-ranked groups, and held-out prompts for early stopping (validation)
/// and for the final arena (test). Instructions never repeat across or within the parts.
struct World {
  std::vector<InstructionExample> ift;
  std::vector<RankedGroup> groups;
  std::vector<InstructionExample> validation;
  std::vector<InstructionExample> test;
};

/// Dense rank by descending score: best gets 0.
inline std::vector<int> dense_ranks(std::span<const int> scores) {
  std::set<int, std::greater<>> distinct(scores.begin(), scores.end());
  std::vector<int> ranks;
  for (int s : scores)
    ranks.push_back(static_cast<int>(std::distance(distinct.begin(), distinct.find(s))));
  return ranks;
}

inline World make_world(const WorldConfig& cfg) {
  require(cfg.n_ift >= 1 && cfg.n_eft_groups >= 1 && cfg.n_validation >= 1 && cfg.n_test >= 1,
          "make_world: counts must be >= 1");
  RandomStream rng = seeded_rng(cfg.seed, "world");
  std::set<std::string> used;
  auto fresh_task = [&]() {
    while (true) {
      auto t = random_task(rng);
      if (used.insert(render_instruction(t)).second) return t;
    }
  };
  auto gold_example = [&](const char* prefix, std::uint64_t i) {
    const auto t = fresh_task();
    InstructionExample ex;
    ex.prompt = render_instruction(t);
    ex.response = join(gold(t));
    ex.source = ExampleSource::seed_ift;
    ex.id = make_record_id(prefix, i, ex.prompt);
    return ex;
  };
  World w;
  for (std::size_t i = 0; i < cfg.n_ift; ++i) w.ift.push_back(gold_example("ift", i));
  for (std::size_t i = 0; i < cfg.n_eft_groups; ++i) {
    const auto t = fresh_task();
    RankedGroup g;
    g.instruction = render_instruction(t);
    g.group_id = make_record_id("grp", i, g.instruction);
    const auto size = static_cast<std::size_t>(rng.uniform_int(2, 4));
    std::vector<int> depths{0, 1, 2, 3, 5};
    rng.shuffle(depths);
    std::vector<std::string> texts;
    std::vector<int> scores;
    for (std::size_t k = 0; texts.size() < size && k < depths.size(); ++k) {
      const auto toks = corrupt(t, depths[k], rng);
      auto text = join(toks);
      if (std::find(texts.begin(), texts.end(), text) != texts.end()) continue;
      scores.push_back(oracle_score(t, toks));
      texts.push_back(std::move(text));
    }
    if (texts.size() < 2) {  // tiny payloads can make corruptions collide; add a distinct one
      texts.push_back(join(corrupt(t, 5, rng)) + " " + random_answer_token(rng));
      scores.push_back(oracle_score(t, texts.back()));
    }
    const auto ranks = dense_ranks(scores);
    for (std::size_t k = 0; k < texts.size(); ++k) g.responses.push_back({texts[k], ranks[k]});
    w.groups.push_back(std::move(g));
  }
  for (std::size_t i = 0; i < cfg.n_validation; ++i) w.validation.push_back(gold_example("val", i));
  for (std::size_t i = 0; i < cfg.n_test; ++i) w.test.push_back(gold_example("test", i));
  return w;
}

inline constexpr std::string_view kIftFile = "ift.jsonl";
inline constexpr std::string_view kGroupsFile = "eft_groups.jsonl";
inline constexpr std::string_view kValidationFile = "validation.jsonl";
inline constexpr std::string_view kTestFile = "test.jsonl";

inline void write_world(const std::filesystem::path& dir, const World& w) {
  write_examples(dir / kIftFile, w.ift);
  write_groups(dir / kGroupsFile, w.groups);
  write_examples(dir / kValidationFile, w.validation);
  write_examples(dir / kTestFile, w.test);
}

inline World read_world(const std::filesystem::path& dir) {
  for (auto name : {kIftFile, kGroupsFile, kValidationFile, kTestFile})
    if (!std::filesystem::exists(dir / name))
      fail(ErrorCode::not_found, "world file " + (dir / name).string());
  return {read_examples(dir / kIftFile), read_groups(dir / kGroupsFile), read_examples(dir / kValidationFile),
          read_examples(dir / kTestFile)};
}

inline std::vector<std::string> prompts_of(std::span<const InstructionExample> rows) {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r.prompt);
  return out;
}

/// Arena judge that prefers the response with the higher oracle score. Throws on prompts that
/// are not synthbench instructions.
inline PairwiseJudge oracle_judge() {
  return [](const std::string& prompt, const std::string& first, const std::string& second) {
    const auto task = parse_instruction(prompt);
    if (!task) fail(ErrorCode::invalid_param, "oracle judge cannot read prompt '" + prompt + "'");
    const int a = oracle_score(*task, first), b = oracle_score(*task, second);
    return a > b ? Preference::first : b > a ? Preference::second : Preference::none;
  };
}

/// Stand-in for the fixed, separately trained prompt writer: ignores the demonstrations apart
/// from occasionally echoing one, and otherwise writes a fresh random task. A small share of
/// its outputs is junk that the filters are meant to catch.
class ProgrammaticPromptGenerator final : public GenerationModel {
 public:
  explicit ProgrammaticPromptGenerator(double junk_rate = 0.05) : junk_rate_(junk_rate) {}

  std::string generate(std::string_view prompt, const DecodingParams& decoding) const override {
    RandomStream rng(decoding.seed());
    if (rng.bernoulli(junk_rate_)) {
      switch (rng.uniform_int(3)) {
        case 0: {
          const auto demos = parse_selfinstruct_prompt(prompt);
          if (demos && !demos->empty()) return demos->back();
          break;
        }
        case 1: return "Draw an image of the tokens: " + join(random_task(rng).payload);
        default: return std::string(kFamilyVerbs[rng.uniform_int(kFamilyVerbs.size())]) + " tokens";
      }
    }
    return render_instruction(random_task(rng));
  }

 private:
  double junk_rate_;
};

// ---------------------------------------------------------------------------------------
// Pretraining corpus for the base model M0. It mixes noisy task demonstrations with judge
// transcripts whose ratings lean towards 4 and sometimes miss the "Score:" line, plus task
// lists for prompt writing. A model fitted to it can already judge a little, badly calibrated,
// the way a base model does before any evaluation fine-tuning.

struct CorpusConfig {
  std::size_t n_docs = 60000;
  double share_instruction = 0.4;
  double share_additive = 0.25;
  double share_multiple_choice = 0.15;  // the rest are task lists
  double clean_answer_rate = 0.35;       // instruction docs answered with gold
  int max_answer_corruption = 3;
  int max_judged_corruption = 5;
  double rating_skew = 0.8;     // probability a rating doc says 4 regardless of quality
  double format_break = 0.1;    // probability a rating doc never states its score
};

inline std::vector<InstructionExample> make_pretraining_corpus(const CorpusConfig& cfg, std::uint64_t seed,
                                                               std::span<const std::string> excluded) {
  RandomStream rng = seeded_rng(seed, "pretrain-corpus");
  const std::set<std::string> skip(excluded.begin(), excluded.end());
  const auto additive = JudgeTemplate::additive();
  const auto multiple_choice = JudgeTemplate::multiple_choice();
  auto task = [&]() {
    while (true) {
      auto t = random_task(rng);
      if (!skip.contains(render_instruction(t))) return t;
    }
  };
  std::vector<InstructionExample> docs;
  docs.reserve(cfg.n_docs);
  for (std::size_t i = 0; i < cfg.n_docs; ++i) {
    InstructionExample d;
    d.source = ExampleSource::model_generated;
    const double u = rng.uniform();
    if (u < cfg.share_instruction) {
      const auto t = task();
      const int depth = rng.bernoulli(cfg.clean_answer_rate)
                            ? 0
                            : static_cast<int>(rng.uniform_int(1, cfg.max_answer_corruption));
      d.prompt = render_instruction(t);
      d.response = join(corrupt(t, depth, rng));
    } else if (u < cfg.share_instruction + cfg.share_additive + cfg.share_multiple_choice) {
      const bool mc = u >= cfg.share_instruction + cfg.share_additive;
      const auto t = task();
      const auto response = corrupt(t, static_cast<int>(rng.uniform_int(0, cfg.max_judged_corruption)), rng);
      int score = oracle_score(t, response);
      if (mc) score = std::max(score, 1);
      if (rng.bernoulli(cfg.rating_skew)) score = 4;
      d.prompt = render_judge_prompt(mc ? multiple_choice : additive, render_instruction(t), join(response));
      d.response = join(gold(t));
      if (!rng.bernoulli(cfg.format_break)) d.response += " Score: " + std::to_string(score);
    } else {
      std::vector<Demonstration> demos;
      for (std::size_t k = 0; k < kFewshotTotal; ++k) demos.push_back({"", render_instruction(task())});
      d.prompt = render_selfinstruct_prompt(demos);
      d.response = render_instruction(task());
    }
    d.id = make_record_id("doc", i, d.prompt);
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace selfreward::synth
