#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <cctype>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfreward/core.hpp"
#include "selfreward/model.hpp"

namespace selfreward {

inline constexpr std::string_view kInstructionSlot = "<INSTRUCTION_HERE>";
inline constexpr std::string_view kResponseSlot = "<RESPONSE_HERE>";

enum class TemplateName { additive, multiple_choice };

inline std::string_view to_string(TemplateName n) {
  return n == TemplateName::additive ? "additive" : "multiple_choice";
}

inline TemplateName parse_template_name(std::string_view s) {
  if (s == "additive") return TemplateName::additive;
  if (s == "multiple_choice") return TemplateName::multiple_choice;
  fail(ErrorCode::config_error, "unknown judge template '" + std::string(s) + "'");
}

namespace detail {

inline constexpr std::string_view kAdditiveBody =
    "Review the user's question and the corresponding response using the additive 5-point scoring "
    "system described below. Points are accumulated based on the satisfaction of each criterion:\n"
    "\n"
    "- Add 1 point if the response is relevant and provides some information related to the user's "
    "inquiry, even if it is incomplete or contains some irrelevant content.\n"
    "- Add another point if the response addresses a substantial portion of the user's question, but "
    "does not completely resolve the query or provide a direct answer.\n"
    "- Award a third point if the response answers the basic elements of the user's question in a "
    "useful way, regardless of whether it seems to have been written by an AI Assistant or if it has "
    "elements typically found in blogs or search results.\n"
    "- Grant a fourth point if the response is clearly written from an AI Assistant's perspective, "
    "addressing the user's question directly and comprehensively, and is well-organized and helpful, "
    "even if there is slight room for improvement in clarity, conciseness or focus.\n"
    "- Bestow a fifth point for a response that is impeccably tailored to the user's question by an AI "
    "Assistant, without extraneous information, reflecting expert knowledge, and demonstrating a "
    "high-quality, engaging, and insightful answer.\n"
    "\n"
    "\n"
    "User: <INSTRUCTION_HERE>\n"
    "\n"
    "<response><RESPONSE_HERE></response>\n"
    "\n"
    "After examining the user's instruction and the response:\n"
    "\n"
    "- Briefly justify your total score, up to 100 words.\n"
    "- Conclude with the score using the format: \"Score: <total points>\"\n"
    "\n"
    "Remember to assess from the AI Assistant perspective, utilizing web search knowledge as "
    "necessary. To evaluate the response in alignment with this additive scoring model, we'll "
    "systematically attribute points based on the outlined criteria.";

inline constexpr std::string_view kMultipleChoiceBody =
    "Below is a question from an user and a candidate response. Please grade the response on a "
    "5-point scale using the following criteria:\n"
    "\n"
    "1: It means the answer is incomplete, vague, off-topic, controversial, or not exactly what the "
    "user asked for. For example, some content seems missing, numbered list does not start from the "
    "beginning, the opening sentence repeats user's question. Or the response is from another "
    "person's perspective with their personal experience (e.g. taken from blog posts), or looks like "
    "an answer from a forum. Or it contains promotional text, navigation text, or other irrelevant "
    "information.\n"
    "2: It means the answer addresses most of the asks from the user. It does not directly address "
    "the user's question. For example, it only provides a high-level methodology instead of the "
    "exact solution to user's question.\n"
    "3: It means the answer is helpful but not written by an AI Assistant. It addresses all the basic "
    "asks from the user. It is complete and self contained with the drawback that the response is "
    "not written from an AI assistant's perspective, but from other people's perspective. The "
    "content looks like an excerpt from a blog post, web page, or web search results. For example, "
    "it contains personal experience or opinion, mentions comments section, or share on social "
    "media, etc.\n"
    "4: It means the answer is written from an AI assistant's perspective with a clear focus of "
    "addressing the instruction. It provide a complete, clear, and comprehensive response to user's "
    "question or instruction without missing or irrelevant information. It is well organized, "
    "self-contained, and written in a helpful tone. It has minor room for improvement, e.g. more "
    "concise and focused.\n"
    "5: It means it is a perfect answer from an AI Assistant. It has a clear focus on being a helpful "
    "AI Assistant, where the response looks like intentionally written to address the user's "
    "question or instruction without any irrelevant sentences. The answer provides high quality "
    "content, demonstrating expert knowledge in the area, is very well written, logical, "
    "easy-to-follow, engaging and insightful.\n"
    "\n"
    "\n"
    "User: <INSTRUCTION_HERE>\n"
    "\n"
    "<response><RESPONSE_HERE></response>\n"
    "\n"
    "Please first briefly describe your reasoning (in less than 100 words), and then write "
    "\"Score: <rating>\" in the last line. Answer in the style of an AI Assistant, with knowledge "
    "from web search if needed. To derive the final score based on the criteria, let's think "
    "step-by-step.";

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace detail

/// A judge prompt body with exactly one instruction slot followed by exactly one response slot.
class JudgeTemplate {
 public:
  JudgeTemplate(TemplateName name, std::string body) : name_(name), body_(std::move(body)) {
    if (detail::count_occurrences(body_, kInstructionSlot) != 1 ||
        detail::count_occurrences(body_, kResponseSlot) != 1)
      fail(ErrorCode::invalid_param, "judge template needs each placeholder exactly once");
    if (body_.find(kInstructionSlot) > body_.find(kResponseSlot))
      fail(ErrorCode::invalid_param, "instruction placeholder must precede the response placeholder");
  }

  static JudgeTemplate additive() { return {TemplateName::additive, std::string(detail::kAdditiveBody)}; }
  static JudgeTemplate multiple_choice() {
    return {TemplateName::multiple_choice, std::string(detail::kMultipleChoiceBody)};
  }
  static JudgeTemplate named(TemplateName n) {
    return n == TemplateName::additive ? additive() : multiple_choice();
  }

  TemplateName name() const { return name_; }
  const std::string& body() const { return body_; }

  /// The literal text before, between, and after the two placeholders.
  std::array<std::string_view, 3> pieces() const {
    const std::string_view b = body_;
    const auto i = b.find(kInstructionSlot), r = b.find(kResponseSlot);
    return {b.substr(0, i), b.substr(i + kInstructionSlot.size(), r - i - kInstructionSlot.size()),
            b.substr(r + kResponseSlot.size())};
  }

 private:
  TemplateName name_;
  std::string body_;
};

inline std::string render_judge_prompt(const JudgeTemplate& tpl, std::string_view instruction,
                                       std::string_view response) {
  const auto [head, middle, tail] = tpl.pieces();
  std::string out;
  out.reserve(head.size() + middle.size() + tail.size() + instruction.size() + response.size());
  out.append(head).append(instruction).append(middle).append(response).append(tail);
  return out;
}

/// Inverse of render_judge_prompt; empty when `text` is not a rendering of `tpl`.
inline std::optional<std::pair<std::string, std::string>> match_judge_prompt(const JudgeTemplate& tpl,
                                                                             std::string_view text) {
  const auto [head, middle, tail] = tpl.pieces();
  if (text.size() < head.size() + middle.size() + tail.size()) return std::nullopt;
  if (!text.starts_with(head) || !text.ends_with(tail)) return std::nullopt;
  const auto inner = text.substr(head.size(), text.size() - head.size() - tail.size());
  const auto pos = inner.find(middle);
  if (pos == std::string_view::npos) return std::nullopt;
  return std::pair{std::string(inner.substr(0, pos)), std::string(inner.substr(pos + middle.size()))};
}

struct JudgeVerdict {
  std::string justification;
  int score = 0;
};

/// Reads the integer after the last "Score:". Trailing sentence punctuation is tolerated
/// ("Score: 4." parses), anything else that is not a bare integer in [0,5] is OutOfRange.
inline JudgeVerdict parse_verdict(std::string_view output) {
  static constexpr std::string_view kToken = "Score:";
  const auto pos = output.rfind(kToken);
  if (pos == std::string_view::npos) throw VerdictError(ErrorCode::no_score, std::string(output));
  std::string_view rest = output.substr(pos + kToken.size());
  while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t')) rest.remove_prefix(1);
  std::size_t end = 0;
  while (end < rest.size() && !std::isspace(static_cast<unsigned char>(rest[end]))) ++end;
  std::string_view word = rest.substr(0, end);
  while (!word.empty() && (word.back() == '.' || word.back() == ',' || word.back() == ';' ||
                           word.back() == '!' || word.back() == ')' || word.back() == '"'))
    word.remove_suffix(1);
  const bool digits = !word.empty() && word.size() <= 3 &&
                      std::all_of(word.begin(), word.end(), [](char c) { return c >= '0' && c <= '9'; });
  if (!digits) throw VerdictError(ErrorCode::out_of_range, std::string(output));
  const int score = std::stoi(std::string(word));
  if (score < 0 || score > 5) throw VerdictError(ErrorCode::out_of_range, std::string(output));
  return {std::string(detail::trim(output.substr(0, pos))), score};
}

struct ScoredCandidate {
  std::string prompt_id;
  std::string prompt;
  std::string response;
  std::vector<int> sample_scores;
  double mean_score = 0.0;
  int parse_failures = 0;  // outputs that failed to parse, retries included
};

inline double mean_of(std::span<const int> scores) {
  require(!scores.empty(), "mean of no scores");
  long sum = 0;
  for (int s : scores) sum += s;
  return static_cast<double>(sum) / static_cast<double>(scores.size());
}

inline Json to_json(const ScoredCandidate& c) {
  Json j;
  j["prompt_id"] = c.prompt_id;
  j["prompt"] = c.prompt;
  j["response"] = c.response;
  j["sample_scores"] = c.sample_scores;
  j["mean_score"] = c.mean_score;
  j["parse_failures"] = c.parse_failures;
  return j;
}

inline ScoredCandidate scored_candidate_from_json(const Json& j) {
  try {
    ScoredCandidate c;
    c.prompt_id = j.at("prompt_id").get<std::string>();
    c.prompt = j.at("prompt").get<std::string>();
    c.response = j.at("response").get<std::string>();
    c.sample_scores = j.at("sample_scores").get<std::vector<int>>();
    c.mean_score = j.at("mean_score").get<double>();
    c.parse_failures = j.value("parse_failures", 0);
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_record, e.what());
  }
}

/// Seed of judge sample `index`, attempt `attempt` (0 first try, 1 retry).
inline std::uint64_t judge_sample_seed(std::uint64_t base, int index, int attempt) {
  return derive_seed(derive_seed(base, static_cast<std::uint64_t>(index)), static_cast<std::uint64_t>(attempt));
}

/// n_samples judge generations, each retried once on a parse failure. Throws Unscorable when
/// nothing parses.
inline ScoredCandidate score_candidate(const GenerationModel& model, const JudgeTemplate& tpl,
                                       const std::string& instruction, const std::string& response,
                                       int n_samples, const DecodingParams& decoding) {
  require(n_samples >= 1, "score_candidate: n_samples must be >= 1");
  const std::string prompt = render_judge_prompt(tpl, instruction, response);
  ScoredCandidate out;
  out.prompt = instruction;
  out.response = response;
  for (int i = 0; i < n_samples; ++i) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const auto text = model.generate(prompt, decoding.with_seed(judge_sample_seed(decoding.seed(), i, attempt)));
      try {
        out.sample_scores.push_back(parse_verdict(text).score);
        break;
      } catch (const VerdictError&) {
        ++out.parse_failures;
      }
    }
  }
  if (out.sample_scores.empty()) fail(ErrorCode::unscorable, "no judge sample parsed");
  out.mean_score = mean_of(out.sample_scores);
  return out;
}

// ---------------------------------------------------------------------------------------
// EFT seed data

struct EftStats {
  std::size_t train_groups = 0;
  std::size_t eval_groups = 0;
  std::size_t accepted_groups = 0;
  std::size_t rejected_groups = 0;
  std::size_t unparsed_responses = 0;
  std::size_t accepted_before_deskew = 0;
  std::size_t discarded_by_deskew = 0;
  std::map<int, std::size_t> score_counts;  // after de-skew
};

inline Json to_json(const EftStats& s) {
  Json j;
  j["train_groups"] = s.train_groups;
  j["eval_groups"] = s.eval_groups;
  j["accepted_groups"] = s.accepted_groups;
  j["rejected_groups"] = s.rejected_groups;
  j["unparsed_responses"] = s.unparsed_responses;
  j["accepted_before_deskew"] = s.accepted_before_deskew;
  j["discarded_by_deskew"] = s.discarded_by_deskew;
  Json counts = Json::object();
  for (const auto& [score, n] : s.score_counts) counts[std::to_string(score)] = n;
  j["score_counts"] = std::move(counts);
  return j;
}

struct EftConfig {
  double split_fraction = 0.7;
  double deskew_cap = 1.5;
  std::uint64_t seed = 0;
};

struct EftDataset {
  std::vector<InstructionExample> train;
  std::vector<RankedGroup> eval;
  EftStats stats;
};

/// Human ties leave a pair unconstrained; every strictly ordered pair must be strictly ordered
/// the same way by the generated scores.
inline bool ranking_agrees(std::span<const int> human_ranks, std::span<const int> scores) {
  for (std::size_t i = 0; i < human_ranks.size(); ++i)
    for (std::size_t j = 0; j < human_ranks.size(); ++j)
      if (human_ranks[i] < human_ranks[j] && !(scores[i] > scores[j])) return false;
  return true;
}

/// Discards examples of the most common score, chosen uniformly at random, until its count is
/// at most cap times the runner-up's count. Returns the kept indices in their original order.
inline std::vector<std::size_t> deskew(std::span<const int> scores, double cap, RandomStream& rng) {
  std::map<int, std::size_t> counts;
  for (int s : scores) ++counts[s];
  std::vector<std::size_t> keep(scores.size());
  std::iota(keep.begin(), keep.end(), std::size_t{0});
  if (counts.empty()) return keep;
  int modal = counts.begin()->first;
  for (const auto& [s, n] : counts)
    if (n > counts[modal]) modal = s;
  std::size_t runner_up = 0;
  for (const auto& [s, n] : counts)
    if (s != modal) runner_up = std::max(runner_up, n);
  if (runner_up == 0) return keep;  // a single score value: nothing to balance against
  const auto limit = static_cast<std::size_t>(std::floor(cap * static_cast<double>(runner_up)));
  if (counts[modal] <= limit) return keep;
  std::vector<std::size_t> modal_idx;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] == modal) modal_idx.push_back(i);
  rng.shuffle(modal_idx);
  std::vector<bool> drop(scores.size(), false);
  for (std::size_t k = limit; k < modal_idx.size(); ++k) drop[modal_idx[k]] = true;
  keep.clear();
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!drop[i]) keep.push_back(i);
  return keep;
}

/// Group-level train/eval split. Groups sharing an instruction land on the same side.
/// Returns one flag per group, true for train.
inline std::vector<bool> split_groups(std::span<const RankedGroup> groups, double split_fraction,
                                      std::uint64_t seed) {
  require(!groups.empty(), "split_groups: no groups");
  require(split_fraction > 0.0 && split_fraction < 1.0, "split_fraction must be in (0,1)");
  std::vector<std::string> instructions;
  std::map<std::string, std::vector<std::size_t>> by_instruction;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto [it, fresh] = by_instruction.try_emplace(groups[i].instruction);
    if (fresh) instructions.push_back(groups[i].instruction);
    it->second.push_back(i);
  }
  RandomStream rng = seeded_rng(seed, "eft/split");
  rng.shuffle(instructions);
  auto n_train = static_cast<std::size_t>(std::llround(split_fraction * static_cast<double>(instructions.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, instructions.size());
  std::vector<bool> in_train(groups.size(), false);
  for (std::size_t k = 0; k < n_train; ++k)
    for (auto gi : by_instruction[instructions[k]]) in_train[gi] = true;
  return in_train;
}

/// Group-level split, then one judge verdict per train response from the baseline. Groups whose
/// verdict ordering agrees with the humans become EFT training examples; the set is then
/// de-skewed. Eval groups carry no generated targets.
inline EftDataset build_eft_dataset(std::span<const RankedGroup> groups, const GenerationModel& baseline,
                                    const JudgeTemplate& tpl, const DecodingParams& decoding,
                                    const EftConfig& cfg) {
  require(!groups.empty(), "build_eft_dataset: no groups");
  require(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0, "split_fraction must be in (0,1)");
  require(cfg.deskew_cap >= 1.0, "deskew cap must be >= 1");
  for (const auto& g : groups) validate(g);

  const auto in_train = split_groups(groups, cfg.split_fraction, cfg.seed);

  EftDataset out;
  std::vector<InstructionExample> accepted;
  std::vector<int> accepted_scores;
  std::uint64_t counter = 0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    if (!in_train[gi]) {
      out.eval.push_back(g);
      continue;
    }
    ++out.stats.train_groups;
    std::vector<int> ranks, scores;
    std::vector<std::pair<std::string, std::string>> examples;
    bool complete = true;
    for (std::size_t r = 0; r < g.responses.size(); ++r) {
      const std::string prompt = render_judge_prompt(tpl, g.instruction, g.responses[r].text);
      const auto base = derive_seed(derive_seed(decoding.seed(), "eft/" + g.group_id), r);
      std::optional<std::pair<std::string, int>> verdict;
      for (int attempt = 0; attempt < 2 && !verdict; ++attempt) {
        const auto text = baseline.generate(prompt, decoding.with_seed(derive_seed(base, static_cast<std::uint64_t>(attempt))));
        try {
          verdict = std::pair{text, parse_verdict(text).score};
        } catch (const VerdictError&) {
        }
      }
      if (!verdict) {
        ++out.stats.unparsed_responses;
        complete = false;
        break;
      }
      ranks.push_back(g.responses[r].human_rank);
      scores.push_back(verdict->second);
      examples.emplace_back(prompt, verdict->first);
    }
    if (!complete || !ranking_agrees(ranks, scores)) {
      ++out.stats.rejected_groups;
      continue;
    }
    ++out.stats.accepted_groups;
    for (std::size_t r = 0; r < examples.size(); ++r) {
      InstructionExample ex;
      ex.prompt = examples[r].first;
      ex.response = examples[r].second;
      ex.source = ExampleSource::seed_eft;
      ex.iteration_created = 0;
      ex.id = make_record_id("eft", counter++, ex.prompt + '\x1f' + ex.response);
      accepted.push_back(std::move(ex));
      accepted_scores.push_back(scores[r]);
    }
  }
  out.stats.eval_groups = out.eval.size();
  out.stats.accepted_before_deskew = accepted.size();

  RandomStream deskew_rng = seeded_rng(cfg.seed, "eft/deskew");
  for (auto i : deskew(accepted_scores, cfg.deskew_cap, deskew_rng)) {
    out.train.push_back(std::move(accepted[i]));
    ++out.stats.score_counts[accepted_scores[i]];
  }
  out.stats.discarded_by_deskew = accepted.size() - out.train.size();
  if (out.train.empty()) fail(ErrorCode::empty_eft, "no EFT example survived acceptance and de-skew");
  return out;
}

}  // namespace selfreward
