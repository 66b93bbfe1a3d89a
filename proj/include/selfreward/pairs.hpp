#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "selfreward/core.hpp"
#include "selfreward/judge.hpp"
#include "selfreward/manifest.hpp"

namespace selfreward {

struct PreferencePair {
  std::string prompt;
  std::string winner;
  std::string loser;
  double winner_score = 0.0;
  double loser_score = 0.0;
  int iteration = 0;

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

inline void validate(const PreferencePair& p) {
  if (!(p.winner_score > p.loser_score)) fail(ErrorCode::invalid_record, "winner_score must exceed loser_score");
  if (p.winner == p.loser) fail(ErrorCode::invalid_record, "winner and loser are identical");
  if (p.prompt.empty()) fail(ErrorCode::invalid_record, "empty prompt");
}

inline Json to_json(const PreferencePair& p) {
  Json j;
  j["prompt"] = p.prompt;
  j["winner"] = p.winner;
  j["loser"] = p.loser;
  j["winner_score"] = p.winner_score;
  j["loser_score"] = p.loser_score;
  j["iteration"] = p.iteration;
  return j;
}

inline PreferencePair pair_from_json(const Json& j) {
  try {
    PreferencePair p{j.at("prompt").get<std::string>(), j.at("winner").get<std::string>(),
                     j.at("loser").get<std::string>(),  j.at("winner_score").get<double>(),
                     j.at("loser_score").get<double>(), j.at("iteration").get<int>()};
    validate(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_record, e.what());
  }
}

inline std::vector<PreferencePair> read_pairs(const std::filesystem::path& path) {
  std::vector<PreferencePair> out;
  for (const auto& j : read_jsonl(path)) out.push_back(pair_from_json(j));
  return out;
}

/// (argmax, argmin) of the mean scores, lowest index on ties; empty when all means are equal.
inline std::optional<std::pair<std::size_t, std::size_t>> select_extremes(std::span<const double> means) {
  require(means.size() >= 2, "need at least two candidates");
  std::size_t hi = 0, lo = 0;
  for (std::size_t i = 1; i < means.size(); ++i) {
    if (means[i] > means[hi]) hi = i;
    if (means[i] < means[lo]) lo = i;
  }
  if (means[hi] == means[lo]) return std::nullopt;
  return std::pair{hi, lo};
}

/// Highest against lowest scoring candidate. Also empty when the two texts coincide, since
/// such a pair carries no preference.
inline std::optional<PreferencePair> build_pair(std::span<const ScoredCandidate> candidates, int iteration = 0) {
  require(candidates.size() >= 2, "build_pair: need at least two candidates");
  std::vector<double> means;
  for (const auto& c : candidates) {
    require(c.prompt == candidates.front().prompt, "build_pair: candidates for different prompts");
    means.push_back(c.mean_score);
  }
  const auto ext = select_extremes(means);
  if (!ext) return std::nullopt;
  const auto& w = candidates[ext->first];
  const auto& l = candidates[ext->second];
  if (w.response == l.response) return std::nullopt;
  return PreferencePair{w.prompt, w.response, l.response, w.mean_score, l.mean_score, iteration};
}

struct AiftResult {
  std::vector<PreferencePair> pairs;  // deduplicated, first occurrence order
  std::size_t duplicates = 0;
  FileRecord file;
};

inline std::string aift_file_name(int iteration) { return "aift_iter" + std::to_string(iteration) + ".jsonl"; }

/// Drops repeated (prompt, winner, loser) triples and writes aift_iter<t>.jsonl under `dir`.
inline AiftResult assemble_aift(std::span<const PreferencePair> pairs, int iteration,
                                const std::filesystem::path& dir) {
  if (pairs.empty()) fail(ErrorCode::empty_aift, "no preference pairs for iteration " + std::to_string(iteration));
  AiftResult out;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  std::vector<Json> rows;
  for (const auto& p : pairs) {
    validate(p);
    if (!seen.emplace(p.prompt, p.winner, p.loser).second) {
      ++out.duplicates;
      continue;
    }
    PreferencePair q = p;
    q.iteration = iteration;
    rows.push_back(to_json(q));
    out.pairs.push_back(std::move(q));
  }
  const auto name = aift_file_name(iteration);
  write_jsonl(dir / name, rows);
  out.file = describe_file(dir, name);
  return out;
}

/// Candidates at or above `threshold` as SFT examples.
inline std::vector<InstructionExample> select_positive_only(std::span<const ScoredCandidate> candidates,
                                                            double threshold = 5.0, int iteration = 0) {
  require(threshold > 0.0 && threshold <= 5.0, "threshold must be in (0,5]");
  std::vector<InstructionExample> out;
  std::uint64_t counter = 0;
  for (const auto& c : candidates) {
    if (!(c.mean_score >= threshold) || c.response.empty()) continue;
    InstructionExample ex;
    ex.prompt = c.prompt;
    ex.response = c.response;
    ex.source = ExampleSource::aift;
    ex.iteration_created = iteration;
    ex.id = make_record_id("pos" + std::to_string(iteration), counter++, c.prompt + '\x1f' + c.response);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace selfreward
