#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "selfreward/errors.hpp"
#include "selfreward/json_io.hpp"

namespace selfreward {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace detail

enum class ExampleSource { seed_ift, seed_eft, aift, model_generated };

inline std::string_view to_string(ExampleSource s) {
  switch (s) {
    case ExampleSource::seed_ift: return "seed_ift";
    case ExampleSource::seed_eft: return "seed_eft";
    case ExampleSource::aift: return "aift";
    case ExampleSource::model_generated: return "model_generated";
  }
  return "?";
}

inline ExampleSource parse_source(std::string_view s) {
  if (s == "seed_ift") return ExampleSource::seed_ift;
  if (s == "seed_eft") return ExampleSource::seed_eft;
  if (s == "aift") return ExampleSource::aift;
  if (s == "model_generated") return ExampleSource::model_generated;
  fail(ErrorCode::invalid_record, "unknown source '" + std::string(s) + "'");
}

/// One (prompt, response) training record with its lineage.
struct InstructionExample {
  std::string id;
  std::string prompt;
  std::string response;
  ExampleSource source = ExampleSource::seed_ift;
  int iteration_created = 0;

  friend bool operator==(const InstructionExample&, const InstructionExample&) = default;
};

inline void validate(const InstructionExample& ex) {
  if (ex.id.empty()) fail(ErrorCode::invalid_record, "empty id");
  if (ex.prompt.empty()) fail(ErrorCode::invalid_record, "empty prompt in " + ex.id);
  if (ex.iteration_created < 0) fail(ErrorCode::invalid_record, "negative iteration in " + ex.id);
  const bool needs_response =
      ex.source == ExampleSource::seed_ift || ex.source == ExampleSource::aift;
  if (needs_response && ex.response.empty())
    fail(ErrorCode::invalid_record, "empty response in " + ex.id);
}

inline Json to_json(const InstructionExample& ex) {
  Json j;
  j["id"] = ex.id;
  j["prompt"] = ex.prompt;
  j["response"] = ex.response;
  j["source"] = std::string(to_string(ex.source));
  j["iteration_created"] = ex.iteration_created;
  return j;
}

inline InstructionExample example_from_json(const Json& j) {
  try {
    InstructionExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.prompt = j.at("prompt").get<std::string>();
    ex.response = j.at("response").get<std::string>();
    ex.source = parse_source(j.at("source").get<std::string>());
    ex.iteration_created = j.at("iteration_created").get<int>();
    return ex;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_record, e.what());
  }
}

struct RankedResponse {
  std::string text;
  int human_rank = 0;  // lower is better, ties allowed

  friend bool operator==(const RankedResponse&, const RankedResponse&) = default;
};

/// Several human-ranked responses to one instruction.
struct RankedGroup {
  std::string group_id;
  std::string instruction;
  std::vector<RankedResponse> responses;

  friend bool operator==(const RankedGroup&, const RankedGroup&) = default;
};

inline void validate(const RankedGroup& g) {
  if (g.group_id.empty()) fail(ErrorCode::invalid_record, "empty group id");
  if (g.responses.size() < 2) fail(ErrorCode::invalid_record, "group " + g.group_id + " has < 2 responses");
  for (const auto& r : g.responses)
    if (r.human_rank < 0) fail(ErrorCode::invalid_record, "negative rank in " + g.group_id);
}

inline Json to_json(const RankedGroup& g) {
  Json j;
  j["group_id"] = g.group_id;
  j["instruction"] = g.instruction;
  Json rs = Json::array();
  for (const auto& r : g.responses) {
    Json e;
    e["text"] = r.text;
    e["human_rank"] = r.human_rank;
    rs.push_back(std::move(e));
  }
  j["responses"] = std::move(rs);
  return j;
}

inline RankedGroup group_from_json(const Json& j) {
  try {
    RankedGroup g;
    g.group_id = j.at("group_id").get<std::string>();
    g.instruction = j.at("instruction").get<std::string>();
    for (const auto& e : j.at("responses"))
      g.responses.push_back({e.at("text").get<std::string>(), e.at("human_rank").get<int>()});
    validate(g);
    return g;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_record, e.what());
  }
}

/// Sampling controls. max_tokens counts every generated token, including the end token.
class DecodingParams {
 public:
  DecodingParams(double temperature, double top_p, int max_tokens, std::uint64_t seed)
      : temperature_(temperature), top_p_(top_p), max_tokens_(max_tokens), seed_(seed) {
    if (!(temperature > 0.0) || !std::isfinite(temperature))
      fail(ErrorCode::invalid_param, "temperature must be > 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) fail(ErrorCode::invalid_param, "top_p must be in (0,1]");
    if (max_tokens < 0) fail(ErrorCode::invalid_param, "max_tokens must be >= 0");
  }

  double temperature() const { return temperature_; }
  double top_p() const { return top_p_; }
  int max_tokens() const { return max_tokens_; }
  std::uint64_t seed() const { return seed_; }

  DecodingParams with_seed(std::uint64_t seed) const {
    return {temperature_, top_p_, max_tokens_, seed};
  }

  friend bool operator==(const DecodingParams&, const DecodingParams&) = default;

 private:
  double temperature_;
  double top_p_;
  int max_tokens_;
  std::uint64_t seed_;
};

/// Deterministic id: readable prefix, monotonic counter, content-hash suffix.
inline std::string make_record_id(std::string_view prefix, std::uint64_t counter,
                                  std::string_view content) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(counter));
  return std::string(prefix) + "-" + buf + "-" + hex64(fnv1a64(content)).substr(0, 8);
}

/// Append-only JSONL store for records that carry a unique id. Single writer.
template <class Record>
class JsonlStore {
 public:
  explicit JsonlStore(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) {
      for (const auto& j : read_jsonl(path_)) ids_.insert(j.at("id").get<std::string>());
    } else if (path_.has_parent_path()) {
      std::filesystem::create_directories(path_.parent_path());
    }
  }

  const std::filesystem::path& path() const { return path_; }
  std::size_t size() const { return ids_.size(); }
  bool contains(const std::string& id) const { return ids_.contains(id); }

  std::string append(const Record& record) {
    validate(record);
    if (ids_.contains(record.id)) fail(ErrorCode::duplicate_id, record.id);
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) fail(ErrorCode::io_error, "cannot append to " + path_.string());
    const std::string line = canonical_dump(to_json(record)) + "\n";
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.flush();
    if (!out) fail(ErrorCode::io_error, "write failed for " + path_.string());
    ids_.insert(record.id);
    return record.id;
  }

 private:
  std::filesystem::path path_;
  std::unordered_set<std::string> ids_;
};

inline std::string dataset_append(JsonlStore<InstructionExample>& store,
                                  const InstructionExample& record) {
  return store.append(record);
}

inline std::vector<InstructionExample> read_examples(const std::filesystem::path& path) {
  std::vector<InstructionExample> out;
  for (const auto& j : read_jsonl(path)) out.push_back(example_from_json(j));
  return out;
}

inline void write_examples(const std::filesystem::path& path,
                           const std::vector<InstructionExample>& rows) {
  std::vector<Json> js;
  js.reserve(rows.size());
  for (const auto& r : rows) {
    validate(r);
    js.push_back(to_json(r));
  }
  write_jsonl(path, js);
}

inline std::vector<RankedGroup> read_groups(const std::filesystem::path& path) {
  std::vector<RankedGroup> out;
  for (const auto& j : read_jsonl(path)) out.push_back(group_from_json(j));
  return out;
}

inline void write_groups(const std::filesystem::path& path, const std::vector<RankedGroup>& groups) {
  std::vector<Json> js;
  for (const auto& g : groups) {
    validate(g);
    js.push_back(to_json(g));
  }
  write_jsonl(path, js);
}

/// Converter stub for foreign seed data: any JSONL whose rows carry a prompt and a
/// response under caller-chosen keys (e.g. "instruction"/"output"). Other keys are ignored.
inline std::vector<InstructionExample> import_examples(const std::filesystem::path& path,
                                                       const std::string& prompt_key,
                                                       const std::string& response_key,
                                                       ExampleSource source = ExampleSource::seed_ift) {
  std::vector<InstructionExample> out;
  std::uint64_t counter = 0;
  for (const auto& j : read_jsonl(path)) {
    InstructionExample ex;
    try {
      ex.prompt = j.at(prompt_key).get<std::string>();
      ex.response = j.at(response_key).get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::invalid_record, "row " + std::to_string(counter) + ": " + e.what());
    }
    ex.source = source;
    ex.id = make_record_id("imp", counter++, ex.prompt + '\x1f' + ex.response);
    validate(ex);
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::size_t count_lines(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return 0;
  return read_jsonl(path).size();
}

}  // namespace selfreward
