#pragma once

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "selfreward/judge.hpp"
#include "selfreward/model.hpp"
#include "selfreward/selfinstruct.hpp"
#include "selfreward/synthbench.hpp"
#include "selfreward/tiny_lm.hpp"

namespace selfreward {

/// What kind of text a prompt is, which decides how the toy model reads and writes it.
enum class PromptMode { instruction, judge_additive, judge_multiple_choice, write_task };

/// Text <-> token mapping for the toy model on the synthbench world.
///
/// Prompt layout (17 slots): mode marker, task family, six payload letters, and nine slots for
/// the response under judgment. Instructions leave the marker and response slots empty. A task
/// list is read as its last demonstration. Judge verdicts come out as "<own answer> Score: k".
class ToyCodec {
 public:
  static constexpr TokenId kPad = 0, kEos = 1, kJudge = 2, kJudgeMc = 3, kGen = 4, kScore = 5;
  static constexpr std::size_t kPromptSlots = 17;
  static constexpr std::size_t kResponseSlotsInPrompt = 9;
  static constexpr std::size_t kResponseSlotStart = 2 + synth::kMaxPayload;  // after marker, family, payload
  static constexpr std::size_t kMaxSteps = 12;

  ToyCodec() {
    words_ = {"<pad>", "<eos>", "<judge>", "<judge_mc>", "<gen>", "Score:"};
    for (auto w : synth::kFamilyWords) words_.emplace_back(w);
    for (auto w : synth::kDigits) words_.emplace_back(w);
    for (auto w : synth::kLetters) words_.emplace_back(w);
    for (std::size_t i = 0; i < words_.size(); ++i) ids_.emplace(words_[i], static_cast<TokenId>(i));
  }

  std::size_t vocab_size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  /// Markers and padding are never generated.
  std::vector<bool> emittable() const {
    std::vector<bool> e(words_.size(), true);
    for (TokenId t : {kPad, kJudge, kJudgeMc, kGen}) e[static_cast<std::size_t>(t)] = false;
    return e;
  }

  std::string vocab_digest() const {
    std::string all;
    for (const auto& w : words_) all += w + '\n';
    return digest_bytes(all);
  }

  TinyLmDims dims(std::size_t embed, std::size_t hidden) const {
    return {vocab_size(), kPromptSlots, kMaxSteps, embed, hidden, kResponseSlotStart, kResponseSlotsInPrompt, 1};
  }

  TokenId token(std::string_view word) const {
    const auto it = ids_.find(std::string(word));
    if (it == ids_.end() || it->second == kPad || it->second == kEos)
      fail(ErrorCode::unknown_token, "'" + std::string(word) + "'");
    return it->second;
  }

  const std::string& word(TokenId t) const { return words_.at(static_cast<std::size_t>(t)); }

  struct EncodedPrompt {
    TokenSeq tokens;
    PromptMode mode = PromptMode::instruction;
  };

  EncodedPrompt encode_prompt(std::string_view text) const {
    EncodedPrompt out;
    out.tokens.assign(kPromptSlots, kPad);
    for (auto [tpl, mode, marker] : {std::tuple{&additive_, PromptMode::judge_additive, kJudge},
                                     std::tuple{&multiple_choice_, PromptMode::judge_multiple_choice, kJudgeMc}}) {
      if (auto m = match_judge_prompt(*tpl, text)) {
        out.mode = mode;
        out.tokens[0] = marker;
        put_task(out.tokens, require_task(m->first));
        const auto resp = split_whitespace(m->second);
        if (resp.size() > kResponseSlotsInPrompt)
          fail(ErrorCode::context_overflow, "judged response longer than 9 tokens");
        for (std::size_t i = 0; i < resp.size(); ++i) out.tokens[kResponseSlotStart + i] = token(resp[i]);
        return out;
      }
    }
    if (auto demos = parse_selfinstruct_prompt(text)) {
      out.mode = PromptMode::write_task;
      out.tokens[0] = kGen;
      if (!demos->empty())
        if (auto t = synth::parse_instruction(demos->back())) put_task(out.tokens, *t);
      return out;
    }
    put_task(out.tokens, require_task(text));
    return out;
  }

  /// Target tokens for training, end token appended.
  TokenSeq encode_response(std::string_view text, PromptMode mode) const {
    TokenSeq out;
    if (mode == PromptMode::write_task) {
      const auto t = require_task(text);
      out.push_back(token(synth::family_word(t.family)));
      for (const auto& w : t.payload) out.push_back(token(w));
    } else {
      for (const auto& w : split_whitespace(text)) out.push_back(token(w));
    }
    out.push_back(kEos);
    if (out.size() > kMaxSteps) fail(ErrorCode::context_overflow, "response longer than the model's output window");
    return out;
  }

  std::string decode_response(std::span<const TokenId> tokens, PromptMode mode) const {
    std::vector<std::string> ws;
    for (TokenId t : tokens) {
      if (t == kEos) break;
      ws.push_back(word(t));
    }
    if (mode == PromptMode::write_task && ws.size() >= 2) {
      const auto fam = std::find(synth::kFamilyWords.begin(), synth::kFamilyWords.end(), ws[0]);
      const bool letters = std::all_of(ws.begin() + 1, ws.end(), [](const auto& w) { return synth::is_letter(w); });
      if (fam != synth::kFamilyWords.end() && letters && ws.size() - 1 <= synth::kMaxPayload) {
        synth::TaskSpec t{synth::kFamilies[static_cast<std::size_t>(fam - synth::kFamilyWords.begin())],
                          {ws.begin() + 1, ws.end()}};
        return synth::render_instruction(t);
      }
    }
    return synth::join(ws);
  }

  TokenExample encode_example(std::string_view prompt, std::string_view response) const {
    auto p = encode_prompt(prompt);
    return {std::move(p.tokens), encode_response(response, p.mode)};
  }

 private:
  synth::TaskSpec require_task(std::string_view text) const {
    if (auto t = synth::parse_instruction(text)) return *t;
    const auto ws = split_whitespace(text);
    if (ws.size() > 3 + synth::kMaxPayload && synth::parse_instruction(synth::join(std::span(ws).first(3 + synth::kMaxPayload))))
      fail(ErrorCode::context_overflow, "payload longer than 6 tokens");
    fail(ErrorCode::unknown_token, "not a task instruction: '" + std::string(text.substr(0, 80)) + "'");
  }

  void put_task(TokenSeq& slots, const synth::TaskSpec& t) const {
    slots[1] = token(synth::family_word(t.family));
    for (std::size_t i = 0; i < t.payload.size(); ++i) slots[2 + i] = token(t.payload[i]);
  }

  std::vector<std::string> words_;
  std::map<std::string, TokenId> ids_;
  JudgeTemplate additive_ = JudgeTemplate::additive();
  JudgeTemplate multiple_choice_ = JudgeTemplate::multiple_choice();
};

inline const ToyCodec& toy_codec() {
  static const ToyCodec codec;
  return codec;
}

inline TinyLM make_toy_lm(std::size_t embed, std::size_t hidden, std::uint64_t init_seed) {
  const auto& codec = toy_codec();
  TinyLM lm(codec.dims(embed, hidden), ToyCodec::kEos, codec.emittable());
  lm.initialize(init_seed);
  return lm;
}

/// The toy policy behind the text interface. Holds a reference: the policy must outlive it.
class ToyModel final : public GenerationModel {
 public:
  explicit ToyModel(const TinyLM& lm, const ToyCodec& codec = toy_codec()) : lm_(lm), codec_(codec) {}

  std::string generate(std::string_view prompt, const DecodingParams& decoding) const override {
    const auto enc = codec_.encode_prompt(prompt);
    // One position of the output window is kept for the end token, so every generated text
    // can be encoded back as a training target.
    constexpr int cap = static_cast<int>(ToyCodec::kMaxSteps) - 1;
    DecodingParams d = decoding;
    if (d.max_tokens() > cap) d = DecodingParams(d.temperature(), d.top_p(), cap, d.seed());
    return codec_.decode_response(sample(lm_, enc.tokens, d), enc.mode);
  }

  const TinyLM& policy() const { return lm_; }

 private:
  const TinyLM& lm_;
  const ToyCodec& codec_;
};

inline std::vector<TokenExample> encode_examples(std::span<const InstructionExample> rows,
                                                 const ToyCodec& codec = toy_codec()) {
  std::vector<TokenExample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(codec.encode_example(r.prompt, r.response));
  return out;
}

// ---------------------------------------------------------------------------------------
// Checkpoints: one JSON header line, then the parameters as raw little-endian doubles.

struct CheckpointMeta {
  std::string checkpoint_id;
  int iteration = 0;
  std::string parent_id;  // empty for M0
  Json training_manifest = Json::object();
};

inline std::string params_digest(std::span<const double> params) {
  return digest_bytes({reinterpret_cast<const char*>(params.data()), params.size() * sizeof(double)});
}

inline std::string make_checkpoint_id(int iteration, std::span<const double> params) {
  return "M" + std::to_string(iteration) + "-" + params_digest(params).substr(0, 12);
}

inline void save_checkpoint(const std::filesystem::path& path, const TinyLM& lm, const CheckpointMeta& meta) {
  if ((meta.iteration == 0) != meta.parent_id.empty())
    fail(ErrorCode::invalid_record, "only iteration 0 may lack a parent");
  static_assert(sizeof(double) == 8 && std::endian::native == std::endian::little);
  Json h;
  h["format"] = "selfreward-checkpoint";
  h["version"] = 1;
  h["checkpoint_id"] = meta.checkpoint_id;
  h["iteration"] = meta.iteration;
  h["parent_id"] = meta.parent_id.empty() ? Json(nullptr) : Json(meta.parent_id);
  h["vocab_digest"] = toy_codec().vocab_digest();
  const auto& d = lm.dims();
  h["dims"] = Json{{"vocab", d.vocab}, {"prompt_slots", d.prompt_slots}, {"max_steps", d.max_steps},
                   {"embed", d.embed}, {"hidden", d.hidden}, {"compare_offset", d.compare_offset},
                   {"compare_len", d.compare_len}, {"compare_shift", d.compare_shift}};
  h["end_token"] = lm.end_token();
  h["emittable"] = lm.emittable();
  h["n_params"] = lm.parameters().size();
  h["params_digest"] = params_digest(lm.parameters());
  h["training_manifest"] = meta.training_manifest;
  std::string bytes = canonical_dump(h) + "\n";
  const auto p = lm.parameters();
  bytes.append(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(double));
  write_file(path, bytes);
}

struct LoadedCheckpoint {
  TinyLM lm;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::not_found, "checkpoint " + path.string());
  const std::string bytes = read_file(path);
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) fail(ErrorCode::invalid_record, "checkpoint header missing");
  const Json h = parse_json(std::string_view(bytes).substr(0, nl));
  if (h.value("format", "") != "selfreward-checkpoint" || h.value("version", 0) != 1)
    fail(ErrorCode::invalid_record, "unsupported checkpoint format");
  if (h.at("vocab_digest").get<std::string>() != toy_codec().vocab_digest())
    fail(ErrorCode::invalid_record, "checkpoint vocabulary does not match this build");
  const auto& jd = h.at("dims");
  TinyLmDims d{jd.at("vocab").get<std::size_t>(), jd.at("prompt_slots").get<std::size_t>(),
               jd.at("max_steps").get<std::size_t>(), jd.at("embed").get<std::size_t>(),
               jd.at("hidden").get<std::size_t>(), jd.at("compare_offset").get<std::size_t>(),
               jd.at("compare_len").get<std::size_t>(), jd.at("compare_shift").get<std::size_t>()};
  TinyLM lm(d, h.at("end_token").get<TokenId>(), h.at("emittable").get<std::vector<bool>>());
  const auto n = h.at("n_params").get<std::size_t>();
  if (lm.parameters().size() != n || bytes.size() - nl - 1 != n * sizeof(double))
    fail(ErrorCode::invalid_record, "checkpoint payload size mismatch");
  std::memcpy(lm.mutable_parameters().data(), bytes.data() + nl + 1, n * sizeof(double));
  if (params_digest(lm.parameters()) != h.at("params_digest").get<std::string>())
    fail(ErrorCode::invalid_record, "checkpoint payload digest mismatch");
  CheckpointMeta meta;
  meta.checkpoint_id = h.at("checkpoint_id").get<std::string>();
  meta.iteration = h.at("iteration").get<int>();
  meta.parent_id = h.at("parent_id").is_null() ? "" : h.at("parent_id").get<std::string>();
  meta.training_manifest = h.at("training_manifest");
  return {std::move(lm), std::move(meta)};
}

}  // namespace selfreward
