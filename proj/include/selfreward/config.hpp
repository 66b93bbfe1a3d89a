#pragma once

#include <string>
#include <string_view>

#include "selfreward/judge.hpp"
#include "selfreward/selfinstruct.hpp"
#include "selfreward/synthbench.hpp"
#include "selfreward/train.hpp"

namespace selfreward {

enum class PromptSource { fixed, current_model };
enum class Variant { dpo_pairs, positive_sft };
enum class StopJudge { oracle, self };

inline std::string_view to_string(PromptSource s) { return s == PromptSource::fixed ? "fixed" : "current_model"; }
inline std::string_view to_string(Variant v) { return v == Variant::dpo_pairs ? "dpo_pairs" : "positive_sft"; }
inline std::string_view to_string(StopJudge s) { return s == StopJudge::oracle ? "oracle" : "self"; }

inline PromptSource parse_prompt_source(std::string_view s) {
  if (s == "fixed") return PromptSource::fixed;
  if (s == "current_model" || s == "current") return PromptSource::current_model;
  fail(ErrorCode::config_error, "unknown prompt_source: " + std::string(s));
}
inline Variant parse_variant(std::string_view s) {
  if (s == "dpo_pairs") return Variant::dpo_pairs;
  if (s == "positive_sft") return Variant::positive_sft;
  fail(ErrorCode::config_error, "unknown variant: " + std::string(s));
}
inline StopJudge parse_stop_judge(std::string_view s) {
  if (s == "oracle") return StopJudge::oracle;
  if (s == "self") return StopJudge::self;
  fail(ErrorCode::config_error, "unknown early_stopping_judge: " + std::string(s));
}

struct DecodingConfig {
  double temperature = 0.7;
  double top_p = 0.9;
  int max_tokens = 12;

  DecodingParams with_seed(std::uint64_t seed) const { return {temperature, top_p, max_tokens, seed}; }
};

struct ModelConfig {
  std::size_t embed = 256;
  std::size_t hidden = 128;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  int iterations = 3;
  bool use_eft_seed = true;
  PromptSource prompt_source = PromptSource::fixed;
  std::size_t prompts_per_iteration = 400;
  int candidates_per_prompt = 4;
  int judge_samples = 3;
  TemplateName judge_template = TemplateName::additive;
  Variant variant = Variant::dpo_pairs;
  double positive_threshold = 5.0;
  bool replay_history = false;
  bool dedup = true;
  StopJudge early_stopping_judge = StopJudge::oracle;
  std::size_t early_stopping_prompts = 200;  // validation prompts used per comparison
  double generator_junk_rate = 0.05;

  FilterConfig filter;
  synth::WorldConfig world;  // world.seed is ignored; derived from seed
  synth::CorpusConfig corpus;
  ModelConfig model;
  OptimizerConfig pretrain;
  SftConfig sft;
  DpoConfig dpo;
  double eft_split = 0.7;
  double deskew_cap = 1.5;

  DecodingConfig prompt_decoding{0.6, 0.9, 12};
  DecodingConfig candidate_decoding{0.7, 0.9, 9};
  DecodingConfig judge_decoding{0.7, 0.9, 12};
  DecodingConfig eft_decoding{1.0, 1.0, 12};

  PipelineConfig() {
    pretrain.lr_start = 0.1;
    pretrain.lr_end = 0.01;
    pretrain.lr_scale = 1.0;
    pretrain.total_steps = 10000;
    pretrain.eval_every = 10000;
    pretrain.dropout = 0.0;
    pretrain.momentum = 0.9;
    pretrain.batch_size = 32;
  }

  void validate() const {
    if (iterations < 1) fail(ErrorCode::config_error, "iterations must be >= 1");
    if (candidates_per_prompt < 2) fail(ErrorCode::config_error, "candidates_per_prompt must be >= 2");
    if (judge_samples < 1) fail(ErrorCode::config_error, "judge_samples must be >= 1");
    if (prompts_per_iteration < 1) fail(ErrorCode::config_error, "prompts_per_iteration must be >= 1");
    if (!(positive_threshold > 0.0 && positive_threshold <= 5.0))
      fail(ErrorCode::config_error, "positive_threshold must be in (0,5]");
    if (early_stopping_prompts < 1) fail(ErrorCode::config_error, "early_stopping_prompts must be >= 1");
    if (!(generator_junk_rate >= 0.0 && generator_junk_rate <= 1.0))
      fail(ErrorCode::config_error, "generator_junk_rate must be in [0,1]");
    if (!(eft_split > 0.0 && eft_split < 1.0)) fail(ErrorCode::config_error, "eft_split must be in (0,1)");
    if (!(deskew_cap >= 1.0)) fail(ErrorCode::config_error, "deskew_cap must be >= 1");
    if (model.embed < 1 || model.hidden < 1) fail(ErrorCode::config_error, "model dims must be >= 1");
    if (world.n_ift < kFewshotSeed || world.n_eft_groups < 1 || world.n_validation < 1 || world.n_test < 1)
      fail(ErrorCode::config_error, "world sizes too small");
    try {
      filter.validate();
      for (const auto* d : {&prompt_decoding, &candidate_decoding, &judge_decoding, &eft_decoding})
        (void)d->with_seed(0);
    } catch (const Error& e) {
      fail(ErrorCode::config_error, e.what());
    }
    pretrain.validate();
    sft.validate();
    dpo.validate();
  }
};

namespace detail {

inline Json optimizer_json(const OptimizerConfig& o) {
  Json j;
  j["lr_start"] = o.lr_start;
  j["lr_end"] = o.lr_end;
  j["lr_scale"] = o.lr_scale;
  j["batch_size"] = o.batch_size;
  j["dropout"] = o.dropout;
  j["total_steps"] = o.total_steps;
  j["eval_every"] = o.eval_every;
  j["momentum"] = o.momentum;
  return j;
}

inline Json decoding_json(const DecodingConfig& d) {
  Json j;
  j["temperature"] = d.temperature;
  j["top_p"] = d.top_p;
  j["max_tokens"] = d.max_tokens;
  return j;
}

// Reads `key` into `out` when present; type errors become ConfigError.
template <class T>
void read_key(const Json& j, std::string_view key, T& out) {
  const std::string k(key);
  if (!j.contains(k)) return;
  try {
    out = j.at(k).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_error, "bad value for '" + k + "': " + e.what());
  }
}

inline void check_keys(const Json& j, std::string_view where, std::initializer_list<std::string_view> known) {
  if (!j.is_object()) fail(ErrorCode::config_error, std::string(where) + " must be an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (auto n : known) ok = ok || n == k;
    if (!ok) fail(ErrorCode::config_error, "unknown config key: " + std::string(where) + "." + k);
  }
}

inline void read_optimizer(const Json& j, std::string_view where, OptimizerConfig& o) {
  check_keys(j, where, {"lr_start", "lr_end", "lr_scale", "batch_size", "dropout", "total_steps", "eval_every",
                        "momentum", "beta"});
  read_key(j, "lr_start", o.lr_start);
  read_key(j, "lr_end", o.lr_end);
  read_key(j, "lr_scale", o.lr_scale);
  read_key(j, "batch_size", o.batch_size);
  read_key(j, "dropout", o.dropout);
  read_key(j, "total_steps", o.total_steps);
  read_key(j, "eval_every", o.eval_every);
  read_key(j, "momentum", o.momentum);
}

inline void read_decoding(const Json& j, std::string_view where, DecodingConfig& d) {
  check_keys(j, where, {"temperature", "top_p", "max_tokens"});
  read_key(j, "temperature", d.temperature);
  read_key(j, "top_p", d.top_p);
  read_key(j, "max_tokens", d.max_tokens);
}

template <class E, class Parse>
void read_enum(const Json& j, std::string_view key, E& out, Parse parse) {
  std::string s;
  read_key(j, key, s);
  if (!s.empty()) out = parse(s);
}

}  // namespace detail

inline Json to_json(const PipelineConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["iterations"] = c.iterations;
  j["use_eft_seed"] = c.use_eft_seed;
  j["prompt_source"] = to_string(c.prompt_source);
  j["prompts_per_iteration"] = c.prompts_per_iteration;
  j["candidates_per_prompt"] = c.candidates_per_prompt;
  j["judge_samples"] = c.judge_samples;
  j["judge_template"] = to_string(c.judge_template);
  j["variant"] = to_string(c.variant);
  j["positive_threshold"] = c.positive_threshold;
  j["replay_history"] = c.replay_history;
  j["dedup"] = c.dedup;
  j["early_stopping_judge"] = to_string(c.early_stopping_judge);
  j["early_stopping_prompts"] = c.early_stopping_prompts;
  j["generator_junk_rate"] = c.generator_junk_rate;

  Json f;
  f["rouge_l_threshold"] = c.filter.rouge_l_threshold;
  f["banned_keywords"] = c.filter.banned_keywords;
  f["min_tokens"] = c.filter.min_tokens;
  f["max_tokens"] = c.filter.max_tokens;
  j["filter"] = std::move(f);

  Json w;
  w["n_ift"] = c.world.n_ift;
  w["n_eft_groups"] = c.world.n_eft_groups;
  w["n_validation"] = c.world.n_validation;
  w["n_test"] = c.world.n_test;
  j["world"] = std::move(w);

  Json p;
  p["n_docs"] = c.corpus.n_docs;
  p["share_instruction"] = c.corpus.share_instruction;
  p["share_additive"] = c.corpus.share_additive;
  p["share_multiple_choice"] = c.corpus.share_multiple_choice;
  p["clean_answer_rate"] = c.corpus.clean_answer_rate;
  p["max_answer_corruption"] = c.corpus.max_answer_corruption;
  p["max_judged_corruption"] = c.corpus.max_judged_corruption;
  p["rating_skew"] = c.corpus.rating_skew;
  p["format_break"] = c.corpus.format_break;
  j["corpus"] = std::move(p);

  j["model"] = Json{{"embed", c.model.embed}, {"hidden", c.model.hidden}};
  j["pretrain"] = detail::optimizer_json(c.pretrain);
  j["sft"] = detail::optimizer_json(c.sft);
  auto dpo = detail::optimizer_json(c.dpo);
  dpo["beta"] = c.dpo.beta;
  j["dpo"] = std::move(dpo);
  j["eft"] = Json{{"split_fraction", c.eft_split}, {"deskew_cap", c.deskew_cap}};
  Json d;
  d["prompt"] = detail::decoding_json(c.prompt_decoding);
  d["candidate"] = detail::decoding_json(c.candidate_decoding);
  d["judge"] = detail::decoding_json(c.judge_decoding);
  d["eft_generation"] = detail::decoding_json(c.eft_decoding);
  j["decoding"] = std::move(d);
  return j;
}

/// Defaults overlaid with whatever `j` sets. Unknown keys are rejected so typos surface.
inline PipelineConfig config_from_json(const Json& j) {
  using detail::read_key;
  PipelineConfig c;
  detail::check_keys(j, "config",
                     {"seed", "iterations", "use_eft_seed", "prompt_source", "prompts_per_iteration",
                      "candidates_per_prompt", "judge_samples", "judge_template", "variant", "positive_threshold",
                      "replay_history", "dedup", "early_stopping_judge", "early_stopping_prompts",
                      "generator_junk_rate", "filter", "world", "corpus", "model", "pretrain", "sft", "dpo", "eft",
                      "decoding"});
  read_key(j, "seed", c.seed);
  read_key(j, "iterations", c.iterations);
  read_key(j, "use_eft_seed", c.use_eft_seed);
  detail::read_enum(j, "prompt_source", c.prompt_source, parse_prompt_source);
  read_key(j, "prompts_per_iteration", c.prompts_per_iteration);
  read_key(j, "candidates_per_prompt", c.candidates_per_prompt);
  read_key(j, "judge_samples", c.judge_samples);
  detail::read_enum(j, "judge_template", c.judge_template, [](std::string_view s) {
    try {
      return parse_template_name(s);
    } catch (const Error& e) {
      fail(ErrorCode::config_error, e.what());
    }
  });
  detail::read_enum(j, "variant", c.variant, parse_variant);
  read_key(j, "positive_threshold", c.positive_threshold);
  read_key(j, "replay_history", c.replay_history);
  read_key(j, "dedup", c.dedup);
  detail::read_enum(j, "early_stopping_judge", c.early_stopping_judge, parse_stop_judge);
  read_key(j, "early_stopping_prompts", c.early_stopping_prompts);
  read_key(j, "generator_junk_rate", c.generator_junk_rate);
  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    detail::check_keys(f, "filter", {"rouge_l_threshold", "banned_keywords", "min_tokens", "max_tokens"});
    read_key(f, "rouge_l_threshold", c.filter.rouge_l_threshold);
    read_key(f, "banned_keywords", c.filter.banned_keywords);
    read_key(f, "min_tokens", c.filter.min_tokens);
    read_key(f, "max_tokens", c.filter.max_tokens);
  }
  if (j.contains("world")) {
    const auto& w = j.at("world");
    detail::check_keys(w, "world", {"n_ift", "n_eft_groups", "n_validation", "n_test"});
    read_key(w, "n_ift", c.world.n_ift);
    read_key(w, "n_eft_groups", c.world.n_eft_groups);
    read_key(w, "n_validation", c.world.n_validation);
    read_key(w, "n_test", c.world.n_test);
  }
  if (j.contains("corpus")) {
    const auto& p = j.at("corpus");
    detail::check_keys(p, "corpus", {"n_docs", "share_instruction", "share_additive", "share_multiple_choice",
                                     "clean_answer_rate", "max_answer_corruption", "max_judged_corruption",
                                     "rating_skew", "format_break"});
    read_key(p, "n_docs", c.corpus.n_docs);
    read_key(p, "share_instruction", c.corpus.share_instruction);
    read_key(p, "share_additive", c.corpus.share_additive);
    read_key(p, "share_multiple_choice", c.corpus.share_multiple_choice);
    read_key(p, "clean_answer_rate", c.corpus.clean_answer_rate);
    read_key(p, "max_answer_corruption", c.corpus.max_answer_corruption);
    read_key(p, "max_judged_corruption", c.corpus.max_judged_corruption);
    read_key(p, "rating_skew", c.corpus.rating_skew);
    read_key(p, "format_break", c.corpus.format_break);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_keys(m, "model", {"embed", "hidden"});
    read_key(m, "embed", c.model.embed);
    read_key(m, "hidden", c.model.hidden);
  }
  if (j.contains("pretrain")) detail::read_optimizer(j.at("pretrain"), "pretrain", c.pretrain);
  if (j.contains("sft")) detail::read_optimizer(j.at("sft"), "sft", c.sft);
  if (j.contains("dpo")) {
    detail::read_optimizer(j.at("dpo"), "dpo", c.dpo);
    read_key(j.at("dpo"), "beta", c.dpo.beta);
  }
  if (j.contains("eft")) {
    const auto& e = j.at("eft");
    detail::check_keys(e, "eft", {"split_fraction", "deskew_cap"});
    read_key(e, "split_fraction", c.eft_split);
    read_key(e, "deskew_cap", c.deskew_cap);
  }
  if (j.contains("decoding")) {
    const auto& d = j.at("decoding");
    detail::check_keys(d, "decoding", {"prompt", "candidate", "judge", "eft_generation"});
    if (d.contains("prompt")) detail::read_decoding(d.at("prompt"), "decoding.prompt", c.prompt_decoding);
    if (d.contains("candidate")) detail::read_decoding(d.at("candidate"), "decoding.candidate", c.candidate_decoding);
    if (d.contains("judge")) detail::read_decoding(d.at("judge"), "decoding.judge", c.judge_decoding);
    if (d.contains("eft_generation"))
      detail::read_decoding(d.at("eft_generation"), "decoding.eft_generation", c.eft_decoding);
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::not_found, "config " + path.string());
  Json j;
  try {
    j = parse_json(read_file(path));
  } catch (const Error& e) {
    fail(ErrorCode::config_error, e.what());
  }
  return config_from_json(j);
}

inline std::string config_hash(const PipelineConfig& c) { return digest_bytes(canonical_dump(to_json(c))); }

inline std::string run_id_for(const PipelineConfig& c) { return "run-" + config_hash(c).substr(0, 12); }

}  // namespace selfreward
