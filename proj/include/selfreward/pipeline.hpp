#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "selfreward/config.hpp"
#include "selfreward/eval.hpp"
#include "selfreward/manifest.hpp"
#include "selfreward/pairs.hpp"
#include "selfreward/toy_model.hpp"

namespace selfreward {

namespace fs = std::filesystem;

using LogFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------------------
// Stage building blocks. Each is usable on its own (the CLI calls them directly); the
// iteration loop below strings them together.

/// The world for a config. Its seed comes from the pipeline seed so one number pins a run.
inline synth::World world_for(const PipelineConfig& cfg) {
  auto w = cfg.world;
  w.seed = derive_seed(cfg.seed, "world");
  return synth::make_world(w);
}

inline std::vector<std::string> world_instructions(const synth::World& w) {
  std::vector<std::string> out;
  for (const auto& e : w.ift) out.push_back(e.prompt);
  for (const auto& g : w.groups) out.push_back(g.instruction);
  for (const auto& e : w.validation) out.push_back(e.prompt);
  for (const auto& e : w.test) out.push_back(e.prompt);
  return out;
}

/// Base model M0: next-token fitting of the pretraining corpus from a seeded init.
inline TrainResult<TinyLM> pretrain_base(const PipelineConfig& cfg, const synth::World& world) {
  const auto excluded = world_instructions(world);
  const auto corpus = synth::make_pretraining_corpus(cfg.corpus, derive_seed(cfg.seed, "corpus"), excluded);
  const auto data = encode_examples(corpus);
  auto lm = make_toy_lm(cfg.model.embed, cfg.model.hidden, derive_seed(cfg.seed, "init"));
  SftConfig opt;
  static_cast<OptimizerConfig&>(opt) = cfg.pretrain;
  opt.seed = derive_seed(cfg.seed, "train/pretrain");
  return train_sft(std::move(lm), std::span<const TokenExample>(data), opt);
}

/// Pairwise judge that scores both responses with `model` under the judge template and
/// prefers the higher mean. Presentation order does not matter to it.
inline PairwiseJudge self_pairwise_judge(const GenerationModel& model, const JudgeTemplate& tpl, int samples,
                                         const DecodingConfig& decoding, std::uint64_t seed) {
  return [&model, tpl, samples, decoding, seed](const std::string& prompt, const std::string& first,
                                                const std::string& second) {
    auto score = [&](const std::string& r) {
      const auto s = derive_seed(seed, prompt + '\x1f' + r);
      try {
        return score_candidate(model, tpl, prompt, r, samples, decoding.with_seed(s)).mean_score;
      } catch (const Error& e) {
        if (e.code() == ErrorCode::unscorable || e.code() == ErrorCode::unknown_token ||
            e.code() == ErrorCode::context_overflow)
          return -1.0;
        throw;
      }
    };
    const double a = score(first), b = score(second);
    if (a > b) return Preference::first;
    if (b > a) return Preference::second;
    return Preference::none;
  };
}

/// Early-stopping callback: arena of candidate snapshot against the current best on the
/// validation prompts. `judge_model` is only used with the self judge.
inline ArenaCallback<TinyLM> early_stop_callback(const PipelineConfig& cfg, std::span<const std::string> prompts,
                                                 const TinyLM* judge_model, std::string_view label) {
  std::vector<std::string> subset(prompts.begin(),
                                  prompts.begin() + static_cast<std::ptrdiff_t>(std::min(prompts.size(), cfg.early_stopping_prompts)));
  const auto decoding = cfg.candidate_decoding.with_seed(derive_seed(cfg.seed, "early-stop/" + std::string(label)));
  std::shared_ptr<ToyModel> judge_view;
  PairwiseJudge judge = synth::oracle_judge();
  if (cfg.early_stopping_judge == StopJudge::self) {
    require(judge_model != nullptr, "self early stopping needs a judge model");
    judge_view = std::make_shared<ToyModel>(*judge_model);
    judge = self_pairwise_judge(*judge_view, JudgeTemplate::named(cfg.judge_template), cfg.judge_samples,
                                cfg.judge_decoding, derive_seed(cfg.seed, "early-stop-judge"));
  }
  return [subset, decoding, judge, judge_view](const TinyLM& cand, const TinyLM& best) {
    return arena(ToyModel(cand), ToyModel(best), subset, judge, decoding).win_rate_a();
  };
}

/// Judge-score every response of the held-out groups and compute the ranking metrics.
/// Responses the model cannot score count as NaN (disagreeing with everything).
inline RankingMetrics reward_model_metrics(const GenerationModel& model, std::span<const RankedGroup> groups,
                                           const PipelineConfig& cfg) {
  const auto tpl = JudgeTemplate::named(cfg.judge_template);
  const auto base = derive_seed(cfg.seed, "rm-eval");
  std::vector<ScoredGroup> scored;
  for (const auto& g : groups) {
    ScoredGroup sg;
    for (std::size_t r = 0; r < g.responses.size(); ++r) {
      double s = std::numeric_limits<double>::quiet_NaN();
      try {
        s = score_candidate(model, tpl, g.instruction, g.responses[r].text, cfg.judge_samples,
                            cfg.judge_decoding.with_seed(derive_seed(derive_seed(base, g.group_id), r)))
                .mean_score;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::unscorable) throw;
      }
      sg.model_scores.push_back(s);
      sg.human_ranks.push_back(g.responses[r].human_rank);
    }
    scored.push_back(std::move(sg));
  }
  return compute_ranking_metrics(scored);
}

struct PromptBatch {
  std::vector<PromptCandidate> all;       // every generated candidate, verdict set
  std::vector<std::string> accepted;      // accepted texts in generation order
  Json counts = Json::object();
};

/// Few-shot prompt generation plus filtering. `pool` holds previously accepted generated
/// prompts and grows with this batch's acceptances.
inline PromptBatch generate_prompt_batch(const GenerationModel& generator, std::span<const InstructionExample> ift,
                                         std::vector<Demonstration>& pool, std::size_t count, int iteration,
                                         const PipelineConfig& cfg) {
  std::vector<Demonstration> seed_demos;
  seed_demos.reserve(ift.size());
  for (const auto& e : ift) seed_demos.push_back({e.id, e.prompt});
  PromptBatch out;
  std::map<std::string, long> verdicts;
  long unusable = 0;
  const std::string label = "prompts/" + std::to_string(iteration);
  for (std::size_t k = 0; k < count; ++k) {
    RandomStream rng = seeded_rng(derive_seed(cfg.seed, label), "context/" + std::to_string(k));
    const auto context = sample_fewshot_context(seed_demos, pool, rng);
    PromptCandidate c;
    try {
      c = generate_prompt(generator, context,
                          cfg.prompt_decoding.with_seed(derive_seed(derive_seed(cfg.seed, label), k)));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::empty_prompt) throw;
      ++unusable;
      continue;
    }
    c.id = make_record_id("p" + std::to_string(iteration), k, c.text);
    std::vector<std::string> existing;
    for (const auto& d : context) existing.push_back(d.prompt);
    existing.insert(existing.end(), out.accepted.begin(), out.accepted.end());
    c = filter_prompt(std::move(c), existing, cfg.filter);
    ++verdicts[std::string(to_string(c.filter_verdict))];
    if (c.filter_verdict == FilterVerdict::accepted) {
      out.accepted.push_back(c.text);
      pool.push_back({c.id, c.text});
    }
    out.all.push_back(std::move(c));
  }
  out.counts["generated"] = count;
  out.counts["empty"] = unusable;
  for (auto v : {FilterVerdict::accepted, FilterVerdict::rejected_similarity, FilterVerdict::rejected_keyword,
                 FilterVerdict::rejected_length})
    out.counts[std::string(to_string(v))] = verdicts[std::string(to_string(v))];
  return out;
}

struct JudgedBatch {
  std::vector<std::vector<ScoredCandidate>> per_prompt;  // surviving candidates, prompt order
  Json counts = Json::object();
};

/// N candidates per prompt from `model`, each judged by `model` itself. Prompts the model
/// cannot read and candidates the judge cannot score are dropped and counted.
inline JudgedBatch generate_and_judge(const GenerationModel& model, std::span<const std::string> prompts,
                                      int iteration, const PipelineConfig& cfg) {
  const auto tpl = JudgeTemplate::named(cfg.judge_template);
  const auto cand_base = derive_seed(cfg.seed, "candidates/" + std::to_string(iteration));
  const auto judge_base = derive_seed(cfg.seed, "judge/" + std::to_string(iteration));
  JudgedBatch out;
  long unreadable = 0, total = 0, unscorable = 0, parse_failures = 0, scored = 0;
  double score_sum = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::vector<std::string> responses;
    try {
      responses = generate_candidates(model, prompts[i], cfg.candidates_per_prompt,
                                      cfg.candidate_decoding.with_seed(derive_seed(cand_base, i)));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::unknown_token && e.code() != ErrorCode::context_overflow) throw;
      ++unreadable;
      continue;
    }
    std::vector<ScoredCandidate> group;
    for (std::size_t n = 0; n < responses.size(); ++n) {
      ++total;
      try {
        auto sc = score_candidate(model, tpl, prompts[i], responses[n], cfg.judge_samples,
                                  cfg.judge_decoding.with_seed(derive_seed(derive_seed(judge_base, i), n)));
        sc.prompt_id = make_record_id("q" + std::to_string(iteration), i, prompts[i]);
        parse_failures += sc.parse_failures;
        score_sum += sc.mean_score;
        ++scored;
        group.push_back(std::move(sc));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::unscorable && e.code() != ErrorCode::context_overflow &&
            e.code() != ErrorCode::unknown_token)
          throw;
        ++unscorable;
      }
    }
    out.per_prompt.push_back(std::move(group));
  }
  out.counts["prompts_unreadable"] = unreadable;
  out.counts["candidates"] = total;
  out.counts["candidates_unscorable"] = unscorable;
  out.counts["judge_parse_failures"] = parse_failures;
  out.counts["mean_score"] = scored > 0 ? score_sum / static_cast<double>(scored) : 0.0;
  return out;
}

struct PairBatch {
  std::vector<PreferencePair> pairs;
  Json counts = Json::object();
};

inline PairBatch build_pairs(const JudgedBatch& judged, int iteration) {
  PairBatch out;
  long too_few = 0, tied = 0;
  for (const auto& group : judged.per_prompt) {
    if (group.size() < 2) {
      ++too_few;
      continue;
    }
    if (auto p = build_pair(group, iteration))
      out.pairs.push_back(std::move(*p));
    else
      ++tied;
  }
  const auto considered = static_cast<long>(judged.per_prompt.size());
  out.counts["pairs_built"] = out.pairs.size();
  out.counts["pairs_discarded_tie"] = tied;
  out.counts["prompts_too_few_candidates"] = too_few;
  out.counts["pair_discard_rate"] =
      considered > 0 ? static_cast<double>(tied + too_few) / static_cast<double>(considered) : 0.0;
  return out;
}

inline std::vector<TokenPair> encode_pairs(std::span<const PreferencePair> pairs, const ToyCodec& codec = toy_codec()) {
  std::vector<TokenPair> out;
  for (const auto& p : pairs) {
    const auto enc = codec.encode_prompt(p.prompt);
    out.push_back({enc.tokens, codec.encode_response(p.winner, enc.mode), codec.encode_response(p.loser, enc.mode)});
  }
  return out;
}

// ---------------------------------------------------------------------------------------
// Run directory and the iteration loop.

inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kConfigFile = "config.json";

inline std::string checkpoint_file(int iteration) { return "checkpoints/M" + std::to_string(iteration) + ".ckpt"; }
inline constexpr std::string_view kBaselineCheckpoint = "checkpoints/sft_baseline.ckpt";

struct RunOptions {
  fs::path root = "runs";
  bool use_cache = true;  // share M0, the SFT baseline and EFT data between runs in `root`
  LogFn log;
};

namespace detail {

inline void write_train_log(const fs::path& path, const std::vector<Json>& log) { write_jsonl(path, log); }

inline Json train_summary(const TrainResult<TinyLM>& r) {
  Json j;
  j["snapshot_steps"] = r.snapshot_steps;
  j["chosen_step"] = r.snapshot_steps.at(r.chosen);
  j["final_loss"] = r.log.empty() ? 0.0 : r.log.back().at("loss").get<double>();
  return j;
}

inline Json metrics_json(const RankingMetrics& m) { return to_json(m); }

inline void copy_file(const fs::path& from, const fs::path& to) {
  fs::create_directories(to.parent_path());
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

// Config fields that determine M0, the baseline and the EFT data.
inline Json shared_stage_key(const PipelineConfig& cfg, const std::string& world_digest) {
  const auto full = to_json(cfg);
  Json k;
  k["world_digest"] = world_digest;
  for (const char* f : {"seed", "judge_template", "early_stopping_judge", "early_stopping_prompts", "judge_samples",
                        "corpus", "model", "pretrain", "sft", "eft"})
    k[f] = full.at(f);
  k["candidate_decoding"] = full.at("decoding").at("candidate");
  k["judge_decoding"] = full.at("decoding").at("judge");
  k["eft_decoding"] = full.at("decoding").at("eft_generation");
  return k;
}

}  // namespace detail

/// Base model, SFT baseline, and EFT split, computed once per (config, world) and cached.
struct SharedStages {
  TinyLM m0;
  CheckpointMeta m0_meta;
  TinyLM baseline;
  CheckpointMeta baseline_meta;
  std::vector<InstructionExample> eft_train;
  std::vector<RankedGroup> eft_eval;
  Json info;  // EFT stats, training summaries, baseline RM metrics
};

inline SharedStages compute_shared_stages(const PipelineConfig& cfg, const synth::World& world, const fs::path& dir,
                                          const LogFn& log) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  Json info;
  say("pretraining M0");
  auto pre = pretrain_base(cfg, world);
  CheckpointMeta m0_meta{make_checkpoint_id(0, pre.policy.parameters()), 0, "", Json::object()};
  m0_meta.training_manifest["corpus_docs"] = cfg.corpus.n_docs;
  save_checkpoint(dir / "M0.ckpt", pre.policy, m0_meta);
  detail::write_train_log(dir / "train_pretrain.jsonl", pre.log);
  info["pretrain"] = detail::train_summary(pre);

  say("SFT baseline on IFT");
  const auto val_prompts = synth::prompts_of(world.validation);
  const auto ift_tokens = encode_examples(world.ift);
  auto sft_cfg = cfg.sft;
  sft_cfg.seed = derive_seed(cfg.seed, "train/baseline");
  auto base = train_sft(pre.policy, std::span<const TokenExample>(ift_tokens), sft_cfg,
                        early_stop_callback(cfg, val_prompts, &pre.policy, "baseline"));
  CheckpointMeta base_meta{make_checkpoint_id(1, base.policy.parameters()), 1, m0_meta.checkpoint_id, Json::object()};
  base_meta.training_manifest["ift"] = file_digest(dir / "world" / synth::kIftFile);
  save_checkpoint(dir / "sft_baseline.ckpt", base.policy, base_meta);
  detail::write_train_log(dir / "train_baseline.jsonl", base.log);
  info["baseline_train"] = detail::train_summary(base);

  say("building EFT data with the baseline as judge");
  EftConfig eft_cfg{cfg.eft_split, cfg.deskew_cap, derive_seed(cfg.seed, "eft")};
  const ToyModel base_view(base.policy);
  auto eft = build_eft_dataset(world.groups, base_view, JudgeTemplate::named(cfg.judge_template),
                               cfg.eft_decoding.with_seed(derive_seed(cfg.seed, "eft-gen")), eft_cfg);
  write_examples(dir / "eft_train.jsonl", eft.train);
  write_groups(dir / "eft_eval.jsonl", eft.eval);
  info["eft"] = to_json(eft.stats);
  info["baseline_rm"] = to_json(reward_model_metrics(base_view, eft.eval, cfg));
  write_file(dir / "shared.json", canonical_dump(info, 2) + "\n");
  return {std::move(pre.policy), m0_meta, std::move(base.policy), base_meta,
          std::move(eft.train), std::move(eft.eval), std::move(info)};
}

/// Loads the shared stages from `dir` when complete there, otherwise computes them into it.
inline SharedStages shared_stages(const PipelineConfig& cfg, const synth::World& world, const fs::path& dir,
                                  const LogFn& log) {
  if (fs::exists(dir / "shared.json")) {
    auto m0 = load_checkpoint(dir / "M0.ckpt");
    auto base = load_checkpoint(dir / "sft_baseline.ckpt");
    return {std::move(m0.lm), m0.meta, std::move(base.lm), base.meta, read_examples(dir / "eft_train.jsonl"),
            read_groups(dir / "eft_eval.jsonl"), parse_json(read_file(dir / "shared.json"))};
  }
  synth::write_world(dir / "world", world);
  return compute_shared_stages(cfg, world, dir, log);
}

/// The full self-rewarding chain. Writes everything under <root>/<run_id>/ and returns the
/// manifest. A failing stage leaves a failed entry in the saved manifest and rethrows.
inline RunManifest run_iteration_loop(const PipelineConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  auto say = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };
  const std::string run_id = run_id_for(cfg);
  const fs::path run_dir = opt.root / run_id;
  fs::remove_all(run_dir);
  fs::create_directories(run_dir);
  write_file(run_dir / kConfigFile, canonical_dump(to_json(cfg), 2) + "\n");

  RunManifest manifest;
  manifest.run_id = run_id;
  manifest.config_hash = config_hash(cfg);
  const auto save = [&] { save_manifest(run_dir / kManifestFile, manifest); };

  int current_iteration = 0;
  std::string current_stage = "world";
  try {
    say("[" + run_id + "] world");
    const auto world = world_for(cfg);
    synth::write_world(run_dir / "world", world);
    std::string world_digest;
    for (auto f : {synth::kIftFile, synth::kGroupsFile, synth::kValidationFile, synth::kTestFile})
      world_digest += file_digest(run_dir / "world" / f);

    current_stage = "shared";
    const auto key = digest_bytes(canonical_dump(detail::shared_stage_key(cfg, world_digest)));
    const fs::path shared_dir = opt.use_cache ? opt.root / "cache" / key : run_dir / "shared";
    const auto shared = shared_stages(cfg, world, shared_dir, opt.log);
    fs::create_directories(run_dir / "checkpoints");
    detail::copy_file(shared_dir / "M0.ckpt", run_dir / checkpoint_file(0));
    detail::copy_file(shared_dir / "sft_baseline.ckpt", run_dir / kBaselineCheckpoint);
    for (auto f : {"eft_train.jsonl", "eft_eval.jsonl", "train_pretrain.jsonl", "train_baseline.jsonl"})
      detail::copy_file(shared_dir / f, run_dir / f);
    if (!opt.use_cache) fs::remove_all(shared_dir);

    std::vector<FileRecord> world_files;
    for (auto f : {synth::kIftFile, synth::kGroupsFile, synth::kValidationFile, synth::kTestFile})
      world_files.push_back(describe_file(run_dir, "world/" + std::string(f)));

    IterationEntry e0;
    e0.iteration = 0;
    e0.checkpoint_id = shared.m0_meta.checkpoint_id;
    e0.counts["corpus_docs"] = cfg.corpus.n_docs;
    e0.files = world_files;
    e0.files.push_back(describe_file(run_dir, checkpoint_file(0), false));
    e0.files.push_back(describe_file(run_dir, "train_pretrain.jsonl"));
    e0.metrics["train"] = shared.info.at("pretrain");
    manifest.add_entry(std::move(e0));

    manifest.extra["sft_baseline"] = Json{{"checkpoint_id", shared.baseline_meta.checkpoint_id},
                                          {"file", describe_file(run_dir, std::string(kBaselineCheckpoint), false).digest},
                                          {"rm", shared.info.at("baseline_rm")},
                                          {"train", shared.info.at("baseline_train")}};
    manifest.extra["eft"] = shared.info.at("eft");
    manifest.extra["published_learning_rates"] =
        Json{{"sft", {{"lr_start", 5.5e-6}, {"lr_end", 1.1e-6}}},
             {"dpo", {{"lr_start", 1e-6}, {"lr_end", 1e-7}}},
             {"lr_scale", {{"sft", cfg.sft.lr_scale}, {"dpo", cfg.dpo.lr_scale}}}};
    manifest.extra["published_reference_counts"] =
        Json{{"eft_train", 1630}, {"eft_eval", 541}, {"aift_m1", 3964}, {"aift_m2", 6942}};
    save();

    const auto val_prompts = synth::prompts_of(world.validation);
    const auto test_prompts = synth::prompts_of(world.test);
    const auto oracle = synth::oracle_judge();
    const auto arena_decoding = cfg.candidate_decoding.with_seed(derive_seed(cfg.seed, "arena/test"));
    const ToyModel baseline_view(shared.baseline);

    // M1
    current_iteration = 1;
    current_stage = "sft";
    std::vector<InstructionExample> seed_data = world.ift;
    if (cfg.use_eft_seed) seed_data.insert(seed_data.end(), shared.eft_train.begin(), shared.eft_train.end());
    TinyLM current = shared.baseline;
    std::string current_id = shared.baseline_meta.checkpoint_id;
    Json m1_train = shared.info.at("baseline_train");
    if (cfg.use_eft_seed) {
      say("[" + run_id + "] M1: SFT on IFT+EFT");
      const auto tokens = encode_examples(seed_data);
      auto sft_cfg = cfg.sft;
      sft_cfg.seed = derive_seed(cfg.seed, "train/m1");
      auto r = train_sft(shared.m0, std::span<const TokenExample>(tokens), sft_cfg,
                         early_stop_callback(cfg, val_prompts, &shared.m0, "m1"));
      detail::write_train_log(run_dir / "train_M1.jsonl", r.log);
      m1_train = detail::train_summary(r);
      current = std::move(r.policy);
      current_id = make_checkpoint_id(1, current.parameters());
    } else {
      say("[" + run_id + "] M1: the IFT-only SFT baseline");
      detail::copy_file(run_dir / "train_baseline.jsonl", run_dir / "train_M1.jsonl");
    }
    CheckpointMeta m1_meta{current_id, 1, shared.m0_meta.checkpoint_id, Json::object()};
    m1_meta.training_manifest["ift"] = file_digest(run_dir / "world" / synth::kIftFile);
    if (cfg.use_eft_seed) m1_meta.training_manifest["eft_train"] = file_digest(run_dir / "eft_train.jsonl");
    save_checkpoint(run_dir / checkpoint_file(1), current, m1_meta);

    current_stage = "eval";
    IterationEntry e1;
    e1.iteration = 1;
    e1.checkpoint_id = current_id;
    e1.parent_id = shared.m0_meta.checkpoint_id;
    e1.counts["ift"] = world.ift.size();
    e1.counts["eft_train"] = cfg.use_eft_seed ? shared.eft_train.size() : 0;
    e1.files.push_back(describe_file(run_dir, "eft_train.jsonl"));
    e1.files.push_back(describe_file(run_dir, "eft_eval.jsonl"));
    e1.files.push_back(describe_file(run_dir, checkpoint_file(1), false));
    e1.files.push_back(describe_file(run_dir, "train_M1.jsonl"));
    e1.metrics["train"] = m1_train;
    e1.metrics["rm"] = to_json(reward_model_metrics(ToyModel(current), shared.eft_eval, cfg));
    e1.metrics["arena_vs_baseline"] =
        to_json(arena(ToyModel(current), baseline_view, test_prompts, oracle, arena_decoding));
    manifest.add_entry(std::move(e1));
    save();

    const std::unique_ptr<GenerationModel> fixed_generator =
        std::make_unique<synth::ProgrammaticPromptGenerator>(cfg.generator_junk_rate);
    std::vector<Demonstration> pool;
    std::vector<PreferencePair> history;
    std::vector<InstructionExample> positives_history;

    for (int t = 1; t < cfg.iterations; ++t) {
      current_iteration = t + 1;
      const std::string ts = std::to_string(t);
      IterationEntry e;
      e.iteration = t + 1;
      e.parent_id = current_id;
      const ToyModel current_view(current);

      current_stage = "gen-prompts";
      say("[" + run_id + "] iteration " + ts + ": prompts");
      const GenerationModel& generator =
          cfg.prompt_source == PromptSource::fixed ? *fixed_generator : static_cast<const GenerationModel&>(current_view);
      auto prompts = generate_prompt_batch(generator, world.ift, pool, cfg.prompts_per_iteration, t, cfg);
      {
        std::vector<Json> rows;
        for (const auto& c : prompts.all) rows.push_back(to_json(c));
        write_jsonl(run_dir / ("prompts_iter" + ts + ".jsonl"), rows);
      }
      e.counts["prompts"] = prompts.counts;
      e.files.push_back(describe_file(run_dir, "prompts_iter" + ts + ".jsonl"));

      current_stage = "judge";
      say("[" + run_id + "] iteration " + ts + ": candidates and self-judging");
      const auto judged = generate_and_judge(current_view, prompts.accepted, t, cfg);
      {
        std::vector<Json> rows;
        for (const auto& g : judged.per_prompt)
          for (const auto& c : g) rows.push_back(to_json(c));
        write_jsonl(run_dir / ("candidates_iter" + ts + ".jsonl"), rows);
      }
      e.counts["candidates"] = judged.counts;
      e.files.push_back(describe_file(run_dir, "candidates_iter" + ts + ".jsonl"));

      TrainResult<TinyLM> trained{current, {}, 0, {}};
      Json training_manifest = Json::object();
      if (cfg.variant == Variant::dpo_pairs) {
        current_stage = "build-pairs";
        auto pb = build_pairs(judged, t);
        std::vector<PreferencePair> kept = std::move(pb.pairs);
        long duplicates = 0;
        if (cfg.dedup) {
          auto aift = assemble_aift(kept, t, run_dir);
          duplicates = static_cast<long>(aift.duplicates);
          kept = std::move(aift.pairs);
          e.files.push_back(aift.file);
        } else {
          if (kept.empty()) fail(ErrorCode::empty_aift, "no preference pairs for iteration " + ts);
          std::vector<Json> rows;
          for (const auto& p : kept) rows.push_back(to_json(p));
          write_jsonl(run_dir / aift_file_name(t), rows);
          e.files.push_back(describe_file(run_dir, aift_file_name(t)));
        }
        pb.counts["pairs_duplicates"] = duplicates;
        pb.counts["aift_pairs"] = kept.size();
        e.counts["pairs"] = pb.counts;
        training_manifest[aift_file_name(t)] = e.files.back().digest;

        std::vector<PreferencePair> train_pairs = kept;
        if (cfg.replay_history) {
          train_pairs.insert(train_pairs.begin(), history.begin(), history.end());
          for (int s = 1; s < t; ++s)
            training_manifest[aift_file_name(s)] = file_digest(run_dir / aift_file_name(s));
        }
        history.insert(history.end(), kept.begin(), kept.end());

        current_stage = "train-dpo";
        say("[" + run_id + "] iteration " + ts + ": DPO on " + std::to_string(train_pairs.size()) + " pairs");
        const auto tokens = encode_pairs(train_pairs);
        auto dpo_cfg = cfg.dpo;
        dpo_cfg.seed = derive_seed(cfg.seed, "train/dpo/" + ts);
        trained = train_dpo(current, std::span<const TokenPair>(tokens), dpo_cfg,
                            early_stop_callback(cfg, val_prompts, &current, "dpo/" + ts));
      } else {
        current_stage = "select-positive";
        std::vector<InstructionExample> positives;
        for (const auto& g : judged.per_prompt) {
          auto p = select_positive_only(g, cfg.positive_threshold, t);
          positives.insert(positives.end(), p.begin(), p.end());
        }
        const std::string name = "positives_iter" + ts + ".jsonl";
        write_examples(run_dir / name, positives);
        e.files.push_back(describe_file(run_dir, name));
        e.counts["positives"] = positives.size();
        training_manifest[name] = e.files.back().digest;
        if (positives.empty() && positives_history.empty())
          fail(ErrorCode::empty_aift, "no perfect-score candidates for iteration " + ts);

        current_stage = "train-sft";
        std::vector<InstructionExample> data = seed_data;
        if (cfg.replay_history) data.insert(data.end(), positives_history.begin(), positives_history.end());
        data.insert(data.end(), positives.begin(), positives.end());
        positives_history.insert(positives_history.end(), positives.begin(), positives.end());
        say("[" + run_id + "] iteration " + ts + ": SFT with " + std::to_string(positives.size()) + " positives");
        const auto tokens = encode_examples(data);
        auto sft_cfg = cfg.sft;
        sft_cfg.seed = derive_seed(cfg.seed, "train/positive/" + ts);
        trained = train_sft(current, std::span<const TokenExample>(tokens), sft_cfg,
                            early_stop_callback(cfg, val_prompts, &current, "positive/" + ts));
      }
      const std::string log_name = "train_M" + std::to_string(t + 1) + ".jsonl";
      detail::write_train_log(run_dir / log_name, trained.log);

      current_stage = "checkpoint";
      const auto next_id = make_checkpoint_id(t + 1, trained.policy.parameters());
      save_checkpoint(run_dir / checkpoint_file(t + 1), trained.policy,
                      CheckpointMeta{next_id, t + 1, current_id, training_manifest});
      e.checkpoint_id = next_id;
      e.files.push_back(describe_file(run_dir, checkpoint_file(t + 1), false));
      e.files.push_back(describe_file(run_dir, log_name));
      e.metrics["train"] = detail::train_summary(trained);

      current_stage = "eval";
      say("[" + run_id + "] iteration " + ts + ": evaluation");
      const ToyModel next_view(trained.policy);
      e.metrics["rm"] = to_json(reward_model_metrics(next_view, shared.eft_eval, cfg));
      e.metrics["arena_vs_prev"] = to_json(arena(next_view, current_view, test_prompts, oracle, arena_decoding));
      e.metrics["arena_vs_baseline"] = to_json(arena(next_view, baseline_view, test_prompts, oracle, arena_decoding));
      manifest.add_entry(std::move(e));
      save();
      current = std::move(trained.policy);
      current_id = next_id;
    }
  } catch (const Error& err) {
    IterationEntry failed;
    failed.iteration = current_iteration;
    failed.status = "failed";
    failed.failed_stage = current_stage;
    failed.error = err.what();
    if (manifest.entries.empty() || manifest.entries.back().iteration < current_iteration) {
      manifest.add_entry(std::move(failed));
    } else {
      auto& last = manifest.entries.back();
      last.status = "failed";
      last.failed_stage = current_stage;
      last.error = err.what();
    }
    save();
    throw;
  }
  return manifest;
}

}  // namespace selfreward
