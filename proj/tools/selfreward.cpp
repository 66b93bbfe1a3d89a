// Command-line front end. Every subcommand reads the same pipeline config (defaults when
// --config is absent) so the stage-by-stage path and `iterate` agree on hyperparameters.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include "selfreward/selfreward.hpp"

namespace sr = selfreward;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitNotFound = 4;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string judge_template;

  sr::PipelineConfig load() const {
    auto cfg = config_path.empty() ? sr::PipelineConfig{} : sr::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!judge_template.empty()) cfg.judge_template = sr::parse_template_name(judge_template);
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "pipeline config (JSON)");
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--judge-template", c.judge_template, "additive | multiple_choice");
}

// A generation backend: a local checkpoint, or the HTTP endpoint named by SELFREWARD_ENDPOINT
// when the checkpoint argument is the literal "endpoint".
struct Backend {
  std::optional<sr::LoadedCheckpoint> ckpt;
  std::unique_ptr<sr::GenerationModel> model;

  explicit Backend(const std::string& spec) {
    if (spec == "endpoint") {
      model = std::make_unique<sr::ExternalModel>(sr::endpoint_from_env());
    } else {
      ckpt = sr::load_checkpoint(spec);
      model = std::make_unique<sr::ToyModel>(ckpt->lm);
    }
  }
};

void print_json(const sr::Json& j) { std::cout << sr::canonical_dump(j, 2) << "\n"; }

void save_child(const fs::path& out, const sr::TinyLM& lm, const sr::CheckpointMeta& parent,
                sr::Json training_manifest) {
  const int it = parent.iteration + 1;
  sr::CheckpointMeta meta{sr::make_checkpoint_id(it, lm.parameters()), it, parent.checkpoint_id,
                          std::move(training_manifest)};
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  sr::save_checkpoint(out, lm, meta);
  std::cout << meta.checkpoint_id << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-rewarding language model loop on a synthetic task world"};
  app.require_subcommand(1);
  Common common;

  // config
  bool show_defaults = false;
  auto* c_config = app.add_subcommand("config", "print the default config or validate one");
  c_config->add_flag("--defaults", show_defaults, "print the built-in defaults");
  add_common(c_config, common);

  // make-world
  std::string world_out = "world";
  std::optional<std::size_t> n_ift, n_groups, n_val, n_test;
  auto* c_world = app.add_subcommand("make-world", "write the synthetic IFT / EFT / held-out files");
  add_common(c_world, common);
  c_world->add_option("--ift", n_ift);
  c_world->add_option("--eft-groups", n_groups);
  c_world->add_option("--validation", n_val);
  c_world->add_option("--test", n_test);
  c_world->add_option("--out", world_out);

  // train-sft
  std::string init_ckpt, out_ckpt, world_dir = "world";
  std::vector<std::string> data_files;
  bool pretrain = false;
  auto* c_sft = app.add_subcommand("train-sft", "pretrain M0, or SFT a checkpoint on instruction data");
  add_common(c_sft, common);
  c_sft->add_flag("--pretrain", pretrain, "train M0 from scratch on the synthetic corpus");
  c_sft->add_option("--init", init_ckpt, "checkpoint to start from");
  c_sft->add_option("--data", data_files, "instruction JSONL files (ift.jsonl, eft_train.jsonl)");
  c_sft->add_option("--world", world_dir);
  c_sft->add_option("--out", out_ckpt)->required();

  // gen-prompts
  std::size_t prompt_count = 0;
  std::optional<double> threshold;
  std::string prompt_source = "fixed", gen_ckpt, prompts_out;
  int iteration = 1;
  auto* c_prompts = app.add_subcommand("gen-prompts", "few-shot prompt generation plus filtering");
  add_common(c_prompts, common);
  c_prompts->add_option("--count", prompt_count);
  c_prompts->add_option("--threshold", threshold, "ROUGE-L rejection threshold");
  c_prompts->add_option("--prompt-source", prompt_source)->check(CLI::IsMember({"fixed", "current"}));
  c_prompts->add_option("--checkpoint", gen_ckpt, "model for --prompt-source current");
  c_prompts->add_option("--world", world_dir);
  c_prompts->add_option("--iteration", iteration);
  c_prompts->add_option("--out", prompts_out);

  // gen-candidates
  std::string model_spec, prompts_in, cand_out;
  auto* c_cands = app.add_subcommand("gen-candidates", "N sampled responses per accepted prompt");
  add_common(c_cands, common);
  c_cands->add_option("--checkpoint", model_spec, "checkpoint file or 'endpoint'")->required();
  c_cands->add_option("--prompts", prompts_in)->required();
  c_cands->add_option("--iteration", iteration);
  c_cands->add_option("--out", cand_out);

  // judge
  std::string cand_in, scored_out;
  auto* c_judge = app.add_subcommand("judge", "score candidates with the model as its own judge");
  add_common(c_judge, common);
  c_judge->add_option("--checkpoint", model_spec, "checkpoint file or 'endpoint'")->required();
  c_judge->add_option("--candidates", cand_in)->required();
  c_judge->add_option("--iteration", iteration);
  c_judge->add_option("--out", scored_out);

  // build-pairs
  std::string scored_in, pairs_dir = ".";
  auto* c_pairs = app.add_subcommand("build-pairs", "highest vs lowest scored candidate per prompt");
  add_common(c_pairs, common);
  c_pairs->add_option("--scored", scored_in)->required();
  c_pairs->add_option("--iteration", iteration);
  c_pairs->add_option("--out-dir", pairs_dir);

  // train-dpo
  std::vector<std::string> pair_files;
  auto* c_dpo = app.add_subcommand("train-dpo", "DPO from a checkpoint, reference = that checkpoint");
  add_common(c_dpo, common);
  c_dpo->add_option("--init", init_ckpt)->required();
  c_dpo->add_option("--pairs", pair_files)->required();
  c_dpo->add_option("--world", world_dir);
  c_dpo->add_option("--out", out_ckpt)->required();

  // eval-rm
  std::string eft_eval;
  auto* c_rm = app.add_subcommand("eval-rm", "reward-modeling metrics on held-out ranked groups");
  add_common(c_rm, common);
  c_rm->add_option("--eft-eval", eft_eval)->required();
  c_rm->add_option("--checkpoint", model_spec, "checkpoint file or 'endpoint'")->required();

  // arena
  std::string ckpt_a, ckpt_b, arena_prompts, judge_kind = "oracle", judge_ckpt;
  auto* c_arena = app.add_subcommand("arena", "order-swapped head-to-head comparison");
  add_common(c_arena, common);
  c_arena->add_option("--a", ckpt_a)->required();
  c_arena->add_option("--b", ckpt_b)->required();
  c_arena->add_option("--prompts", arena_prompts, "instruction JSONL (prompt field)")->required();
  c_arena->add_option("--judge", judge_kind)->check(CLI::IsMember({"self", "oracle", "endpoint"}));
  c_arena->add_option("--judge-checkpoint", judge_ckpt, "judge for --judge self (default: --a)");

  // iterate
  std::string root = "runs";
  bool no_cache = false, quiet = false;
  auto* c_iter = app.add_subcommand("iterate", "the full M0 -> M1 -> ... -> MT loop");
  add_common(c_iter, common);
  c_iter->add_option("--root", root);
  c_iter->add_flag("--no-cache", no_cache, "recompute M0 and the SFT baseline");
  c_iter->add_flag("--quiet", quiet);

  // report
  std::string run_id;
  auto* c_report = app.add_subcommand("report", "per-iteration tables for a run");
  c_report->add_option("run_id", run_id, "run id (default: the only run under --root)");
  c_report->add_option("--root", root);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (c_config->parsed()) {
      // --defaults ignores --config; otherwise the effective (validated) config is printed.
      print_json(sr::to_json(show_defaults ? sr::PipelineConfig{} : common.load()));
      return 0;
    }

    if (c_report->parsed()) {
      if (run_id.empty()) {
        const auto ids = sr::list_runs(root);
        if (ids.empty()) sr::fail(sr::ErrorCode::not_found, "no runs under " + root);
        if (ids.size() > 1) sr::fail(sr::ErrorCode::invalid_param, "several runs under " + root + "; name one");
        run_id = ids.front();
      }
      std::cout << sr::report(root, run_id);
      return 0;
    }

    auto cfg = common.load();

    if (c_world->parsed()) {
      if (n_ift) cfg.world.n_ift = *n_ift;
      if (n_groups) cfg.world.n_eft_groups = *n_groups;
      if (n_val) cfg.world.n_validation = *n_val;
      if (n_test) cfg.world.n_test = *n_test;
      cfg.validate();
      const auto w = sr::world_for(cfg);
      sr::synth::write_world(world_out, w);
      print_json({{"ift", w.ift.size()}, {"eft_groups", w.groups.size()}, {"validation", w.validation.size()},
                  {"test", w.test.size()}, {"dir", world_out}});
      return 0;
    }

    if (c_sft->parsed()) {
      if (pretrain) {
        const auto world = sr::synth::read_world(world_dir);
        auto r = sr::pretrain_base(cfg, world);
        const sr::CheckpointMeta meta{sr::make_checkpoint_id(0, r.policy.parameters()), 0, "", sr::Json::object()};
        if (fs::path(out_ckpt).has_parent_path()) fs::create_directories(fs::path(out_ckpt).parent_path());
        sr::save_checkpoint(out_ckpt, r.policy, meta);
        std::cout << meta.checkpoint_id << "\n";
        return 0;
      }
      if (init_ckpt.empty() || data_files.empty())
        sr::fail(sr::ErrorCode::config_error, "train-sft needs --init and --data (or --pretrain)");
      const auto init = sr::load_checkpoint(init_ckpt);
      std::vector<sr::InstructionExample> rows;
      sr::Json manifest = sr::Json::object();
      for (const auto& f : data_files) {
        auto part = sr::read_examples(f);
        rows.insert(rows.end(), part.begin(), part.end());
        manifest[fs::path(f).filename().string()] = sr::file_digest(f);
      }
      const auto tokens = sr::encode_examples(rows);
      auto sft = cfg.sft;
      sft.seed = sr::derive_seed(cfg.seed, "train/sft/" + init.meta.checkpoint_id);
      sr::TrainResult<sr::TinyLM> r{init.lm, {}, 0, {}};
      if (fs::exists(fs::path(world_dir) / sr::synth::kValidationFile)) {
        const auto val = sr::synth::prompts_of(sr::read_examples(fs::path(world_dir) / sr::synth::kValidationFile));
        r = sr::train_sft(init.lm, std::span<const sr::TokenExample>(tokens), sft,
                          sr::early_stop_callback(cfg, val, &init.lm, "sft"));
      } else {
        r = sr::train_sft(init.lm, std::span<const sr::TokenExample>(tokens), sft);
      }
      save_child(out_ckpt, r.policy, init.meta, manifest);
      return 0;
    }

    if (c_prompts->parsed()) {
      if (prompt_count > 0) cfg.prompts_per_iteration = prompt_count;
      if (threshold) cfg.filter.rouge_l_threshold = *threshold;
      cfg.validate();
      const auto world = sr::synth::read_world(world_dir);
      std::unique_ptr<Backend> current;
      std::unique_ptr<sr::GenerationModel> fixed;
      const sr::GenerationModel* generator = nullptr;
      if (prompt_source == "current") {
        if (gen_ckpt.empty()) sr::fail(sr::ErrorCode::config_error, "--prompt-source current needs --checkpoint");
        current = std::make_unique<Backend>(gen_ckpt);
        generator = current->model.get();
      } else {
        fixed = std::make_unique<sr::synth::ProgrammaticPromptGenerator>(cfg.generator_junk_rate);
        generator = fixed.get();
      }
      std::vector<sr::Demonstration> pool;
      const auto batch = sr::generate_prompt_batch(*generator, world.ift, pool, cfg.prompts_per_iteration, iteration, cfg);
      std::vector<sr::Json> rows;
      for (const auto& c : batch.all) rows.push_back(sr::to_json(c));
      if (prompts_out.empty()) prompts_out = "prompts_iter" + std::to_string(iteration) + ".jsonl";
      sr::write_jsonl(prompts_out, rows);
      print_json(batch.counts);
      return 0;
    }

    if (c_cands->parsed()) {
      const Backend backend(model_spec);
      const auto base = sr::derive_seed(cfg.seed, "candidates/" + std::to_string(iteration));
      std::vector<sr::Json> rows;
      long skipped = 0;
      std::size_t index = 0;
      for (const auto& row : sr::read_jsonl(prompts_in)) {
        const auto c = sr::prompt_candidate_from_json(row);
        if (c.filter_verdict != sr::FilterVerdict::accepted) continue;
        const std::size_t i = index++;
        std::vector<std::string> responses;
        try {
          responses = sr::generate_candidates(*backend.model, c.text, cfg.candidates_per_prompt,
                                              cfg.candidate_decoding.with_seed(sr::derive_seed(base, i)));
        } catch (const sr::Error& e) {
          if (e.code() != sr::ErrorCode::unknown_token && e.code() != sr::ErrorCode::context_overflow) throw;
          ++skipped;
          continue;
        }
        for (std::size_t n = 0; n < responses.size(); ++n)
          rows.push_back({{"prompt_id", c.id}, {"prompt", c.text}, {"index", n}, {"response", responses[n]}});
      }
      if (cand_out.empty()) cand_out = "candidates_iter" + std::to_string(iteration) + ".jsonl";
      sr::write_jsonl(cand_out, rows);
      print_json({{"prompts", index}, {"unreadable", skipped}, {"candidates", rows.size()}});
      return 0;
    }

    if (c_judge->parsed()) {
      const Backend backend(model_spec);
      const auto tpl = sr::JudgeTemplate::named(cfg.judge_template);
      const auto base = sr::derive_seed(cfg.seed, "judge/" + std::to_string(iteration));
      std::vector<sr::Json> rows;
      long unscorable = 0, failures = 0;
      for (const auto& row : sr::read_jsonl(cand_in)) {
        const auto prompt_id = row.at("prompt_id").get<std::string>();
        const auto prompt = row.at("prompt").get<std::string>();
        const auto response = row.at("response").get<std::string>();
        const auto seed = sr::derive_seed(sr::derive_seed(base, prompt_id), row.at("index").get<std::uint64_t>());
        try {
          auto sc = sr::score_candidate(*backend.model, tpl, prompt, response, cfg.judge_samples,
                                        cfg.judge_decoding.with_seed(seed));
          sc.prompt_id = prompt_id;
          failures += sc.parse_failures;
          rows.push_back(sr::to_json(sc));
        } catch (const sr::Error& e) {
          if (e.code() != sr::ErrorCode::unscorable && e.code() != sr::ErrorCode::context_overflow &&
              e.code() != sr::ErrorCode::unknown_token)
            throw;
          ++unscorable;
        }
      }
      if (scored_out.empty()) scored_out = "scored_iter" + std::to_string(iteration) + ".jsonl";
      sr::write_jsonl(scored_out, rows);
      print_json({{"scored", rows.size()}, {"unscorable", unscorable}, {"judge_parse_failures", failures}});
      return 0;
    }

    if (c_pairs->parsed()) {
      // Group scored rows by prompt id, keeping first-seen order.
      std::vector<std::string> order;
      std::map<std::string, std::vector<sr::ScoredCandidate>> groups;
      for (const auto& row : sr::read_jsonl(scored_in)) {
        auto c = sr::scored_candidate_from_json(row);
        if (!groups.count(c.prompt_id)) order.push_back(c.prompt_id);
        groups[c.prompt_id].push_back(std::move(c));
      }
      sr::JudgedBatch judged;
      for (const auto& id : order) judged.per_prompt.push_back(groups[id]);
      auto pb = sr::build_pairs(judged, iteration);
      fs::create_directories(pairs_dir);
      const auto aift = sr::assemble_aift(pb.pairs, iteration, pairs_dir);
      pb.counts["pairs_duplicates"] = aift.duplicates;
      pb.counts["aift_pairs"] = aift.pairs.size();
      pb.counts["file"] = (fs::path(pairs_dir) / aift.file.name).string();
      print_json(pb.counts);
      return 0;
    }

    if (c_dpo->parsed()) {
      const auto init = sr::load_checkpoint(init_ckpt);
      std::vector<sr::PreferencePair> pairs;
      sr::Json manifest = sr::Json::object();
      for (const auto& f : pair_files) {
        auto part = sr::read_pairs(f);
        pairs.insert(pairs.end(), part.begin(), part.end());
        manifest[fs::path(f).filename().string()] = sr::file_digest(f);
      }
      if (pairs.empty()) sr::fail(sr::ErrorCode::empty_aift, "no preference pairs");
      const auto tokens = sr::encode_pairs(pairs);
      auto dpo = cfg.dpo;
      dpo.seed = sr::derive_seed(cfg.seed, "train/dpo/" + init.meta.checkpoint_id);
      sr::TrainResult<sr::TinyLM> r{init.lm, {}, 0, {}};
      if (fs::exists(fs::path(world_dir) / sr::synth::kValidationFile)) {
        const auto val = sr::synth::prompts_of(sr::read_examples(fs::path(world_dir) / sr::synth::kValidationFile));
        r = sr::train_dpo(init.lm, std::span<const sr::TokenPair>(tokens), dpo,
                          sr::early_stop_callback(cfg, val, &init.lm, "dpo"));
      } else {
        r = sr::train_dpo(init.lm, std::span<const sr::TokenPair>(tokens), dpo);
      }
      save_child(out_ckpt, r.policy, init.meta, manifest);
      return 0;
    }

    if (c_rm->parsed()) {
      const Backend backend(model_spec);
      const auto groups = sr::read_groups(eft_eval);
      sr::Json j = sr::to_json(sr::reward_model_metrics(*backend.model, groups, cfg));
      j["checkpoint"] = backend.ckpt ? sr::Json(backend.ckpt->meta.checkpoint_id) : sr::Json("endpoint");
      j["judge_template"] = std::string(sr::to_string(cfg.judge_template));
      print_json(j);
      return 0;
    }

    if (c_arena->parsed()) {
      const Backend a(ckpt_a), b(ckpt_b);
      const auto prompts = sr::synth::prompts_of(sr::read_examples(arena_prompts));
      std::unique_ptr<Backend> judge_backend;
      sr::PairwiseJudge judge = sr::synth::oracle_judge();
      if (judge_kind != "oracle") {
        const std::string spec = judge_kind == "endpoint" ? "endpoint" : (judge_ckpt.empty() ? ckpt_a : judge_ckpt);
        judge_backend = std::make_unique<Backend>(spec);
        judge = sr::self_pairwise_judge(*judge_backend->model, sr::JudgeTemplate::named(cfg.judge_template),
                                        cfg.judge_samples, cfg.judge_decoding,
                                        sr::derive_seed(cfg.seed, "arena-judge"));
      }
      const auto r = sr::arena(*a.model, *b.model, prompts, judge,
                               cfg.candidate_decoding.with_seed(sr::derive_seed(cfg.seed, "arena/test")));
      auto j = sr::to_json(r);
      j["judge"] = judge_kind;
      print_json(j);
      return 0;
    }

    if (c_iter->parsed()) {
      sr::RunOptions opt;
      opt.root = root;
      opt.use_cache = !no_cache;
      if (!quiet) opt.log = [](const std::string& s) { std::cerr << s << "\n"; };
      const auto m = sr::run_iteration_loop(cfg, opt);
      std::cout << m.run_id << "\n";
      return 0;
    }
  } catch (const sr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.code()) {
      case sr::ErrorCode::config_error:
      case sr::ErrorCode::invalid_param: return kExitConfig;
      case sr::ErrorCode::not_found: return kExitNotFound;
      default: return kExitStage;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
