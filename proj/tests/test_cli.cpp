#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <sys/wait.h>

#include "selfreward/selfreward.hpp"
#include "test_util.hpp"

using namespace selfreward;
using testutil::error_code_of;
using testutil::TempDir;

namespace {

// Small enough that a full two-iteration run takes a few seconds.
PipelineConfig tiny_config() {
  PipelineConfig c;
  c.iterations = 2;
  c.prompts_per_iteration = 24;
  c.early_stopping_prompts = 10;
  c.world.n_ift = 80;
  c.world.n_eft_groups = 40;
  c.world.n_validation = 10;
  c.world.n_test = 10;
  c.corpus.n_docs = 4000;
  c.model = {32, 32};
  c.pretrain.total_steps = 2000;
  c.pretrain.eval_every = 2000;
  for (auto* o : {static_cast<OptimizerConfig*>(&c.sft), static_cast<OptimizerConfig*>(&c.dpo)}) {
    o->total_steps = 40;
    o->eval_every = 20;
    o->batch_size = 8;
  }
  return c;
}

struct Run {
  int status = -1;
  std::string out;
};

Run run_cli(const std::string& args) {
  Run r;
  const std::string cmd = std::string(SELFREWARD_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

}  // namespace

TEST(Config, JsonRoundTripAndHash) {
  const PipelineConfig c = tiny_config();
  const auto back = config_from_json(to_json(c));
  EXPECT_EQ(canonical_dump(to_json(back)), canonical_dump(to_json(c)));
  EXPECT_EQ(config_hash(back), config_hash(c));
  auto other = c;
  other.use_eft_seed = false;
  EXPECT_NE(run_id_for(other), run_id_for(c));
}

TEST(Config, Defaults) {
  const PipelineConfig c;
  EXPECT_EQ(c.candidates_per_prompt, 4);
  EXPECT_EQ(c.judge_samples, 3);
  EXPECT_TRUE(c.use_eft_seed);
  EXPECT_EQ(c.world.n_ift, 3200u);
  EXPECT_EQ(c.filter.rouge_l_threshold, 0.7);
  EXPECT_EQ(c.dpo.beta, 0.1);
  EXPECT_EQ(c.candidate_decoding.temperature, 0.7);
  EXPECT_EQ(c.candidate_decoding.top_p, 0.9);
  c.validate();
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_EQ(error_code_of([] { config_from_json(Json{{"iteratons", 3}}); }), ErrorCode::config_error);
  EXPECT_EQ(error_code_of([] { config_from_json(Json{{"dpo", {{"betta", 0.1}}}}); }), ErrorCode::config_error);
  EXPECT_EQ(error_code_of([] { config_from_json(Json{{"iterations", "three"}}); }), ErrorCode::config_error);
  for (const Json& bad : {Json{{"iterations", 0}}, Json{{"candidates_per_prompt", 1}}, Json{{"judge_samples", 0}},
                          Json{{"dpo", {{"beta", 0.0}}}}})
    EXPECT_EQ(error_code_of([&] { config_from_json(bad).validate(); }), ErrorCode::config_error) << bad.dump();
}

TEST(Config, LoadFromFile) {
  TempDir dir;
  write_file(dir / "c.json", R"({"seed": 9, "iterations": 2, "use_eft_seed": false})");
  const auto c = load_config(dir / "c.json");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.iterations, 2);
  EXPECT_FALSE(c.use_eft_seed);
  EXPECT_EQ(error_code_of([&] { load_config(dir / "none.json"); }), ErrorCode::not_found);
}

class IterateTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new TempDir();
    manifest_ = new RunManifest(run_iteration_loop(tiny_config(), RunOptions{root_->path(), true, {}}));
  }
  void SetUp() override {
    if (manifest_ == nullptr) GTEST_SKIP() << "the shared run failed";
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete root_;
  }
  static TempDir* root_;
  static RunManifest* manifest_;
};

TempDir* IterateTest::root_ = nullptr;
RunManifest* IterateTest::manifest_ = nullptr;

TEST_F(IterateTest, LineageAndFiles) {
  const auto& m = *manifest_;
  const auto dir = root_->path() / m.run_id;
  ASSERT_EQ(m.entries.size(), 3u);
  for (int t = 0; t < 3; ++t) {
    const auto& e = m.entries[static_cast<std::size_t>(t)];
    EXPECT_EQ(e.iteration, t);
    EXPECT_EQ(e.status, "ok");
    const auto ck = load_checkpoint(dir / checkpoint_file(t));
    EXPECT_EQ(ck.meta.checkpoint_id, e.checkpoint_id);
    EXPECT_EQ(ck.meta.iteration, t);
    if (t == 0) {
      EXPECT_TRUE(ck.meta.parent_id.empty());
    } else {
      EXPECT_EQ(ck.meta.parent_id, m.entries[static_cast<std::size_t>(t - 1)].checkpoint_id);
      EXPECT_EQ(e.parent_id, ck.meta.parent_id);
    }
  }
  const auto& e2 = m.entries[2];
  EXPECT_GT(e2.counts.at("pairs").at("aift_pairs").get<long>(), 0);
  EXPECT_TRUE(e2.metrics.contains("arena_vs_prev"));
  EXPECT_TRUE(e2.metrics.contains("rm"));
  EXPECT_TRUE(verify_manifest_files(m, dir).empty());
  EXPECT_EQ(load_manifest(dir / "manifest.json").run_id, m.run_id);
  EXPECT_TRUE(std::filesystem::exists(dir / "aift_iter1.jsonl"));
  // the DPO checkpoint records the exact pair file it was trained on
  const auto m2 = load_checkpoint(dir / checkpoint_file(2));
  EXPECT_EQ(m2.meta.training_manifest.at("aift_iter1.jsonl"), file_digest(dir / "aift_iter1.jsonl"));
}

TEST_F(IterateTest, ReportRows) {
  const auto text = report(root_->path(), manifest_->run_id);
  for (const char* row : {"SFT", "M1", "M2", "pairwise", "vs SFT baseline"})
    EXPECT_NE(text.find(row), std::string::npos) << row;
  EXPECT_EQ(error_code_of([&] { report(root_->path(), "run-000000000000"); }), ErrorCode::not_found);
  TempDir empty;
  EXPECT_EQ(error_code_of([&] { report(empty.path(), manifest_->run_id); }), ErrorCode::not_found);
}

TEST_F(IterateTest, IftOnlyChainIsDistinctRun) {
  auto cfg = tiny_config();
  cfg.use_eft_seed = false;
  const auto m = run_iteration_loop(cfg, RunOptions{root_->path(), true, {}});
  EXPECT_NE(m.run_id, manifest_->run_id);
  ASSERT_GE(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[1].counts.at("eft_train"), 0);
  // M1 is the IFT-only baseline itself
  EXPECT_EQ(m.entries[1].checkpoint_id, m.extra.at("sft_baseline").at("checkpoint_id"));
  EXPECT_EQ(list_runs(root_->path()).size(), 2u);
}

TEST_F(IterateTest, RerunIsByteIdentical) {
  const auto dir = root_->path() / manifest_->run_id;
  const auto before = read_file(dir / "manifest.json");
  const auto ckpt = read_file(dir / checkpoint_file(2));
  TempDir fresh;
  const auto m = run_iteration_loop(tiny_config(), RunOptions{fresh.path(), false, {}});
  EXPECT_EQ(read_file(fresh.path() / m.run_id / "manifest.json"), before);
  EXPECT_EQ(read_file(fresh.path() / m.run_id / checkpoint_file(2)), ckpt);
}

TEST(Iterate, PositiveOnlyVariant) {
  TempDir root;
  auto cfg = tiny_config();
  cfg.variant = Variant::positive_sft;
  cfg.positive_threshold = 0.5;  // the tiny model rarely earns a perfect score
  const auto m = run_iteration_loop(cfg, RunOptions{root.path(), true, {}});
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_TRUE(m.entries[2].counts.contains("positives"));
  EXPECT_FALSE(m.entries[2].counts.contains("pairs"));
}

TEST(Iterate, FailedStageIsRecorded) {
  TempDir root;
  auto cfg = tiny_config();
  // an impossible filter: every generated prompt is rejected, so no pairs can be built
  cfg.filter.min_tokens = 200;
  EXPECT_ANY_THROW(run_iteration_loop(cfg, RunOptions{root.path(), true, {}}));
  const auto m = load_manifest(root.path() / run_id_for(cfg) / "manifest.json");
  ASSERT_FALSE(m.entries.empty());
  const auto& last = m.entries.back();
  EXPECT_EQ(last.iteration, 2);
  EXPECT_EQ(last.status, "failed");
  EXPECT_FALSE(last.failed_stage.empty());
  EXPECT_FALSE(last.error.empty());
  EXPECT_NE(render_report(m).find("failed at stage"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("--help").status, 0);
  EXPECT_EQ(run_cli("").status, 2);
  EXPECT_EQ(run_cli("no-such-command").status, 2);
  TempDir dir;
  write_file(dir / "bad.json", R"({"iteratons": 3})");
  const auto bad = run_cli("config --config " + (dir / "bad.json").string());
  EXPECT_EQ(bad.status, 2);
  EXPECT_NE(bad.out.find("iteratons"), std::string::npos);
  EXPECT_EQ(run_cli("report --root " + (dir / "nothing").string()).status, 4);
  const auto defaults = run_cli("config --defaults");
  EXPECT_EQ(defaults.status, 0);
  EXPECT_EQ(canonical_dump(Json::parse(defaults.out)), canonical_dump(to_json(PipelineConfig{})));
}

TEST(Cli, MakeWorldWritesFiles) {
  TempDir dir;
  const auto r = run_cli("make-world --seed 3 --ift 50 --eft-groups 20 --validation 5 --test 5 --out " +
                         (dir / "w").string());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto w = synth::read_world(dir / "w");
  EXPECT_EQ(w.ift.size(), 50u);
  EXPECT_EQ(w.groups.size(), 20u);
}
