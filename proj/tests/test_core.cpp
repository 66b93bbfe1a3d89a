#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "selfreward/core.hpp"
#include "selfreward/manifest.hpp"
#include "test_util.hpp"

using namespace selfreward;
using testutil::error_code_of;
using testutil::TempDir;

namespace {

InstructionExample example(std::string id, std::string prompt = "Copy the tokens: a b",
                           std::string response = "a b") {
  InstructionExample ex;
  ex.id = std::move(id);
  ex.prompt = std::move(prompt);
  ex.response = std::move(response);
  return ex;
}

}  // namespace

TEST(DatasetStore, RoundTripsARecord) {
  TempDir dir;
  JsonlStore<InstructionExample> store(dir / "ift.jsonl");
  auto ex = example("r1", "Quote \"this\"\nand a tab\t and unicode \xc3\xa9", "ok");
  ex.source = ExampleSource::aift;
  ex.iteration_created = 2;
  EXPECT_EQ(dataset_append(store, ex), "r1");
  const auto back = read_examples(dir / "ift.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], ex);
}

TEST(DatasetStore, ReReadIsByteIdentical) {
  TempDir dir;
  JsonlStore<InstructionExample> store(dir / "a.jsonl");
  store.append(example("x1"));
  store.append(example("x2", "Sort the tokens: b a", "a b"));
  const auto first = read_file(dir / "a.jsonl");
  write_examples(dir / "b.jsonl", read_examples(dir / "a.jsonl"));
  EXPECT_EQ(read_file(dir / "b.jsonl"), first);
}

TEST(DatasetStore, DuplicateIdRejected) {
  TempDir dir;
  JsonlStore<InstructionExample> store(dir / "d.jsonl");
  store.append(example("same"));
  EXPECT_EQ(error_code_of([&] { store.append(example("same", "other prompt", "x")); }), ErrorCode::duplicate_id);
  EXPECT_EQ(count_lines(dir / "d.jsonl"), 1u);
}

TEST(DatasetStore, IdsSurviveReopening) {
  TempDir dir;
  {
    JsonlStore<InstructionExample> store(dir / "d.jsonl");
    store.append(example("kept"));
  }
  JsonlStore<InstructionExample> reopened(dir / "d.jsonl");
  EXPECT_TRUE(reopened.contains("kept"));
  EXPECT_EQ(error_code_of([&] { reopened.append(example("kept")); }), ErrorCode::duplicate_id);
}

TEST(DatasetStore, InvariantViolationsRejected) {
  TempDir dir;
  JsonlStore<InstructionExample> store(dir / "d.jsonl");
  EXPECT_EQ(error_code_of([&] { store.append(example("p", "", "r")); }), ErrorCode::invalid_record);
  EXPECT_EQ(error_code_of([&] { store.append(example("r", "p", "")); }), ErrorCode::invalid_record);
  EXPECT_EQ(error_code_of([&] { store.append(example("", "p", "r")); }), ErrorCode::invalid_record);
  auto neg = example("n");
  neg.iteration_created = -1;
  EXPECT_EQ(error_code_of([&] { store.append(neg); }), ErrorCode::invalid_record);
  // Generated and EFT records may have an empty response.
  auto gen = example("g", "p", "");
  gen.source = ExampleSource::model_generated;
  EXPECT_NO_THROW(store.append(gen));
  EXPECT_EQ(count_lines(dir / "d.jsonl"), 1u);
}

TEST(DatasetStore, AppendingAiftPairsCountsThem) {
  TempDir dir;
  JsonlStore<InstructionExample> store(dir / "aift_iter1.jsonl");
  for (int i = 0; i < 3964; ++i) {
    auto ex = example(make_record_id("aift", i, "p"), "prompt " + std::to_string(i), "r");
    ex.source = ExampleSource::aift;
    ex.iteration_created = 1;
    store.append(ex);
  }
  IterationEntry e;
  e.iteration = 1;
  e.files.push_back(describe_file(dir.path(), "aift_iter1.jsonl"));
  EXPECT_EQ(e.files[0].records, 3964);
  EXPECT_EQ(store.size(), 3964u);
}

TEST(DatasetStore, KeysInFixedOrder) {
  TempDir dir;
  write_examples(dir / "k.jsonl", {example("k")});
  EXPECT_EQ(read_file(dir / "k.jsonl"),
            "{\"id\":\"k\",\"prompt\":\"Copy the tokens: a b\",\"response\":\"a b\",\"source\":\"seed_ift\","
            "\"iteration_created\":0}\n");
}

TEST(Json, DoublesUseSeventeenDigits) {
  EXPECT_EQ(canonical_dump(Json(0.1)), "0.10000000000000001");
  EXPECT_EQ(canonical_dump(Json(4.333333333333333)), "4.333333333333333");
  EXPECT_EQ(canonical_dump(Json(5.0)), "5.0");
  const double x = 1.0 / 3.0;
  EXPECT_EQ(parse_json(canonical_dump(Json(x))).get<double>(), x);
}

TEST(RankedGroups, RoundTripAndValidation) {
  TempDir dir;
  RankedGroup g{"g1", "Sort the tokens: b a", {{"a b", 0}, {"b a", 1}, {"a", 1}}};
  write_groups(dir / "g.jsonl", {g});
  const auto back = read_groups(dir / "g.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], g);
  RankedGroup tiny{"g2", "x", {{"a", 0}}};
  EXPECT_EQ(error_code_of([&] { validate(tiny); }), ErrorCode::invalid_record);
}

TEST(SeededRng, SameSeedAndLabelGiveSameStream) {
  auto a = seeded_rng(42, "prompts");
  auto b = seeded_rng(42, "prompts");
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(SeededRng, DistinctLabelsDiffer) {
  EXPECT_NE(seeded_rng(42, "prompts").next_u64(), seeded_rng(42, "judge").next_u64());
  int same = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = "label-a" + std::to_string(i), b = "label-b" + std::to_string(i);
    if (seeded_rng(42, a).next_u64() == seeded_rng(42, b).next_u64()) ++same;
  }
  EXPECT_EQ(same, 0);
}

TEST(SeededRng, SeedSensitivity) {
  auto a = seeded_rng(42, "x");
  auto b = seeded_rng(43, "x");
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_EQ(equal, 0);
}

TEST(SeededRng, UniformIntCoversRangeEvenly) {
  auto rng = seeded_rng(7, "uniform");
  std::vector<int> counts(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[rng.uniform_int(std::uint64_t{6})];
  for (int c : counts) EXPECT_NEAR(c, n / 6, 400);
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.uniform_int(std::int64_t{2}, std::int64_t{4});
    ASSERT_GE(v, 2);
    ASSERT_LE(v, 4);
  }
}

TEST(SeededRng, NormalHasUnitMoments) {
  auto rng = seeded_rng(3, "normal");
  double s = 0.0, s2 = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(DecodingParams, RejectsOutOfRangeValues) {
  EXPECT_EQ(error_code_of([] { DecodingParams(0.0, 0.9, 10, 1); }), ErrorCode::invalid_param);
  EXPECT_EQ(error_code_of([] { DecodingParams(-1.0, 0.9, 10, 1); }), ErrorCode::invalid_param);
  EXPECT_EQ(error_code_of([] { DecodingParams(NAN, 0.9, 10, 1); }), ErrorCode::invalid_param);
  EXPECT_EQ(error_code_of([] { DecodingParams(0.6, 0.0, 10, 1); }), ErrorCode::invalid_param);
  EXPECT_EQ(error_code_of([] { DecodingParams(0.6, 1.01, 10, 1); }), ErrorCode::invalid_param);
  EXPECT_EQ(error_code_of([] { DecodingParams(0.6, 0.9, -1, 1); }), ErrorCode::invalid_param);
  EXPECT_NO_THROW(DecodingParams(0.6, 1.0, 0, 1));
}

TEST(RecordIds, DeterministicAndContentSensitive) {
  EXPECT_EQ(make_record_id("ift", 3, "abc"), make_record_id("ift", 3, "abc"));
  EXPECT_NE(make_record_id("ift", 3, "abc"), make_record_id("ift", 3, "abd"));
  EXPECT_EQ(make_record_id("ift", 3, "abc").rfind("ift-000003-", 0), 0u);
}

IterationEntry entry_at(int t) {
  IterationEntry e;
  e.iteration = t;
  return e;
}

TEST(Manifest, IterationsStrictlyIncrease) {
  RunManifest m;
  m.add_entry(entry_at(0));
  m.add_entry(entry_at(1));
  EXPECT_EQ(error_code_of([&] { m.add_entry(entry_at(1)); }), ErrorCode::invalid_record);
  EXPECT_EQ(error_code_of([&] { m.add_entry(entry_at(0)); }), ErrorCode::invalid_record);
}

TEST(Manifest, SaveLoadIsStableAndVerifiesFiles) {
  TempDir dir;
  write_examples(dir / "ift.jsonl", {example("a"), example("b", "p2", "r2")});
  RunManifest m;
  m.run_id = "run-x";
  m.config_hash = "abc";
  IterationEntry e;
  e.iteration = 0;
  e.checkpoint_id = "M0-1";
  e.counts["prompts"] = 12;
  e.metrics["score"] = 0.1;
  e.files.push_back(describe_file(dir.path(), "ift.jsonl"));
  m.add_entry(e);
  save_manifest(dir / "manifest.json", m);
  const auto bytes = read_file(dir / "manifest.json");
  save_manifest(dir / "again.json", load_manifest(dir / "manifest.json"));
  EXPECT_EQ(read_file(dir / "again.json"), bytes);
  EXPECT_EQ(load_manifest(dir / "manifest.json").entries[0].files[0].records, 2);

  EXPECT_TRUE(verify_manifest_files(m, dir.path()).empty());
  std::ofstream(dir / "ift.jsonl", std::ios::app) << canonical_dump(to_json(example("c"))) << "\n";
  EXPECT_EQ(verify_manifest_files(m, dir.path()), std::vector<std::string>{"ift.jsonl"});
}

TEST(ImportExamples, MapsForeignKeys) {
  TempDir dir;
  write_file(dir / "foreign.jsonl",
             "{\"instruction\":\"Say hi\",\"output\":\"hi\",\"extra\":1}\n"
             "{\"instruction\":\"Say bye\",\"output\":\"bye\"}\n");
  const auto rows = import_examples(dir / "foreign.jsonl", "instruction", "output");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].prompt, "Say bye");
  EXPECT_EQ(rows[1].response, "bye");
  EXPECT_EQ(rows[0].source, ExampleSource::seed_ift);
  EXPECT_NE(rows[0].id, rows[1].id);

  write_file(dir / "bad.jsonl", "{\"instruction\":\"Say hi\"}\n");
  EXPECT_EQ(error_code_of([&] { import_examples(dir / "bad.jsonl", "instruction", "output"); }),
            ErrorCode::invalid_record);
}
