#include <gtest/gtest.h>

#include "selfreward/pairs.hpp"
#include "test_util.hpp"

using namespace selfreward;
using testutil::error_code_of;
using testutil::TempDir;

namespace {

std::vector<ScoredCandidate> candidates(const std::vector<double>& means, const std::string& prompt = "p") {
  std::vector<ScoredCandidate> out;
  for (std::size_t i = 0; i < means.size(); ++i) {
    ScoredCandidate c;
    c.prompt = prompt;
    c.response = "response " + std::to_string(i);
    c.mean_score = means[i];
    out.push_back(c);
  }
  return out;
}

PreferencePair pair(std::string prompt, std::string w, std::string l) {
  return {std::move(prompt), std::move(w), std::move(l), 5.0, 1.0, 0};
}

}  // namespace

TEST(BuildPair, Examples) {
  auto p = build_pair(candidates({4.33, 2.0, 4.33, 1.67}), 1);
  ASSERT_TRUE(p);
  EXPECT_EQ(p->winner, "response 0");
  EXPECT_EQ(p->loser, "response 3");
  EXPECT_DOUBLE_EQ(p->winner_score, 4.33);
  EXPECT_DOUBLE_EQ(p->loser_score, 1.67);
  EXPECT_EQ(p->iteration, 1);

  EXPECT_FALSE(build_pair(candidates({3, 3, 3, 3})));

  p = build_pair(candidates({5, 0}));
  ASSERT_TRUE(p);
  EXPECT_EQ(p->winner, "response 0");
  EXPECT_EQ(p->loser, "response 1");
}

TEST(BuildPair, IdenticalTextsGiveNoPair) {
  auto cs = candidates({5, 1});
  cs[1].response = cs[0].response;
  EXPECT_FALSE(build_pair(cs));
}

TEST(BuildPair, Preconditions) {
  EXPECT_EQ(error_code_of([] { build_pair(candidates({5})); }), ErrorCode::precondition);
  auto mixed = candidates({5, 1});
  mixed[1].prompt = "other";
  EXPECT_EQ(error_code_of([&] { build_pair(mixed); }), ErrorCode::precondition);
}

TEST(BuildPair, MatchesBruteForce) {
  auto rng = seeded_rng(2024, "pairs");
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(std::int64_t{2}, std::int64_t{8}));
    std::vector<double> means(n);
    // judge means over three samples, coarse enough to produce frequent ties
    for (auto& m : means) m = static_cast<double>(rng.uniform_int(std::int64_t{0}, std::int64_t{6})) * 5.0 / 6.0;
    std::size_t hi = 0, lo = 0;
    bool all_equal = true;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) all_equal = all_equal && means[i] == means[j];
      bool is_max = true, is_min = true;
      for (std::size_t j = 0; j < n; ++j) {
        if (means[j] > means[i] || (means[j] == means[i] && j < i)) is_max = false;
        if (means[j] < means[i] || (means[j] == means[i] && j < i)) is_min = false;
      }
      if (is_max) hi = i;
      if (is_min) lo = i;
    }
    const auto got = build_pair(candidates(means));
    if (all_equal) {
      ASSERT_FALSE(got) << trial;
    } else {
      ASSERT_TRUE(got) << trial;
      EXPECT_EQ(got->winner, "response " + std::to_string(hi));
      EXPECT_EQ(got->loser, "response " + std::to_string(lo));
      EXPECT_GT(got->winner_score, got->loser_score);
    }
  }
}

TEST(AssembleAift, DeduplicatesTriples) {
  TempDir dir;
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 8; ++i) pairs.push_back(pair("p" + std::to_string(i), "w", "l"));
  pairs.push_back(pair("p3", "w", "l"));
  pairs.push_back(pair("p5", "w", "l"));
  // same prompt but different loser is not a duplicate
  pairs[7] = pair("p0", "w", "other");
  const auto r = assemble_aift(pairs, 2, dir.path());
  EXPECT_EQ(r.pairs.size(), 8u);
  EXPECT_EQ(r.duplicates, 2u);

  std::vector<PreferencePair> ten;
  for (int i = 0; i < 9; ++i) ten.push_back(pair("q" + std::to_string(i), "w", "l"));
  ten.push_back(ten[4]);
  const auto r2 = assemble_aift(ten, 1, dir.path());
  EXPECT_EQ(r2.pairs.size(), 9u);
  EXPECT_EQ(r2.duplicates, 1u);
  EXPECT_EQ(r2.file.name, "aift_iter1.jsonl");
  EXPECT_EQ(r2.file.records, 9);
  const auto back = read_pairs(dir / "aift_iter1.jsonl");
  ASSERT_EQ(back.size(), 9u);
  for (const auto& p : back) EXPECT_EQ(p.iteration, 1);
  EXPECT_EQ(back[4].prompt, "q4");
}

TEST(AssembleAift, Idempotent) {
  TempDir dir;
  std::vector<PreferencePair> pairs{pair("a", "w", "l"), pair("b", "w", "l"), pair("a", "w", "l")};
  const auto once = assemble_aift(pairs, 1, dir.path());
  const auto bytes = read_file(dir / "aift_iter1.jsonl");
  const auto twice = assemble_aift(once.pairs, 1, dir.path());
  EXPECT_EQ(read_file(dir / "aift_iter1.jsonl"), bytes);
  EXPECT_EQ(twice.duplicates, 0u);
  EXPECT_EQ(twice.file.digest, once.file.digest);
}

TEST(AssembleAift, EmptyInput) {
  TempDir dir;
  EXPECT_EQ(error_code_of([&] { assemble_aift({}, 1, dir.path()); }), ErrorCode::empty_aift);
}

TEST(AssembleAift, RejectsDegeneratePairs) {
  TempDir dir;
  auto bad = pair("p", "same", "same");
  EXPECT_EQ(error_code_of([&] { assemble_aift(std::vector{bad}, 1, dir.path()); }), ErrorCode::invalid_record);
}

TEST(PositiveOnly, PerfectScoreRule) {
  auto cs = candidates({5.0, 4.67});
  const auto out = select_positive_only(cs, 5.0, 2);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].response, "response 0");
  EXPECT_EQ(out[0].source, ExampleSource::aift);
  EXPECT_EQ(out[0].iteration_created, 2);
  EXPECT_EQ(select_positive_only(candidates({0.5, 4.67, 0.2}), 0.1).size(), 3u);
  EXPECT_TRUE(select_positive_only({}, 5.0).empty());
  EXPECT_EQ(error_code_of([] { select_positive_only({}, 0.0); }), ErrorCode::precondition);
}
