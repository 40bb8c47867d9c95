#include <gtest/gtest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "avguard/error.hpp"
#include "avguard/llm_client.hpp"
#include "avguard/sensitive_data.hpp"
#include "corpus_gen.hpp"
#include "test_support.hpp"

using namespace avguard;
using namespace avguard::sensitive;

namespace {

const DetectionRuleSet& rules() { return DetectionRuleSet::shipped_default(); }

std::vector<std::string> codes_of(const std::vector<Detection>& ds) {
  std::vector<std::string> out;
  const auto present = presence(ds);
  for (Category c : kAllCategories) {
    if (present[index_of(c)]) out.emplace_back(code(c));
  }
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(Categories, CodesAndNames) {
  EXPECT_EQ(code(Category::SC), "SC");
  EXPECT_EQ(display_name(Category::SC), "current speed");
  EXPECT_EQ(category_from_code("pl"), Category::PL);
  EXPECT_FALSE(category_from_code("XX"));
}

TEST(Ruleset, ShippedDefaultCoversAllCategories) {
  for (auto n : rules().coverage()) EXPECT_GT(n, 0u);
}

TEST(Ruleset, InvalidRulesRejected) {
  EXPECT_EQ(code_of([] { DetectionRuleSet::from_json_text("not json"); }), ErrorCode::kInvalidRule);
  EXPECT_EQ(code_of([] { DetectionRuleSet::from_json_text(R"({"categories":{"ZZ":[]}})"); }),
            ErrorCode::kInvalidRule);
  EXPECT_EQ(code_of([] {
              DetectionRuleSet::from_json_text(
                  R"({"categories":{"SC":[{"id":"a","type":"regex","pattern":"("}]}})");
            }),
            ErrorCode::kInvalidRule);
  EXPECT_EQ(code_of([] {
              DetectionRuleSet::from_json_text(
                  R"({"categories":{"SC":[{"id":"a","terms":["x"]}],"PL":[{"id":"a","terms":["y"]}]}})");
            }),
            ErrorCode::kInvalidRule);
  // A rule that fires on redaction output would make redaction diverge.
  EXPECT_EQ(code_of([] {
              DetectionRuleSet::from_json_text(R"({"categories":{"SC":[{"id":"a","type":"regex","pattern":"⟨"}]}})");
            }),
            ErrorCode::kInvalidRule);
  EXPECT_EQ(code_of([] { DetectionRuleSet::load("/nonexistent/rules.json"); }), ErrorCode::kInvalidRule);
}

TEST(Ruleset, LoadFromFile) {
  testing_support::TempDir dir;
  std::ofstream(dir / "r.json") << R"({"version":1,"categories":{"WT":[{"id":"wt","terms":["hail"]}]}})";
  const auto rs = DetectionRuleSet::load(dir / "r.json");
  const auto ds = detect("Hail ahead", rs);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds[0].category, Category::WT);
  EXPECT_EQ(ds[0].matched, "Hail");
}

TEST(Detect, EmptyText) { EXPECT_TRUE(detect("", rules()).empty()); }

TEST(Detect, SpeedAndLocation) {
  const std::string t = "current speed is 38 km/h at lat 48.2, lon 16.3";
  const auto ds = detect(t, rules());
  EXPECT_EQ(codes_of(ds), (std::vector<std::string>{"SC", "PL"}));
  for (const auto& d : ds) EXPECT_EQ(t.substr(d.begin, d.end - d.begin), d.matched);
  EXPECT_EQ(ds.front().begin, 0u);
  EXPECT_EQ(ds.front().matched, "current speed");
}

TEST(Detect, PlaceholdersNeverMatch) {
  EXPECT_TRUE(detect("⟨PL⟩", rules()).empty());
  std::string all;
  for (Category c : kAllCategories) all += placeholder(c) + " ";
  EXPECT_TRUE(detect(all, rules()).empty());
}

TEST(Detect, WholeWordsOnly) {
  EXPECT_TRUE(detect("terrain brainstorm", rules()).empty());
  EXPECT_EQ(codes_of(detect("Rain later", rules())), (std::vector<std::string>{"WT"}));
}

TEST(Detect, OrderedAndDeterministic) {
  const std::string t = "police saw fog near the obstacle and a stop sign, battery level 40%";
  const auto a = detect(t, rules());
  EXPECT_EQ(a, detect(t, rules()));
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LE(a[i - 1].begin, a[i].begin);
}

TEST(Exposure, Endpoints) {
  EXPECT_EQ(exposure_score(PerCategory<bool>{}, uniform_weights()), 0.0);
  PerCategory<bool> all;
  all.fill(true);
  EXPECT_EQ(exposure_score(all, uniform_weights()), 1.0);
}

TEST(Exposure, TwoCategories) {
  PerCategory<bool> p{};
  p[index_of(Category::SC)] = true;
  p[index_of(Category::PL)] = true;
  EXPECT_EQ(exposure_score(p, uniform_weights()), 0.2);
}

TEST(Exposure, AllSubsetsUniformWeights) {
  for (unsigned mask = 0; mask < 1024; ++mask) {
    PerCategory<bool> p{};
    int n = 0;
    for (std::size_t i = 0; i < kCategoryCount; ++i) {
      p[i] = (mask >> i) & 1u;
      n += p[i];
    }
    ASSERT_EQ(exposure_score(p, uniform_weights()), n / 10.0) << mask;
  }
}

TEST(Exposure, CustomWeightsAndErrors) {
  Weights w{};
  w[index_of(Category::PL)] = 3.0;
  w[index_of(Category::SC)] = 1.0;
  PerCategory<bool> p{};
  p[index_of(Category::PL)] = true;
  EXPECT_DOUBLE_EQ(exposure_score(p, w), 0.75);
  EXPECT_EQ(code_of([&] { exposure_score(p, Weights{}); }), ErrorCode::kZeroWeightSum);
  w[0] = -1;
  EXPECT_EQ(code_of([&] { exposure_score(p, w); }), ErrorCode::kInvalidArgument);
}

TEST(Exposure, AssessAndSummaryOmitMatchedText) {
  const auto r = assess("ego speed 30 mph near the ambulance", rules(), uniform_weights());
  EXPECT_EQ(r.score, 0.2);
  EXPECT_EQ(r.present_codes(), (std::vector<std::string>{"SC", "ES"}));
  const auto summary = report_summary(r).dump();
  EXPECT_EQ(summary.find("ambulance"), std::string::npos);
  EXPECT_EQ(summary.find("30 mph"), std::string::npos);
}

TEST(Redact, NoDetectionsIsIdentity) { EXPECT_EQ(redact("hello", {}, RedactionMode::kPlaceholder), "hello"); }

TEST(Redact, PlaceholderSubstitution) {
  const std::string t = "we are at precise location now";
  EXPECT_EQ(redact(t, detect(t, rules()), RedactionMode::kPlaceholder), "we are at ⟨PL⟩ now");
  EXPECT_EQ(redact(t, detect(t, rules()), RedactionMode::kRemove), "we are at  now");
}

TEST(Redact, OverlapsMergeUnderEarliest) {
  std::vector<Detection> ds = {{Category::WP, 0, 5, "abcde", "x"}, {Category::SC, 3, 8, "defgh", "y"}};
  EXPECT_EQ(redact("abcdefghij", ds, RedactionMode::kPlaceholder), "⟨WP⟩ij");
}

TEST(Redact, SpanMismatch) {
  std::vector<Detection> ds = {{Category::WP, 0, 50, "zzz", "x"}};
  EXPECT_EQ(code_of([&] { redact("short", ds, RedactionMode::kPlaceholder); }), ErrorCode::kSpanMismatch);
  ds = {{Category::WP, 0, 3, "zzz", "x"}};
  EXPECT_EQ(code_of([&] { redact("short", ds, RedactionMode::kPlaceholder); }), ErrorCode::kSpanMismatch);
}

TEST(RedactProperties, GeneratedCorpusSanitizesToZero) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 600; ++i) {
    const auto g = testing_support::generate_text(rng);
    const auto found = presence(detect(g.text, rules()));
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      if (g.seeded[c]) ASSERT_TRUE(found[c]) << g.text;
    }
    for (auto mode : {RedactionMode::kPlaceholder, RedactionMode::kRemove}) {
      const auto once = sanitize(g.text, rules(), mode);
      ASSERT_EQ(assess(once, rules(), uniform_weights()).score, 0.0) << g.text << " -> " << once;
      ASSERT_EQ(sanitize(once, rules(), mode), once);
    }
    if (i % 3 == 0) {
      // A single pass already clears placeholder-mode output.
      const auto one_pass = redact(g.text, detect(g.text, rules()), RedactionMode::kPlaceholder);
      ASSERT_TRUE(detect(one_pass, rules()).empty()) << one_pass;
    }
  }
}

TEST(Counts, OverlappingSameCategoryCountOnce) {
  const auto counts = category_counts(detect("traffic lights and traffic signs, stop sign", rules()));
  EXPECT_EQ(counts[index_of(Category::SI)], 3u);
}

TEST(UsageMatrix, RowMaxScaling) {
  PerCategory<std::uint64_t> row{};
  row[0] = 2;
  row[1] = 4;
  const auto m = usage_matrix({row, PerCategory<std::uint64_t>{}});
  EXPECT_EQ(m[0][0], 0.5);
  EXPECT_EQ(m[0][1], 1.0);
  EXPECT_EQ(m[0][2], 0.0);
  for (double v : m[1]) EXPECT_EQ(v, 0.0);
}

TEST(UsageMatrix, FixtureMatrix) {
  const std::vector<PerCategory<std::uint64_t>> counts = {{
      {12, 12, 12, 2, 1, 12, 1, 0, 12, 3},
      {1, 0, 0, 7, 12, 1, 0, 0, 0, 0},
      {2, 2, 0, 12, 5, 12, 2, 2, 3, 12},
      {0, 0, 12, 3, 7, 0, 3, 5, 2, 3},
      {0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
      {2, 2, 0, 12, 7, 7, 7, 0, 2, 3},
      {5, 0, 3, 5, 0, 7, 0, 1, 2, 0},
      {0, 0, 12, 12, 1, 2, 12, 2, 1, 7},
      {7, 0, 7, 7, 2, 0, 3, 3, 0, 2},
      {1, 7, 0, 0, 1, 2, 12, 3, 0, 5},
      {3, 7, 0, 0, 0, 2, 2, 0, 5, 5},
  }};
  const std::vector<UsageRow> expected = {{
      {1.0, 1.0, 1.0, 0.16666666666666666, 0.08333333333333333, 1.0, 0.08333333333333333, 0.0, 1.0, 0.25},
      {0.08333333333333333, 0.0, 0.0, 0.5833333333333334, 1.0, 0.08333333333333333, 0.0, 0.0, 0.0, 0.0},
      {0.16666666666666666, 0.16666666666666666, 0.0, 1.0, 0.4166666666666667, 1.0, 0.16666666666666666,
       0.16666666666666666, 0.25, 1.0},
      {0.0, 0.0, 1.0, 0.25, 0.5833333333333334, 0.0, 0.25, 0.4166666666666667, 0.16666666666666666, 0.25},
      {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
      {0.16666666666666666, 0.16666666666666666, 0.0, 1.0, 0.5833333333333334, 0.5833333333333334,
       0.5833333333333334, 0.0, 0.16666666666666666, 0.25},
      {0.7142857142857143, 0.0, 0.42857142857142855, 0.7142857142857143, 0.0, 1.0, 0.0, 0.14285714285714285,
       0.2857142857142857, 0.0},
      {0.0, 0.0, 1.0, 1.0, 0.08333333333333333, 0.16666666666666666, 1.0, 0.16666666666666666,
       0.08333333333333333, 0.5833333333333334},
      {1.0, 0.0, 1.0, 1.0, 0.2857142857142857, 0.0, 0.42857142857142855, 0.42857142857142855, 0.0,
       0.2857142857142857},
      {0.08333333333333333, 0.5833333333333334, 0.0, 0.0, 0.08333333333333333, 0.16666666666666666, 1.0, 0.25,
       0.0, 0.4166666666666667},
      {0.42857142857142855, 1.0, 0.0, 0.0, 0.0, 0.2857142857142857, 0.2857142857142857, 0.0,
       0.7142857142857143, 0.7142857142857143},
  }};
  EXPECT_EQ(usage_matrix(counts), expected);
}

TEST(JudgePresence, ParsesCodesAndNone) {
  llm::FunctionBackend yes("j", [](const auto&) { return std::string("SC, PL"); });
  const auto p = judge_presence(yes, "anything");
  EXPECT_TRUE(p[index_of(Category::SC)]);
  EXPECT_TRUE(p[index_of(Category::PL)]);
  EXPECT_FALSE(p[index_of(Category::WT)]);

  llm::FunctionBackend none("j", [](const auto&) { return std::string("NONE"); });
  for (bool b : judge_presence(none, "x")) EXPECT_FALSE(b);

  llm::FunctionBackend junk("j", [](const auto&) { return std::string("no idea"); });
  EXPECT_EQ(code_of([&] { judge_presence(junk, "x"); }), ErrorCode::kUnparsableVerdict);

  llm::FunctionBackend down("j", [](const auto&) -> std::string { throw Error(ErrorCode::kTimeout, "slow"); });
  EXPECT_EQ(code_of([&] { judge_presence(down, "x"); }), ErrorCode::kJudgeUnavailable);
}
