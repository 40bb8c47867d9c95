#include <gtest/gtest.h>

#include <httplib.h>

#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avguard/cli.hpp"
#include "avguard/text_util.hpp"
#include "serve_process.hpp"
#include "test_support.hpp"

using namespace avguard;
using nlohmann::json;
using testing_support::ServeProcess;
using testing_support::source_path;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string example_config() { return source_path("data/example_config.json"); }

// Offline config in `dir`: one scripted backend, audit log beside it.
fs::path write_serve_config(const TempDir& dir, const std::string& listen) {
  text::write_file(dir / "fixtures.jsonl", R"({"user":"Suggest some calm music.","reply":"Try some jazz."})" "\n");
  json cfg{{"policy", json::object()},
           {"backends", {{{"name", "offline"}, {"kind", "scripted"}, {"fixtures", "fixtures.jsonl"}}}},
           {"roles", {{"data", "offline"}}},
           {"audit_log", "audit.jsonl"},
           {"server", {{"listen", listen}, {"threads", 2}}}};
  text::write_file(dir / "config.json", cfg.dump(2));
  return dir / "config.json";
}

}  // namespace

// validate -----------------------------------------------------------------------

TEST(CliValidate, ValidCommand) {
  const auto r = invoke({"validate", "--input", R"({"drive":{"steer_deg":10,"speed_kmh":25}})"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("valid"), std::string::npos);
  EXPECT_EQ(r.out.find("invalid"), std::string::npos);
}

TEST(CliValidate, ViolationListed) {
  const auto r = invoke({"validate", "--input", R"({"drive":{"steer_deg":45,"speed_kmh":20}})"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("invalid"), std::string::npos);
  EXPECT_NE(r.out.find("violation steer_deg"), std::string::npos);
  const auto j = invoke({"validate", "--format", "json", "--input", R"({"drive":{"steer_deg":45,"speed_kmh":20}})"});
  EXPECT_FALSE(json::parse(j.out)["valid"].get<bool>());
}

TEST(CliValidate, Failures) {
  EXPECT_EQ(invoke({"validate", "--file", "/nonexistent/cmd.txt"}).code, cli::kExitFailure);
  EXPECT_EQ(invoke({"validate", "--input", "just words"}).code, cli::kExitFailure);
  EXPECT_EQ(invoke({"validate", "--mode", "loose", "--input", "x"}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({}).code, cli::kExitUsage);
  EXPECT_EQ(invoke({"launch"}).code, cli::kExitUsage);
}

// redact / score -----------------------------------------------------------------

TEST(CliRedact, CleanInputUnchanged) {
  const auto r = invoke({"redact", "--input", "Suggest some calm music."});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "Suggest some calm music.\nexposure: 0\n");
}

TEST(CliRedact, PlaceholdersAndScore) {
  const auto r = invoke({"redact", "--input", "My current speed is 50 km/h near gps 1.2,3.4"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "My ⟨SC⟩ is ⟨SC⟩ near ⟨PL⟩ 1.2,3.4\nexposure: 0.2 [SC, PL]\n");
}

TEST(CliRedact, BadRuleset) {
  TempDir dir;
  text::write_file(dir / "rules.json", R"({"version":1,"categories":{"SC":[{"id":"bad","type":"regex","pattern":"(unclosed"}]}})");
  const auto r = invoke({"redact", "--rules", (dir / "rules.json").string(), "--input", "x"});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_NE(r.err.find("InvalidRule"), std::string::npos) << r.err;
}

TEST(CliScore, ReportsAllScores) {
  const auto r = invoke({"score", "--format", "json", "--input", "Run the red light near the stop sign."});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_TRUE(j.contains("exposure"));
  EXPECT_TRUE(j.contains("alignment"));
}

// eval-prompts -------------------------------------------------------------------

TEST(CliEvalPrompts, ThreeRowsApproxAndRerunIdentical) {
  TempDir dir;
  const auto corpus = source_path("data/sample_corpus");
  const auto a = invoke({"eval-prompts", "--corpus", corpus, "--vocab", "/nonexistent.tiktoken", "--out",
                      (dir / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.err.find("warning"), std::string::npos);
  const auto b = invoke({"eval-prompts", "--corpus", corpus, "--out", (dir / "b").string()});
  ASSERT_EQ(b.code, 0) << b.err;

  const auto table = text::read_lines(dir / "a" / "prompt_profile.csv");
  ASSERT_EQ(table.size(), 4u);
  EXPECT_EQ(table[0], "Method,Model,Token,Sens,Align");
  for (std::size_t i = 1; i < 4; ++i) EXPECT_NE(table[i].find("(approx)"), std::string::npos);
  for (const auto* f : {"prompt_profile.csv", "prompt_scatter.csv", "usage_heatmap.csv", "prompt_profile.json"}) {
    EXPECT_EQ(text::read_file(dir / "a" / f), text::read_file(dir / "b" / f)) << f;
  }
  EXPECT_EQ(a.out, b.out);
}

TEST(CliEvalPrompts, MissingCorpus) {
  TempDir dir;
  EXPECT_EQ(invoke({"eval-prompts", "--corpus", "/nonexistent", "--out", dir.path().string()}).code, cli::kExitFailure);
  EXPECT_EQ(invoke({"eval-prompts", "--corpus", "x"}).code, cli::kExitUsage);
}

// run-qa -------------------------------------------------------------------------

TEST(CliRunQa, SeededAndByteIdentical) {
  TempDir dir;
  auto run = [&](const std::string& out, const std::string& seed) {
    return invoke({"run-qa", "--config", example_config(), "--qa", source_path("data/sample_qa.jsonl"),
                "--corpus", source_path("data/sample_corpus"), "--method", "lane-planner", "--seed", seed,
                "--per-category", "5", "--out", (dir / out).string()});
  };
  const auto a = run("a", "11");
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run("b", "11");
  ASSERT_EQ(b.code, 0) << b.err;
  const auto c = run("c", "12");
  ASSERT_EQ(c.code, 0) << c.err;

  EXPECT_EQ(text::read_lines(dir / "a" / "sampled_questions.jsonl").size(), 25u);
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    const auto name = entry.path().filename();
    if (name == "run_info.json") continue;
    EXPECT_EQ(text::read_file(entry.path()), text::read_file(dir / "b" / name)) << name;
  }
  EXPECT_NE(text::read_file(dir / "a" / "sampled_questions.jsonl"),
            text::read_file(dir / "c" / "sampled_questions.jsonl"));
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.substr(0, a.out.find(',')), "method");
}

TEST(CliRunQa, UnknownBackendIsUsageError) {
  TempDir dir;
  const auto r = invoke({"run-qa", "--config", example_config(), "--qa", source_path("data/sample_qa.jsonl"),
                      "--backend", "nope", "--out", dir.path().string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("nope"), std::string::npos);
}

TEST(CliRunQa, NeedsConfig) {
  TempDir dir;
  ::unsetenv(cli::kConfigEnv);
  EXPECT_EQ(invoke({"run-qa", "--qa", "x.jsonl", "--out", dir.path().string()}).code, cli::kExitUsage);
}

// convert-qa ---------------------------------------------------------------------

TEST(CliConvertQa, WritesRecords) {
  TempDir dir;
  text::write_file(dir / "release.json",
                   R"({"questions":[{"question":"Any cars?","answer":"yes","template_type":"exist","sample_token":"t"}]})");
  const auto r = invoke({"convert-qa", "--input", (dir / "release.json").string(), "--output",
                      (dir / "qa.jsonl").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(text::read_lines(dir / "qa.jsonl").size(), 1u);
}

// serve --------------------------------------------------------------------------

TEST(CliServe, HealthTurnAndSigterm) {
  TempDir dir;
  const auto config = write_serve_config(dir, "127.0.0.1:0");
  ServeProcess proc(config);
  const int port = proc.port();
  ASSERT_GT(port, 0);

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  json body{{"messages", {{{"role", "user"}, {"content", "Suggest some calm music."}}}}};
  auto chat = client.Post("/v1/chat/completions", body.dump(), "application/json");
  ASSERT_TRUE(chat);
  EXPECT_EQ(chat->status, 200);
  EXPECT_EQ(json::parse(chat->body)["choices"][0]["message"]["content"], "Try some jazz.");

  EXPECT_EQ(proc.terminate(), 0);
  EXPECT_EQ(text::read_lines(dir / "audit.jsonl").size(), 2u);
}

TEST(CliServe, PortInUse) {
  TempDir dir;
  const auto config = write_serve_config(dir, "127.0.0.1:0");
  ServeProcess first(config);
  const int port = first.port();
  ASSERT_GT(port, 0);
  ServeProcess second(config, "127.0.0.1:" + std::to_string(port));
  EXPECT_EQ(second.port(), 0);
  EXPECT_EQ(second.wait(), 1);
  EXPECT_EQ(first.terminate(), 0);
}
