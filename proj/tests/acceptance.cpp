// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avguard/behavior.hpp"
#include "avguard/bpe_tokenizer.hpp"
#include "avguard/cli.hpp"
#include "avguard/command_space.hpp"
#include "avguard/eval_harness.hpp"
#include "avguard/sensitive_data.hpp"
#include "avguard/text_util.hpp"
#include "command_gen.hpp"
#include "corpus_gen.hpp"
#include "pipeline_matrix.hpp"
#include "reference_bpe.hpp"
#include "serve_process.hpp"
#include "stub_upstream.hpp"
#include "test_support.hpp"

using namespace avguard;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Collects the first failed expectation of a criterion.
class Check {
 public:
  bool expect(bool ok, const std::string& what) {
    if (!ok && failure_.empty()) failure_ = what;
    return ok;
  }
  bool ok() const { return failure_.empty(); }
  const std::string& failure() const { return failure_; }

 private:
  std::string failure_;
};

template <typename T>
std::string str(const T& v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// 1 ---------------------------------------------------------------------------

void command_space(Check& c) {
  using namespace command;
  std::mt19937_64 rng(1001);
  for (int i = 0; i < 2000 && c.ok(); ++i) {
    const auto e = testing_support::random_envelope(rng);
    const auto p = i % 2 ? VehicleProfile{} : testing_support::random_profile(rng);
    const auto once = clamp_to_safe(e, p);
    c.expect(validate_command(once.envelope, p).valid(), "clamp output invalid: " + serialize_command(e));
    const auto twice = clamp_to_safe(once.envelope, p);
    c.expect(twice.envelope == once.envelope && twice.records.empty(), "clamp not idempotent: " + serialize_command(e));
    const auto text = serialize_command(e);
    c.expect(parse_command(text, ParseMode::kStrict).same_command(e), "round trip failed: " + text);
  }
  const VehicleProfile p;
  for (double bound : {p.steer_min_deg, p.steer_max_deg}) {
    for (double d : {-0.1, 0.0, 0.1}) {
      const double s = bound + d;
      CommandEnvelope e;
      e.drive = DriveCommand{SteeringAngle(s), Speed(10)};
      const bool inside = s >= p.steer_min_deg && s <= p.steer_max_deg;
      c.expect(validate_command(e, p).valid() == inside, "steer boundary " + str(s));
    }
  }
  for (double d : {-0.1, 0.0, 0.1}) {
    const double v = p.speed_max_kmh + d;
    CommandEnvelope e;
    e.drive = DriveCommand{SteeringAngle(0), Speed(v)};
    c.expect(validate_command(e, p).valid() == (v <= p.speed_max_kmh), "speed boundary " + str(v));
  }
}

// 2 ---------------------------------------------------------------------------

void exposure_subsets(Check& c) {
  using namespace sensitive;
  for (unsigned mask = 0; mask < 1024; ++mask) {
    PerCategory<bool> present{};
    int n = 0;
    for (std::size_t i = 0; i < kCategoryCount; ++i) {
      present[i] = (mask >> i) & 1u;
      n += present[i];
    }
    c.expect(exposure_score(present, uniform_weights()) == n / 10.0, "subset mask " + str(mask));
  }
}

// 3 ---------------------------------------------------------------------------

void redaction(Check& c) {
  using namespace sensitive;
  const auto& rules = DetectionRuleSet::shipped_default();
  std::mt19937_64 rng(3003);
  for (int i = 0; i < 600 && c.ok(); ++i) {
    const auto g = testing_support::generate_text(rng);
    const auto once = sanitize(g.text, rules, RedactionMode::kPlaceholder);
    c.expect(assess(once, rules, uniform_weights()).score == 0.0, "residual exposure: " + once);
    c.expect(sanitize(once, rules, RedactionMode::kPlaceholder) == once, "not idempotent: " + once);
  }
}

// 4 ---------------------------------------------------------------------------

void no_leak(Check& c) {
  using testing_support::Expected;
  const auto& rules = sensitive::DetectionRuleSet::shipped_default();
  const auto scenarios = testing_support::scenario_matrix();
  c.expect(scenarios.size() == 100, "matrix size");
  for (const auto& s : scenarios) {
    const auto o = testing_support::run_scenario(s);
    const auto want = testing_support::expected_outbound(s);
    const std::string tag = "k=" + str(s.categories) + " redact=" + str(s.redact) + " block=" + str(s.block);
    if (want == Expected::kBlock) {
      c.expect(o.backend_calls == 0, "blocked turn reached backend, " + tag);
      c.expect(o.audit_records == 1, "audit count after block, " + tag);
      continue;
    }
    c.expect(o.backend_calls == 1, "backend calls, " + tag);
    c.expect(o.audit_records == 2, "audit count, " + tag);
    if (want == Expected::kRedact) {
      for (const auto& m : o.requests.at(0)) {
        c.expect(sensitive::assess(m.content, rules, sensitive::uniform_weights()).score == 0.0,
                 "redacted request leaks, " + tag);
      }
    }
  }
}

// 5 ---------------------------------------------------------------------------

void behavior_estimator(Check& c) {
  using namespace behavior;
  // Continuation "s<i>!" scores values[i].
  auto run = [](const std::vector<double>& values) {
    std::vector<BehaviorRule> rules;
    std::vector<std::string> script;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto tag = "s" + std::to_string(i) + "!";
      rules.push_back({"v" + std::to_string(i), tag, false, false, values[i]});
      script.push_back(tag);
    }
    ScriptedSampler sampler(script);
    return estimate_expected_behavior(BehaviorScorer::rule_based(rules), sampler, "system", 1, values.size()).mean;
  };
  c.expect(run({0.5}) == 0.5, "k=1");
  c.expect(run({1.0, -1.0}) == 0.0, "k=2");
  c.expect(run({0.5, 0.25, -0.75, 1.0}) == 0.25, "k=4");
  std::vector<double> sixteen;
  for (int i = 0; i < 16; ++i) sixteen.push_back(i / 8.0 - 1.0);
  c.expect(run(sixteen) == -0.0625, "k=16");
  c.expect(to_alignment_scale(-1.0) == 0 && to_alignment_scale(0.0) == 50 && to_alignment_scale(1.0) == 100,
           "alignment scale");
}

// 6 ---------------------------------------------------------------------------

const std::vector<std::string> kTokenSamples = {
    "",
    "a",
    "abc",
    "hello world",
    "The vehicle keeps a safe distance.",
    "Current speed 32 km/h",
    "steering angle -12 degrees",
    "It's raining, we'll be late; don't worry.",
    "1234567890",
    "   leading and trailing spaces   ",
    "line one\nline two\r\n\nline three",
    "tabs\tand\tmore\t\ttabs",
    "Straße café naïve",
    "東京 ルート 안전 運転",
    "Привет водитель!",
    "emoji 🚗💨 on the road",
    "{\"drive\":{\"steer_deg\":10,\"speed_kmh\":25}}",
    "How many pedestrians are in the scene? There are 4 pedestrians.",
    "a  b   c    d",
    "!!!???...,,,",
};

std::size_t reference_count(const std::map<std::string, long>& ranks, const llm::BpeTokenizer& tok,
                            const std::string& s) {
  const auto pieces = tok.split(s);
  return reference::count_pieces(ranks, std::vector<std::string>(pieces.begin(), pieces.end()));
}

void tokenizer(Check& c, std::string& note) {
  const auto toy_path = testing_support::data_path("toy_vocab.tiktoken");
  const auto toy = llm::BpeTokenizer::load(toy_path);
  const auto ranks = reference::load_ranks(toy_path);
  for (const auto& s : kTokenSamples) c.expect(toy.count_tokens(s) == reference_count(ranks, toy, s), "toy count: " + s);
  std::mt19937_64 rng(6006);
  for (int i = 0; i < 1000; ++i) {
    const auto s = testing_support::random_utf8(rng, 40);
    c.expect(toy.decode(toy.encode_ordinary(s)) == s, "decode(encode) differs");
  }
  const char* cl100k = std::getenv("AVGUARD_CL100K_RANKS");
  if (!cl100k || !*cl100k) {
    note = "cl100k skipped";
    return;
  }
  const auto tok = llm::BpeTokenizer::load(cl100k);
  const auto big = reference::load_ranks(cl100k);
  c.expect(tok.encode_ordinary("hello world") == std::vector<llm::TokenId>{15339, 1917}, "cl100k hello world");
  for (const auto& s : kTokenSamples) c.expect(tok.count_tokens(s) == reference_count(big, tok, s), "cl100k count: " + s);
  note = "cl100k checked";
}

// 7 ---------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::string& err) {
  std::ostringstream out, e;
  const int code = cli::run_cli(args, out, e);
  err = e.str();
  return code;
}

void qa_harness(Check& c) {
  testing_support::TempDir dir;
  // 50 questions per category with planted correct counts.
  const std::map<eval::QaCategory, std::size_t> planted = {{eval::QaCategory::kExist, 42},
                                                           {eval::QaCategory::kCount, 50},
                                                           {eval::QaCategory::kObject, 37},
                                                           {eval::QaCategory::kStatus, 45},
                                                           {eval::QaCategory::kComparison, 48}};
  std::vector<eval::QaRecord> qa;
  std::string fixtures;
  for (const auto& [cat, correct] : planted) {
    const std::string name(eval::qa_category_name(cat));
    for (std::size_t i = 0; i < 50; ++i) {
      const auto question = "Question " + std::to_string(i) + " about " + name + "?";
      qa.push_back({name + "-" + std::to_string(i), question, "answer" + std::to_string(i), cat});
      const auto reply = i < correct ? "It is answer" + std::to_string(i) + "." : std::string("Not sure.");
      fixtures += json{{"user", question}, {"reply", reply}}.dump() + "\n";
    }
  }
  text::write_file(dir / "qa.jsonl", eval::qa_to_jsonl(qa));
  text::write_file(dir / "fixtures.jsonl", fixtures);
  json cfg{{"backends", {{{"name", "offline"}, {"kind", "scripted"}, {"fixtures", "fixtures.jsonl"}}}},
           {"roles", {{"data", "offline"}}}};
  text::write_file(dir / "config.json", cfg.dump(2));

  auto run = [&](const std::string& out) {
    std::string err;
    const int code = run_cli({"run-qa", "--config", (dir / "config.json").string(), "--qa", (dir / "qa.jsonl").string(),
                              "--seed", "7", "--out", (dir / out).string()},
                             err);
    c.expect(code == 0, "run-qa failed: " + err);
  };
  run("a");
  run("b");
  if (!c.ok()) return;

  const auto report = json::parse(text::read_file(dir / "a" / "qa_report.json"))["reports"][0];
  for (const auto& [cat, correct] : planted) {
    const auto& m = report["categories"][std::string(eval::qa_category_name(cat))];
    c.expect(m["n"] == 50 && m["correct"] == correct, "planted count " + std::string(eval::qa_category_name(cat)));
  }
  c.expect(report["categories"]["exist"]["accuracy"] == "84.0%", "42/50 renders as 84.0%");
  c.expect(report["overall_accuracy"] == "88.8%", "overall 222/250");
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    const auto name = entry.path().filename();
    if (name == "run_info.json") continue;
    c.expect(text::read_file(entry.path()) == text::read_file(dir / "b" / name), "rerun differs: " + name.string());
  }

  // Sampling draws 5 x 50 from a larger pool, deterministically per seed.
  std::vector<eval::QaRecord> pool;
  for (auto cat : eval::kAllQaCategories) {
    for (int i = 0; i < 120; ++i) pool.push_back({std::string(eval::qa_category_name(cat)) + std::to_string(i), "q", "a", cat});
  }
  const auto s1 = eval::sample_per_category(pool, 50, 42);
  eval::PerQaCategory<std::size_t> counts{};
  for (const auto& r : s1) ++counts[eval::qa_index(r.category)];
  for (auto n : counts) c.expect(n == 50, "per-category sample size");
  std::shuffle(pool.begin(), pool.end(), std::mt19937(5));
  c.expect(eval::qa_to_jsonl(eval::sample_per_category(pool, 50, 42)) == eval::qa_to_jsonl(s1), "seeded sample differs");
  c.expect(eval::qa_to_jsonl(eval::sample_per_category(pool, 50, 43)) != eval::qa_to_jsonl(s1), "seed has no effect");
}

// 8 ---------------------------------------------------------------------------

void weighted(Check& c) {
  std::mt19937_64 rng(8008);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int draw = 0; draw < 100; ++draw) {
    std::map<std::string, double> acc, w, scaled;
    long double num = 0, den = 0;
    const double factor = std::pow(10.0, unit(rng) * 6 - 3);
    const int judges = 1 + draw % 6;
    for (int j = 0; j < judges; ++j) {
      const auto name = "judge" + std::to_string(j);
      acc[name] = unit(rng);
      w[name] = unit(rng) + 1e-3;
      scaled[name] = w[name] * factor;
      num += static_cast<long double>(w[name]) * acc[name];
      den += w[name];
    }
    const double got = eval::weighted_overall(acc, w);
    c.expect(std::abs(got - static_cast<double>(num / den)) <= 1e-12, "brute force draw " + str(draw));
    c.expect(std::abs(eval::weighted_overall(acc, scaled) - got) <= 1e-12, "scale invariance draw " + str(draw));
  }
}

// 9 ---------------------------------------------------------------------------

void proxy(Check& c) {
  testing_support::TempDir dir;
  testing_support::StubUpstream upstream(testing_support::StubUpstream::canned("Sure, keep a safe distance."));
  json cfg{{"backends",
            {{{"name", "upstream"}, {"kind", "http"}, {"endpoint", upstream.endpoint()}, {"model", "stub"},
              {"max_retries", 0}, {"timeout_s", 5}}}},
           {"roles", {{"data", "upstream"}}},
           {"audit_log", "audit.jsonl"},
           {"server", {{"listen", "127.0.0.1:0"}, {"threads", 4}}}};
  text::write_file(dir / "config.json", cfg.dump(2));

  testing_support::ServeProcess serve(dir / "config.json");
  const int port = serve.port();
  if (!c.expect(port > 0, "serve did not start")) return;
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(std::chrono::seconds(10));
  auto chat = [&](const std::string& user) {
    json body{{"messages", {{{"role", "user"}, {"content", user}}}}};
    return client.Post("/v1/chat/completions", body.dump(), "application/json");
  };

  const auto health = client.Get("/health");
  c.expect(health && health->status == 200, "health");

  const auto allow = chat("Suggest some calm music.");
  c.expect(allow && allow->status == 200 &&
               json::parse(allow->body)["choices"][0]["message"]["content"] == "Sure, keep a safe distance.",
           "allow round trip");
  const auto redact = chat("My current speed is 50 km/h, is that fine here?");
  c.expect(redact && redact->status == 200, "redact round trip");
  c.expect(upstream.calls() == 2 && json::parse(upstream.bodies().back())["messages"][0]["content"] ==
                                        "My ⟨SC⟩ is ⟨SC⟩, is that fine here?",
           "upstream saw unredacted text");
  const auto block = chat(testing_support::prompt_with_categories(6));
  c.expect(block && block->status == 403, "block refused");
  c.expect(upstream.calls() == 2, "blocked request reached upstream");

  const auto metrics = client.Get("/metrics");
  if (c.expect(metrics && metrics->status == 200, "metrics")) {
    const auto m = json::parse(metrics->body);
    c.expect(m["outbound"]["allow"] == 1 && m["outbound"]["redact"] == 1 && m["outbound"]["block"] == 1,
             "metrics verdict counts");
  }
  // Every record is on disk before shutdown.
  c.expect(text::read_lines(dir / "audit.jsonl").size() == 5, "audit lines while running");
  c.expect(serve.terminate() == 0, "SIGTERM exit code");
  const auto lines = text::read_lines(dir / "audit.jsonl");
  c.expect(lines.size() == 5, "audit lines after shutdown");
  for (const auto& line : lines) c.expect(!json::parse(line, nullptr, false).is_discarded(), "audit line not JSON");
}

struct Criterion {
  int id;
  std::string name;
  double limit_s;
  std::function<void(Check&, std::string&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "command space properties", 10, [](Check& c, std::string&) { command_space(c); }},
      {2, "exposure over all category subsets", 1, [](Check& c, std::string&) { exposure_subsets(c); }},
      {3, "redaction clears exposure", 10, [](Check& c, std::string&) { redaction(c); }},
      {4, "no-leak pipeline matrix", 10, [](Check& c, std::string&) { no_leak(c); }},
      {5, "behavior estimator", 0, [](Check& c, std::string&) { behavior_estimator(c); }},
      {6, "tokenizer", 0, tokenizer},
      {7, "QA harness end to end", 30, [](Check& c, std::string&) { qa_harness(c); }},
      {8, "weighted overall accuracy", 0, [](Check& c, std::string&) { weighted(c); }},
      {9, "proxy integration", 10, [](Check& c, std::string&) { proxy(c); }},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check check;
    std::string note;
    const auto start = std::chrono::steady_clock::now();
    try {
      cr.run(check, note);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cr.limit_s > 0) check.expect(secs < cr.limit_s, "took " + str(secs) + " s, limit " + str(cr.limit_s) + " s");
    std::cout << (check.ok() ? "PASS" : "FAIL") << " " << cr.id << " " << cr.name << " (" << std::fixed
              << std::setprecision(2) << secs << " s" << (note.empty() ? "" : ", " + note) << ")";
    if (!check.ok()) std::cout << ": " << check.failure();
    std::cout << std::endl;
    failed += !check.ok();
  }
  return failed == 0 ? 0 : 1;
}
