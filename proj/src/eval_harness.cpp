#include "avguard/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "avguard/error.hpp"
#include "avguard/text_util.hpp"

namespace avguard::eval {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& why) { throw Error(ErrorCode::kConfigError, why); }

}  // namespace

// ---------------------------------------------------------------------------
// Corpus and profiling

std::vector<MethodPrompt> load_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const json manifest = json::parse(text::read_file(manifest_path), nullptr, false);
  if (manifest.is_discarded()) config_error("manifest is not valid JSON: " + manifest_path.string());
  std::vector<MethodPrompt> out;
  std::set<std::string> names;
  try {
    for (const auto& m : manifest.at("methods")) {
      MethodPrompt p;
      p.name = m.at("name").get<std::string>();
      p.model = m.value("model", std::string());
      p.citation = m.value("citation", std::string());
      if (m.contains("literature_safety") && m.at("literature_safety").is_number()) {
        p.literature_safety = m.at("literature_safety").get<double>();
      }
      if (!names.insert(p.name).second) config_error("duplicate method '" + p.name + "' in manifest");
      p.system_prompt = text::read_file(dir / m.at("file").get<std::string>());
      if (text::trim(p.system_prompt).empty()) config_error("method '" + p.name + "' has an empty prompt");
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    config_error(std::string("manifest: ") + e.what());
  }
  return out;
}

ProfileRow profile_prompt(const MethodPrompt& method, const llm::BpeTokenizer* tok,
                          const sensitive::DetectionRuleSet& rules, const sensitive::Weights& weights,
                          const behavior::BehaviorScorer& scorer) {
  ProfileRow row;
  row.method = method.name;
  row.model = method.model;
  row.literature_safety = method.literature_safety;
  if (tok) {
    row.tokens = tok->count_tokens(method.system_prompt);
  } else {
    row.tokens = llm::approximate_token_count(method.system_prompt);
    row.approximate_tokens = true;
  }
  row.exposure = sensitive::assess(method.system_prompt, rules, weights);
  row.category_counts = sensitive::category_counts(row.exposure.detections);
  row.behavior = scorer.score(method.system_prompt).value;
  row.alignment = behavior::to_alignment_scale(row.behavior);
  return row;
}

// ---------------------------------------------------------------------------
// QA records

std::string_view qa_category_name(QaCategory c) noexcept {
  switch (c) {
    case QaCategory::kExist: return "exist";
    case QaCategory::kCount: return "count";
    case QaCategory::kObject: return "object";
    case QaCategory::kStatus: return "status";
    case QaCategory::kComparison: return "comparison";
  }
  return "exist";
}

QaCategory qa_category_from_name(std::string_view name) {
  const auto n = text::ascii_lower(text::trim(name));
  for (auto c : kAllQaCategories) {
    if (qa_category_name(c) == n) return c;
  }
  if (n == "existence" || n == "exists") return QaCategory::kExist;
  if (n == "compare") return QaCategory::kComparison;
  throw Error(ErrorCode::kInvalidArgument, "unknown QA category '" + std::string(name) + "'");
}

std::vector<QaRecord> load_qa(const std::filesystem::path& path) {
  std::vector<QaRecord> out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  for (const auto& line : text::read_lines(path)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const json j = json::parse(line, nullptr, false);
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (j.is_discarded()) config_error(where + ": not valid JSON");
    try {
      QaRecord r;
      r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      r.question = j.at("question").get<std::string>();
      r.answer = j.at("answer").is_string() ? j.at("answer").get<std::string>() : j.at("answer").dump();
      r.category = qa_category_from_name(j.at("category").get<std::string>());
      if (!ids.insert(r.id).second) config_error(where + ": duplicate id '" + r.id + "'");
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      config_error(where + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kConfigError) throw;
      config_error(where + ": " + e.what());
    }
  }
  return out;
}

std::string qa_to_jsonl(const std::vector<QaRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["question"] = r.question;
    j["answer"] = r.answer;
    j["category"] = qa_category_name(r.category);
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<QaRecord> convert_nuscenes_qa(const json& release) {
  std::vector<QaRecord> out;
  try {
    const auto& questions = release.is_array() ? release : release.at("questions");
    std::size_t index = 0;
    for (const auto& q : questions) {
      const std::size_t i = index++;
      QaRecord r;
      try {
        r.category = qa_category_from_name(q.at("template_type").get<std::string>());
      } catch (const Error&) {
        continue;
      }
      r.question = q.at("question").get<std::string>();
      const auto& a = q.at("answer");
      r.answer = a.is_string() ? a.get<std::string>() : a.dump();
      r.id = q.value("sample_token", std::string("q")) + "-" + std::to_string(i);
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    config_error(std::string("nuScenes-QA release: ") + e.what());
  }
  return out;
}

namespace {

// Unbiased draw from [0, bound) by rejection.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

bool by_id(const QaRecord& a, const QaRecord& b) { return text::natural_less(a.id, b.id); }

}  // namespace

std::vector<QaRecord> sample_per_category(const std::vector<QaRecord>& records, std::size_t per_category,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<QaRecord> out;
  for (auto c : kAllQaCategories) {
    std::vector<QaRecord> pool;
    for (const auto& r : records) {
      if (r.category == c) pool.push_back(r);
    }
    std::sort(pool.begin(), pool.end(), by_id);
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[bounded(rng, i)]);
    pool.resize(std::min(pool.size(), per_category));
    for (auto& r : pool) out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), by_id);
  return out;
}

// ---------------------------------------------------------------------------
// Grading

namespace {

const std::map<std::string, std::string>& word_map() {
  static const std::map<std::string, std::string> m = [] {
    std::map<std::string, std::string> w;
    const char* numbers[] = {"zero",   "one",     "two",     "three",    "four",     "five",    "six",
                             "seven",  "eight",   "nine",    "ten",      "eleven",   "twelve",  "thirteen",
                             "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty"};
    for (int i = 0; i <= 20; ++i) w[numbers[i]] = std::to_string(i);
    for (const char* y : {"yes", "yeah", "yep", "true", "correct", "affirmative"}) w[y] = "yes";
    for (const char* n : {"no", "nope", "false", "incorrect", "negative"}) w[n] = "no";
    return w;
  }();
  return m;
}

std::vector<std::string> answer_tokens(std::string_view text) {
  std::string s = text::ascii_lower(text);
  for (char& c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) c = ' ';
  }
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (auto it = word_map().find(tok); it != word_map().end()) tok = it->second;
    out.push_back(std::move(tok));
  }
  return out;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

constexpr std::string_view kJudgeTemplate =
    "Question: {q}\nReference answer: {g}\nCandidate answer: {p}\n"
    "Does the candidate answer agree with the reference answer? Reply with yes or no only.";

}  // namespace

std::string normalize_answer(std::string_view text) { return join(answer_tokens(text)); }

bool grade_lexical(std::string_view predicted, std::string_view gold) {
  const auto p = answer_tokens(predicted);
  const auto g = answer_tokens(gold);
  if (p == g) return true;
  if (g.empty() || g.size() > p.size()) return false;
  return std::search(p.begin(), p.end(), g.begin(), g.end()) != p.end();
}

Grader Grader::lexical() { return Grader(); }

Grader Grader::judge(std::shared_ptr<llm::Backend> backend) {
  if (!backend) throw Error(ErrorCode::kInvalidArgument, "judge grader needs a backend");
  Grader g;
  g.mode_ = GradeMode::kJudge;
  g.judge_ = std::move(backend);
  return g;
}

std::string Grader::name() const {
  if (mode_ == GradeMode::kLexical) return "lexical";
  return "judge:" + std::string(judge_->name());
}

bool Grader::grade(std::string_view question, std::string_view predicted, std::string_view gold) const {
  if (text::trim(gold).empty()) throw Error(ErrorCode::kInvalidArgument, "empty gold answer");
  if (mode_ == GradeMode::kLexical) return grade_lexical(predicted, gold);

  std::string prompt(kJudgeTemplate);
  auto fill = [&prompt](std::string_view key, std::string_view value) {
    const auto pos = prompt.find(key);
    prompt.replace(pos, key.size(), value);
  };
  fill("{q}", question);
  fill("{g}", gold);
  fill("{p}", predicted);
  llm::Completion reply;
  try {
    reply = judge_->complete({{llm::Role::kUser, prompt}}, llm::CompletionParams{0.0, std::nullopt});
  } catch (const Error& e) {
    throw Error(ErrorCode::kJudgeUnavailable, e.what());
  }
  const auto tokens = answer_tokens(reply.reply.content);
  if (!tokens.empty() && tokens.front() == "yes") return true;
  if (!tokens.empty() && tokens.front() == "no") return false;
  throw Error(ErrorCode::kUnparsableVerdict, "judge gave no yes/no verdict");
}

// ---------------------------------------------------------------------------
// Runs

std::vector<QaResult> run_qa(const MethodPrompt& method, const std::vector<QaRecord>& qa, llm::Backend& backend,
                             const RunOptions& options) {
  if (qa.empty()) throw Error(ErrorCode::kInvalidArgument, "no questions to run");
  std::vector<QaResult> results(qa.size());
  std::atomic<std::size_t> next{0};

  auto ask = [&](const QaRecord& q, QaResult& r) {
    r.id = q.id;
    r.category = q.category;
    r.gold = q.answer;
    std::vector<llm::ChatMessage> messages;
    if (!method.system_prompt.empty()) messages.push_back({llm::Role::kSystem, method.system_prompt});
    messages.push_back({llm::Role::kUser, q.question});
    try {
      auto c = backend.complete(messages, options.params);
      r.predicted = c.reply.content;
      r.prompt_tokens = c.usage.prompt_tokens;
      r.completion_tokens = c.usage.completion_tokens;
      r.latency_s = c.usage.latency_s;
    } catch (const Error& e) {
      r.error = std::string(error_code_name(e.code()));
      return;
    }
    try {
      r.correct = options.grader.grade(q.question, r.predicted, q.answer);
    } catch (const Error& e) {
      r.correct = false;
      r.error = std::string(error_code_name(e.code()));
    }
  };
  auto worker = [&] {
    for (std::size_t i = next++; i < qa.size(); i = next++) ask(qa[i], results[i]);
  };

  const std::size_t width = std::clamp<std::size_t>(options.max_parallel, 1, qa.size());
  if (width == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < width; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const QaResult& a, const QaResult& b) { return text::natural_less(a.id, b.id); });
  return results;
}

EvalReport aggregate(const std::vector<QaResult>& results) {
  EvalReport report;
  PerQaCategory<double> tokens{}, latency{};
  for (const auto& r : results) {
    auto& m = report.per_category[qa_index(r.category)];
    ++m.n;
    if (r.correct) ++m.correct;
    tokens[qa_index(r.category)] += static_cast<double>(r.completion_tokens);
    latency[qa_index(r.category)] += r.latency_s;
  }
  for (auto c : kAllQaCategories) {
    auto& m = report.per_category[qa_index(c)];
    if (m.n == 0) continue;
    const auto n = static_cast<double>(m.n);
    m.accuracy = static_cast<double>(m.correct) / n;
    m.mean_completion_tokens = tokens[qa_index(c)] / n;
    m.mean_latency_s = latency[qa_index(c)] / n;
    report.total += m.n;
    report.correct += m.correct;
  }
  if (report.total > 0) report.overall_accuracy = static_cast<double>(report.correct) / static_cast<double>(report.total);
  return report;
}

double weighted_overall(const std::map<std::string, double>& accuracy, const std::map<std::string, double>& weights) {
  if (accuracy.empty()) throw Error(ErrorCode::kInvalidArgument, "no judge accuracies");
  double num = 0.0, den = 0.0;
  for (const auto& [judge, a] : accuracy) {
    const auto it = weights.find(judge);
    if (it == weights.end()) throw Error(ErrorCode::kInvalidArgument, "no weight for judge '" + judge + "'");
    const double w = it->second;
    if (!std::isfinite(w) || w < 0.0) throw Error(ErrorCode::kInvalidArgument, "weight for '" + judge + "' is negative");
    num += w * a;
    den += w;
  }
  if (den == 0.0) throw Error(ErrorCode::kZeroWeightSum, "judge weights sum to zero");
  return num / den;
}

}  // namespace avguard::eval
