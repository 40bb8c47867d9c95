#pragma once

// System-prompt profiling and category-tagged QA benchmark runs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "avguard/behavior.hpp"
#include "avguard/bpe_tokenizer.hpp"
#include "avguard/llm_client.hpp"
#include "avguard/sensitive_data.hpp"

namespace avguard::eval {

// Prompt corpus ---------------------------------------------------------------

struct MethodPrompt {
  std::string name;
  std::string model;
  std::string system_prompt;
  std::string citation;
  /// Safety figure reported by the method's own authors; metadata only.
  std::optional<double> literature_safety;
};

/// Directory with manifest.json:
///   {"methods":[{"name","model","file","citation","literature_safety"?}]}
/// and one text file per method. Throws kConfigError / kIoError.
std::vector<MethodPrompt> load_corpus(const std::filesystem::path& dir);

struct ProfileRow {
  std::string method;
  std::string model;
  std::size_t tokens = 0;
  bool approximate_tokens = false;
  sensitive::ExposureReport exposure;
  sensitive::PerCategory<std::uint64_t> category_counts{};
  double behavior = 0.0;
  int alignment = 0;  // 0-100
  std::optional<double> literature_safety;
};

/// Token count with `tok`, or the whitespace approximation when null.
ProfileRow profile_prompt(const MethodPrompt& method, const llm::BpeTokenizer* tok,
                          const sensitive::DetectionRuleSet& rules, const sensitive::Weights& weights,
                          const behavior::BehaviorScorer& scorer);

// QA records --------------------------------------------------------------------

enum class QaCategory { kExist, kCount, kObject, kStatus, kComparison };
inline constexpr std::array<QaCategory, 5> kAllQaCategories = {QaCategory::kExist, QaCategory::kCount,
                                                                QaCategory::kObject, QaCategory::kStatus,
                                                                QaCategory::kComparison};
constexpr std::size_t qa_index(QaCategory c) noexcept { return static_cast<std::size_t>(c); }
std::string_view qa_category_name(QaCategory c) noexcept;
/// Throws kInvalidArgument.
QaCategory qa_category_from_name(std::string_view name);

template <typename T>
using PerQaCategory = std::array<T, kAllQaCategories.size()>;

struct QaRecord {
  std::string id;
  std::string question;
  std::string answer;
  QaCategory category = QaCategory::kExist;
};

/// One JSON object per line: {"id","question","answer","category"}.
std::vector<QaRecord> load_qa(const std::filesystem::path& path);
std::string qa_to_jsonl(const std::vector<QaRecord>& records);

/// Public nuScenes-QA release: {"questions":[{"question","answer","template_type","sample_token",...}]}.
/// Ids are "<sample_token>-<index>"; records with an unknown template are skipped.
std::vector<QaRecord> convert_nuscenes_qa(const nlohmann::json& release);

/// Up to `per_category` records of every category, drawn by a seeded
/// shuffle of each category's pool. The pool order is the natural order of
/// ids, so the draw does not depend on input order. Output is sorted by id.
std::vector<QaRecord> sample_per_category(const std::vector<QaRecord>& records, std::size_t per_category,
                                          std::uint64_t seed);

// Grading ------------------------------------------------------------------------

/// Casefold, strip punctuation and articles, number words 0-20 to digits,
/// yes/no synonyms to "yes"/"no". Tokens joined by single spaces.
std::string normalize_answer(std::string_view text);

/// Normalized equality, or the gold answer as a whole-token span of the prediction.
bool grade_lexical(std::string_view predicted, std::string_view gold);

enum class GradeMode { kLexical, kJudge };

class Grader {
 public:
  static Grader lexical();
  /// Judge mode asks the backend for a yes/no verdict.
  static Grader judge(std::shared_ptr<llm::Backend> backend);

  GradeMode mode() const noexcept { return mode_; }
  std::string name() const;
  /// Throws kInvalidArgument for an empty gold answer; judge mode throws
  /// kUnparsableVerdict or kJudgeUnavailable.
  bool grade(std::string_view question, std::string_view predicted, std::string_view gold) const;

 private:
  GradeMode mode_ = GradeMode::kLexical;
  std::shared_ptr<llm::Backend> judge_;
};

// Runs ---------------------------------------------------------------------------

struct QaResult {
  std::string id;
  QaCategory category = QaCategory::kExist;
  std::string predicted;
  std::string gold;
  bool correct = false;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double latency_s = 0.0;
  std::optional<std::string> error;  // backend or grading failure
};

struct RunOptions {
  std::size_t max_parallel = 4;
  llm::CompletionParams params;
  Grader grader = Grader::lexical();
};

/// Asks every question with the method's system prompt. Failures become
/// incorrect results with an error annotation. Results are ordered by id.
std::vector<QaResult> run_qa(const MethodPrompt& method, const std::vector<QaRecord>& qa, llm::Backend& backend,
                             const RunOptions& options = {});

struct CategoryMetrics {
  std::size_t n = 0;
  std::size_t correct = 0;
  std::optional<double> accuracy;  // absent when n == 0
  double mean_completion_tokens = 0.0;
  double mean_latency_s = 0.0;
};

struct EvalReport {
  std::string method;
  std::string model;
  std::string backend;
  std::string grader;
  PerQaCategory<CategoryMetrics> per_category{};
  std::size_t total = 0;
  std::size_t correct = 0;
  std::optional<double> overall_accuracy;  // micro-average; absent when total == 0
  std::uint64_t seed = 0;
  std::string config_hash;
};

EvalReport aggregate(const std::vector<QaResult>& results);

/// sum(w * a) / sum(w) over the judges in `accuracy`. Every judge needs a
/// weight. Throws kZeroWeightSum, or kInvalidArgument for missing or
/// negative weights and an empty map.
double weighted_overall(const std::map<std::string, double>& accuracy, const std::map<std::string, double>& weights);

}  // namespace avguard::eval
