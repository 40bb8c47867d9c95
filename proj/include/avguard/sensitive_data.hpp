#pragma once

// Rule-based detection of vehicle-sensitive data in outbound text, the
// exposure score derived from category presence, redaction, and the
// per-method usage matrix.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace avguard::llm {
class Backend;
}

namespace avguard::sensitive {

enum class Category : std::uint8_t { SC, PL, WP, TF, OD, WT, EC, VH, SI, ES };

inline constexpr std::size_t kCategoryCount = 10;
inline constexpr std::array<Category, kCategoryCount> kAllCategories = {
    Category::SC, Category::PL, Category::WP, Category::TF, Category::OD,
    Category::WT, Category::EC, Category::VH, Category::SI, Category::ES};

constexpr std::size_t index_of(Category c) noexcept { return static_cast<std::size_t>(c); }

/// Two-letter code, e.g. "SC".
std::string_view code(Category c) noexcept;
/// Human-readable name, e.g. "current speed".
std::string_view display_name(Category c) noexcept;
/// Accepts a code ("PL") case-insensitively.
std::optional<Category> category_from_code(std::string_view code) noexcept;

template <typename T>
using PerCategory = std::array<T, kCategoryCount>;

enum class RuleKind { kKeyword, kRegex };

struct Rule {
  std::string id;
  Category category = Category::SC;
  RuleKind kind = RuleKind::kKeyword;
  std::vector<std::string> terms;  // keywords; a single pattern for regex rules
  bool case_sensitive = false;
};

struct Detection;

/// Immutable compiled rule set. Construction validates every rule and
/// throws Error(kInvalidRule) on the first problem.
class DetectionRuleSet {
 public:
  explicit DetectionRuleSet(std::vector<Rule> rules);

  static DetectionRuleSet from_json(const nlohmann::json& j);
  static DetectionRuleSet from_json_text(std::string_view text);
  static DetectionRuleSet load(const std::filesystem::path& path);
  /// The shipped default rules, covering all ten categories.
  static const DetectionRuleSet& shipped_default();

  const std::vector<Rule>& rules() const noexcept { return rules_; }
  /// Number of rules per category.
  PerCategory<std::size_t> coverage() const noexcept;

 private:
  struct Compiled;
  std::vector<Rule> rules_;
  std::shared_ptr<const std::vector<Compiled>> compiled_;

  friend std::vector<Detection> detect(std::string_view, const DetectionRuleSet&);
};

struct Detection {
  Category category = Category::SC;
  std::size_t begin = 0;  // byte offsets, half-open
  std::size_t end = 0;
  std::string matched;
  std::string rule_id;
  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Every rule match, ordered by span start, then category, then span end,
/// then rule id. Placeholder tokens written by `redact` never match.
std::vector<Detection> detect(std::string_view text, const DetectionRuleSet& rules);

using Weights = PerCategory<double>;

/// Uniform default weights. Stored as 1.0 each; the score only depends on
/// normalized weights, which are 1/10 per category.
constexpr Weights uniform_weights() noexcept {
  Weights w{};
  w.fill(1.0);
  return w;
}

PerCategory<bool> presence(const std::vector<Detection>& detections) noexcept;

/// Sum of weights of present categories over the sum of all weights.
/// Throws kZeroWeightSum when all weights are zero, kInvalidArgument for
/// negative or non-finite weights.
double exposure_score(const PerCategory<bool>& present, const Weights& weights);
double exposure_score(const std::vector<Detection>& detections, const Weights& weights);

struct ExposureReport {
  std::vector<Detection> detections;
  PerCategory<bool> present{};
  double score = 0.0;
  Weights weights_used{};  // normalized to sum 1

  std::vector<std::string> present_codes() const;
};

ExposureReport assess(std::string_view text, const DetectionRuleSet& rules, const Weights& weights);

/// Summary without the matched text, safe for logs and refusals.
nlohmann::json report_summary(const ExposureReport& report);

enum class RedactionMode { kPlaceholder, kRemove };

/// "⟨SC⟩" etc. The angle brackets lie outside every rule alphabet.
std::string placeholder(Category c);

/// Replaces (or removes) every detected span. Overlapping spans are merged
/// and labelled with the category of the earliest detection. Throws
/// kSpanMismatch when a detection does not describe `text`.
std::string redact(std::string_view text, const std::vector<Detection>& detections, RedactionMode mode);

/// detect + redact repeated until no detection remains.
std::string sanitize(std::string_view text, const DetectionRuleSet& rules, RedactionMode mode);

/// Occurrences per category with overlapping same-category matches counted once.
PerCategory<std::uint64_t> category_counts(const std::vector<Detection>& detections);

using UsageRow = PerCategory<double>;

/// Scales each row by its maximum; all-zero rows stay zero.
std::vector<UsageRow> usage_matrix(const std::vector<PerCategory<std::uint64_t>>& counts);

/// Optional model-based presence check: asks `judge` which category codes
/// the text contains. Presence flags only; no spans. Throws
/// kJudgeUnavailable on backend failure, kUnparsableVerdict when the reply
/// names no recognizable code and is not "NONE".
PerCategory<bool> judge_presence(llm::Backend& judge, std::string_view text);

}  // namespace avguard::sensitive
