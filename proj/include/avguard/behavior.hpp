#pragma once

// Behavior scoring B: text -> [-1, 1], Monte-Carlo estimation of the
// expected behavior of sampled continuations, the prompt-alignability test,
// and the 0-100 alignment scale.

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "avguard/llm_client.hpp"
#include "avguard/sensitive_data.hpp"

namespace avguard::behavior {

struct BehaviorScore {
  double value = 0.0;                  // in [-1, 1]
  std::vector<std::string> rationale;  // matched rule ids, or the judge reply
};

struct BehaviorRule {
  std::string id;
  std::string pattern;
  bool is_regex = false;
  bool case_sensitive = false;
  double contribution = 0.0;  // in [-1, 1]
};

struct JudgeConfig {
  std::shared_ptr<llm::Backend> backend;
  /// "{{text}}" is replaced by the text being scored.
  std::string prompt_template;
  /// Scale the judge answers on; mapped linearly onto [-1, 1].
  double verdict_min = -1.0;
  double verdict_max = 1.0;
};

class BehaviorScorer {
 public:
  enum class Kind { kRuleBased, kJudge };

  /// Throws Error(kInvalidRule) for contributions outside [-1, 1], duplicate
  /// ids or bad patterns.
  static BehaviorScorer rule_based(std::vector<BehaviorRule> rules);
  static BehaviorScorer judge(JudgeConfig config);
  /// Rule-table file: {"version":1,"rules":[{"id","type":"keyword|regex","pattern","score"}]}.
  static BehaviorScorer from_json(const nlohmann::json& j);
  static BehaviorScorer load(const std::filesystem::path& path);
  static const BehaviorScorer& shipped_default();
  static std::string default_judge_prompt();

  Kind kind() const noexcept { return kind_; }
  const std::vector<BehaviorRule>& rules() const noexcept { return rules_; }

  /// Throws kInvalidArgument for empty text; in judge mode kJudgeUnavailable
  /// or kUnparsableVerdict.
  BehaviorScore score(std::string_view text) const;

 private:
  struct Compiled;
  Kind kind_ = Kind::kRuleBased;
  std::vector<BehaviorRule> rules_;
  std::shared_ptr<const std::vector<Compiled>> compiled_;
  JudgeConfig judge_;
};

inline BehaviorScore score_text(const BehaviorScorer& scorer, std::string_view text) { return scorer.score(text); }

/// Source of sampled continuations s1 + ... + sn given a system prompt.
class Sampler {
 public:
  virtual ~Sampler() = default;
  /// Thread-safe. Returns the concatenated n-turn continuation.
  virtual std::string continuation(std::string_view system_prompt, std::size_t depth) = 0;
};

/// Replays fixed continuations in order; throws kSamplerExhausted when out.
class ScriptedSampler final : public Sampler {
 public:
  explicit ScriptedSampler(std::vector<std::string> continuations) : continuations_(std::move(continuations)) {}
  std::string continuation(std::string_view system_prompt, std::size_t depth) override;
  std::size_t remaining() const noexcept;

 private:
  std::vector<std::string> continuations_;
  std::atomic<std::size_t> next_{0};
};

/// Drives a conversation of `depth` turns against a backend, each turn a
/// fixed user nudge, and returns the assistant turns joined by newlines.
class BackendSampler final : public Sampler {
 public:
  explicit BackendSampler(std::shared_ptr<llm::Backend> backend, std::string user_turn = "Continue.",
                          llm::CompletionParams params = {})
      : backend_(std::move(backend)), user_turn_(std::move(user_turn)), params_(params) {}
  std::string continuation(std::string_view system_prompt, std::size_t depth) override;

 private:
  std::shared_ptr<llm::Backend> backend_;
  std::string user_turn_;
  llm::CompletionParams params_;
};

struct ExpectationEstimate {
  double mean = 0.0;
  std::size_t sample_count = 0;
  std::vector<double> samples;  // in draw order
  std::size_t depth = 0;
};

struct EstimateOptions {
  std::size_t max_parallel = 1;  // concurrent sampler calls
};

/// Draws k continuations of s0 with depth n, scores each, and averages.
/// An empty continuation scores 0.
ExpectationEstimate estimate_expected_behavior(const BehaviorScorer& scorer, Sampler& sampler,
                                               std::string_view system_prompt, std::size_t depth, std::size_t k,
                                               EstimateOptions options = {});

/// Mean exposure score over k sampled continuations.
ExpectationEstimate estimate_expected_exposure(const sensitive::DetectionRuleSet& rules,
                                               const sensitive::Weights& weights, Sampler& sampler,
                                               std::string_view system_prompt, std::size_t depth, std::size_t k,
                                               EstimateOptions options = {});

struct CandidateEstimate {
  std::string prompt;
  ExpectationEstimate estimate;
};

struct AlignabilityVerdict {
  double gamma = 1.0;
  double epsilon = 0.0;
  std::optional<std::string> witness_prompt;
  std::optional<double> witness_mean;
  bool holds = false;
};

/// holds iff some candidate's mean < gamma + epsilon; the witness is the
/// candidate with the smallest mean (first on ties). Requires a non-empty
/// list, gamma in (0, 1] and epsilon > 0.
AlignabilityVerdict check_alignability(const std::vector<CandidateEstimate>& candidates, double gamma,
                                       double epsilon);

/// round-half-up(50 * (value + 1)), clamped to [0, 100].
int to_alignment_scale(double value);
inline int to_alignment_scale(const BehaviorScore& score) { return to_alignment_scale(score.value); }

}  // namespace avguard::behavior
