#include "avguard/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <regex>
#include <set>

#include <nlohmann/json.hpp>

#include "avguard/embedded_data.hpp"
#include "avguard/error.hpp"
#include "avguard/text_util.hpp"

namespace avguard::behavior {

using nlohmann::json;

struct BehaviorScorer::Compiled {
  std::string folded;                // keyword rules
  std::optional<std::regex> pattern;  // regex rules
};

namespace {

[[noreturn]] void invalid_rule(const std::string& why) { throw Error(ErrorCode::kInvalidRule, why); }

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

BehaviorScorer BehaviorScorer::rule_based(std::vector<BehaviorRule> rules) {
  BehaviorScorer s;
  s.kind_ = Kind::kRuleBased;
  auto compiled = std::make_shared<std::vector<Compiled>>();
  std::set<std::string> ids;
  for (const auto& r : rules) {
    if (r.id.empty()) invalid_rule("behavior rule without id");
    if (!ids.insert(r.id).second) invalid_rule("duplicate behavior rule id '" + r.id + "'");
    if (!std::isfinite(r.contribution) || r.contribution < -1.0 || r.contribution > 1.0) {
      invalid_rule("rule '" + r.id + "' contribution outside [-1, 1]");
    }
    if (text::trim(r.pattern).empty()) invalid_rule("rule '" + r.id + "' has an empty pattern");
    Compiled c;
    if (r.is_regex) {
      auto flags = std::regex::ECMAScript;
      if (!r.case_sensitive) flags |= std::regex::icase;
      try {
        c.pattern.emplace(r.pattern, flags);
      } catch (const std::regex_error& e) {
        invalid_rule("rule '" + r.id + "': bad pattern: " + e.what());
      }
    } else {
      c.folded = r.case_sensitive ? r.pattern : text::ascii_lower(r.pattern);
    }
    compiled->push_back(std::move(c));
  }
  s.rules_ = std::move(rules);
  s.compiled_ = std::move(compiled);
  return s;
}

BehaviorScorer BehaviorScorer::judge(JudgeConfig config) {
  if (!config.backend) throw Error(ErrorCode::kInvalidArgument, "judge scorer needs a backend");
  if (config.prompt_template.find("{{text}}") == std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "judge prompt template lacks {{text}}");
  }
  if (!(config.verdict_max > config.verdict_min)) {
    throw Error(ErrorCode::kInvalidArgument, "judge verdict range is empty");
  }
  BehaviorScorer s;
  s.kind_ = Kind::kJudge;
  s.judge_ = std::move(config);
  return s;
}

BehaviorScorer BehaviorScorer::from_json(const json& j) {
  std::vector<BehaviorRule> rules;
  try {
    if (!j.is_object() || !j.contains("rules") || !j.at("rules").is_array()) {
      invalid_rule("rule table must be an object with a 'rules' list");
    }
    for (const auto& r : j.at("rules")) {
      BehaviorRule rule;
      rule.id = r.at("id").get<std::string>();
      const auto type = r.value("type", std::string("keyword"));
      if (type == "regex") {
        rule.is_regex = true;
      } else if (type != "keyword") {
        invalid_rule("rule '" + rule.id + "' has unknown type '" + type + "'");
      }
      rule.pattern = r.at("pattern").get<std::string>();
      rule.case_sensitive = r.value("case_sensitive", false);
      rule.contribution = r.at("score").get<double>();
      rules.push_back(std::move(rule));
    }
  } catch (const json::exception& e) {
    invalid_rule(std::string("malformed rule table: ") + e.what());
  }
  return rule_based(std::move(rules));
}

BehaviorScorer BehaviorScorer::load(const std::filesystem::path& path) {
  std::string content;
  try {
    content = text::read_file(path);
  } catch (const Error& e) {
    invalid_rule(std::string("cannot load rule table: ") + e.what());
  }
  const json j = json::parse(content, nullptr, false);
  if (j.is_discarded()) invalid_rule("rule table is not valid JSON");
  return from_json(j);
}

const BehaviorScorer& BehaviorScorer::shipped_default() {
  static const BehaviorScorer scorer = from_json(json::parse(embedded::behavior_rules_json));
  return scorer;
}

std::string BehaviorScorer::default_judge_prompt() { return std::string(embedded::judge_prompt_txt); }

BehaviorScore BehaviorScorer::score(std::string_view input) const {
  if (text::trim(input).empty()) throw Error(ErrorCode::kInvalidArgument, "cannot score empty text");
  BehaviorScore out;
  if (kind_ == Kind::kRuleBased) {
    const std::string folded = text::ascii_lower(input);
    double sum = 0.0;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      const auto& rule = rules_[i];
      const auto& c = (*compiled_)[i];
      bool hit = false;
      if (c.pattern) {
        hit = std::regex_search(input.begin(), input.end(), *c.pattern);
      } else {
        hit = !text::keyword_spans(input, rule.case_sensitive ? input : std::string_view(folded), c.folded).empty();
      }
      if (hit) {
        sum += rule.contribution;
        out.rationale.push_back(rule.id);
      }
    }
    out.value = clamp_unit(sum);
    return out;
  }

  std::string prompt = judge_.prompt_template;
  for (auto pos = prompt.find("{{text}}"); pos != std::string::npos; pos = prompt.find("{{text}}", pos + input.size())) {
    prompt.replace(pos, 8, input);
  }
  llm::Completion reply;
  try {
    reply = judge_.backend->complete({{llm::Role::kUser, prompt}}, llm::CompletionParams{0.0, std::nullopt});
  } catch (const Error& e) {
    throw Error(ErrorCode::kJudgeUnavailable, e.what());
  }
  static const std::regex kNumber(R"([-+]?\d+(\.\d+)?)");
  std::smatch m;
  const std::string& content = reply.reply.content;
  if (!std::regex_search(content, m, kNumber)) {
    throw Error(ErrorCode::kUnparsableVerdict, "no number in judge reply: " + content.substr(0, 80));
  }
  const double verdict = std::stod(m.str(0));
  const double t = (verdict - judge_.verdict_min) / (judge_.verdict_max - judge_.verdict_min);
  out.value = clamp_unit(-1.0 + 2.0 * t);
  out.rationale.push_back(content);
  return out;
}

// ---------------------------------------------------------------------------
// Samplers

std::string ScriptedSampler::continuation(std::string_view, std::size_t) {
  const std::size_t i = next_.fetch_add(1);
  if (i >= continuations_.size()) throw Error(ErrorCode::kSamplerExhausted, "scripted sampler is out of continuations");
  return continuations_[i];
}

std::size_t ScriptedSampler::remaining() const noexcept {
  const std::size_t used = next_.load();
  return used >= continuations_.size() ? 0 : continuations_.size() - used;
}

std::string BackendSampler::continuation(std::string_view system_prompt, std::size_t depth) {
  std::vector<llm::ChatMessage> messages{{llm::Role::kSystem, std::string(system_prompt)}};
  std::string joined;
  for (std::size_t turn = 0; turn < depth; ++turn) {
    messages.push_back({llm::Role::kUser, user_turn_});
    auto reply = backend_->complete(messages, params_);
    if (turn > 0) joined += "\n";
    joined += reply.reply.content;
    messages.push_back({llm::Role::kAssistant, std::move(reply.reply.content)});
  }
  return joined;
}

// ---------------------------------------------------------------------------
// Estimation

namespace {

template <typename ScoreFn>
ExpectationEstimate estimate(Sampler& sampler, std::string_view system_prompt, std::size_t depth, std::size_t k,
                             EstimateOptions options, ScoreFn score) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "sample count k must be at least 1");
  if (depth == 0) throw Error(ErrorCode::kInvalidArgument, "depth must be at least 1");
  const std::size_t width = std::max<std::size_t>(1, options.max_parallel);
  ExpectationEstimate out;
  out.depth = depth;
  out.samples.assign(k, 0.0);
  auto draw = [&](std::size_t) {
    const std::string text = sampler.continuation(system_prompt, depth);
    return text::trim(text).empty() ? 0.0 : score(text);
  };
  for (std::size_t start = 0; start < k; start += width) {
    const std::size_t stop = std::min(k, start + width);
    if (width == 1) {
      out.samples[start] = draw(start);
      continue;
    }
    std::vector<std::future<double>> batch;
    for (std::size_t i = start; i < stop; ++i) batch.push_back(std::async(std::launch::async, draw, i));
    for (std::size_t i = start; i < stop; ++i) out.samples[i] = batch[i - start].get();
  }
  double sum = 0.0;
  for (double v : out.samples) sum += v;
  out.mean = sum / static_cast<double>(k);
  out.sample_count = k;
  return out;
}

}  // namespace

ExpectationEstimate estimate_expected_behavior(const BehaviorScorer& scorer, Sampler& sampler,
                                               std::string_view system_prompt, std::size_t depth, std::size_t k,
                                               EstimateOptions options) {
  return estimate(sampler, system_prompt, depth, k, options,
                  [&](const std::string& t) { return scorer.score(t).value; });
}

ExpectationEstimate estimate_expected_exposure(const sensitive::DetectionRuleSet& rules,
                                               const sensitive::Weights& weights, Sampler& sampler,
                                               std::string_view system_prompt, std::size_t depth, std::size_t k,
                                               EstimateOptions options) {
  return estimate(sampler, system_prompt, depth, k, options,
                  [&](const std::string& t) { return sensitive::assess(t, rules, weights).score; });
}

AlignabilityVerdict check_alignability(const std::vector<CandidateEstimate>& candidates, double gamma,
                                       double epsilon) {
  if (candidates.empty()) throw Error(ErrorCode::kInvalidArgument, "no candidate prompts");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must be in (0, 1]");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::kInvalidArgument, "epsilon must be positive");
  AlignabilityVerdict v;
  v.gamma = gamma;
  v.epsilon = epsilon;
  const CandidateEstimate* best = &candidates.front();
  for (const auto& c : candidates) {
    if (c.estimate.mean < best->estimate.mean) best = &c;
  }
  v.witness_prompt = best->prompt;
  v.witness_mean = best->estimate.mean;
  v.holds = best->estimate.mean < gamma + epsilon;
  return v;
}

int to_alignment_scale(double value) {
  if (std::isnan(value)) throw Error(ErrorCode::kInvalidArgument, "behavior value is NaN");
  const double scaled = std::floor(50.0 * (value + 1.0) + 0.5);
  return static_cast<int>(std::clamp(scaled, 0.0, 100.0));
}

}  // namespace avguard::behavior
