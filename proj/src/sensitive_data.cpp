#include "avguard/sensitive_data.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>

#include <nlohmann/json.hpp>

#include "avguard/embedded_data.hpp"
#include "avguard/error.hpp"
#include "avguard/llm_client.hpp"
#include "avguard/text_util.hpp"

namespace avguard::sensitive {

using nlohmann::json;

namespace {

struct CategoryInfo {
  std::string_view code;
  std::string_view name;
};

constexpr PerCategory<CategoryInfo> kInfo = {{
    {"SC", "current speed"},
    {"PL", "precise location"},
    {"WP", "waypoints"},
    {"TF", "traffic conditions"},
    {"OD", "obstacle detection"},
    {"WT", "weather conditions"},
    {"EC", "energy consumption"},
    {"VH", "vehicle health status"},
    {"SI", "signage information"},
    {"ES", "emergency services"},
}};

[[noreturn]] void invalid_rule(const std::string& why) { throw Error(ErrorCode::kInvalidRule, why); }

}  // namespace

std::string_view code(Category c) noexcept { return kInfo[index_of(c)].code; }
std::string_view display_name(Category c) noexcept { return kInfo[index_of(c)].name; }

std::optional<Category> category_from_code(std::string_view s) noexcept {
  for (Category c : kAllCategories) {
    const auto k = code(c);
    if (s.size() == 2 && std::toupper(static_cast<unsigned char>(s[0])) == k[0] &&
        std::toupper(static_cast<unsigned char>(s[1])) == k[1]) {
      return c;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Rule compilation

struct DetectionRuleSet::Compiled {
  std::vector<std::string> folded_terms;  // keyword rules
  std::optional<std::regex> pattern;      // regex rules
};

namespace {

struct Match {
  std::size_t begin;
  std::size_t end;
};

std::vector<Match> keyword_matches(std::string_view text, std::string_view haystack,
                                                     const std::vector<std::string>& terms) {
  std::vector<Match> out;
  for (const auto& term : terms) {
    for (const auto& [b, e] : text::keyword_spans(text, haystack, term)) out.push_back({b, e});
  }
  return out;
}

}  // namespace

DetectionRuleSet::DetectionRuleSet(std::vector<Rule> rules) : rules_(std::move(rules)) {
  auto compiled = std::make_shared<std::vector<Compiled>>();
  compiled->reserve(rules_.size());
  std::set<std::string> ids;
  for (const auto& rule : rules_) {
    if (rule.id.empty()) invalid_rule("rule without id");
    if (!ids.insert(rule.id).second) invalid_rule("duplicate rule id '" + rule.id + "'");
    if (rule.terms.empty()) invalid_rule("rule '" + rule.id + "' has no terms");
    Compiled c;
    if (rule.kind == RuleKind::kKeyword) {
      for (const auto& term : rule.terms) {
        if (text::trim(term).empty()) invalid_rule("rule '" + rule.id + "' has an empty keyword");
        c.folded_terms.push_back(rule.case_sensitive ? term : text::ascii_lower(term));
      }
    } else {
      if (rule.terms.size() != 1) invalid_rule("regex rule '" + rule.id + "' needs exactly one pattern");
      auto flags = std::regex::ECMAScript;
      if (!rule.case_sensitive) flags |= std::regex::icase;
      try {
        c.pattern.emplace(rule.terms.front(), flags);
      } catch (const std::regex_error& e) {
        invalid_rule("rule '" + rule.id + "': bad pattern: " + e.what());
      }
    }
    compiled->push_back(std::move(c));
  }
  compiled_ = std::move(compiled);

  // Redacted text must never re-trigger a rule.
  std::string placeholders;
  for (Category c : kAllCategories) placeholders += placeholder(c) + " ";
  const auto hits = detect(placeholders, *this);
  if (!hits.empty()) invalid_rule("rule '" + hits.front().rule_id + "' matches a redaction placeholder");
}

DetectionRuleSet DetectionRuleSet::from_json(const json& j) {
  std::vector<Rule> rules;
  try {
    if (!j.is_object() || !j.contains("categories") || !j.at("categories").is_object()) {
      invalid_rule("ruleset must be an object with a 'categories' object");
    }
    for (const auto& [cat_code, list] : j.at("categories").items()) {
      const auto category = category_from_code(cat_code);
      if (!category) invalid_rule("unknown category '" + cat_code + "'");
      if (!list.is_array()) invalid_rule("category '" + cat_code + "' must map to a list of rules");
      for (const auto& r : list) {
        Rule rule;
        rule.category = *category;
        rule.id = r.at("id").get<std::string>();
        const auto type = r.value("type", std::string("keyword"));
        rule.case_sensitive = r.value("case_sensitive", false);
        if (type == "keyword") {
          rule.kind = RuleKind::kKeyword;
          rule.terms = r.at("terms").get<std::vector<std::string>>();
        } else if (type == "regex") {
          rule.kind = RuleKind::kRegex;
          rule.terms = {r.at("pattern").get<std::string>()};
        } else {
          invalid_rule("rule '" + rule.id + "' has unknown type '" + type + "'");
        }
        rules.push_back(std::move(rule));
      }
    }
  } catch (const json::exception& e) {
    invalid_rule(std::string("malformed ruleset: ") + e.what());
  }
  return DetectionRuleSet(std::move(rules));
}

DetectionRuleSet DetectionRuleSet::from_json_text(std::string_view text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) invalid_rule("ruleset is not valid JSON");
  return from_json(j);
}

DetectionRuleSet DetectionRuleSet::load(const std::filesystem::path& path) {
  std::string content;
  try {
    content = text::read_file(path);
  } catch (const Error& e) {
    invalid_rule(std::string("cannot load ruleset: ") + e.what());
  }
  return from_json_text(content);
}

const DetectionRuleSet& DetectionRuleSet::shipped_default() {
  static const DetectionRuleSet rules = from_json_text(embedded::default_ruleset_json);
  return rules;
}

PerCategory<std::size_t> DetectionRuleSet::coverage() const noexcept {
  PerCategory<std::size_t> out{};
  for (const auto& r : rules_) ++out[index_of(r.category)];
  return out;
}

// ---------------------------------------------------------------------------
// Detection and scoring

std::vector<Detection> detect(std::string_view text, const DetectionRuleSet& rules) {
  std::vector<Detection> out;
  if (text.empty()) return out;
  const std::string folded = text::ascii_lower(text);
  for (std::size_t i = 0; i < rules.rules_.size(); ++i) {
    const auto& rule = rules.rules_[i];
    const auto& compiled = (*rules.compiled_)[i];
    std::vector<Match> matches;
    if (rule.kind == RuleKind::kKeyword) {
      matches = keyword_matches(text, rule.case_sensitive ? text : std::string_view(folded), compiled.folded_terms);
    } else {
      using It = std::string_view::const_iterator;
      for (auto it = std::regex_iterator<It>(text.begin(), text.end(), *compiled.pattern);
           it != std::regex_iterator<It>(); ++it) {
        if (it->length(0) == 0) continue;
        const auto b = static_cast<std::size_t>(it->position(0));
        matches.push_back({b, b + static_cast<std::size_t>(it->length(0))});
      }
    }
    for (const auto& m : matches) {
      out.push_back(Detection{rule.category, m.begin, m.end, std::string(text.substr(m.begin, m.end - m.begin)),
                              rule.id});
    }
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    return std::tie(a.begin, a.category, a.end, a.rule_id) < std::tie(b.begin, b.category, b.end, b.rule_id);
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

PerCategory<bool> presence(const std::vector<Detection>& detections) noexcept {
  PerCategory<bool> p{};
  for (const auto& d : detections) p[index_of(d.category)] = true;
  return p;
}

double exposure_score(const PerCategory<bool>& present, const Weights& weights) {
  double max_weight = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw Error(ErrorCode::kInvalidArgument, "weights must be finite and >= 0");
    max_weight = std::max(max_weight, w);
  }
  if (max_weight == 0.0) throw Error(ErrorCode::kZeroWeightSum, "all category weights are zero");
  // Scaling by the largest weight makes uniform weights exactly 1.0, so the
  // uniform score is the correctly rounded count/10.
  double numerator = 0.0;
  double denominator = 0.0;
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    const double w = weights[i] / max_weight;
    denominator += w;
    if (present[i]) numerator += w;
  }
  return std::clamp(numerator / denominator, 0.0, 1.0);
}

double exposure_score(const std::vector<Detection>& detections, const Weights& weights) {
  return exposure_score(presence(detections), weights);
}

std::vector<std::string> ExposureReport::present_codes() const {
  std::vector<std::string> out;
  for (Category c : kAllCategories) {
    if (present[index_of(c)]) out.emplace_back(code(c));
  }
  return out;
}

ExposureReport assess(std::string_view text, const DetectionRuleSet& rules, const Weights& weights) {
  ExposureReport report;
  report.detections = detect(text, rules);
  report.present = presence(report.detections);
  report.score = exposure_score(report.present, weights);
  double total = 0.0;
  for (double w : weights) total += w;
  for (std::size_t i = 0; i < kCategoryCount; ++i) report.weights_used[i] = weights[i] / total;
  return report;
}

json report_summary(const ExposureReport& report) {
  return json{{"score", report.score},
              {"categories", report.present_codes()},
              {"detection_count", report.detections.size()}};
}

// ---------------------------------------------------------------------------
// Redaction

std::string placeholder(Category c) { return "⟨" + std::string(code(c)) + "⟩"; }

std::string redact(std::string_view text, const std::vector<Detection>& detections, RedactionMode mode) {
  std::vector<const Detection*> sorted;
  sorted.reserve(detections.size());
  for (const auto& d : detections) {
    if (d.begin >= d.end || d.end > text.size() || text.substr(d.begin, d.end - d.begin) != d.matched) {
      throw Error(ErrorCode::kSpanMismatch, "detection '" + d.rule_id + "' does not match the text");
    }
    sorted.push_back(&d);
  }
  std::sort(sorted.begin(), sorted.end(), [](const Detection* a, const Detection* b) {
    return std::tie(a->begin, a->category) < std::tie(b->begin, b->category);
  });

  std::string out;
  out.reserve(text.size());
  std::size_t cursor = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const std::size_t begin = sorted[i]->begin;
    std::size_t end = sorted[i]->end;
    const Category label = sorted[i]->category;
    ++i;
    while (i < sorted.size() && sorted[i]->begin < end) {
      end = std::max(end, sorted[i]->end);
      ++i;
    }
    out.append(text.substr(cursor, begin - cursor));
    if (mode == RedactionMode::kPlaceholder) out += placeholder(label);
    cursor = end;
  }
  out.append(text.substr(cursor));
  return out;
}

std::string sanitize(std::string_view text, const DetectionRuleSet& rules, RedactionMode mode) {
  std::string current(text);
  // Each pass strictly removes matched bytes, so this terminates; the bound
  // only guards against pathological user rulesets.
  for (int pass = 0; pass < 64; ++pass) {
    const auto detections = detect(current, rules);
    if (detections.empty()) return current;
    current = redact(current, detections, mode);
  }
  throw Error(ErrorCode::kInvalidRule, "redaction did not converge");
}

PerCategory<std::uint64_t> category_counts(const std::vector<Detection>& detections) {
  PerCategory<std::uint64_t> counts{};
  for (Category c : kAllCategories) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& d : detections) {
      if (d.category == c) spans.emplace_back(d.begin, d.end);
    }
    std::sort(spans.begin(), spans.end());
    std::size_t reach = 0;
    bool open = false;
    for (const auto& [b, e] : spans) {
      if (!open || b >= reach) {
        ++counts[index_of(c)];
        reach = e;
        open = true;
      } else {
        reach = std::max(reach, e);
      }
    }
  }
  return counts;
}

std::vector<UsageRow> usage_matrix(const std::vector<PerCategory<std::uint64_t>>& counts) {
  std::vector<UsageRow> out;
  out.reserve(counts.size());
  for (const auto& row : counts) {
    const std::uint64_t max = *std::max_element(row.begin(), row.end());
    UsageRow r{};
    if (max > 0) {
      for (std::size_t i = 0; i < kCategoryCount; ++i) {
        r[i] = static_cast<double>(row[i]) / static_cast<double>(max);
      }
    }
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Judge mode

PerCategory<bool> judge_presence(llm::Backend& judge, std::string_view text) {
  std::string prompt =
      "Which of these vehicle-sensitive data categories does the text reveal? "
      "Answer with a comma-separated list of codes, or NONE.\n";
  for (Category c : kAllCategories) {
    prompt += std::string(code(c)) + " = " + std::string(display_name(c)) + "\n";
  }
  prompt += "\nText:\n";
  prompt += text;

  std::string reply;
  try {
    reply = judge.complete({{llm::Role::kUser, prompt}}, {}).reply.content;
  } catch (const Error& e) {
    throw Error(ErrorCode::kJudgeUnavailable, e.what());
  }
  PerCategory<bool> present{};
  bool any = false;
  static const std::regex kToken(R"([A-Za-z]+)");
  using It = std::string::const_iterator;
  for (auto it = std::regex_iterator<It>(reply.begin(), reply.end(), kToken); it != std::regex_iterator<It>();
       ++it) {
    const auto token = it->str();
    if (text::ascii_lower(token) == "none") {
      any = true;
      continue;
    }
    if (token.size() == 2 && std::isupper(static_cast<unsigned char>(token[0]))) {
      if (auto c = category_from_code(token)) {
        present[index_of(*c)] = true;
        any = true;
      }
    }
  }
  if (!any) throw Error(ErrorCode::kUnparsableVerdict, "judge reply names no category");
  return present;
}

}  // namespace avguard::sensitive
