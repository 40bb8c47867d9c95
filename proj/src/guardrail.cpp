#include "avguard/guardrail.hpp"

#include <algorithm>
#include <cmath>

#include "avguard/embedded_data.hpp"
#include "avguard/error.hpp"
#include "avguard/text_util.hpp"

namespace avguard::guard {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& why) { throw Error(ErrorCode::kConfigError, why); }

constexpr std::string_view kRefusalMessage = "The request was refused by the vehicle safety guardrail.";

}  // namespace

// ---------------------------------------------------------------------------
// Task profiles

std::string_view level_name(Level l) noexcept {
  switch (l) {
    case Level::kLow: return "Low";
    case Level::kMedium: return "Medium";
    case Level::kHigh: return "High";
    case Level::kNA: return "NA";
  }
  return "NA";
}

Level level_from_name(std::string_view name) {
  const auto n = text::ascii_lower(text::trim(name));
  if (n == "low") return Level::kLow;
  if (n == "medium") return Level::kMedium;
  if (n == "high") return Level::kHigh;
  if (n == "na" || n == "n/a") return Level::kNA;
  config_error("unknown level '" + std::string(name) + "'");
}

std::vector<TaskProfile> task_profiles_from_json(const json& j) {
  std::vector<TaskProfile> out;
  try {
    for (const auto& t : j.at("tasks")) {
      TaskProfile p;
      p.task = t.at("task").get<std::string>();
      p.sensitivity = level_from_name(t.at("sensitivity").get<std::string>());
      p.drive_relatedness = level_from_name(t.at("drive_relatedness").get<std::string>());
      p.value_alignment = level_from_name(t.at("value_alignment").get<std::string>());
      for (const auto& q : out) {
        if (text::ascii_lower(q.task) == text::ascii_lower(p.task)) config_error("duplicate task '" + p.task + "'");
      }
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    config_error(std::string("task profiles: ") + e.what());
  }
  return out;
}

std::vector<TaskProfile> load_task_profiles(const std::filesystem::path& path) {
  const json j = json::parse(text::read_file(path), nullptr, false);
  if (j.is_discarded()) config_error("task profiles file is not valid JSON: " + path.string());
  return task_profiles_from_json(j);
}

const std::vector<TaskProfile>& shipped_task_profiles() {
  static const std::vector<TaskProfile> profiles = task_profiles_from_json(json::parse(embedded::task_profiles_json));
  return profiles;
}

const TaskProfile& find_task_profile(const std::vector<TaskProfile>& profiles, std::string_view task) {
  const auto want = text::ascii_lower(text::trim(task));
  for (const auto& p : profiles) {
    if (text::ascii_lower(p.task) == want) return p;
  }
  config_error("unknown task profile '" + std::string(task) + "'");
}

// ---------------------------------------------------------------------------
// Policy

std::string_view backend_role_name(BackendRole r) noexcept {
  switch (r) {
    case BackendRole::kCommand: return "command";
    case BackendRole::kData: return "data";
    case BackendRole::kAlignment: return "alignment";
  }
  return "data";
}

BackendRole backend_role_from_name(std::string_view name) {
  if (name == "command") return BackendRole::kCommand;
  if (name == "data") return BackendRole::kData;
  if (name == "alignment") return BackendRole::kAlignment;
  throw Error(ErrorCode::kInvalidArgument, "unknown backend role '" + std::string(name) + "'");
}

void GuardPolicy::check() const {
  auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!unit(exposure_redact_threshold)) config_error("exposure_redact_threshold must be in [0, 1]");
  if (!unit(exposure_block_threshold)) config_error("exposure_block_threshold must be in [0, 1]");
  if (exposure_redact_threshold > exposure_block_threshold) {
    config_error("exposure_redact_threshold must not exceed exposure_block_threshold");
  }
  if (!std::isfinite(behavior_min) || behavior_min < -1.0 || behavior_min > 1.0) {
    config_error("behavior_min must be in [-1, 1]");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) config_error("category weights must be finite and nonnegative");
    sum += w;
  }
  if (sum <= 0.0) throw Error(ErrorCode::kZeroWeightSum, "all category weights are zero");
  vehicle.check();
}

GuardPolicy apply_task_profile(GuardPolicy policy, const TaskProfile& task) {
  if (task.sensitivity == Level::kHigh) {
    policy.exposure_block_threshold =
        std::max(policy.exposure_redact_threshold, policy.exposure_block_threshold - kSensitivityStep);
  }
  if (task.value_alignment == Level::kHigh) {
    policy.behavior_min = std::min(1.0, policy.behavior_min + kAlignmentStep);
  }
  policy.task = task;
  return policy;
}

json policy_to_json(const GuardPolicy& p) {
  json weights = json::object();
  for (auto c : sensitive::kAllCategories) weights[std::string(sensitive::code(c))] = p.weights[sensitive::index_of(c)];
  json j{{"exposure_redact_threshold", p.exposure_redact_threshold},
         {"exposure_block_threshold", p.exposure_block_threshold},
         {"behavior_min", p.behavior_min},
         {"weights", weights},
         {"redaction_mode", p.redaction_mode == sensitive::RedactionMode::kPlaceholder ? "placeholder" : "remove"},
         {"command_action", p.command_action == CommandAction::kBlock ? "block" : "clamp"},
         {"vehicle_profile", command::profile_to_json(p.vehicle)},
         {"roles", {{"command", p.roles.command}, {"data", p.roles.data}, {"alignment", p.roles.alignment}}}};
  if (p.task) {
    j["task"] = {{"task", p.task->task},
                 {"sensitivity", level_name(p.task->sensitivity)},
                 {"drive_relatedness", level_name(p.task->drive_relatedness)},
                 {"value_alignment", level_name(p.task->value_alignment)}};
  }
  return j;
}

GuardPolicy policy_from_json(const json& j, GuardPolicy p) {
  try {
    if (!j.is_object()) config_error("policy must be an object");
    p.exposure_redact_threshold = j.value("exposure_redact_threshold", p.exposure_redact_threshold);
    p.exposure_block_threshold = j.value("exposure_block_threshold", p.exposure_block_threshold);
    p.behavior_min = j.value("behavior_min", p.behavior_min);
    if (j.contains("weights")) {
      for (const auto& [k, v] : j.at("weights").items()) {
        const auto c = sensitive::category_from_code(k);
        if (!c) config_error("unknown category '" + k + "' in weights");
        p.weights[sensitive::index_of(*c)] = v.get<double>();
      }
    }
    if (j.contains("redaction_mode")) {
      const auto m = j.at("redaction_mode").get<std::string>();
      if (m == "placeholder") p.redaction_mode = sensitive::RedactionMode::kPlaceholder;
      else if (m == "remove") p.redaction_mode = sensitive::RedactionMode::kRemove;
      else config_error("redaction_mode must be placeholder or remove");
    }
    if (j.contains("command_action")) {
      const auto m = j.at("command_action").get<std::string>();
      if (m == "block") p.command_action = CommandAction::kBlock;
      else if (m == "clamp") p.command_action = CommandAction::kClamp;
      else config_error("command_action must be block or clamp");
    }
  } catch (const json::exception& e) {
    config_error(std::string("policy: ") + e.what());
  }
  p.check();
  return p;
}

// ---------------------------------------------------------------------------
// Decisions

std::string_view verdict_name(Verdict v) noexcept {
  switch (v) {
    case Verdict::kAllow: return "allow";
    case Verdict::kRedact: return "redact";
    case Verdict::kBlock: return "block";
  }
  return "block";
}

std::string_view stage_name(Stage s) noexcept { return s == Stage::kOutbound ? "outbound" : "inbound"; }

json GuardDecision::to_json() const {
  json reasons_j = json::array();
  for (const auto& r : reasons) reasons_j.push_back({{"code", r.code}, {"detail", r.payload}});
  return json{{"verdict", verdict_name(verdict)},
              {"stage", stage_name(stage)},
              {"reasons", reasons_j},
              {"transformed", transformed.has_value()}};
}

json refusal_json(const GuardDecision& d) {
  json reasons_j = json::array();
  for (const auto& r : d.reasons) reasons_j.push_back({{"code", r.code}, {"detail", r.payload}});
  return json{{"error",
               {{"type", "guardrail_refusal"},
                {"stage", stage_name(d.stage)},
                {"verdict", verdict_name(d.verdict)},
                {"reasons", reasons_j},
                {"message", kRefusalMessage}}}};
}

OutboundResult inspect_outbound(std::string_view prompt, const GuardPolicy& policy,
                                const sensitive::DetectionRuleSet& rules) {
  OutboundResult out;
  out.decision.stage = Stage::kOutbound;
  out.exposure = sensitive::assess(prompt, rules, policy.weights);
  const double score = out.exposure.score;
  const json detail{{"exposure_score", score}, {"categories", out.exposure.present_codes()}};
  if (score >= policy.exposure_block_threshold) {
    out.decision.verdict = Verdict::kBlock;
    out.decision.reasons.push_back({"exposure_blocked", detail});
    return out;
  }
  if (score < policy.exposure_redact_threshold) {
    out.decision.verdict = Verdict::kAllow;
    out.forward = std::string(prompt);
    return out;
  }
  std::string redacted = sensitive::sanitize(prompt, rules, policy.redaction_mode);
  const double after = sensitive::assess(redacted, rules, policy.weights).score;
  if (after != 0.0) {
    // Removal mode can splice new matches together; never forward those.
    out.decision.verdict = Verdict::kBlock;
    out.decision.reasons.push_back({"redaction_incomplete", detail});
    return out;
  }
  out.decision.verdict = Verdict::kRedact;
  out.decision.reasons.push_back({"exposure_redacted", detail});
  out.decision.transformed = redacted;
  out.forward = std::move(redacted);
  return out;
}

InboundResult inspect_inbound(std::string_view response, const GuardPolicy& policy,
                              const behavior::BehaviorScorer& scorer) {
  InboundResult out;
  out.decision.stage = Stage::kInbound;
  std::string delivered(response);
  bool block = false;

  try {
    out.commands = command::extract_commands(response);
  } catch (const Error& e) {
    block = true;
    out.decision.reasons.push_back({"malformed_command", {{"error", error_code_name(e.code())}}});
  }

  if (!out.commands.empty()) {
    out.validation = json::array();
    std::vector<std::pair<command::SourceSpan, std::string>> rewrites;
    for (auto& env : out.commands) {
      const auto v = command::validate_command(env, policy.vehicle);
      json violations = json::array();
      for (const auto& x : v.violations) {
        violations.push_back({{"field", x.field}, {"observed", x.observed}, {"permitted", x.permitted}});
      }
      out.validation.push_back(
          {{"command", command::serialize_command(env)}, {"valid", v.valid()}, {"violations", violations}});
      if (v.valid()) continue;
      if (policy.command_action == CommandAction::kBlock) {
        block = true;
        out.decision.reasons.push_back({"command_violation", {{"violations", violations}}});
      } else {
        const auto clamped = command::clamp_to_safe(env, policy.vehicle);
        json records = json::array();
        for (const auto& r : clamped.records) {
          records.push_back({{"field", r.field}, {"before", r.before}, {"after", r.after}});
        }
        out.decision.reasons.push_back({"command_clamped", {{"violations", violations}, {"changes", records}}});
        rewrites.emplace_back(env.source_span, command::serialize_command(clamped.envelope));
        const auto span = env.source_span;
        env = clamped.envelope;
        env.source_span = span;
      }
    }
    std::sort(rewrites.begin(), rewrites.end(),
              [](const auto& a, const auto& b) { return a.first.begin > b.first.begin; });
    for (const auto& [span, text] : rewrites) delivered.replace(span.begin, span.end - span.begin, text);
    if (!rewrites.empty()) out.decision.transformed = delivered;
  }

  if (!text::trim(delivered).empty()) {
    try {
      out.behavior = scorer.score(delivered);
    } catch (const Error& e) {
      block = true;
      out.decision.reasons.push_back({"behavior_unavailable", {{"error", error_code_name(e.code())}}});
    }
  } else {
    out.behavior = behavior::BehaviorScore{0.0, {}};
  }
  if (out.behavior && out.behavior->value < policy.behavior_min) {
    block = true;
    out.decision.reasons.push_back(
        {"alignment_failure",
         {{"behavior_score", out.behavior->value}, {"behavior_min", policy.behavior_min}, {"rules", out.behavior->rationale}}});
  }

  if (block) {
    out.decision.verdict = Verdict::kBlock;
    out.decision.transformed.reset();
    return out;
  }
  out.decision.verdict = Verdict::kAllow;
  out.reply = std::move(delivered);
  return out;
}

// ---------------------------------------------------------------------------
// Sessions and the pipeline

std::vector<llm::ChatMessage> Session::history() const {
  std::lock_guard lock(mutex_);
  return history_;
}

void Session::append(std::vector<llm::ChatMessage> messages) {
  std::lock_guard lock(mutex_);
  for (auto& m : messages) history_.push_back(std::move(m));
}

json GuardMetrics::to_json() const {
  return json{{"turns", turns.load()},
              {"outbound", {{"allow", outbound_allow.load()}, {"redact", outbound_redact.load()}, {"block", outbound_block.load()}}},
              {"inbound", {{"allow", inbound_allow.load()}, {"redact", inbound_redact.load()}, {"block", inbound_block.load()}}},
              {"backend_failures", backend_failures.load()}};
}

Guardrail::Guardrail(GuardPolicy policy, std::shared_ptr<const sensitive::DetectionRuleSet> rules,
                     std::shared_ptr<const behavior::BehaviorScorer> scorer,
                     std::map<std::string, std::shared_ptr<llm::Backend>> backends, std::shared_ptr<AuditLog> audit)
    : policy_(std::move(policy)),
      rules_(std::move(rules)),
      scorer_(std::move(scorer)),
      backends_(std::move(backends)),
      audit_(std::move(audit)) {
  policy_.check();
  if (!rules_) rules_ = std::shared_ptr<const sensitive::DetectionRuleSet>(&sensitive::DetectionRuleSet::shipped_default(),
                                                                         [](const auto*) {});
  if (!scorer_) scorer_ = std::shared_ptr<const behavior::BehaviorScorer>(&behavior::BehaviorScorer::shipped_default(),
                                                                         [](const auto*) {});
  if (!audit_) audit_ = std::make_shared<AuditLog>(AuditLog::in_memory());
  for (const auto* name : {&policy_.roles.command, &policy_.roles.data, &policy_.roles.alignment}) {
    if (!name->empty() && !backends_.count(*name)) config_error("role assigned to unknown backend '" + *name + "'");
  }
}

std::shared_ptr<llm::Backend> Guardrail::backend_for(BackendRole role) const {
  auto named = [&](const std::string& n) -> std::shared_ptr<llm::Backend> {
    if (n.empty()) return nullptr;
    return backends_.at(n);
  };
  std::shared_ptr<llm::Backend> b;
  if (role == BackendRole::kCommand) b = named(policy_.roles.command);
  if (role == BackendRole::kAlignment) b = named(policy_.roles.alignment);
  if (!b) b = named(policy_.roles.data);
  if (!b && backends_.size() == 1) b = backends_.begin()->second;
  if (!b) config_error("no backend assigned to role '" + std::string(backend_role_name(role)) + "'");
  return b;
}

TurnResult Guardrail::pipeline(Session& session, const std::vector<llm::ChatMessage>& messages, BackendRole role,
                               const llm::CompletionParams& params) {
  ++metrics_.turns;
  TurnResult turn;

  std::string user_text;
  for (const auto& m : messages) {
    if (m.role != llm::Role::kUser) continue;
    if (!user_text.empty()) user_text += "\n";
    user_text += m.content;
  }

  auto out = inspect_outbound(user_text, policy_, *rules_);
  std::vector<llm::ChatMessage> forwarded = messages;
  if (out.decision.verdict == Verdict::kRedact) {
    std::string joined;
    for (auto& m : forwarded) {
      if (m.role != llm::Role::kUser) continue;
      m.content = sensitive::sanitize(m.content, *rules_, policy_.redaction_mode);
      if (!joined.empty()) joined += "\n";
      joined += m.content;
    }
    if (sensitive::assess(joined, *rules_, policy_.weights).score != 0.0) {
      out.decision.verdict = Verdict::kBlock;
      out.decision.reasons = {{"redaction_incomplete", {{"exposure_score", out.exposure.score}}}};
      out.decision.transformed.reset();
      out.forward.reset();
    }
  }
  turn.decisions.push_back(out.decision);

  AuditRecord outbound_rec;
  outbound_rec.session_id = session.id();
  outbound_rec.direction = "outbound";
  outbound_rec.text_sha256 = text::sha256_hex(user_text);
  outbound_rec.redacted_text = sensitive::sanitize(user_text, *rules_, sensitive::RedactionMode::kPlaceholder);
  outbound_rec.decision = out.decision.to_json();
  outbound_rec.exposure = sensitive::report_summary(out.exposure);

  switch (out.decision.verdict) {
    case Verdict::kAllow: ++metrics_.outbound_allow; break;
    case Verdict::kRedact: ++metrics_.outbound_redact; break;
    case Verdict::kBlock: ++metrics_.outbound_block; break;
  }
  if (out.decision.verdict == Verdict::kBlock) {
    audit_->append(std::move(outbound_rec));
    turn.refused = true;
    turn.refusal = refusal_json(out.decision);
    return turn;
  }

  auto backend = backend_for(role);
  turn.backend = std::string(backend->name());
  outbound_rec.backend = turn.backend;
  audit_->append(std::move(outbound_rec));

  std::vector<llm::ChatMessage> request;
  if (!session.system_prompt().empty()) request.push_back({llm::Role::kSystem, session.system_prompt()});
  for (auto& m : session.history()) request.push_back(std::move(m));
  for (const auto& m : forwarded) request.push_back(m);

  AuditRecord inbound_rec;
  inbound_rec.session_id = session.id();
  inbound_rec.direction = "inbound";
  inbound_rec.backend = turn.backend;

  llm::Completion completion;
  try {
    completion = backend->complete(request, params);
  } catch (const Error& e) {
    ++metrics_.backend_failures;
    ++metrics_.inbound_block;
    GuardDecision d;
    d.verdict = Verdict::kBlock;
    d.stage = Stage::kInbound;
    d.reasons.push_back({"backend_failure", {{"error", error_code_name(e.code())}}});
    turn.decisions.push_back(d);
    inbound_rec.text_sha256 = text::sha256_hex("");
    inbound_rec.decision = d.to_json();
    audit_->append(std::move(inbound_rec));
    turn.refused = true;
    turn.backend_failure = true;
    turn.refusal = refusal_json(d);
    return turn;
  }
  turn.usage = completion.usage;

  auto in = inspect_inbound(completion.reply.content, policy_, *scorer_);
  turn.decisions.push_back(in.decision);
  inbound_rec.text_sha256 = text::sha256_hex(completion.reply.content);
  inbound_rec.redacted_text =
      sensitive::sanitize(completion.reply.content, *rules_, sensitive::RedactionMode::kPlaceholder);
  inbound_rec.decision = in.decision.to_json();
  if (in.behavior) inbound_rec.behavior_score = in.behavior->value;
  inbound_rec.command_validation = in.validation;
  const auto& u = completion.usage;
  inbound_rec.usage = {{"prompt_tokens", u.prompt_tokens},
                       {"completion_tokens", u.completion_tokens},
                       {"latency_s", u.latency_s},
                       {"reported_by_backend", u.reported_by_backend}};
  if (u.local_prompt_tokens) inbound_rec.usage["local_prompt_tokens"] = *u.local_prompt_tokens;
  if (u.local_completion_tokens) inbound_rec.usage["local_completion_tokens"] = *u.local_completion_tokens;
  audit_->append(std::move(inbound_rec));

  if (in.decision.verdict == Verdict::kBlock) {
    ++metrics_.inbound_block;
    turn.refused = true;
    turn.refusal = refusal_json(in.decision);
    return turn;
  }
  ++metrics_.inbound_allow;
  turn.reply = *in.reply;
  turn.commands = in.commands;
  forwarded.push_back({llm::Role::kAssistant, turn.reply});
  session.append(std::move(forwarded));
  return turn;
}

}  // namespace avguard::guard
