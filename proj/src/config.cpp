#include "avguard/config.hpp"

#include <nlohmann/json.hpp>

#include "avguard/command_space.hpp"
#include "avguard/error.hpp"
#include "avguard/text_util.hpp"

namespace avguard::config {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& why) { throw Error(ErrorCode::kConfigError, why); }

std::optional<std::filesystem::path> path_field(const json& j, const char* key, const std::filesystem::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  std::filesystem::path p = j.at(key).get<std::string>();
  if (p.is_relative()) p = base / p;
  return p;
}

BackendSpec backend_from_json(const json& b, const std::filesystem::path& base) {
  BackendSpec spec;
  spec.http.name = b.at("name").get<std::string>();
  if (spec.http.name.empty()) config_error("backend without a name");
  const auto kind = b.value("kind", std::string("http"));
  if (b.contains("api_key") || b.contains("token")) {
    config_error("backend '" + spec.http.name + "': put secrets in an environment variable and name it in auth_env");
  }
  if (kind == "http") {
    spec.kind = BackendSpec::Kind::kHttp;
    spec.http.endpoint = b.at("endpoint").get<std::string>();
    spec.http.model = b.value("model", std::string());
    spec.http.auth_env = b.value("auth_env", std::string());
    spec.http.timeout_s = b.value("timeout_s", spec.http.timeout_s);
    spec.http.max_retries = b.value("max_retries", spec.http.max_retries);
    spec.http.backoff_base = std::chrono::milliseconds(b.value("backoff_ms", 200));
    try {
      spec.http.check();
    } catch (const Error& e) {
      config_error("backend '" + spec.http.name + "': " + e.what());
    }
  } else if (kind == "scripted") {
    spec.kind = BackendSpec::Kind::kScripted;
    spec.fixtures = path_field(b, "fixtures", base);
    if (b.contains("simulated_latency_s")) spec.simulated_latency_s = b.at("simulated_latency_s").get<double>();
    if (b.contains("replies")) spec.replies = b.at("replies").get<std::map<std::string, std::string>>();
  } else {
    config_error("backend '" + spec.http.name + "': kind must be http or scripted");
  }
  return spec;
}

}  // namespace

const BackendSpec* AppConfig::find_backend(const std::string& name) const {
  for (const auto& b : backends) {
    if (b.http.name == name) return &b;
  }
  return nullptr;
}

void parse_listen(const std::string& spec, std::string& host, int& port) {
  std::string port_part = spec;
  const auto colon = spec.rfind(':');
  if (colon != std::string::npos) {
    if (colon > 0) host = spec.substr(0, colon);
    port_part = spec.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    const int p = std::stoi(port_part, &used);
    if (used != port_part.size() || p < 0 || p > 65535) throw std::out_of_range("port");
    port = p;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "bad listen address '" + spec + "'");
  }
}

AppConfig config_from_json(const json& j, const std::filesystem::path& base) {
  AppConfig c;
  try {
    if (!j.is_object()) config_error("config must be a JSON object");
    if (j.contains("vehicle_profile")) c.policy.vehicle = command::profile_from_json(j.at("vehicle_profile"));
    if (j.contains("policy")) c.policy = guard::policy_from_json(j.at("policy"), c.policy);
    if (j.contains("backends")) {
      for (const auto& b : j.at("backends")) {
        auto spec = backend_from_json(b, base);
        if (c.find_backend(spec.http.name)) config_error("duplicate backend '" + spec.http.name + "'");
        c.backends.push_back(std::move(spec));
      }
    }
    if (j.contains("roles")) {
      const auto& r = j.at("roles");
      c.policy.roles.command = r.value("command", std::string());
      c.policy.roles.data = r.value("data", std::string());
      c.policy.roles.alignment = r.value("alignment", std::string());
      for (const auto* name : {&c.policy.roles.command, &c.policy.roles.data, &c.policy.roles.alignment}) {
        if (!name->empty() && !c.find_backend(*name)) config_error("role refers to unknown backend '" + *name + "'");
      }
    }
    c.ruleset = path_field(j, "ruleset", base);
    c.rule_table = path_field(j, "rule_table", base);
    c.judge_prompt = path_field(j, "judge_prompt", base);
    c.task_profiles = path_field(j, "task_profiles", base);
    c.audit_log = path_field(j, "audit_log", base);
    c.vocab = path_field(j, "vocab", base);
    if (j.contains("task") && !j.at("task").is_null()) c.task = j.at("task").get<std::string>();
    if (j.contains("server")) {
      const auto& s = j.at("server");
      if (s.contains("listen")) parse_listen(s.at("listen").get<std::string>(), c.server.host, c.server.port);
      c.server.auth_token_env = s.value("auth_token_env", std::string());
      c.server.threads = s.value("threads", c.server.threads);
      if (c.server.threads < 1) config_error("server.threads must be at least 1");
    }
  } catch (const json::exception& e) {
    config_error(std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigError) throw;
    config_error(e.what());
  }
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::string content;
  try {
    content = text::read_file(path);
  } catch (const Error& e) {
    config_error(e.what());
  }
  const json j = json::parse(content, nullptr, false);
  if (j.is_discarded()) config_error("config is not valid JSON: " + path.string());
  return config_from_json(j, std::filesystem::absolute(path).parent_path());
}

std::shared_ptr<llm::Backend> make_backend(const BackendSpec& spec, std::shared_ptr<const llm::BpeTokenizer> tokenizer) {
  if (spec.kind == BackendSpec::Kind::kHttp) return std::make_shared<llm::HttpBackend>(spec.http, tokenizer);
  auto b = std::make_shared<llm::ScriptedBackend>(spec.http.name, tokenizer);
  if (spec.fixtures) b->load_fixtures(*spec.fixtures);
  for (const auto& [user, reply] : spec.replies) b->add_reply_for_user(user, reply);
  b->set_simulated_latency(spec.simulated_latency_s);
  return b;
}

std::shared_ptr<guard::Guardrail> Runtime::make_guardrail() const {
  return std::make_shared<guard::Guardrail>(config.policy, rules, scorer, backends, audit);
}

Runtime build_runtime(AppConfig config) {
  Runtime rt;
  if (config.vocab) rt.tokenizer = std::make_shared<const llm::BpeTokenizer>(llm::BpeTokenizer::load(*config.vocab));
  if (config.ruleset) {
    rt.rules = std::make_shared<const sensitive::DetectionRuleSet>(sensitive::DetectionRuleSet::load(*config.ruleset));
  } else {
    rt.rules = std::make_shared<const sensitive::DetectionRuleSet>(sensitive::DetectionRuleSet::shipped_default());
  }
  for (const auto& spec : config.backends) rt.backends[spec.http.name] = make_backend(spec, rt.tokenizer);

  if (!config.policy.roles.alignment.empty()) {
    behavior::JudgeConfig judge;
    judge.backend = rt.backends.at(config.policy.roles.alignment);
    judge.prompt_template = config.judge_prompt ? text::read_file(*config.judge_prompt)
                                                : behavior::BehaviorScorer::default_judge_prompt();
    rt.scorer = std::make_shared<const behavior::BehaviorScorer>(behavior::BehaviorScorer::judge(std::move(judge)));
  } else if (config.rule_table) {
    rt.scorer = std::make_shared<const behavior::BehaviorScorer>(behavior::BehaviorScorer::load(*config.rule_table));
  } else {
    rt.scorer = std::make_shared<const behavior::BehaviorScorer>(behavior::BehaviorScorer::shipped_default());
  }

  if (config.task) {
    const auto profiles =
        config.task_profiles ? guard::load_task_profiles(*config.task_profiles) : guard::shipped_task_profiles();
    config.policy = guard::apply_task_profile(config.policy, guard::find_task_profile(profiles, *config.task));
  }
  rt.audit = std::make_shared<guard::AuditLog>(config.audit_log ? guard::AuditLog::open(*config.audit_log)
                                                                 : guard::AuditLog::in_memory());
  rt.config = std::move(config);
  return rt;
}

}  // namespace avguard::config
