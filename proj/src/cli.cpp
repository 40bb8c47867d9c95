#include "avguard/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "avguard/behavior.hpp"
#include "avguard/command_space.hpp"
#include "avguard/config.hpp"
#include "avguard/error.hpp"
#include "avguard/eval_harness.hpp"
#include "avguard/proxy_server.hpp"
#include "avguard/report.hpp"
#include "avguard/sensitive_data.hpp"
#include "avguard/text_util.hpp"

namespace avguard::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_shutdown{false};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string format = "text";
  bool json() const { return format == "json"; }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Config file (default: $AVGUARD_CONFIG)");
  sub->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"text", "json"}));
}

std::optional<config::AppConfig> load_optional_config(const Common& c) {
  std::string path = c.config;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv); env && *env) path = env;
  }
  if (path.empty()) return std::nullopt;
  return config::load_config(path);
}

config::AppConfig require_config(const Common& c) {
  auto cfg = load_optional_config(c);
  if (!cfg) throw UsageError("a config file is required (--config or $" + std::string(kConfigEnv) + ")");
  return std::move(*cfg);
}

struct InputArgs {
  std::string text;
  std::string file;
  bool has_text = false;
};

void add_input(CLI::App* sub, InputArgs& in) {
  auto* t = sub->add_option("--input", in.text, "Input text");
  auto* f = sub->add_option("--file", in.file, "Input file, '-' for stdin");
  t->excludes(f);
}

std::string read_input(const InputArgs& in, CLI::App* sub) {
  if (sub->count("--input")) return in.text;
  if (in.file.empty() || in.file == "-") {
    return std::string(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
  }
  return text::read_file(in.file);
}

sensitive::RedactionMode redaction_mode(const std::string& s) {
  return s == "remove" ? sensitive::RedactionMode::kRemove : sensitive::RedactionMode::kPlaceholder;
}

std::vector<eval::ReportFormat> report_formats(const std::string& spec) {
  try {
    return eval::parse_formats(spec);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::string join_codes(const std::vector<std::string>& codes) {
  std::string out;
  for (const auto& c : codes) out += (out.empty() ? "" : ", ") + c;
  return out;
}

std::string file_tag(std::string s) {
  for (char& c : s) {
    if (!text::is_word_byte(static_cast<unsigned char>(c)) && c != '-') c = '_';
  }
  return s;
}

std::map<std::string, double> parse_weights(const std::string& spec) {
  std::map<std::string, double> out;
  if (fs::exists(spec)) {
    const json j = json::parse(text::read_file(spec), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw UsageError("judge weights file must hold a JSON object");
    for (const auto& [k, v] : j.items()) out[k] = v.get<double>();
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("judge weights must look like name=0.7,other=0.3");
    try {
      out[std::string(text::trim(item.substr(0, eq)))] = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw UsageError("bad judge weight '" + item + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_validate(const Common& common, CLI::App* sub, const InputArgs& in, const std::string& profile_path,
                 const std::string& mode, std::ostream& out) {
  command::VehicleProfile profile;
  if (!profile_path.empty()) {
    const json j = json::parse(text::read_file(profile_path), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::kConfigError, "vehicle profile is not valid JSON");
    profile = command::profile_from_json(j.contains("vehicle_profile") ? j.at("vehicle_profile") : j);
  } else if (auto cfg = load_optional_config(common)) {
    profile = cfg->policy.vehicle;
  }
  const std::string input = read_input(in, sub);
  std::vector<command::CommandEnvelope> commands;
  if (mode == "strict") {
    commands.push_back(command::parse_command(input, command::ParseMode::kStrict));
  } else {
    commands = command::extract_commands(input);
    if (commands.empty()) throw Error(ErrorCode::kNoCommandFound, "no command in input");
  }

  json report = json::array();
  bool all_valid = true;
  for (const auto& env : commands) {
    const auto v = command::validate_command(env, profile);
    all_valid = all_valid && v.valid();
    json violations = json::array();
    for (const auto& x : v.violations) {
      violations.push_back({{"field", x.field}, {"observed", x.observed}, {"permitted", x.permitted}});
    }
    report.push_back({{"command", command::serialize_command(env)}, {"valid", v.valid()}, {"violations", violations}});
  }
  if (common.json()) {
    out << json{{"profile", profile.name}, {"valid", all_valid}, {"commands", report}}.dump(2) << "\n";
  } else {
    for (const auto& r : report) {
      out << r["command"].get<std::string>() << "\n";
      if (r["valid"].get<bool>()) {
        out << "  valid\n";
        continue;
      }
      out << "  invalid\n";
      for (const auto& x : r["violations"]) {
        out << "  violation " << x["field"].get<std::string>() << ": observed " << x["observed"].get<std::string>()
            << ", permitted " << x["permitted"].get<std::string>() << "\n";
      }
    }
  }
  return kExitOk;
}

std::shared_ptr<const sensitive::DetectionRuleSet> pick_rules(const std::string& flag,
                                                              const std::optional<config::AppConfig>& cfg) {
  if (!flag.empty()) return std::make_shared<const sensitive::DetectionRuleSet>(sensitive::DetectionRuleSet::load(flag));
  if (cfg && cfg->ruleset) {
    return std::make_shared<const sensitive::DetectionRuleSet>(sensitive::DetectionRuleSet::load(*cfg->ruleset));
  }
  return std::make_shared<const sensitive::DetectionRuleSet>(sensitive::DetectionRuleSet::shipped_default());
}

std::shared_ptr<const behavior::BehaviorScorer> pick_scorer(const std::string& flag,
                                                            const std::optional<config::AppConfig>& cfg) {
  if (!flag.empty()) return std::make_shared<const behavior::BehaviorScorer>(behavior::BehaviorScorer::load(flag));
  if (cfg && cfg->rule_table) {
    return std::make_shared<const behavior::BehaviorScorer>(behavior::BehaviorScorer::load(*cfg->rule_table));
  }
  return std::make_shared<const behavior::BehaviorScorer>(behavior::BehaviorScorer::shipped_default());
}

int cmd_redact(const Common& common, CLI::App* sub, const InputArgs& in, const std::string& rules_path,
               const std::string& mode, std::ostream& out) {
  const auto cfg = load_optional_config(common);
  const auto rules = pick_rules(rules_path, cfg);
  const auto weights = cfg ? cfg->policy.weights : sensitive::uniform_weights();
  const std::string input = read_input(in, sub);
  const auto report = sensitive::assess(input, *rules, weights);
  const std::string redacted = sensitive::sanitize(input, *rules, redaction_mode(mode));
  if (common.json()) {
    out << json{{"redacted", redacted}, {"exposure", sensitive::report_summary(report)}}.dump(2) << "\n";
  } else {
    out << redacted;
    if (redacted.empty() || redacted.back() != '\n') out << "\n";
    out << "exposure: " << text::shortest_double(report.score);
    if (!report.present_codes().empty()) out << " [" << join_codes(report.present_codes()) << "]";
    out << "\n";
  }
  return kExitOk;
}

int cmd_score(const Common& common, CLI::App* sub, const InputArgs& in, const std::string& rules_path,
              const std::string& table_path, std::ostream& out) {
  const auto cfg = load_optional_config(common);
  const auto rules = pick_rules(rules_path, cfg);
  const auto scorer = pick_scorer(table_path, cfg);
  const auto weights = cfg ? cfg->policy.weights : sensitive::uniform_weights();
  const std::string input = read_input(in, sub);
  const auto exposure = sensitive::assess(input, *rules, weights);
  const auto b = scorer->score(input);
  const int align = behavior::to_alignment_scale(b);
  if (common.json()) {
    out << json{{"exposure", sensitive::report_summary(exposure)},
                {"behavior", b.value},
                {"alignment", align},
                {"matched_rules", b.rationale}}
               .dump(2)
        << "\n";
  } else {
    out << "exposure: " << text::shortest_double(exposure.score);
    if (!exposure.present_codes().empty()) out << " [" << join_codes(exposure.present_codes()) << "]";
    out << "\nbehavior: " << text::shortest_double(b.value) << "\nalignment: " << align << "\n";
    if (!b.rationale.empty()) out << "matched: " << join_codes(b.rationale) << "\n";
  }
  return kExitOk;
}

int cmd_eval_prompts(const Common& common, const std::string& corpus, const std::string& vocab_flag,
                     const std::string& out_dir, const std::string& rules_path, const std::string& table_path,
                     const std::string& report_formats, std::ostream& out, std::ostream& err) {
  const auto cfg = load_optional_config(common);
  const auto formats = cli::report_formats(report_formats);
  const auto rules = pick_rules(rules_path, cfg);
  const auto scorer = pick_scorer(table_path, cfg);
  const auto weights = cfg ? cfg->policy.weights : sensitive::uniform_weights();

  std::optional<fs::path> vocab;
  if (!vocab_flag.empty()) vocab = vocab_flag;
  else if (cfg && cfg->vocab) vocab = cfg->vocab;
  std::optional<llm::BpeTokenizer> tok;
  if (vocab && fs::exists(*vocab)) {
    tok = llm::BpeTokenizer::load(*vocab);
  } else {
    err << "warning: " << (vocab ? "vocab file " + vocab->string() + " not found" : std::string("no vocab file"))
        << "; token counts are whitespace approximations marked (approx)\n";
  }

  std::vector<eval::ProfileRow> rows;
  for (const auto& m : eval::load_corpus(corpus)) {
    rows.push_back(eval::profile_prompt(m, tok ? &*tok : nullptr, *rules, weights, *scorer));
  }
  const auto written = eval::emit_profile_report(rows, formats, out_dir);
  if (common.json()) {
    json files = json::array();
    for (const auto& p : written) files.push_back(p.string());
    out << json{{"rows", rows.size()}, {"approximate_tokens", !tok.has_value()}, {"files", files}}.dump(2) << "\n";
  } else {
    out << eval::profile_table_csv(rows);
  }
  return kExitOk;
}

struct QaArgs {
  std::string corpus;
  std::string method;
  std::string qa;
  std::vector<std::string> backends;
  std::uint64_t seed = 0;
  std::size_t per_category = 50;
  std::string out;
  std::size_t parallel = 4;
  std::string grader = "lexical";
  std::string judge_backend;
  std::string judge_weights;
  std::string report_formats = "csv,json";
};

int cmd_run_qa(const Common& common, const QaArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto started = text::utc_timestamp_now();
  const auto cfg = require_config(common);

  std::vector<std::string> backend_names = a.backends;
  if (backend_names.empty()) {
    if (!cfg.policy.roles.data.empty()) backend_names.push_back(cfg.policy.roles.data);
    else if (cfg.backends.size() == 1) backend_names.push_back(cfg.backends.front().http.name);
    else throw UsageError("choose a backend with --backend");
  }
  for (const auto& n : backend_names) {
    if (!cfg.find_backend(n)) throw UsageError("unknown backend '" + n + "'");
  }
  if (a.grader == "judge" && !cfg.find_backend(a.judge_backend)) {
    throw UsageError("judge grading needs --judge-backend naming a configured backend");
  }
  std::optional<std::map<std::string, double>> weights;
  if (!a.judge_weights.empty()) weights = parse_weights(a.judge_weights);
  const auto formats = report_formats(a.report_formats);

  const auto runtime = config::build_runtime(cfg);
  std::vector<eval::MethodPrompt> methods;
  if (!a.corpus.empty()) {
    for (auto& m : eval::load_corpus(a.corpus)) {
      if (a.method.empty() || m.name == a.method) methods.push_back(std::move(m));
    }
    if (methods.empty()) throw UsageError("method '" + a.method + "' is not in the corpus");
  } else {
    if (!a.method.empty()) throw UsageError("--method needs --corpus");
    methods.push_back(eval::MethodPrompt{"baseline", "", "", "", std::nullopt});
  }

  const auto records = eval::load_qa(a.qa);
  const auto sampled = eval::sample_per_category(records, a.per_category, a.seed);
  if (sampled.empty()) throw Error(ErrorCode::kConfigError, "QA file has no records");

  eval::RunOptions options;
  options.max_parallel = a.parallel;
  if (a.grader == "judge") options.grader = eval::Grader::judge(runtime.backends.at(a.judge_backend));

  std::string hash_input = common.config.empty() ? "" : text::read_file(common.config);
  hash_input += "\x1e" + text::read_file(a.qa) + "\x1e" + std::to_string(a.seed) + "\x1e" +
                std::to_string(a.per_category) + "\x1e" + options.grader.name();
  for (const auto& m : methods) hash_input += "\x1e" + m.name + "\x1f" + m.system_prompt;
  for (const auto& b : backend_names) hash_input += "\x1e" + b;
  const auto config_hash = text::sha256_hex(hash_input);

  fs::create_directories(a.out);
  text::write_file(fs::path(a.out) / "sampled_questions.jsonl", eval::qa_to_jsonl(sampled));

  std::vector<eval::EvalReport> reports;
  for (const auto& m : methods) {
    for (const auto& b : backend_names) {
      auto& backend = *runtime.backends.at(b);
      const auto results = eval::run_qa(m, sampled, backend, options);
      text::write_file(fs::path(a.out) / ("qa_results_" + file_tag(m.name) + "__" + file_tag(b) + ".jsonl"),
                       eval::qa_results_jsonl(results));
      auto report = eval::aggregate(results);
      report.method = m.name;
      report.model = m.model;
      report.backend = b;
      report.grader = options.grader.name();
      report.seed = a.seed;
      report.config_hash = config_hash;
      reports.push_back(std::move(report));
    }
  }
  const auto written = eval::emit_qa_report(reports, weights ? &*weights : nullptr, formats, a.out);

  json info{{"started_at", started},
            {"finished_at", text::utc_timestamp_now()},
            {"seed", a.seed},
            {"per_category", a.per_category},
            {"config_hash", config_hash},
            {"argv", argv}};
  text::write_file(fs::path(a.out) / "run_info.json", info.dump(2) + "\n");

  if (common.json()) {
    json rs = json::array();
    for (const auto& r : reports) {
      rs.push_back({{"method", r.method},
                    {"backend", r.backend},
                    {"overall_accuracy", r.overall_accuracy ? json(text::percent1(*r.overall_accuracy)) : json()},
                    {"correct", r.correct},
                    {"total", r.total}});
    }
    json files = json::array();
    for (const auto& p : written) files.push_back(p.string());
    out << json{{"seed", a.seed}, {"questions", sampled.size()}, {"reports", rs}, {"files", files}}.dump(2) << "\n";
  } else {
    out << eval::qa_table_csv(reports);
  }
  return kExitOk;
}

int cmd_serve(const Common& common, const std::string& listen, std::ostream& out, std::ostream& err) {
  auto cfg = require_config(common);
  if (!listen.empty()) config::parse_listen(listen, cfg.server.host, cfg.server.port);
  proxy::ProxyOptions options;
  options.threads = cfg.server.threads;
  if (!cfg.server.auth_token_env.empty()) {
    const char* token = std::getenv(cfg.server.auth_token_env.c_str());
    if (!token || !*token) {
      throw Error(ErrorCode::kConfigError, "client token variable " + cfg.server.auth_token_env + " is not set");
    }
    options.auth_token = token;
  }
  const auto runtime = config::build_runtime(cfg);
  auto guard = runtime.make_guardrail();
  proxy::ProxyServer server(guard, options);
  const int port = server.bind(cfg.server.host, cfg.server.port);

  g_shutdown = false;
  server.start();
  out << "listening on http://" << cfg.server.host << ":" << port << std::endl;
  while (!g_shutdown.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  err << "shutdown: " << guard->audit().size() << " audit records" << std::endl;
  return kExitOk;
}

int cmd_convert_qa(const Common& common, const std::string& input, const std::string& output, std::ostream& out) {
  const json release = json::parse(text::read_file(input), nullptr, false);
  if (release.is_discarded()) throw Error(ErrorCode::kConfigError, "input is not valid JSON");
  const auto records = eval::convert_nuscenes_qa(release);
  text::write_file(output, eval::qa_to_jsonl(records));
  eval::PerQaCategory<std::size_t> counts{};
  for (const auto& r : records) ++counts[eval::qa_index(r.category)];
  if (common.json()) {
    json c = json::object();
    for (auto cat : eval::kAllQaCategories) c[std::string(eval::qa_category_name(cat))] = counts[eval::qa_index(cat)];
    out << json{{"records", records.size()}, {"categories", c}, {"output", output}}.dump(2) << "\n";
  } else {
    out << records.size() << " records written to " << output << "\n";
  }
  return kExitOk;
}

}  // namespace

void request_shutdown() noexcept { g_shutdown = true; }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Safety guardrail for LLM-driven vehicles", "avguard"};
  app.require_subcommand(1);

  Common c_validate, c_redact, c_score, c_prompts, c_qa, c_serve, c_convert;

  auto* validate = app.add_subcommand("validate", "Parse and validate vehicle commands");
  InputArgs validate_in;
  std::string profile_path, parse_mode = "lenient";
  add_common(validate, c_validate);
  add_input(validate, validate_in);
  validate->add_option("--profile", profile_path, "Vehicle profile JSON");
  validate->add_option("--mode", parse_mode, "Parse mode")->check(CLI::IsMember({"strict", "lenient"}));

  auto* redact = app.add_subcommand("redact", "Redact sensitive data and report exposure");
  InputArgs redact_in;
  std::string redact_rules, redact_mode = "placeholder";
  add_common(redact, c_redact);
  add_input(redact, redact_in);
  redact->add_option("--rules", redact_rules, "Detection ruleset JSON");
  redact->add_option("--mode", redact_mode, "Redaction mode")->check(CLI::IsMember({"placeholder", "remove"}));

  auto* score = app.add_subcommand("score", "Exposure, behavior and alignment scores of a text");
  InputArgs score_in;
  std::string score_rules, score_table;
  add_common(score, c_score);
  add_input(score, score_in);
  score->add_option("--rules", score_rules, "Detection ruleset JSON");
  score->add_option("--rule-table", score_table, "Behavior rule table JSON");

  auto* prompts = app.add_subcommand("eval-prompts", "Profile a corpus of system prompts");
  std::string corpus, vocab, prompts_out, prompts_rules, prompts_table, prompts_formats = "csv,json";
  add_common(prompts, c_prompts);
  prompts->add_option("--corpus", corpus, "Corpus directory with manifest.json")->required();
  prompts->add_option("--vocab", vocab, "BPE rank file");
  prompts->add_option("--out", prompts_out, "Output directory")->required();
  prompts->add_option("--rules", prompts_rules, "Detection ruleset JSON");
  prompts->add_option("--rule-table", prompts_table, "Behavior rule table JSON");
  prompts->add_option("--report-format", prompts_formats, "csv, json or csv,json");

  auto* qa = app.add_subcommand("run-qa", "Run a category-tagged QA benchmark");
  QaArgs qa_args;
  add_common(qa, c_qa);
  qa->add_option("--corpus", qa_args.corpus, "Corpus directory");
  qa->add_option("--method", qa_args.method, "Only this method of the corpus");
  qa->add_option("--qa", qa_args.qa, "QA records (JSONL)")->required();
  qa->add_option("--backend", qa_args.backends, "Configured backend name (repeatable)");
  qa->add_option("--seed", qa_args.seed, "Sampling seed");
  qa->add_option("--per-category", qa_args.per_category, "Questions per category")->check(CLI::PositiveNumber);
  qa->add_option("--out", qa_args.out, "Output directory")->required();
  qa->add_option("--parallel", qa_args.parallel, "Concurrent questions")->check(CLI::PositiveNumber);
  qa->add_option("--grader", qa_args.grader, "Grading mode")->check(CLI::IsMember({"lexical", "judge"}));
  qa->add_option("--judge-backend", qa_args.judge_backend, "Backend used by judge grading");
  qa->add_option("--judge-weights", qa_args.judge_weights, "name=w,... or a JSON file");
  qa->add_option("--report-format", qa_args.report_formats, "csv, json or csv,json");

  auto* serve = app.add_subcommand("serve", "Run the guard proxy");
  std::string listen;
  add_common(serve, c_serve);
  serve->add_option("--listen", listen, "host:port");

  auto* convert = app.add_subcommand("convert-qa", "Convert a nuScenes-QA release file to QA records");
  std::string convert_in, convert_out;
  add_common(convert, c_convert);
  convert->add_option("--input", convert_in, "Release JSON")->required();
  convert->add_option("--output", convert_out, "QA records output (JSONL)")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (*validate) return cmd_validate(c_validate, validate, validate_in, profile_path, parse_mode, out);
    if (*redact) return cmd_redact(c_redact, redact, redact_in, redact_rules, redact_mode, out);
    if (*score) return cmd_score(c_score, score, score_in, score_rules, score_table, out);
    if (*prompts) {
      return cmd_eval_prompts(c_prompts, corpus, vocab, prompts_out, prompts_rules, prompts_table, prompts_formats, out,
                              err);
    }
    if (*qa) return cmd_run_qa(c_qa, qa_args, args, out);
    if (*serve) return cmd_serve(c_serve, listen, out, err);
    if (*convert) return cmd_convert_qa(c_convert, convert_in, convert_out, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace avguard::cli
