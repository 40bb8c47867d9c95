#include "avguard/report.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "avguard/error.hpp"
#include "avguard/text_util.hpp"

namespace avguard::eval {

using nlohmann::ordered_json;

namespace {

std::string opt_percent(const std::optional<double>& v) { return v ? text::percent1(*v) : "-"; }

std::string tokens_cell(const ProfileRow& r) {
  return std::to_string(r.tokens) + (r.approximate_tokens ? " (approx)" : "");
}

void write(const std::filesystem::path& dir, const std::string& name, const std::string& content,
           std::vector<std::filesystem::path>& written) {
  const auto path = dir / name;
  text::write_file(path, content);
  written.push_back(path);
}

bool wants(const std::vector<ReportFormat>& formats, ReportFormat f) {
  return std::find(formats.begin(), formats.end(), f) != formats.end();
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
}

std::vector<std::string> judges_of(const std::vector<EvalReport>& reports) {
  std::set<std::string> s;
  for (const auto& r : reports) s.insert(r.backend);
  return {s.begin(), s.end()};
}

std::vector<std::string> methods_of(const std::vector<EvalReport>& reports) {
  std::vector<std::string> out;
  for (const auto& r : reports) {
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  }
  return out;
}

std::map<std::string, double> accuracy_by_judge(const std::vector<EvalReport>& reports, const std::string& method) {
  std::map<std::string, double> acc;
  for (const auto& r : reports) {
    if (r.method == method && r.overall_accuracy) acc[r.backend] = *r.overall_accuracy;
  }
  return acc;
}

}  // namespace

std::vector<ReportFormat> parse_formats(std::string_view spec) {
  std::vector<ReportFormat> out;
  std::string s(spec);
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto part = text::ascii_lower(text::trim(std::string_view(s).substr(start, comma - start)));
    if (part == "csv") out.push_back(ReportFormat::kCsv);
    else if (part == "json") out.push_back(ReportFormat::kJson);
    else throw Error(ErrorCode::kInvalidArgument, "unknown report format '" + part + "'");
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// ---------------------------------------------------------------------------
// Prompt profiling

std::string profile_table_csv(const std::vector<ProfileRow>& rows) {
  std::string out = "Method,Model,Token,Sens,Align\n";
  for (const auto& r : rows) {
    out += csv_escape(r.method) + "," + csv_escape(r.model) + "," + tokens_cell(r) + "," +
           text::fixed(r.exposure.score, 2) + "," + std::to_string(r.alignment) + "\n";
  }
  return out;
}

std::string profile_scatter_csv(const std::vector<ProfileRow>& rows) {
  std::string out = "method,tokens,approximate,literature_safety,exposure,alignment\n";
  for (const auto& r : rows) {
    out += csv_escape(r.method) + "," + std::to_string(r.tokens) + "," + (r.approximate_tokens ? "1" : "0") + "," +
           (r.literature_safety ? text::fixed(*r.literature_safety, 1) : "") + "," + text::fixed(r.exposure.score, 2) +
           "," + std::to_string(r.alignment) + "\n";
  }
  return out;
}

std::string usage_heatmap_csv(const std::vector<ProfileRow>& rows) {
  std::vector<sensitive::PerCategory<std::uint64_t>> counts;
  for (const auto& r : rows) counts.push_back(r.category_counts);
  const auto matrix = sensitive::usage_matrix(counts);
  std::string out = "method";
  for (auto c : sensitive::kAllCategories) out += "," + std::string(sensitive::code(c));
  out += "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out += csv_escape(rows[i].method);
    for (double v : matrix[i]) out += "," + text::fixed(v, 4);
    out += "\n";
  }
  return out;
}

std::string profile_json(const std::vector<ProfileRow>& rows) {
  std::vector<sensitive::PerCategory<std::uint64_t>> counts;
  for (const auto& r : rows) counts.push_back(r.category_counts);
  const auto matrix = sensitive::usage_matrix(counts);
  ordered_json out;
  out["columns"] = {"Method", "Model", "Token", "Sens", "Align"};
  ordered_json list = ordered_json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    ordered_json row;
    row["method"] = r.method;
    row["model"] = r.model;
    row["tokens"] = r.tokens;
    row["tokens_approximate"] = r.approximate_tokens;
    row["exposure"] = text::fixed(r.exposure.score, 2);
    row["categories"] = r.exposure.present_codes();
    row["alignment"] = r.alignment;
    row["behavior"] = text::fixed(r.behavior, 4);
    row["literature_safety"] = r.literature_safety ? ordered_json(text::fixed(*r.literature_safety, 1)) : ordered_json();
    ordered_json c = ordered_json::object();
    ordered_json h = ordered_json::object();
    for (auto cat : sensitive::kAllCategories) {
      c[std::string(sensitive::code(cat))] = r.category_counts[sensitive::index_of(cat)];
      h[std::string(sensitive::code(cat))] = text::fixed(matrix[i][sensitive::index_of(cat)], 4);
    }
    row["category_counts"] = c;
    row["usage_normalized"] = h;
    list.push_back(row);
  }
  out["rows"] = list;
  return out.dump(2) + "\n";
}

std::vector<std::filesystem::path> emit_profile_report(const std::vector<ProfileRow>& rows,
                                                       const std::vector<ReportFormat>& formats,
                                                       const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  std::vector<std::filesystem::path> written;
  if (wants(formats, ReportFormat::kCsv)) {
    write(out_dir, "prompt_profile.csv", profile_table_csv(rows), written);
    write(out_dir, "prompt_scatter.csv", profile_scatter_csv(rows), written);
    write(out_dir, "usage_heatmap.csv", usage_heatmap_csv(rows), written);
  }
  if (wants(formats, ReportFormat::kJson)) write(out_dir, "prompt_profile.json", profile_json(rows), written);
  return written;
}

// ---------------------------------------------------------------------------
// QA

std::string qa_table_csv(const std::vector<EvalReport>& reports) {
  std::string out = "method,backend";
  for (auto c : kAllQaCategories) {
    const std::string n(qa_category_name(c));
    out += "," + n + "_acc," + n + "_token," + n + "_time";
  }
  out += ",overall_acc\n";
  for (const auto& r : reports) {
    out += csv_escape(r.method) + "," + csv_escape(r.backend);
    for (auto c : kAllQaCategories) {
      const auto& m = r.per_category[qa_index(c)];
      if (m.n == 0) {
        out += ",-,-,-";
      } else {
        out += "," + opt_percent(m.accuracy) + "," + text::fixed(m.mean_completion_tokens, 1) + "," +
               text::fixed(m.mean_latency_s, 2);
      }
    }
    out += "," + opt_percent(r.overall_accuracy) + "\n";
  }
  return out;
}

std::string qa_category_bars_csv(const std::vector<EvalReport>& reports) {
  std::string out = "method,backend,category,accuracy_pct,correct,n\n";
  for (const auto& r : reports) {
    for (auto c : kAllQaCategories) {
      const auto& m = r.per_category[qa_index(c)];
      if (!m.accuracy) continue;
      out += csv_escape(r.method) + "," + csv_escape(r.backend) + "," + std::string(qa_category_name(c)) + "," +
             text::fixed(*m.accuracy * 100.0, 1) + "," + std::to_string(m.correct) + "," + std::to_string(m.n) + "\n";
    }
  }
  return out;
}

std::string qa_weighted_csv(const std::vector<EvalReport>& reports, const std::map<std::string, double>& weights) {
  const auto judges = judges_of(reports);
  std::string out = "method,weighted_acc";
  for (const auto& j : judges) out += "," + csv_escape(j) + "_acc";
  out += "\n";
  for (const auto& method : methods_of(reports)) {
    const auto acc = accuracy_by_judge(reports, method);
    if (acc.empty()) continue;
    out += csv_escape(method) + "," + text::percent1(weighted_overall(acc, weights));
    for (const auto& j : judges) {
      const auto it = acc.find(j);
      out += "," + (it == acc.end() ? std::string("-") : text::percent1(it->second));
    }
    out += "\n";
  }
  return out;
}

std::string qa_json(const std::vector<EvalReport>& reports, const std::map<std::string, double>* weights) {
  ordered_json out;
  ordered_json list = ordered_json::array();
  for (const auto& r : reports) {
    ordered_json j;
    j["method"] = r.method;
    j["model"] = r.model;
    j["backend"] = r.backend;
    j["grader"] = r.grader;
    ordered_json cats = ordered_json::object();
    for (auto c : kAllQaCategories) {
      const auto& m = r.per_category[qa_index(c)];
      ordered_json cm;
      cm["n"] = m.n;
      cm["correct"] = m.correct;
      cm["accuracy"] = m.accuracy ? ordered_json(text::percent1(*m.accuracy)) : ordered_json();
      cm["mean_completion_tokens"] = m.n ? ordered_json(text::fixed(m.mean_completion_tokens, 1)) : ordered_json();
      cm["mean_latency_s"] = m.n ? ordered_json(text::fixed(m.mean_latency_s, 2)) : ordered_json();
      cats[std::string(qa_category_name(c))] = cm;
    }
    j["categories"] = cats;
    j["total"] = r.total;
    j["correct"] = r.correct;
    j["overall_accuracy"] = r.overall_accuracy ? ordered_json(text::percent1(*r.overall_accuracy)) : ordered_json();
    j["seed"] = r.seed;
    j["config_hash"] = r.config_hash;
    list.push_back(j);
  }
  out["reports"] = list;
  if (weights) {
    ordered_json w = ordered_json::object();
    for (const auto& [k, v] : *weights) w[k] = v;
    out["judge_weights"] = w;
    ordered_json weighted = ordered_json::array();
    for (const auto& method : methods_of(reports)) {
      const auto acc = accuracy_by_judge(reports, method);
      if (acc.empty()) continue;
      weighted.push_back({{"method", method}, {"weighted_accuracy", text::percent1(weighted_overall(acc, *weights))}});
    }
    out["weighted"] = weighted;
  }
  return out.dump(2) + "\n";
}

std::vector<std::filesystem::path> emit_qa_report(const std::vector<EvalReport>& reports,
                                                  const std::map<std::string, double>* weights,
                                                  const std::vector<ReportFormat>& formats,
                                                  const std::filesystem::path& out_dir) {
  ensure_dir(out_dir);
  std::vector<std::filesystem::path> written;
  if (wants(formats, ReportFormat::kCsv)) {
    write(out_dir, "qa_table.csv", qa_table_csv(reports), written);
    write(out_dir, "qa_category_bars.csv", qa_category_bars_csv(reports), written);
    if (weights) write(out_dir, "qa_weighted.csv", qa_weighted_csv(reports, *weights), written);
  }
  if (wants(formats, ReportFormat::kJson)) write(out_dir, "qa_report.json", qa_json(reports, weights), written);
  return written;
}

std::string qa_results_jsonl(const std::vector<QaResult>& results) {
  std::string out;
  for (const auto& r : results) {
    ordered_json j;
    j["id"] = r.id;
    j["category"] = qa_category_name(r.category);
    j["predicted"] = r.predicted;
    j["gold"] = r.gold;
    j["correct"] = r.correct;
    j["prompt_tokens"] = r.prompt_tokens;
    j["completion_tokens"] = r.completion_tokens;
    j["latency_s"] = text::fixed(r.latency_s, 2);
    j["error"] = r.error ? ordered_json(*r.error) : ordered_json();
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace avguard::eval
