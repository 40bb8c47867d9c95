#pragma once

// Deterministic CSV/JSON rendering of profiling and QA results, plus the
// data files behind the plots. Accuracy is written as a one-decimal
// percentage, tokens with one decimal and time with two.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "avguard/eval_harness.hpp"

namespace avguard::eval {

enum class ReportFormat { kCsv, kJson };

/// Throws kInvalidArgument for anything but "csv", "json" or "csv,json".
std::vector<ReportFormat> parse_formats(std::string_view spec);

std::string csv_escape(std::string_view field);

// Prompt profiling. Files: prompt_profile, prompt_scatter, usage_heatmap.
std::string profile_table_csv(const std::vector<ProfileRow>& rows);
std::string profile_scatter_csv(const std::vector<ProfileRow>& rows);
std::string usage_heatmap_csv(const std::vector<ProfileRow>& rows);
std::string profile_json(const std::vector<ProfileRow>& rows);

std::vector<std::filesystem::path> emit_profile_report(const std::vector<ProfileRow>& rows,
                                                       const std::vector<ReportFormat>& formats,
                                                       const std::filesystem::path& out_dir);

// QA runs. Files: qa_table, qa_category_bars, and qa_weighted when judge
// weights are given. The weighting key is the report's backend name.
std::string qa_table_csv(const std::vector<EvalReport>& reports);
std::string qa_category_bars_csv(const std::vector<EvalReport>& reports);
std::string qa_weighted_csv(const std::vector<EvalReport>& reports, const std::map<std::string, double>& weights);
std::string qa_json(const std::vector<EvalReport>& reports, const std::map<std::string, double>* weights);

std::vector<std::filesystem::path> emit_qa_report(const std::vector<EvalReport>& reports,
                                                  const std::map<std::string, double>* weights,
                                                  const std::vector<ReportFormat>& formats,
                                                  const std::filesystem::path& out_dir);

/// Per-question results, one JSON object per line, in result order.
std::string qa_results_jsonl(const std::vector<QaResult>& results);

}  // namespace avguard::eval
