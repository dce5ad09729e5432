#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "medco/agents.hpp"

namespace medco {

enum class ReportSection { symptoms = 0, examinations, diagnostic_results, rationales, treatment_plan };
inline constexpr std::size_t kReportSectionCount = 5;
inline constexpr std::array<ReportSection, kReportSectionCount> kReportSections = {
    ReportSection::symptoms, ReportSection::examinations, ReportSection::diagnostic_results,
    ReportSection::rationales, ReportSection::treatment_plan};

std::string_view to_string(ReportSection s);

/// Five-section structured diagnosis summary.
struct DiagnosticReport {
  std::vector<std::string> symptoms;
  std::vector<std::string> examinations;
  std::vector<std::string> diagnostic_results;
  std::vector<std::string> rationales;
  std::vector<std::string> treatment_plan;

  std::vector<std::string>& section(ReportSection s);
  const std::vector<std::string>& section(ReportSection s) const;
  bool empty() const;

  bool operator==(const DiagnosticReport&) const = default;
};

void to_json(nlohmann::json& j, const DiagnosticReport& r);
void from_json(const nlohmann::json& j, DiagnosticReport& r);

/// Violations of the report invariants: every item nonempty after trim, and
/// diagnostic_results nonempty when the report is final.
std::vector<std::string> validate_report(const DiagnosticReport& r, bool final);

struct ReportParse {
  DiagnosticReport report;
  std::vector<ReportSection> missing;  // headers not found in the text

  bool complete() const { return missing.empty(); }
};

/// Splits on the five `#Header#` markers (English or Chinese, order-insensitive)
/// and splits each section into items on `(n)` enumerators. Never throws.
ReportParse parse_report_sections(std::string_view text);

/// parse_report_sections, but throws ParseError when the diagnostic-results
/// header is absent.
DiagnosticReport parse_structured_report(std::string_view text);

/// `#Symptom# (1) a (2) b` lines in the given language.
std::string render_report(const DiagnosticReport& r, Language lang);

/// Items rendered as `(1) a (2) b`.
std::string render_items(const std::vector<std::string>& items);

/// Splits text into items on `(n)` / `（n）` enumerators; text without
/// enumerators is a single item. Empty items are dropped.
std::vector<std::string> split_enumerated(std::string_view text);

// --- expert suggestions -----------------------------------------------------

/// Expert feedback keyed by report section.
struct Suggestions {
  std::array<std::string, kReportSectionCount> sections;

  std::string& at(ReportSection s) { return sections[static_cast<std::size_t>(s)]; }
  const std::string& at(ReportSection s) const { return sections[static_cast<std::size_t>(s)]; }

  bool operator==(const Suggestions&) const = default;
};

void to_json(nlohmann::json& j, const Suggestions& s);
void from_json(const nlohmann::json& j, Suggestions& s);

/// Parses `#Symptoms## Suggestions<...>` style sections. Throws ParseError if
/// any of the five sections is absent or empty.
Suggestions parse_suggestions(std::string_view text);
std::string render_suggestions(const Suggestions& s, Language lang);

// --- disease knowledge ------------------------------------------------------

enum class KnowledgeField { definition = 0, pathogenesis, main_symptoms, auxiliary_exam_methods, treatment_plans };
inline constexpr std::size_t kKnowledgeFieldCount = 5;

struct KnowledgeCard {
  std::vector<std::string> definition;
  std::vector<std::string> pathogenesis;
  std::vector<std::string> main_symptoms;
  std::vector<std::string> auxiliary_exam_methods;
  std::vector<std::string> treatment_plans;

  std::vector<std::string>& field(KnowledgeField f);
  const std::vector<std::string>& field(KnowledgeField f) const;
  bool valid() const;  // all five fields present

  bool operator==(const KnowledgeCard&) const = default;
};

void to_json(nlohmann::json& j, const KnowledgeCard& c);
void from_json(const nlohmann::json& j, KnowledgeCard& c);

/// Throws ParseError naming the first missing field.
KnowledgeCard parse_knowledge_card(std::string_view text);
std::string render_knowledge_card(const KnowledgeCard& c, Language lang);

// --- judge scores and inquiry blocks ----------------------------------------

/// Five integers parsed from `#Section# score` lines. Throws ParseError on a
/// missing section or a score outside 1..4.
std::array<int, kReportSectionCount> parse_hde_scores(std::string_view text);

enum class InquiryTarget { patient, radiologist };

/// Enumerated questions following `#Inquire Patient#` / `#Inquire Radiologist#`
/// (or the Chinese headers). nullopt when no inquiry block is present.
std::optional<std::vector<std::string>> parse_inquiry(std::string_view text, InquiryTarget target);

}  // namespace medco
