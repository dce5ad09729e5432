#include "medco/report.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "medco/error.hpp"
#include "medco/text.hpp"

namespace medco {

using nlohmann::json;

namespace {

struct SectionSpec {
  int id;
  std::vector<std::string> aliases;  // normalized: ascii-lowercased, whitespace and colons removed
};

std::string normalize_header(std::string_view inner) {
  std::string out;
  for (char32_t cp : text::utf8_decode(inner)) {
    if (cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == 0x3000 || cp == U':' || cp == 0xFF1A) {
      continue;
    }
    out += text::utf8_encode(cp);
  }
  return text::ascii_lower(out);
}

struct HeaderHit {
  int id;
  std::size_t begin;  // offset of the opening '#'
  std::size_t end;    // offset just past the closing '#'
};

std::vector<HeaderHit> find_headers(std::string_view s, const std::vector<SectionSpec>& specs) {
  constexpr std::size_t kMaxHeaderBytes = 64;
  std::vector<HeaderHit> hits;
  std::size_t i = s.find('#');
  while (i != std::string_view::npos) {
    std::size_t j = s.find('#', i + 1);
    if (j == std::string_view::npos) break;
    bool matched = false;
    if (j - i - 1 <= kMaxHeaderBytes) {
      std::string norm = normalize_header(s.substr(i + 1, j - i - 1));
      for (const auto& spec : specs) {
        if (std::find(spec.aliases.begin(), spec.aliases.end(), norm) != spec.aliases.end()) {
          hits.push_back({spec.id, i, j + 1});
          matched = true;
          break;
        }
      }
    }
    i = matched ? s.find('#', j + 1) : j;
  }
  return hits;
}

/// First occurrence of each section id -> its raw content.
std::map<int, std::string> split_sections(std::string_view s, const std::vector<SectionSpec>& specs) {
  auto hits = find_headers(s, specs);
  std::map<int, std::string> out;
  for (std::size_t k = 0; k < hits.size(); ++k) {
    std::size_t end = k + 1 < hits.size() ? hits[k + 1].begin : s.size();
    if (!out.count(hits[k].id)) out[hits[k].id] = std::string(s.substr(hits[k].end, end - hits[k].end));
  }
  return out;
}

const std::vector<SectionSpec>& report_specs() {
  static const std::vector<SectionSpec> specs = {
      {0, {"symptom", "symptoms", "症状"}},
      {1, {"examinations", "examination", "auxiliaryexaminations", "auxiliaryexamination", "辅助检查", "检查"}},
      {2, {"diagnosticresults", "diagnosticresult", "diagnosis", "诊断结果"}},
      {3, {"rationale", "rationales", "rational", "diagnosticrationale", "diagnosticrationales", "diagnosticbasis",
           "诊断依据"}},
      {4, {"treatmentplan", "treatmentplans", "治疗方案"}},
  };
  return specs;
}

const std::vector<SectionSpec>& suggestion_specs() {
  static const std::vector<SectionSpec> specs = {
      {0, {"symptoms", "symptom", "症状"}},
      {1, {"medicalexaminationitems", "medicalexaminationitem", "medicalexamination", "examinations", "医学检查项目",
           "辅助检查"}},
      {2, {"diagnosticresults", "diagnosticresult", "诊断结果"}},
      {3, {"rational", "rationale", "rationales", "diagnosticbasis", "诊断依据"}},
      {4, {"treatmentplan", "treatmentplans", "治疗方案"}},
  };
  return specs;
}

const std::vector<SectionSpec>& knowledge_specs() {
  static const std::vector<SectionSpec> specs = {
      {0, {"diseasedefinition", "definition", "疾病定义"}},
      {1, {"pathogenesis", "发病机制"}},
      {2, {"mainsymptoms", "primarysymptoms", "mainsymptom", "主要症状"}},
      {3, {"commonauxiliaryexaminationmethods", "commonlyusedauxiliaryexaminationmethods",
           "auxiliaryexaminationmethods", "常用的辅助检查方法", "常用辅助检查方法"}},
      {4, {"maintreatmentplans", "maintreatmentplan", "treatmentplans", "主要治疗方案"}},
  };
  return specs;
}

const std::vector<SectionSpec>& hde_specs() {
  static const std::vector<SectionSpec> specs = {
      {0, {"symptom", "symptoms", "症状"}},
      {1, {"medicalexamination", "examination", "examinations", "医学检查"}},
      {2, {"diagnosticresults", "diagnosticresult", "诊断结果"}},
      {3, {"rationale", "rationales", "diagnosticrationales", "diagnosticrationale", "诊断依据"}},
      {4, {"treatmentplan", "treatmentplans", "治疗方案"}},
  };
  return specs;
}

struct Enumerator {
  std::size_t begin;
  std::size_t end;
};

// Finds `(12)`, `( 3 )`, or the full-width `（3）` starting at or after pos.
std::optional<Enumerator> next_enumerator(std::string_view s, std::size_t pos) {
  static constexpr std::string_view kFwOpen = "\xEF\xBC\x88";   // （
  static constexpr std::string_view kFwClose = "\xEF\xBC\x89";  // ）
  for (std::size_t i = pos; i < s.size(); ++i) {
    std::size_t open_len = 0;
    if (s[i] == '(') {
      open_len = 1;
    } else if (s.substr(i, 3) == kFwOpen) {
      open_len = 3;
    } else {
      continue;
    }
    std::size_t j = i + open_len;
    while (j < s.size() && s[j] == ' ') ++j;
    std::size_t digits = j;
    while (j < s.size() && s[j] >= '0' && s[j] <= '9') ++j;
    if (j == digits || j - digits > 3) continue;
    while (j < s.size() && s[j] == ' ') ++j;
    if (j < s.size() && s[j] == ')') return Enumerator{i, j + 1};
    if (s.substr(j, 3) == kFwClose) return Enumerator{i, j + 3};
  }
  return std::nullopt;
}

std::string language_header(ReportSection s, Language lang) {
  static const std::array<const char*, 5> en = {"#Symptom#", "#Examinations#", "#Diagnostic Results#", "#Rationale#",
                                                "#Treatment Plan#"};
  static const std::array<const char*, 5> zh = {"#症状#", "#辅助检查#", "#诊断结果#", "#诊断依据#", "#治疗方案#"};
  return (lang == Language::zh ? zh : en)[static_cast<std::size_t>(s)];
}

}  // namespace

std::string_view to_string(ReportSection s) {
  switch (s) {
    case ReportSection::symptoms: return "symptoms";
    case ReportSection::examinations: return "examinations";
    case ReportSection::diagnostic_results: return "diagnostic_results";
    case ReportSection::rationales: return "rationales";
    case ReportSection::treatment_plan: return "treatment_plan";
  }
  return "symptoms";
}

std::vector<std::string>& DiagnosticReport::section(ReportSection s) {
  switch (s) {
    case ReportSection::symptoms: return symptoms;
    case ReportSection::examinations: return examinations;
    case ReportSection::diagnostic_results: return diagnostic_results;
    case ReportSection::rationales: return rationales;
    case ReportSection::treatment_plan: return treatment_plan;
  }
  return symptoms;
}

const std::vector<std::string>& DiagnosticReport::section(ReportSection s) const {
  return const_cast<DiagnosticReport*>(this)->section(s);
}

bool DiagnosticReport::empty() const {
  return std::all_of(kReportSections.begin(), kReportSections.end(),
                     [&](ReportSection s) { return section(s).empty(); });
}

void to_json(json& j, const DiagnosticReport& r) {
  j = json::object();
  for (auto s : kReportSections) j[std::string(to_string(s))] = r.section(s);
}

void from_json(const json& j, DiagnosticReport& r) {
  for (auto s : kReportSections) {
    r.section(s) = j.value(std::string(to_string(s)), std::vector<std::string>{});
  }
}

std::vector<std::string> validate_report(const DiagnosticReport& r, bool final) {
  std::vector<std::string> out;
  if (final && r.diagnostic_results.empty()) out.push_back("diagnostic_results empty on a final report");
  for (auto s : kReportSections) {
    for (const auto& item : r.section(s)) {
      if (text::trim(item).empty()) out.push_back(fmt::format("{}: empty item", to_string(s)));
    }
  }
  return out;
}

std::vector<std::string> split_enumerated(std::string_view s) {
  std::vector<std::string> items;
  auto push = [&](std::string_view piece) {
    auto t = text::trim(piece);
    if (!t.empty()) items.emplace_back(t);
  };
  std::size_t pos = 0;
  auto e = next_enumerator(s, 0);
  if (!e) {
    push(s);
    return items;
  }
  push(s.substr(0, e->begin));
  while (e) {
    auto next = next_enumerator(s, e->end);
    std::size_t end = next ? next->begin : s.size();
    push(s.substr(e->end, end - e->end));
    pos = end;
    e = next;
  }
  (void)pos;
  return items;
}

ReportParse parse_report_sections(std::string_view text_in) {
  ReportParse out;
  auto sections = split_sections(text_in, report_specs());
  for (auto s : kReportSections) {
    auto it = sections.find(static_cast<int>(s));
    if (it == sections.end()) {
      out.missing.push_back(s);
      continue;
    }
    out.report.section(s) = split_enumerated(it->second);
  }
  return out;
}

DiagnosticReport parse_structured_report(std::string_view text_in) {
  auto parsed = parse_report_sections(text_in);
  if (std::find(parsed.missing.begin(), parsed.missing.end(), ReportSection::diagnostic_results) !=
      parsed.missing.end()) {
    throw ParseError("report has no diagnostic-results section", std::string(text_in));
  }
  return parsed.report;
}

std::string render_items(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ' ';
    out += fmt::format("({}) {}", i + 1, items[i]);
  }
  return out;
}

std::string render_report(const DiagnosticReport& r, Language lang) {
  std::string out;
  for (auto s : kReportSections) {
    if (!out.empty()) out += '\n';
    out += language_header(s, lang);
    out += ' ';
    out += render_items(r.section(s));
  }
  return out;
}

// --- suggestions --------------------------------------------------------------

void to_json(json& j, const Suggestions& s) {
  j = json::object();
  for (auto sec : kReportSections) j[std::string(to_string(sec))] = s.at(sec);
}

void from_json(const json& j, Suggestions& s) {
  for (auto sec : kReportSections) s.at(sec) = j.value(std::string(to_string(sec)), std::string{});
}

namespace {

std::string clean_suggestion(std::string_view raw) {
  std::string_view s = text::trim(raw);
  while (!s.empty() && s.front() == '#') s = text::trim(s.substr(1));
  for (std::string_view prefix : {"Suggestions", "suggestions", "Suggestion", "suggestion", "建议"}) {
    if (text::starts_with(s, prefix)) {
      s = text::trim(s.substr(prefix.size()));
      break;
    }
  }
  for (std::string_view colon : {":", "\xEF\xBC\x9A"}) {
    if (text::starts_with(s, colon)) s = text::trim(s.substr(colon.size()));
  }
  if (s.size() >= 2 && s.front() == '<' && s.back() == '>') s = text::trim(s.substr(1, s.size() - 2));
  return std::string(s);
}

}  // namespace

Suggestions parse_suggestions(std::string_view text_in) {
  auto sections = split_sections(text_in, suggestion_specs());
  Suggestions out;
  for (auto sec : kReportSections) {
    auto it = sections.find(static_cast<int>(sec));
    if (it == sections.end()) {
      throw ParseError(fmt::format("suggestions missing section {}", to_string(sec)), std::string(text_in));
    }
    out.at(sec) = clean_suggestion(it->second);
    if (out.at(sec).empty()) {
      throw ParseError(fmt::format("suggestions section {} is empty", to_string(sec)), std::string(text_in));
    }
  }
  return out;
}

std::string render_suggestions(const Suggestions& s, Language lang) {
  static const std::array<const char*, 5> en = {"#Symptoms#", "#Medical Examination Items#", "#Diagnostic Results#",
                                                "#Rationale#", "#Treatment Plan#"};
  static const std::array<const char*, 5> zh = {"#症状#", "#医学检查项目#", "#诊断结果#", "#诊断依据#", "#治疗方案#"};
  const auto& headers = lang == Language::zh ? zh : en;
  std::string out;
  for (auto sec : kReportSections) {
    if (!out.empty()) out += '\n';
    out += fmt::format("{}# {} {}", headers[static_cast<std::size_t>(sec)], lang == Language::zh ? "建议" : "Suggestions",
                       s.at(sec));
  }
  return out;
}

// --- knowledge cards ----------------------------------------------------------

std::vector<std::string>& KnowledgeCard::field(KnowledgeField f) {
  switch (f) {
    case KnowledgeField::definition: return definition;
    case KnowledgeField::pathogenesis: return pathogenesis;
    case KnowledgeField::main_symptoms: return main_symptoms;
    case KnowledgeField::auxiliary_exam_methods: return auxiliary_exam_methods;
    case KnowledgeField::treatment_plans: return treatment_plans;
  }
  return definition;
}

const std::vector<std::string>& KnowledgeCard::field(KnowledgeField f) const {
  return const_cast<KnowledgeCard*>(this)->field(f);
}

bool KnowledgeCard::valid() const {
  for (std::size_t i = 0; i < kKnowledgeFieldCount; ++i) {
    if (field(static_cast<KnowledgeField>(i)).empty()) return false;
  }
  return true;
}

namespace {
constexpr std::array<const char*, kKnowledgeFieldCount> kKnowledgeKeys = {
    "definition", "pathogenesis", "main_symptoms", "auxiliary_exam_methods", "treatment_plans"};
}

void to_json(json& j, const KnowledgeCard& c) {
  j = json::object();
  for (std::size_t i = 0; i < kKnowledgeFieldCount; ++i) j[kKnowledgeKeys[i]] = c.field(static_cast<KnowledgeField>(i));
}

void from_json(const json& j, KnowledgeCard& c) {
  for (std::size_t i = 0; i < kKnowledgeFieldCount; ++i) {
    c.field(static_cast<KnowledgeField>(i)) = j.value(kKnowledgeKeys[i], std::vector<std::string>{});
  }
}

KnowledgeCard parse_knowledge_card(std::string_view text_in) {
  auto sections = split_sections(text_in, knowledge_specs());
  KnowledgeCard card;
  for (std::size_t i = 0; i < kKnowledgeFieldCount; ++i) {
    auto it = sections.find(static_cast<int>(i));
    auto items = it == sections.end() ? std::vector<std::string>{} : split_enumerated(it->second);
    if (items.empty()) {
      throw ParseError(fmt::format("knowledge card missing field {}", kKnowledgeKeys[i]), std::string(text_in));
    }
    card.field(static_cast<KnowledgeField>(i)) = std::move(items);
  }
  return card;
}

std::string render_knowledge_card(const KnowledgeCard& c, Language lang) {
  static const std::array<const char*, 5> en = {"#Disease Definition#", "#Pathogenesis#", "#Main Symptoms#",
                                                "#Common Auxiliary Examination Methods#", "#Main Treatment Plans#"};
  static const std::array<const char*, 5> zh = {"#疾病定义#", "#发病机制#", "#主要症状#", "#常用的辅助检查方法#",
                                                "#主要治疗方案#"};
  const auto& headers = lang == Language::zh ? zh : en;
  std::string out;
  for (std::size_t i = 0; i < kKnowledgeFieldCount; ++i) {
    if (!out.empty()) out += '\n';
    out += fmt::format("{} {}", headers[i], render_items(c.field(static_cast<KnowledgeField>(i))));
  }
  return out;
}

// --- judge / inquiry ----------------------------------------------------------

std::array<int, kReportSectionCount> parse_hde_scores(std::string_view text_in) {
  auto sections = split_sections(text_in, hde_specs());
  std::array<int, kReportSectionCount> scores{};
  for (std::size_t i = 0; i < kReportSectionCount; ++i) {
    auto it = sections.find(static_cast<int>(i));
    if (it == sections.end()) {
      throw ParseError(fmt::format("judge reply missing section {}", to_string(static_cast<ReportSection>(i))),
                       std::string(text_in));
    }
    const std::string& body = it->second;
    auto digit = std::find_if(body.begin(), body.end(), [](char c) { return c >= '0' && c <= '9'; });
    if (digit == body.end()) {
      throw ParseError(fmt::format("judge reply has no score for {}", to_string(static_cast<ReportSection>(i))),
                       std::string(text_in));
    }
    int value = 0;
    auto d = digit;
    while (d != body.end() && *d >= '0' && *d <= '9' && value < 100) value = value * 10 + (*d++ - '0');
    if (value < 1 || value > 4) {
      throw ParseError(fmt::format("judge score {} for {} outside 1..4", value, to_string(static_cast<ReportSection>(i))),
                       std::string(text_in));
    }
    scores[i] = value;
  }
  return scores;
}

std::optional<std::vector<std::string>> parse_inquiry(std::string_view text_in, InquiryTarget target) {
  static const std::vector<SectionSpec> specs = {
      {0, {"inquirepatient", "询问病人"}},
      {1, {"inquireradiologist", "inquireexaminer", "询问检查员"}},
  };
  auto hits = find_headers(text_in, specs);
  if (hits.empty()) return std::nullopt;
  int wanted = target == InquiryTarget::patient ? 0 : 1;
  auto it = std::find_if(hits.begin(), hits.end(), [&](const HeaderHit& h) { return h.id == wanted; });
  if (it == hits.end()) it = hits.begin();
  auto next = std::next(it);
  std::size_t end = next == hits.end() ? text_in.size() : next->begin;
  auto items = split_enumerated(text_in.substr(it->end, end - it->end));
  if (items.empty()) return std::nullopt;
  return items;
}

}  // namespace medco
