#pragma once

#include <array>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "medco/agents.hpp"
#include "medco/backends.hpp"
#include "medco/records.hpp"
#include "medco/report.hpp"

namespace medco {

// --- ICD-10 -------------------------------------------------------------------

/// Letter, two digits, optional "." and 1-3 digits.
bool is_icd_code(std::string_view code);

struct IcdLevels {
  std::string coarse;  // chapter letter
  std::string medium;  // 3-character category
  std::string fine;    // full code

  bool operator==(const IcdLevels&) const = default;
};

/// Throws invalid_argument for a malformed code.
IcdLevels icd_levels(std::string_view code);

struct IcdTerm {
  std::string code;
  std::string title;
};

/// CSV rows `code,title` (optional header, quoted titles allowed). Throws
/// format on malformed rows and validation on duplicate codes.
std::vector<IcdTerm> load_icd_terms(const std::filesystem::path& path);

/// Exact inner-product search over unit title embeddings.
class IcdIndex {
 public:
  IcdIndex(std::vector<IcdTerm> terms, EmbeddingProvider& embedder);

  std::size_t size() const { return terms_.size(); }
  const std::vector<IcdTerm>& terms() const { return terms_; }

  /// Codes of the k best titles, best first (ties by code).
  std::vector<std::string> top_k(const std::string& query, std::size_t k) const;
  std::string top1(const std::string& query) const;

 private:
  std::vector<IcdTerm> terms_;
  std::vector<std::vector<float>> vectors_;
  EmbeddingProvider* embedder_;
};

// --- entities -----------------------------------------------------------------

/// Diagnostic-result items split on enumerators, semicolons, enumeration
/// commas and newlines; trimmed, trailing full stops dropped, deduplicated
/// (ASCII case-insensitive) in order.
std::vector<std::string> extract_disease_entities(const DiagnosticReport& report);
std::vector<std::string> extract_entities(const std::vector<std::string>& items);

/// Judged mode: the extraction prompt through the `extract` binding.
std::vector<std::string> extract_disease_entities_judged(const DiagnosticReport& report, const Backends& backends,
                                                         const PromptCatalog& catalog, Language lang, CallTag tag);

// --- SEMA ---------------------------------------------------------------------

struct SemaResult {
  std::size_t entity_count = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0;  // percent
  double recall = 0;
  double f1 = 0;
};

/// Size of a maximum matching; adjacency[i] lists the right vertices of left i.
std::size_t max_bipartite_matching(const std::vector<std::vector<std::size_t>>& adjacency, std::size_t right_count);

/// One-to-one matching where a prediction matches a truth entity iff their
/// code sets intersect. The matching is maximum.
SemaResult sema_from_code_sets(const std::vector<std::set<std::string>>& pred,
                               const std::vector<std::set<std::string>>& truth);

SemaResult sema_case(const std::vector<std::string>& pred_entities, const std::vector<std::string>& truth_entities,
                     const IcdIndex& index, std::size_t k = 10);

double harmonic_f1(double precision, double recall);

// --- CASCADE ------------------------------------------------------------------

struct CascadeResult {
  double coarse = 0;
  double medium = 0;
  double fine = 0;
  bool empty_truth = false;
};

CascadeResult cascade_from_codes(const std::vector<std::string>& pred_codes, const std::vector<std::string>& truth_codes);
CascadeResult cascade_case(const std::vector<std::string>& pred_entities,
                           const std::vector<std::string>& truth_entities, const IcdIndex& index);

// --- HDE ----------------------------------------------------------------------

struct HdeScore {
  std::array<int, kReportSectionCount> scores{};  // symptom, examination, results, rationales, treatment

  double avg() const;
};

/// Expert judge through the `judge` binding; one reformat retry.
HdeScore judge_hde(const DiagnosticReport& report, const MedicalRecord& record, const Backends& backends,
                   const PromptCatalog& catalog, Language lang, CallTag tag);

// --- aggregation --------------------------------------------------------------

struct HdeRow {
  std::array<double, kReportSectionCount> section_means{};
  double avg = 0;  // mean of the section means
  double std = 0;  // population std of the section means
  std::size_t cases = 0;
};

HdeRow hde_row_from_means(const std::array<double, kReportSectionCount>& means);
/// Throws invalid_argument on an empty list.
HdeRow aggregate_hde(const std::vector<HdeScore>& scores);

struct IcdRow {
  double entity_count = 0;  // mean entities per case
  double precision = 0;
  double recall = 0;
  double f1 = 0;  // harmonic mean of the aggregated precision and recall
  double coarse = 0;  // percent
  double medium = 0;
  double fine = 0;
  std::size_t cases = 0;
};

IcdRow aggregate_icd(const std::vector<SemaResult>& sema, const std::vector<CascadeResult>& cascade);

}  // namespace medco
