#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medco/config.hpp"
#include "medco/dialogue.hpp"
#include "medco/memory.hpp"
#include "medco/metrics.hpp"
#include "medco/records.hpp"
#include "medco/tools.hpp"

namespace medco {

/// runs/<run_id>/{config.json, transcripts/, memory/, results/}
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path transcripts() const { return root / "transcripts"; }
  std::filesystem::path memory_dir() const { return root / "memory"; }
  std::filesystem::path memory() const { return memory_dir() / "memory.json"; }
  std::filesystem::path progress() const { return memory_dir() / "progress.json"; }
  std::filesystem::path results() const { return root / "results"; }
  std::filesystem::path manifest() const { return results() / "manifest.json"; }
  std::filesystem::path failures() const { return results() / "failures.jsonl"; }
  std::filesystem::path image_cache() const { return root / "image_cache.json"; }

  void create() const;
};

struct CaseFailure {
  std::string patient_id;
  std::string phase;  // learning | practicing | multimodal
  std::string label;
  std::string code;
  std::string message;

  bool operator==(const CaseFailure&) const = default;
};

void to_json(nlohmann::json& j, const CaseFailure& f);
void from_json(const nlohmann::json& j, CaseFailure& f);

/// "Student", "w/ knowledge", "w/ suggestions", "w/ discussion" at range 1;
/// "same but know 75%" below it; "Student" at range 0; "Student +
/// Multi-modality" for the image runs.
std::string row_label(Strategy strategy, double range, bool multimodal);

/// File-system key of a row, e.g. "knowledge-r0.75".
std::string row_slug(Strategy strategy, double range, bool multimodal);

struct CaseResult {
  std::string patient_id;
  HdeScore hde;
  SemaResult sema;
  CascadeResult cascade;
  std::vector<std::string> pred_entities;
  std::vector<std::string> truth_entities;
  bool partial = false;
  std::vector<std::string> flags;  // e.g. text_only
  DiagnosticReport report;
};

void to_json(nlohmann::json& j, const CaseResult& c);
void from_json(const nlohmann::json& j, CaseResult& c);

struct ResultRow {
  std::string label;
  std::string slug;
  Strategy strategy = Strategy::none;
  double range = 1.0;
  bool multimodal = false;
  HdeRow hde;
  IcdRow icd;
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::string config_hash;
};

ResultRow aggregate_row(const std::vector<CaseResult>& cases, Strategy strategy, double range, bool multimodal,
                        const std::string& config_hash);

/// Writes hde.tsv and icd.tsv under dir. HDE numbers have three decimals and
/// the last column is "Avg(std)"; ICD numbers have two decimals. Each row ends
/// with the config hash.
void emit_results(const std::vector<ResultRow>& rows, const std::filesystem::path& dir);

std::string format_hde_row(const ResultRow& row);
std::string format_icd_row(const ResultRow& row);
extern const char* const kHdeHeader;
extern const char* const kIcdHeader;

struct LearningReport {
  std::size_t learned = 0;   // cases processed by this call
  std::size_t resumed = 0;   // cases skipped because a checkpoint had them
  bool complete = false;
  std::vector<CaseFailure> failures;
};

struct PracticeReport {
  ResultRow row;
  std::vector<CaseResult> cases;
  std::vector<CaseFailure> failures;
};

/// Drives the learning and practicing protocols for one run directory.
/// Cases run sequentially so transcripts and tables are reproducible.
class Experiment {
 public:
  Experiment(RunConfig config, std::vector<MedicalRecord> corpus, std::filesystem::path corpus_path,
             std::filesystem::path run_dir, std::shared_ptr<Backends> backends = nullptr);

  const RunConfig& config() const { return config_; }
  const std::string& config_hash() const { return config_hash_; }
  const RunPaths& paths() const { return paths_; }
  const std::vector<MedicalRecord>& corpus() const { return corpus_; }
  Backends& backends() { return *backends_; }
  const PromptCatalog& catalog() const { return *catalog_; }

  DatasetSplit split() const;
  std::vector<MedicalRecord> train_records() const;
  std::vector<MedicalRecord> test_records() const;

  DialogueContext dialogue_context(bool use_images) const;
  std::shared_ptr<Memory> new_memory() const;
  const IcdIndex& icd_index();

  /// Learns every record in order, checkpointing memory and progress after
  /// each case. A run with an existing checkpoint resumes after its last
  /// finished case. stop_after ends the call early (used to simulate a kill).
  LearningReport learn(const std::vector<MedicalRecord>& train, Memory& memory,
                       std::optional<std::size_t> stop_after = std::nullopt);

  PracticeReport practice(const std::vector<MedicalRecord>& test, const Memory& memory, Strategy strategy,
                          double range);

  /// Same pipeline with the image tools on. Records without a usable
  /// attachment run text-only (flagged) unless the config is strict.
  PracticeReport multimodal(const std::vector<MedicalRecord>& records, const Memory& memory,
                            Strategy strategy = Strategy::none, double range = 1.0);

  /// One practice row per (strategy, range).
  std::vector<PracticeReport> curve(const std::vector<MedicalRecord>& test, const Memory& memory,
                                    const std::vector<Strategy>& strategies, const std::vector<double>& ranges);

  CaseResult evaluate(const DiagnosticReport& report, const MedicalRecord& record, const std::string& session_tag);

 private:
  PracticeReport run_rows(const std::vector<MedicalRecord>& records, const Memory& memory, Strategy strategy,
                          double range, bool multimodal);
  void record_failure(const CaseFailure& f);

  RunConfig config_;
  std::string config_hash_;
  std::vector<MedicalRecord> corpus_;
  std::filesystem::path corpus_root_;
  RunPaths paths_;
  std::shared_ptr<Backends> backends_;
  std::shared_ptr<const PromptCatalog> catalog_;
  std::unique_ptr<InterpretationCache> cache_;
  std::unique_ptr<IcdIndex> icd_;
  std::filesystem::path icd_path_;
};

/// Rebuilds results/hde.tsv and results/icd.tsv from the per-case files listed
/// in the run's manifest. Returns the rows in manifest order.
std::vector<ResultRow> evaluate_run(const std::filesystem::path& run_dir);

/// Records that are part of the multimodal subset: those with attachments.
std::vector<MedicalRecord> multimodal_subset(const std::vector<MedicalRecord>& records);

}  // namespace medco
