#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include "medco/backends.hpp"
#include "medco/report.hpp"

namespace medco {

/// Expert feedback for one learned case.
struct FeedbackBundle {
  Suggestions suggestions;
  std::map<std::string, KnowledgeCard> knowledge;  // disease name -> card

  bool operator==(const FeedbackBundle&) const = default;
};

void to_json(nlohmann::json& j, const FeedbackBundle& b);
void from_json(const nlohmann::json& j, FeedbackBundle& b);

struct CaseEntry {
  std::string patient_id;
  Suggestions suggestions;
  std::size_t insertion_index = 0;

  bool operator==(const CaseEntry&) const = default;
};

struct DiseaseEntry {
  std::string name;
  KnowledgeCard card;
  std::string patient_id;  // case that last wrote the card
  std::size_t insertion_index = 0;

  bool operator==(const DiseaseEntry&) const = default;
};

struct SymptomEntry {
  std::string text;
  std::string patient_id;
  std::vector<std::string> diseases;
  std::size_t insertion_index = 0;
  std::vector<float> vector;  // unit norm

  bool operator==(const SymptomEntry&) const = default;
};

struct MemoryState {
  std::map<std::string, CaseEntry> cases;                                     // by patient_id
  std::map<std::string, DiseaseEntry> diseases;                               // by disease name
  std::map<std::pair<std::string, std::string>, SymptomEntry> symptoms;     // by (patient_id, text)
  std::size_t next_symptom_index = 0;
  std::size_t dimension = 0;

  bool operator==(const MemoryState&) const = default;
};

struct RecallHit {
  std::string disease;
  KnowledgeCard card;
  std::string patient_id;  // case whose symptom key matched
  Suggestions suggestions;
  double score = 0;
};

/// Case, disease, and symptom stores with an exact inner-product index over
/// the symptom keys. Readers run concurrently; each case write is atomic.
class Memory {
 public:
  explicit Memory(std::shared_ptr<EmbeddingProvider> embedder);

  /// Upserts the case, one disease entry per truth disease, and one symptom
  /// entry per symptom text. Embeddings are computed before anything is
  /// committed, so a backend failure leaves the memory unchanged.
  void store_feedback(const std::string& patient_id, const std::vector<std::string>& truth_symptoms,
                      const std::vector<std::string>& truth_diseases, const FeedbackBundle& bundle);

  /// Up to k distinct diseases from the best-matching symptom keys whose case
  /// is among the first ceil(range * N) learned cases. Ties break on score
  /// desc, case insertion asc, key asc.
  std::vector<RecallHit> recall_by_symptoms(const std::string& symptom_summary, std::size_t k, double range) const;

  /// Patient ids of the cases visible under range, in learning order.
  std::vector<std::string> visible_cases(double range) const;

  std::size_t case_count() const;
  std::size_t disease_count() const;
  std::size_t symptom_count() const;
  bool empty() const { return case_count() == 0; }

  MemoryState snapshot() const;
  std::optional<CaseEntry> find_case(const std::string& patient_id) const;
  std::optional<DiseaseEntry> find_disease(const std::string& name) const;

  /// Versioned JSON container; vectors stored as base64 float32.
  void persist(const std::filesystem::path& path) const;
  /// Replaces the contents. An empty file yields an empty memory; a corrupt
  /// file raises format (version_mismatch for another version) and leaves the
  /// memory untouched.
  void restore(const std::filesystem::path& path);

  void clear();

  static constexpr int kFormatVersion = 1;

 private:
  std::shared_ptr<EmbeddingProvider> embedder_;
  mutable std::shared_mutex mu_;
  MemoryState state_;
};

/// Number of cases visible at a retrieval range: ceil(range * n).
std::size_t visible_case_limit(double range, std::size_t n);

}  // namespace medco
