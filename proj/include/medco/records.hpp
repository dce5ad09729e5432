#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace medco {

enum class ImageKind { radiological, report_photo, other, unknown };

std::string_view to_string(ImageKind kind);
ImageKind image_kind_from_string(std::string_view s);

struct ImageAttachment {
  std::string uri;  // relative to the corpus root, e.g. images/<patient_id>/ct.png
  ImageKind declared_kind = ImageKind::unknown;
  std::optional<std::string> cached_interpretation;

  bool operator==(const ImageAttachment&) const = default;
};

struct BasicInfo {
  std::string chief_complaint;
  std::string present_illness;
  std::string past_history;
  std::string personal_history;
  std::string personality;

  bool operator==(const BasicInfo&) const = default;
};

struct Examination {
  std::string physical_exam;
  std::string auxiliary_exams;
  std::vector<ImageAttachment> attachments;

  bool operator==(const Examination&) const = default;
};

struct GroundTruth {
  std::vector<std::string> diseases;
  std::string rationale;
  std::string treatment_plan;

  bool operator==(const GroundTruth&) const = default;
};

/// One case: basic information, medical examination, and the diagnosis/treatment truth.
struct MedicalRecord {
  std::string patient_id;
  std::string department;
  BasicInfo basic_info;
  Examination examination;
  GroundTruth truth;

  bool operator==(const MedicalRecord&) const = default;

  /// Ground-truth symptom texts used as symptom-store keys.
  std::vector<std::string> truth_symptoms() const;
};

void to_json(nlohmann::json& j, const MedicalRecord& r);
void from_json(const nlohmann::json& j, MedicalRecord& r);

struct Violation {
  std::string patient_id;  // empty for corpus-level violations without a single owner
  std::string field;
  std::string message;

  std::string describe() const;
  bool operator==(const Violation&) const = default;
};

/// Returns every invariant violation of a single record (empty when valid).
std::vector<Violation> validate_record(const MedicalRecord& r);

/// Record-level violations of every record plus corpus-level ones (duplicate ids).
std::vector<Violation> validate_corpus(const std::vector<MedicalRecord>& corpus);

/// Loads a corpus from a directory (cases/<patient_id>.json, read in filename order)
/// or from a single file (.jsonl with one record per line, or .json holding an array).
/// Throws Error(format|validation|io) naming the offending record index and field.
std::vector<MedicalRecord> load_corpus(const std::filesystem::path& path);

/// Writes cases/<patient_id>.json under dir. Inverse of load_corpus on record fields.
void save_corpus(const std::vector<MedicalRecord>& corpus, const std::filesystem::path& dir);

/// Directory against which attachment URIs resolve.
std::filesystem::path corpus_root(const std::filesystem::path& corpus_path);

const MedicalRecord* find_record(const std::vector<MedicalRecord>& corpus, std::string_view id);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;

  bool operator==(const DatasetSplit&) const = default;
};

void to_json(nlohmann::json& j, const DatasetSplit& s);
void from_json(const nlohmann::json& j, DatasetSplit& s);

/// Train fraction per department; departments not listed use default_fraction.
struct SplitPolicy {
  double default_fraction = 0.5;
  std::map<std::string, double> per_department;

  double fraction_for(const std::string& department) const;
};

/// Department-level seeded split. Each department is shuffled independently
/// (Fisher-Yates over mt19937_64 seeded from seed and the department name) and
/// its first floor(fraction * n_dept) cases go to train. Departments appear in
/// order of first occurrence in the corpus.
DatasetSplit split_dataset(const std::vector<MedicalRecord>& corpus, std::uint64_t seed,
                           const SplitPolicy& policy);
DatasetSplit split_dataset(const std::vector<MedicalRecord>& corpus, std::uint64_t seed,
                           double train_fraction);

/// Records of the given ids, in id order. Throws not_found for unknown ids.
std::vector<MedicalRecord> select_records(const std::vector<MedicalRecord>& corpus,
                                          const std::vector<std::string>& ids);

}  // namespace medco
