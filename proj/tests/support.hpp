#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "medco/backends.hpp"
#include "medco/records.hpp"

namespace medco::testing {

inline std::filesystem::path data_dir() { return MEDCO_DATA_DIR; }
inline std::filesystem::path demo_corpus() { return data_dir() / "demo"; }

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "medco-test-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

inline MedicalRecord make_record(std::string id, std::string department, std::string complaint,
                                 std::vector<std::string> diseases) {
  MedicalRecord r;
  r.patient_id = std::move(id);
  r.department = std::move(department);
  r.basic_info.chief_complaint = std::move(complaint);
  r.basic_info.present_illness = "Symptoms started recently and have not improved.";
  r.basic_info.past_history = "No notable history.";
  r.basic_info.personal_history = "Office worker.";
  r.basic_info.personality = "Calm and cooperative.";
  r.examination.physical_exam = "Vital signs stable.";
  r.examination.auxiliary_exams = "Routine blood tests normal.";
  r.truth.diseases = std::move(diseases);
  r.truth.rationale = "Consistent history and findings.";
  r.truth.treatment_plan = "Standard care.";
  return r;
}

/// 506 records over eleven departments of 46 cases each.
inline std::vector<MedicalRecord> synthetic_corpus_506() {
  static const char* departments[] = {"Internal Medicine", "Surgery",    "Obstetrics and Gynecology", "Pediatrics",
                                      "Neurology",         "Cardiology", "Respiratory",               "Gastroenterology",
                                      "Endocrinology",     "Urology",    "Dermatology"};
  std::vector<MedicalRecord> out;
  for (std::size_t d = 0; d < 11; ++d) {
    for (int i = 0; i < 46; ++i) {
      out.push_back(make_record(fmt::format("D{:02}-{:03}", d, i), departments[d],
                                fmt::format("Complaint {} of {}", i, departments[d]), {"Disease " + std::to_string(i)}));
    }
  }
  return out;
}

/// Neurology cases for the learning-curve protocol: train and test sets of n
/// each, drawn from a small pool of stroke-related conditions.
inline std::vector<MedicalRecord> neurology_cases(std::size_t n, const std::string& prefix, std::uint64_t seed) {
  static const std::vector<std::vector<std::string>> conditions = {
      {"Cerebral infarction", "Hypertension"},
      {"Cerebral infarction", "Type 2 diabetes mellitus"},
      {"Cerebral infarction", "Hyperlipidemia", "Hypertension"},
      {"Migraine", "Generalized anxiety disorder"},
      {"Transient cerebral ischemic attack", "Hypertension"},
      {"Nontraumatic intracerebral hemorrhage", "Hypertension"},
  };
  static const std::vector<std::string> complaints = {
      "Sudden weakness of the left limbs for {} hours",
      "Slurred speech and right arm numbness for {} hours",
      "Recurrent throbbing headache with nausea for {} days",
      "Transient loss of vision in one eye lasting {} minutes",
      "Severe headache with vomiting for {} hours",
  };
  std::mt19937_64 rng(seed);
  std::vector<MedicalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = conditions[rng() % conditions.size()];
    const auto& cc = complaints[rng() % complaints.size()];
    out.push_back(make_record(fmt::format("{}{:02}", prefix, i), "Neurology",
                              fmt::format(fmt::runtime(cc), 1 + rng() % 9), c));
  }
  return out;
}

/// Scripted provider with no fallback: every reply must be registered.
inline std::shared_ptr<ScriptedProvider> strict_scripted() { return std::make_shared<ScriptedProvider>(); }

}  // namespace medco::testing
