#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "medco/records.hpp"

namespace medco {

enum class Language { en, zh };
std::string_view to_string(Language lang);
Language language_from_string(std::string_view s);

enum class Role { patient, student, radiologist, expert, chair };
std::string_view to_string(Role role);
Role role_from_string(std::string_view s);

/// Who a message is meant for. `patient` is used for student questions and
/// radiologist answers relayed back to the patient.
enum class Addressee { doctor, examiner, patient, broadcast };
std::string_view to_string(Addressee a);
Addressee addressee_from_string(std::string_view s);

struct Message {
  int turn = 0;
  Role speaker = Role::patient;
  Addressee addressee = Addressee::broadcast;
  std::string content;
  bool terminal = false;

  bool operator==(const Message&) const = default;
};

void to_json(nlohmann::json& j, const Message& m);
void from_json(const nlohmann::json& j, Message& m);

// --- addressing and termination -------------------------------------------

std::string_view doctor_marker(Language lang);    // <To the doctor> / <对医生讲>
std::string_view examiner_marker(Language lang);  // <To the examiner> / <对检查员讲>
std::string_view patient_marker(Language lang);   // <To the patient> / <对病人讲>
std::string_view termination_token(Language lang);  // <end> / <结束>

enum class MarkerMode { exact, lenient };

/// Detects a leading addressing marker after whitespace trim. Marker-free text
/// is broadcast. Lenient mode also skips leading emphasis/quote punctuation and
/// accepts full-width angle brackets.
Addressee parse_addressee(std::string_view content, Language lang, MarkerMode mode = MarkerMode::exact);

/// Content with a leading marker (if any) removed and trimmed.
std::string strip_addressee(std::string_view content, Language lang, MarkerMode mode = MarkerMode::exact);

/// True iff the session's termination token appears anywhere, ignoring whitespace.
bool detect_terminal(std::string_view content, Language lang);

// --- prompt templates -------------------------------------------------------

/// Text with `{slot_name}` placeholders; `{{` and `}}` are literal braces.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  explicit PromptTemplate(std::string source);

  const std::string& source() const { return source_; }
  const std::set<std::string>& slots() const { return slots_; }

  /// Substitutes every slot verbatim. Throws missing_slot naming the first
  /// unresolved slot.
  std::string render(const std::map<std::string, std::string>& values) const;

 private:
  struct Segment {
    bool is_slot;
    std::string text;
  };
  std::string source_;
  std::vector<Segment> segments_;
  std::set<std::string> slots_;
};

struct PromptEntry {
  PromptTemplate system;
  std::optional<PromptTemplate> user;
};

/// Prompt tables keyed by (language, prompt id). Files on disk are
/// `<lang>/<id>.system.txt` and optionally `<lang>/<id>.user.txt`.
class PromptCatalog {
 public:
  static const PromptCatalog& builtin();

  /// Built-in tables overlaid with any files found under dir.
  static PromptCatalog load_dir(const std::filesystem::path& dir);

  const PromptEntry& get(Language lang, std::string_view id) const;
  bool has(Language lang, std::string_view id) const;
  std::vector<std::string> ids(Language lang) const;

  /// Writes every entry back out in the on-disk layout.
  void export_dir(const std::filesystem::path& dir) const;

 private:
  void add_file(const std::string& lang_and_name, std::string content);
  std::map<std::pair<Language, std::string>, PromptEntry> entries_;
};

/// A role bound to one prompt table, language, and backend profile.
class RoleSpec {
 public:
  /// Throws validation when the template lacks a slot the role requires
  /// (patient: personality + basic_info; radiologist: physical_exam +
  /// auxiliary_exams; expert assessment/judging: ground_truth).
  RoleSpec(Role role, std::string prompt_id, PromptEntry prompt, Language language,
           std::string backend_profile);

  static RoleSpec from_catalog(const PromptCatalog& catalog, Role role, std::string prompt_id,
                               Language language, std::string backend_profile);

  Role role() const { return role_; }
  const std::string& prompt_id() const { return prompt_id_; }
  Language language() const { return language_; }
  const std::string& backend_profile() const { return backend_profile_; }
  const PromptEntry& prompt() const { return prompt_; }

  /// Every slot the system and user templates declare.
  std::set<std::string> declared_slots() const;

 private:
  Role role_;
  std::string prompt_id_;
  PromptEntry prompt_;
  Language language_;
  std::string backend_profile_;
};

/// Slots derivable from a record: personality, basic_info, general_info,
/// physical_exam, auxiliary_exams, ground_truth.
std::map<std::string, std::string> record_slots(const MedicalRecord& record, Language lang);

/// Renders the system template. Slots come from the record first, then extras
/// (extras win). Throws missing_slot for an unfilled placeholder and
/// unknown_slot for an extras key the prompt does not declare.
std::string render_system_prompt(const RoleSpec& spec, const MedicalRecord* record,
                                 const std::map<std::string, std::string>& extras = {});
std::string render_user_prompt(const RoleSpec& spec, const MedicalRecord* record,
                               const std::map<std::string, std::string>& extras = {});

}  // namespace medco
