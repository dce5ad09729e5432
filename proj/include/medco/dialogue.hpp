#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "medco/agents.hpp"
#include "medco/backends.hpp"
#include "medco/memory.hpp"
#include "medco/records.hpp"
#include "medco/report.hpp"
#include "medco/tools.hpp"

namespace medco {

enum class Scenario { learning, practicing, interactive };
std::string_view to_string(Scenario s);
Scenario scenario_from_string(std::string_view s);

enum class Phase { initial_diagnosis, summarizing, assessing, recalling, further_inquiry, discussing, done, aborted };
std::string_view to_string(Phase p);

/// `none` is the plain student without recall. "both" parses as discussion.
enum class Strategy { none, knowledge, suggestion, discussion };
std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);

struct SessionState {
  std::string session_id;
  Scenario scenario = Scenario::learning;
  std::string record_ref;
  Phase phase = Phase::initial_diagnosis;
  std::vector<Message> transcript;
  int turn_cap = 20;
  Language language = Language::en;
  std::vector<Phase> phase_history{Phase::initial_diagnosis};
  bool partial = false;  // a dialogue hit turn_cap without the termination token

  /// Moves to `next`, throwing state on a transition the machine forbids.
  void advance(Phase next);
  static bool allowed(Scenario scenario, Phase from, Phase to);
};

struct DialogueContext {
  const Backends* backends = nullptr;
  const PromptCatalog* catalog = nullptr;
  Language language = Language::en;
  int turn_cap = 20;
  MarkerMode marker_mode = MarkerMode::exact;
  int max_exam_hops = 3;  // patient->examiner round trips before the student speaks again
  std::size_t recall_k = 3;
  bool use_images = false;
  InterpretationCache* cache = nullptr;
  std::filesystem::path corpus_root;

  const Backends& chat() const;
  const PromptCatalog& prompts() const;
  ToolContext tools(const std::string& session_tag, const std::string& patient_id) const;
};

/// Student-patient-radiologist conversation over one session transcript.
/// Used by the agentic runs and, one message at a time, by the service.
class Consultation {
 public:
  /// An existing transcript is picked up as is (used when a service restarts).
  Consultation(const DialogueContext& ctx, SessionState& session, const MedicalRecord& record);

  /// Replaces the student's system prompt. With reset_history the student only
  /// sees messages appended from now on.
  void set_student_system(std::string system, bool reset_history);
  const std::string& student_system() const { return student_system_; }

  /// Appends a student message and runs the routing it triggers (patient
  /// reply, radiologist hops, relay). Returns every message appended.
  std::vector<Message> submit_student(const std::string& content);

  /// Asks the student model for its next utterance.
  std::string generate_student_reply();

  /// Agentic loop: student turns until a termination token or
  /// max_student_turns. Returns true when terminated by the token.
  bool run(int max_student_turns);

  bool ended() const { return ended_; }
  int student_turns() const { return student_turns_; }

  /// The transcript from one role's perspective: its own messages as
  /// assistant turns, messages addressed to it as user turns.
  std::vector<ChatTurn> history_for(Role role) const;

  const std::vector<Interpretation>& interpretations() const { return interpretations_; }

 private:
  Message& append(Role speaker, Addressee addressee, std::string content);
  void radiologist_reply(Addressee to);
  void patient_cycle();
  CallTag tag(Role role, std::string purpose = "dialogue") const;

  const DialogueContext& ctx_;
  SessionState& session_;
  const MedicalRecord& record_;
  std::string patient_system_;
  std::string student_system_;
  std::optional<std::string> radiologist_system_;
  std::vector<Interpretation> interpretations_;
  std::size_t student_history_start_ = 0;
  int student_turns_ = 0;
  bool ended_ = false;
};

/// The radiologist's few-shot opening exchange (request, bare answer).
std::vector<ChatTurn> radiologist_fewshot(Language lang);

/// Patient system prompt for a record. A record without a personality gets
/// one generated through the patient-personality prompt.
std::string patient_system_prompt(const MedicalRecord& record, const DialogueContext& ctx, const std::string& tag);

struct InitialDiagnosis {
  DiagnosticReport report;
  bool partial = false;
};

/// Runs the agentic consultation then summarize_report. Backend failures set
/// the session to aborted and propagate.
InitialDiagnosis run_initial_diagnosis(SessionState& session, const MedicalRecord& record,
                                       const DialogueContext& ctx);

/// Sends the student its history plus the summarize instruction; all five
/// headers are required (one reformat retry).
DiagnosticReport summarize_report(const std::string& student_system, std::vector<ChatTurn> student_history,
                                  const DialogueContext& ctx, CallTag tag);
DiagnosticReport summarize_report(const Consultation& consultation, const SessionState& session,
                                  const DialogueContext& ctx);

/// Strict five-section parse: ParseError when any header is missing.
DiagnosticReport parse_complete_report(const std::string& text);

Suggestions assess_report(const DiagnosticReport& report, const MedicalRecord& record, const DialogueContext& ctx,
                          CallTag tag);

KnowledgeCard summarize_knowledge(const std::string& disease_name, const DialogueContext& ctx, CallTag tag);

struct LearningOutcome {
  DiagnosticReport report;
  FeedbackBundle bundle;
  bool partial = false;
};

/// Initial diagnosis, assessment, one knowledge card per truth disease, then a
/// single atomic memory write.
LearningOutcome run_learning_case(SessionState& session, const MedicalRecord& record, Memory& memory,
                                  const DialogueContext& ctx);

/// `##Related Disease: X##` blocks for the inquiry prompts. The knowledge
/// strategy uses card fields, the suggestion strategy the case suggestions.
std::string related_diseases_block(const std::vector<RecallHit>& hits, Strategy strategy, InquiryTarget target,
                                   Language lang);

std::vector<std::string> generate_differential_questions(const DiagnosticReport& report, const MedicalRecord& record,
                                                         const std::vector<RecallHit>& hits, Strategy strategy,
                                                         InquiryTarget target, const DialogueContext& ctx,
                                                         CallTag tag);

DiagnosticReport peer_discussion(const DiagnosticReport& a, const DiagnosticReport& b, const DialogueContext& ctx,
                                 CallTag tag);

struct PracticeOutcome {
  Strategy strategy = Strategy::none;
  DiagnosticReport initial_report;
  DiagnosticReport final_report;
  std::vector<RecallHit> hits;
  std::vector<std::string> patient_questions;
  std::vector<std::string> radiologist_questions;
  bool partial = false;
  std::vector<SessionState> sub_sessions;  // discussion: the two single-strategy sessions
};

/// Initial diagnosis, recall, differential questions, further inquiry, and a
/// re-summarized final report. Range 0 (or an empty recall) returns the
/// initial report. Discussion runs the knowledge and suggestion strategies in
/// sub-sessions and merges their final reports.
PracticeOutcome run_practicing_case(SessionState& session, const MedicalRecord& record, const Memory& memory,
                                    Strategy strategy, double retrieval_range, const DialogueContext& ctx);

/// Discussion from two finished single-strategy outcomes.
PracticeOutcome run_discussion(SessionState& session, const PracticeOutcome& knowledge,
                               const PracticeOutcome& suggestion, const DialogueContext& ctx);

}  // namespace medco
