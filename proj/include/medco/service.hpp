#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medco/config.hpp"
#include "medco/dialogue.hpp"
#include "medco/memory.hpp"
#include "medco/metrics.hpp"
#include "medco/transcript.hpp"

namespace medco {

enum class SessionMode { observe, human_student };
std::string_view to_string(SessionMode m);
SessionMode session_mode_from_string(std::string_view s);

struct CaseSummary {
  std::string patient_id;
  std::string department;
  std::string teaser;  // chief complaint, shortened
};

struct SessionDescriptor {
  std::string session_id;
  std::string patient_id;
  SessionMode mode = SessionMode::human_student;
  bool learn = false;
  Phase phase = Phase::initial_diagnosis;
  bool inquiry_closed = false;
  std::string presentation;
  int next_turn = 0;
};

struct Assessment {
  DiagnosticReport report;
  Suggestions suggestions;
  HdeScore hde;
  bool stored = false;  // written to memory (learning sessions)
};

void to_json(nlohmann::json& j, const CaseSummary& c);
void to_json(nlohmann::json& j, const SessionDescriptor& d);
void to_json(nlohmann::json& j, const RecallHit& h);
void to_json(nlohmann::json& j, const Assessment& a);

struct ServiceOptions {
  std::size_t max_sessions = 64;
  std::filesystem::path state_dir;  // transcript log; empty keeps sessions in memory only
  std::shared_ptr<Clock> clock;     // defaults to the system clock
};

/// Interactive sessions over the corpus. Each session's messages are
/// serialized by a per-session lock; sessions run independently. With a
/// state_dir every change is logged and `recover` rebuilds the sessions.
class SessionService {
 public:
  SessionService(RunConfig config, std::vector<MedicalRecord> corpus, std::filesystem::path corpus_root,
                 std::shared_ptr<Backends> backends, std::shared_ptr<Memory> memory, ServiceOptions options = {});
  ~SessionService();

  std::vector<CaseSummary> list_cases() const;

  /// Throws not_found for an unknown record and capacity when full.
  SessionDescriptor create_session(SessionMode mode, const std::string& patient_id, bool learn = false);
  SessionDescriptor describe(const std::string& session_id) const;

  /// Human sessions: routes the text as the student's turn. Throws state
  /// once the inquiry is closed or for observe sessions.
  std::vector<Message> post_message(const std::string& session_id, const std::string& text);

  /// Observe sessions: one agentic student turn.
  std::vector<Message> step(const std::string& session_id);

  std::vector<RecallHit> recall(const std::string& session_id);
  Assessment assess(const std::string& session_id);

  std::vector<Message> transcript(const std::string& session_id) const;

  /// Drops the session and frees its slot; its log stays on disk.
  void close_session(const std::string& session_id);

  /// Messages with turn > after. When there are none yet, blocks up to
  /// `wait` for the next batch.
  std::vector<Message> events_after(const std::string& session_id, int after,
                                    std::chrono::milliseconds wait = std::chrono::milliseconds{0}) const;
  bool finished(const std::string& session_id) const;

  /// Rebuilds sessions from state_dir. Returns the number recovered.
  std::size_t recover();

  std::size_t session_count() const;
  const RunConfig& config() const { return config_; }

 private:
  struct Session;
  std::shared_ptr<Session> get(const std::string& session_id) const;
  std::shared_ptr<Session> open(SessionMode mode, const MedicalRecord& record, bool learn, SessionState state);
  void persist(Session& s) const;
  void notify(Session& s) const;
  DiagnosticReport ensure_report(Session& s);
  const MedicalRecord& record(const std::string& patient_id) const;

  RunConfig config_;
  std::vector<MedicalRecord> corpus_;
  std::shared_ptr<Backends> backends_;
  std::shared_ptr<Memory> memory_;
  ServiceOptions options_;
  DialogueContext ctx_;
  std::unique_ptr<InterpretationCache> cache_;

  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_id_ = 1;
};

}  // namespace medco
