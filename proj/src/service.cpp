#include "medco/service.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "medco/error.hpp"
#include "medco/text.hpp"

namespace medco {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(SessionMode m) { return m == SessionMode::observe ? "observe" : "human_student"; }

SessionMode session_mode_from_string(std::string_view s) {
  if (s == "observe") return SessionMode::observe;
  if (s == "human_student" || s == "human") return SessionMode::human_student;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown session mode '{}'", s));
}

void to_json(json& j, const CaseSummary& c) {
  j = json{{"patient_id", c.patient_id}, {"department", c.department}, {"teaser", c.teaser}};
}

void to_json(json& j, const SessionDescriptor& d) {
  j = json{{"session_id", d.session_id},
           {"patient_id", d.patient_id},
           {"mode", std::string(to_string(d.mode))},
           {"learn", d.learn},
           {"phase", std::string(to_string(d.phase))},
           {"inquiry_closed", d.inquiry_closed},
           {"presentation", d.presentation},
           {"next_turn", d.next_turn}};
}

void to_json(json& j, const RecallHit& h) {
  j = json{{"disease", h.disease},
           {"card", h.card},
           {"patient_id", h.patient_id},
           {"suggestions", h.suggestions},
           {"score", h.score}};
}

void to_json(json& j, const Assessment& a) {
  j = json{{"report", a.report},
           {"suggestions", a.suggestions},
           {"hde", {{"scores", a.hde.scores}, {"avg", a.hde.avg()}}},
           {"stored", a.stored}};
}

namespace {

std::string teaser(const std::string& text, std::size_t max_chars = 80) {
  auto cps = text::utf8_decode(text::trim(text));
  std::string out;
  for (std::size_t i = 0; i < cps.size() && i < max_chars; ++i) out += text::utf8_encode(cps[i]);
  if (cps.size() > max_chars) out += "...";
  return out;
}

std::string presentation(const MedicalRecord& r, Language lang) {
  if (lang == Language::zh) {
    return fmt::format("患者 {}（{}）主诉：{}", r.patient_id, r.department, text::trim(r.basic_info.chief_complaint));
  }
  return fmt::format("Patient {} ({}) presents with: {}", r.patient_id, r.department,
                     text::trim(r.basic_info.chief_complaint));
}

}  // namespace

struct SessionService::Session {
  std::mutex mu;  // serializes handling of this session

  SessionMode mode = SessionMode::human_student;
  bool learn = false;
  MedicalRecord record;
  SessionState state;
  std::vector<std::string> stamps;  // one per transcript message
  std::unique_ptr<Consultation> consultation;
  std::optional<DiagnosticReport> report;
  bool stored = false;

  // Published view for event readers.
  mutable std::mutex ev_mu;
  mutable std::condition_variable cv;
  std::vector<Message> published;
  bool closed = false;
  Phase phase = Phase::initial_diagnosis;

  bool inquiry_closed() const {
    return consultation->ended() || consultation->student_turns() >= state.turn_cap;
  }
};

SessionService::SessionService(RunConfig config, std::vector<MedicalRecord> corpus, fs::path corpus_root,
                               std::shared_ptr<Backends> backends, std::shared_ptr<Memory> memory,
                               ServiceOptions options)
    : config_(std::move(config)),
      corpus_(std::move(corpus)),
      backends_(std::move(backends)),
      memory_(std::move(memory)),
      options_(std::move(options)),
      cache_(std::make_unique<InterpretationCache>()) {
  if (!backends_) throw Error(ErrorCode::precondition, "session service needs backends");
  if (!memory_) throw Error(ErrorCode::precondition, "session service needs a memory");
  if (!options_.clock) options_.clock = std::make_shared<SystemClock>();
  ctx_.backends = backends_.get();
  ctx_.catalog = &PromptCatalog::builtin();
  ctx_.language = config_.language;
  ctx_.turn_cap = config_.turn_cap;
  ctx_.marker_mode = config_.marker_mode;
  ctx_.max_exam_hops = config_.max_exam_hops;
  ctx_.recall_k = config_.recall_k;
  ctx_.use_images = config_.use_images;
  ctx_.cache = cache_.get();
  ctx_.corpus_root = std::move(corpus_root);
  if (!options_.state_dir.empty()) fs::create_directories(options_.state_dir);
}

SessionService::~SessionService() {
  std::lock_guard lock(mu_);
  for (auto& [_, s] : sessions_) {
    std::lock_guard ev(s->ev_mu);
    s->closed = true;
    s->cv.notify_all();
  }
}

std::vector<CaseSummary> SessionService::list_cases() const {
  std::vector<CaseSummary> out;
  for (const auto& r : corpus_) out.push_back({r.patient_id, r.department, teaser(r.basic_info.chief_complaint)});
  return out;
}

const MedicalRecord& SessionService::record(const std::string& patient_id) const {
  const MedicalRecord* r = find_record(corpus_, patient_id);
  if (!r) throw Error(ErrorCode::not_found, fmt::format("unknown patient '{}'", patient_id));
  return *r;
}

std::shared_ptr<SessionService::Session> SessionService::get(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::not_found, fmt::format("unknown session '{}'", session_id));
  return it->second;
}

std::shared_ptr<SessionService::Session> SessionService::open(SessionMode mode, const MedicalRecord& rec, bool learn,
                                                              SessionState state) {
  auto s = std::make_shared<Session>();
  s->mode = mode;
  s->learn = learn;
  s->record = rec;
  s->state = std::move(state);
  s->consultation = std::make_unique<Consultation>(ctx_, s->state, s->record);
  s->published = s->state.transcript;
  s->phase = s->state.phase;
  return s;
}

SessionDescriptor SessionService::create_session(SessionMode mode, const std::string& patient_id, bool learn) {
  const MedicalRecord& rec = record(patient_id);
  std::string id;
  {
    std::lock_guard lock(mu_);
    if (sessions_.size() >= options_.max_sessions) {
      throw Error(ErrorCode::capacity, fmt::format("session limit {} reached", options_.max_sessions));
    }
    id = fmt::format("s{:04d}", next_id_++);
  }
  SessionState state;
  state.session_id = id;
  state.scenario = Scenario::interactive;
  state.record_ref = rec.patient_id;
  state.turn_cap = config_.turn_cap;
  state.language = config_.language;
  auto s = open(mode, rec, learn, std::move(state));
  {
    std::lock_guard lock(mu_);
    if (sessions_.size() >= options_.max_sessions) {
      throw Error(ErrorCode::capacity, fmt::format("session limit {} reached", options_.max_sessions));
    }
    sessions_[id] = s;
  }
  std::lock_guard guard(s->mu);
  persist(*s);
  return describe(id);
}

SessionDescriptor SessionService::describe(const std::string& session_id) const {
  auto s = get(session_id);
  std::lock_guard ev(s->ev_mu);
  SessionDescriptor d;
  d.session_id = session_id;
  d.patient_id = s->record.patient_id;
  d.mode = s->mode;
  d.learn = s->learn;
  d.phase = s->phase;
  d.presentation = presentation(s->record, config_.language);
  d.next_turn = static_cast<int>(s->published.size());
  d.inquiry_closed = s->closed;
  return d;
}

void SessionService::notify(Session& s) const {
  std::lock_guard ev(s.ev_mu);
  s.published = s.state.transcript;
  s.phase = s.state.phase;
  s.closed = s.inquiry_closed();
  s.cv.notify_all();
}

void SessionService::persist(Session& s) const {
  while (s.stamps.size() < s.state.transcript.size()) s.stamps.push_back(options_.clock->now());
  notify(s);
  if (options_.state_dir.empty()) return;
  const fs::path base = options_.state_dir / s.state.session_id;
  {
    std::ofstream out(fs::path(base) += ".jsonl", std::ios::binary | std::ios::trunc);
    for (std::size_t i = 0; i < s.state.transcript.size(); ++i) {
      out << json(TranscriptLine{s.state.session_id, s.state.transcript[i], s.stamps[i]}).dump() << "\n";
    }
  }
  SessionMetadata meta;
  meta.session_id = s.state.session_id;
  meta.patient_id = s.record.patient_id;
  meta.scenario = std::string(to_string(s.state.scenario));
  meta.strategy = "none";
  meta.retrieval_range = 1.0;
  meta.config_hash = config_.hash();
  meta.language = std::string(to_string(s.state.language));
  for (Phase p : s.state.phase_history) meta.phases.emplace_back(to_string(p));
  meta.partial = s.state.partial;
  meta.outcome = s.state.phase == Phase::aborted ? "aborted" : "done";
  write_metadata(fs::path(base) += ".meta.json", meta);
  std::ofstream side(fs::path(base) += ".session.json", std::ios::binary | std::ios::trunc);
  side << json{{"mode", std::string(to_string(s.mode))}, {"learn", s.learn}}.dump() << "\n";
}

std::vector<Message> SessionService::post_message(const std::string& session_id, const std::string& text) {
  auto s = get(session_id);
  std::lock_guard guard(s->mu);
  if (s->mode != SessionMode::human_student) {
    throw Error(ErrorCode::state, "observe sessions are driven by the agentic student");
  }
  if (s->inquiry_closed()) throw Error(ErrorCode::state, fmt::format("session {} inquiry is closed", session_id));
  if (text::trim(text).empty()) throw Error(ErrorCode::invalid_argument, "empty message");
  const std::size_t before = s->state.transcript.size();
  try {
    auto appended = s->consultation->submit_student(text);
    persist(*s);
    return appended;
  } catch (...) {
    // Drop the half-finished exchange so the client can retry the same text.
    s->state.transcript.resize(before);
    s->consultation = std::make_unique<Consultation>(ctx_, s->state, s->record);
    throw;
  }
}

std::vector<Message> SessionService::step(const std::string& session_id) {
  auto s = get(session_id);
  std::lock_guard guard(s->mu);
  if (s->mode != SessionMode::observe) throw Error(ErrorCode::state, "human sessions take student messages");
  if (s->inquiry_closed()) throw Error(ErrorCode::state, fmt::format("session {} inquiry is closed", session_id));
  const std::size_t before = s->state.transcript.size();
  try {
    auto appended = s->consultation->submit_student(s->consultation->generate_student_reply());
    persist(*s);
    return appended;
  } catch (...) {
    s->state.transcript.resize(before);
    s->consultation = std::make_unique<Consultation>(ctx_, s->state, s->record);
    throw;
  }
}

DiagnosticReport SessionService::ensure_report(Session& s) {
  if (s.report) return *s.report;
  if (!s.inquiry_closed()) {
    throw Error(ErrorCode::state, fmt::format("session {} is still in the inquiry", s.state.session_id));
  }
  if (s.state.phase == Phase::initial_diagnosis) {
    s.state.partial = !s.consultation->ended();
    s.state.advance(Phase::summarizing);
  }
  if (s.mode == SessionMode::human_student) {
    // A human who already wrote a full report is taken at their word.
    for (auto it = s.state.transcript.rbegin(); it != s.state.transcript.rend(); ++it) {
      if (it->speaker != Role::student) continue;
      auto parsed = parse_report_sections(it->content);
      if (parsed.complete()) s.report = parsed.report;
      break;
    }
  }
  if (!s.report) {
    CallTag tag{s.state.session_id, s.record.patient_id, "student", "summarize",
                static_cast<int>(s.state.transcript.size()), 0};
    s.report = summarize_report(s.consultation->student_system(), s.consultation->history_for(Role::student), ctx_,
                                tag);
  }
  return *s.report;
}

std::vector<RecallHit> SessionService::recall(const std::string& session_id) {
  auto s = get(session_id);
  std::lock_guard guard(s->mu);
  DiagnosticReport report = ensure_report(*s);
  if (s->state.phase == Phase::summarizing || s->state.phase == Phase::assessing) {
    s->state.advance(Phase::recalling);
  } else if (s->state.phase != Phase::recalling) {
    throw Error(ErrorCode::state, fmt::format("recall not available in phase {}", to_string(s->state.phase)));
  }
  persist(*s);
  return memory_->recall_by_symptoms(text::join(report.symptoms, "; "), config_.recall_k, 1.0);
}

Assessment SessionService::assess(const std::string& session_id) {
  auto s = get(session_id);
  std::lock_guard guard(s->mu);
  Assessment out;
  out.report = ensure_report(*s);
  if (s->state.phase == Phase::summarizing) {
    s->state.advance(Phase::assessing);
  } else if (s->state.phase != Phase::assessing) {
    throw Error(ErrorCode::state, fmt::format("assessment not available in phase {}", to_string(s->state.phase)));
  }
  persist(*s);
  const int turn = static_cast<int>(s->state.transcript.size());
  CallTag tag{s->state.session_id, s->record.patient_id, "expert", "assess", turn, 0};
  out.suggestions = assess_report(out.report, s->record, ctx_, tag);
  out.hde = judge_hde(out.report, s->record, *backends_, *ctx_.catalog, config_.language,
                      CallTag{s->state.session_id, s->record.patient_id, "expert", "judge", turn, 0});
  if (s->learn && !s->stored) {
    FeedbackBundle bundle;
    bundle.suggestions = out.suggestions;
    for (std::size_t i = 0; i < s->record.truth.diseases.size(); ++i) {
      const auto& d = s->record.truth.diseases[i];
      CallTag kt{s->state.session_id, s->record.patient_id, "expert", "knowledge", turn + static_cast<int>(i), 0};
      bundle.knowledge[d] = summarize_knowledge(d, ctx_, kt);
    }
    memory_->store_feedback(s->record.patient_id, s->record.truth_symptoms(), s->record.truth.diseases, bundle);
    s->stored = true;
  }
  out.stored = s->stored;
  return out;
}

std::vector<Message> SessionService::transcript(const std::string& session_id) const {
  auto s = get(session_id);
  std::lock_guard ev(s->ev_mu);
  return s->published;
}

void SessionService::close_session(const std::string& session_id) {
  std::shared_ptr<Session> s;
  {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw Error(ErrorCode::not_found, fmt::format("unknown session '{}'", session_id));
    s = it->second;
    sessions_.erase(it);
  }
  std::lock_guard guard(s->mu);
  Phase p = s->state.phase;
  if (p != Phase::done && p != Phase::aborted) {
    s->state.advance(SessionState::allowed(s->state.scenario, p, Phase::done) ? Phase::done : Phase::aborted);
  }
  persist(*s);
  std::lock_guard ev(s->ev_mu);
  s->closed = true;
  s->cv.notify_all();
}

std::vector<Message> SessionService::events_after(const std::string& session_id, int after,
                                                  std::chrono::milliseconds wait) const {
  auto s = get(session_id);
  std::unique_lock ev(s->ev_mu);
  auto pending = [&] { return static_cast<int>(s->published.size()) - 1 > after; };
  if (!pending() && wait.count() > 0) s->cv.wait_for(ev, wait, [&] { return pending() || s->closed; });
  std::vector<Message> out;
  for (const auto& m : s->published) {
    if (m.turn > after) out.push_back(m);
  }
  return out;
}

bool SessionService::finished(const std::string& session_id) const {
  auto s = get(session_id);
  std::lock_guard ev(s->ev_mu);
  return s->closed;
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::size_t SessionService::recover() {
  if (options_.state_dir.empty() || !fs::exists(options_.state_dir)) return 0;
  std::vector<fs::path> sidecars;
  for (const auto& entry : fs::directory_iterator(options_.state_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 13 && name.ends_with(".session.json")) sidecars.push_back(entry.path());
  }
  std::sort(sidecars.begin(), sidecars.end());
  std::size_t recovered = 0;
  for (const auto& side_path : sidecars) {
    std::string name = side_path.filename().string();
    std::string id = name.substr(0, name.size() - std::string(".session.json").size());
    {
      // Finished sessions keep their files, so their ids stay taken.
      std::lock_guard lock(mu_);
      if (id.size() > 1 && id[0] == 's' && id.find_first_not_of("0123456789", 1) == std::string::npos) {
        next_id_ = std::max(next_id_, static_cast<std::size_t>(std::stoul(id.substr(1))) + 1);
      }
      if (sessions_.count(id)) continue;
    }
    const fs::path base = options_.state_dir / id;
    SessionMetadata meta = read_metadata(fs::path(base) += ".meta.json");
    if (!meta.phases.empty() && (meta.phases.back() == "done" || meta.phases.back() == "aborted")) continue;
    json side;
    {
      std::ifstream in(side_path);
      side = json::parse(in);
    }
    auto lines = read_transcript(fs::path(base) += ".jsonl");
    SessionState state;
    state.session_id = id;
    state.scenario = scenario_from_string(meta.scenario);
    state.record_ref = meta.patient_id;
    state.turn_cap = config_.turn_cap;
    state.language = language_from_string(meta.language);
    state.partial = meta.partial;
    state.phase_history.clear();
    for (const auto& p : meta.phases) {
      for (Phase cand : {Phase::initial_diagnosis, Phase::summarizing, Phase::assessing, Phase::recalling,
                         Phase::further_inquiry, Phase::discussing, Phase::done, Phase::aborted}) {
        if (to_string(cand) == p) state.phase_history.push_back(cand);
      }
    }
    if (state.phase_history.empty()) state.phase_history.push_back(Phase::initial_diagnosis);
    state.phase = state.phase_history.back();
    std::vector<std::string> stamps;
    for (const auto& l : lines) {
      state.transcript.push_back(l.message);
      stamps.push_back(l.timestamp);
    }
    auto s = open(session_mode_from_string(side.at("mode").get<std::string>()), record(meta.patient_id),
                  side.value("learn", false), std::move(state));
    s->stamps = std::move(stamps);
    {
      std::lock_guard g(s->mu);
      notify(*s);
    }
    std::lock_guard lock(mu_);
    sessions_[id] = s;
    ++recovered;
  }
  return recovered;
}

}  // namespace medco
