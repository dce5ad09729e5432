#include "medco/dialogue.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "medco/structured.hpp"
#include "medco/text.hpp"

namespace medco {

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::learning: return "learning";
    case Scenario::practicing: return "practicing";
    case Scenario::interactive: return "interactive";
  }
  return "learning";
}

Scenario scenario_from_string(std::string_view s) {
  if (s == "learning") return Scenario::learning;
  if (s == "practicing") return Scenario::practicing;
  if (s == "interactive") return Scenario::interactive;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown scenario '{}'", s));
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::initial_diagnosis: return "initial_diagnosis";
    case Phase::summarizing: return "summarizing";
    case Phase::assessing: return "assessing";
    case Phase::recalling: return "recalling";
    case Phase::further_inquiry: return "further_inquiry";
    case Phase::discussing: return "discussing";
    case Phase::done: return "done";
    case Phase::aborted: return "aborted";
  }
  return "aborted";
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::none: return "none";
    case Strategy::knowledge: return "knowledge";
    case Strategy::suggestion: return "suggestion";
    case Strategy::discussion: return "discussion";
  }
  return "none";
}

Strategy strategy_from_string(std::string_view s) {
  if (s == "none" || s == "student") return Strategy::none;
  if (s == "knowledge") return Strategy::knowledge;
  if (s == "suggestion" || s == "suggestions") return Strategy::suggestion;
  if (s == "discussion" || s == "both") return Strategy::discussion;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown strategy '{}'", s));
}

// --- phase machine ----------------------------------------------------------------

bool SessionState::allowed(Scenario scenario, Phase from, Phase to) {
  if (from == Phase::done || from == Phase::aborted) return false;
  if (to == Phase::aborted) return true;
  const bool learning = scenario == Scenario::learning;
  const bool practicing = scenario == Scenario::practicing;
  const bool interactive = scenario == Scenario::interactive;
  switch (from) {
    case Phase::initial_diagnosis:
      return to == Phase::summarizing || (practicing && to == Phase::discussing);
    case Phase::summarizing:
      if (to == Phase::assessing) return learning || interactive;
      if (to == Phase::recalling) return practicing || interactive;
      if (to == Phase::discussing) return practicing;
      if (to == Phase::done) return !learning;
      return false;
    case Phase::assessing:
      return to == Phase::done || (interactive && to == Phase::recalling);
    case Phase::recalling:
      return (to == Phase::further_inquiry) || (to == Phase::done && !learning);
    case Phase::further_inquiry:
      return to == Phase::summarizing;
    case Phase::discussing:
      return to == Phase::done;
    default:
      return false;
  }
}

void SessionState::advance(Phase next) {
  if (!allowed(scenario, phase, next)) {
    throw Error(ErrorCode::state, fmt::format("session {}: {} -> {} not allowed in {} scenario", session_id,
                                              to_string(phase), to_string(next), to_string(scenario)));
  }
  phase = next;
  phase_history.push_back(next);
}

// --- context ----------------------------------------------------------------------

const Backends& DialogueContext::chat() const {
  if (!backends) throw Error(ErrorCode::precondition, "dialogue context has no backends");
  return *backends;
}

const PromptCatalog& DialogueContext::prompts() const { return catalog ? *catalog : PromptCatalog::builtin(); }

ToolContext DialogueContext::tools(const std::string& session_tag, const std::string& patient_id) const {
  ToolContext t;
  t.backends = backends;
  t.catalog = &prompts();
  t.language = language;
  t.corpus_root = corpus_root;
  t.cache = cache;
  t.session_tag = session_tag;
  t.patient_id = patient_id;
  return t;
}

namespace {

RoleSpec spec(const DialogueContext& ctx, Role role, const std::string& id, const std::string& binding) {
  return RoleSpec::from_catalog(ctx.prompts(), role, id, ctx.language, binding);
}

// Merges consecutive same-role turns so providers always see alternation.
void push_turn(std::vector<ChatTurn>& history, const std::string& role, const std::string& content) {
  if (!history.empty() && history.back().role == role && history.back().images.empty()) {
    history.back().content += "\n" + content;
    return;
  }
  history.push_back({role, content, {}});
}

template <typename T>
T run_guarded(SessionState& session, const std::function<T()>& body) {
  try {
    return body();
  } catch (...) {
    if (session.phase != Phase::done && session.phase != Phase::aborted) session.advance(Phase::aborted);
    throw;
  }
}

}  // namespace

std::vector<ChatTurn> radiologist_fewshot(Language lang) {
  if (lang == Language::zh) {
    return {{"user", "您好，我需要做基因组测序，能否告诉我这些检查结果？", {}},
            {"assistant", "#检查项目#- 基因组测序", {}}};
  }
  return {{"user",
           "Hello, I would like to request the results of the genomic sequencing. Could you kindly provide me with "
           "this information?",
           {}},
          {"assistant", "#Examination Items# - Genomic Sequencing", {}}};
}

std::string patient_system_prompt(const MedicalRecord& record, const DialogueContext& ctx, const std::string& tag) {
  RoleSpec patient = spec(ctx, Role::patient, "patient", "patient");
  if (!text::trim(record.basic_info.personality).empty()) return render_system_prompt(patient, &record);
  RoleSpec persona = spec(ctx, Role::patient, "patient_personality", "patient");
  ChatRequest req;
  req.system = render_system_prompt(persona, &record);
  if (persona.prompt().user) req.history.push_back({"user", render_user_prompt(persona, &record), {}});
  req.tag = CallTag{tag, record.patient_id, "patient", "personality", 0, 0};
  std::string personality = text::trim_copy(ctx.chat().chat("patient", req));
  return render_system_prompt(patient, &record, {{"personality", personality}});
}

// --- consultation -----------------------------------------------------------------

Consultation::Consultation(const DialogueContext& ctx, SessionState& session, const MedicalRecord& record)
    : ctx_(ctx), session_(session), record_(record) {
  patient_system_ = patient_system_prompt(record, ctx, session.session_id);
  student_system_ = render_system_prompt(spec(ctx, Role::student, "student_diagnosis", "student"), &record);
  for (const auto& m : session.transcript) {
    if (m.terminal) ended_ = true;
    if (m.speaker == Role::student) ++student_turns_;
  }
}

void Consultation::set_student_system(std::string system, bool reset_history) {
  student_system_ = std::move(system);
  if (reset_history) student_history_start_ = session_.transcript.size();
  ended_ = false;
  student_turns_ = 0;
}

CallTag Consultation::tag(Role role, std::string purpose) const {
  return CallTag{session_.session_id, record_.patient_id, std::string(to_string(role)), std::move(purpose),
                 static_cast<int>(session_.transcript.size()), 0};
}

Message& Consultation::append(Role speaker, Addressee addressee, std::string content) {
  Message m;
  m.turn = static_cast<int>(session_.transcript.size());
  m.speaker = speaker;
  m.addressee = addressee;
  m.terminal = detect_terminal(content, ctx_.language);
  m.content = std::move(content);
  session_.transcript.push_back(std::move(m));
  if (session_.transcript.back().terminal) ended_ = true;
  return session_.transcript.back();
}

std::vector<ChatTurn> Consultation::history_for(Role role) const {
  std::vector<ChatTurn> out;
  std::size_t start = 0;
  if (role == Role::radiologist) {
    out = radiologist_fewshot(ctx_.language);
  } else if (role == Role::student) {
    start = student_history_start_;
  }
  for (std::size_t i = start; i < session_.transcript.size(); ++i) {
    const auto& m = session_.transcript[i];
    if (m.speaker == role) {
      push_turn(out, "assistant", m.content);
      continue;
    }
    bool to_me = false;
    switch (role) {
      case Role::student: to_me = m.addressee == Addressee::doctor; break;
      case Role::patient: to_me = m.addressee == Addressee::patient; break;
      case Role::radiologist: to_me = m.addressee == Addressee::examiner; break;
      default: break;
    }
    if (to_me) push_turn(out, "user", m.content);
  }
  return out;
}

void Consultation::radiologist_reply(Addressee to) {
  if (!radiologist_system_) {
    ToolContext tools = ctx_.tools(session_.session_id, record_.patient_id);
    if (ctx_.use_images) interpretations_ = interpret_attachments(record_, tools);
    radiologist_system_ = radiologist_system_prompt(record_, interpretations_, tools);
  }
  ChatRequest req;
  req.system = *radiologist_system_;
  req.history = history_for(Role::radiologist);
  req.tag = tag(Role::radiologist);
  std::string reply = normalize_examination_reply(ctx_.chat().chat("radiologist", req), ctx_.language);
  append(Role::radiologist, to, std::move(reply));
}

void Consultation::patient_cycle() {
  int hops = 0;
  while (!ended_) {
    ChatRequest req;
    req.system = patient_system_;
    req.history = history_for(Role::patient);
    req.tag = tag(Role::patient);
    std::string reply = ctx_.chat().chat("patient", req);
    Addressee to = parse_addressee(reply, ctx_.language, ctx_.marker_mode);
    if (to != Addressee::examiner) to = Addressee::doctor;
    append(Role::patient, to, std::move(reply));
    if (ended_ || to != Addressee::examiner) return;
    radiologist_reply(Addressee::patient);
    if (++hops >= ctx_.max_exam_hops) return;
  }
}

std::vector<Message> Consultation::submit_student(const std::string& content) {
  if (ended_) throw Error(ErrorCode::state, "the consultation has already ended");
  std::size_t before = session_.transcript.size();
  Addressee to = parse_addressee(content, ctx_.language, ctx_.marker_mode) == Addressee::examiner
                     ? Addressee::examiner
                     : Addressee::patient;
  append(Role::student, to, content);
  ++student_turns_;
  if (!ended_) {
    if (to == Addressee::examiner) {
      radiologist_reply(Addressee::doctor);
    } else {
      patient_cycle();
    }
  }
  return {session_.transcript.begin() + static_cast<std::ptrdiff_t>(before), session_.transcript.end()};
}

std::string Consultation::generate_student_reply() {
  ChatRequest req;
  req.system = student_system_;
  req.history = history_for(Role::student);
  req.tag = tag(Role::student);
  return ctx_.chat().chat("student", req);
}

bool Consultation::run(int max_student_turns) {
  while (!ended_ && student_turns_ < max_student_turns) submit_student(generate_student_reply());
  return ended_;
}

// --- report steps -----------------------------------------------------------------

DiagnosticReport parse_complete_report(const std::string& reply) {
  auto parsed = parse_report_sections(reply);
  if (!parsed.complete()) {
    std::vector<std::string> names;
    for (auto s : parsed.missing) names.emplace_back(to_string(s));
    throw ParseError("report missing sections: " + text::join(names, ", "), reply);
  }
  return parsed.report;
}

DiagnosticReport summarize_report(const std::string& student_system, std::vector<ChatTurn> history,
                                  const DialogueContext& ctx, CallTag tag) {
  const auto& entry = ctx.prompts().get(ctx.language, "expert_summarize");
  std::string instruction = entry.user ? entry.user->render({}) : entry.system.render({});
  ChatRequest req;
  req.system = student_system;
  req.history = std::move(history);
  push_turn(req.history, "user", instruction);
  tag.role = "student";
  tag.purpose = "summarize";
  req.tag = std::move(tag);
  return structured_call<DiagnosticReport>(ctx.chat(), "student", std::move(req), ctx.prompts(), ctx.language,
                                           parse_complete_report);
}

DiagnosticReport summarize_report(const Consultation& c, const SessionState& session, const DialogueContext& ctx) {
  bool student_spoke = std::any_of(session.transcript.begin(), session.transcript.end(),
                                   [](const Message& m) { return m.speaker == Role::student; });
  if (!student_spoke) throw Error(ErrorCode::precondition, "summarize_report needs at least one student message");
  CallTag tag{session.session_id, session.record_ref, "student", "summarize",
              static_cast<int>(session.transcript.size()), 0};
  return summarize_report(c.student_system(), c.history_for(Role::student), ctx, tag);
}

InitialDiagnosis run_initial_diagnosis(SessionState& session, const MedicalRecord& record, const DialogueContext& ctx) {
  if (session.phase != Phase::initial_diagnosis) {
    throw Error(ErrorCode::state, "run_initial_diagnosis needs a session in initial_diagnosis");
  }
  session.record_ref = record.patient_id;
  return run_guarded<InitialDiagnosis>(session, [&] {
    Consultation consultation(ctx, session, record);
    bool terminated = consultation.run(session.turn_cap);
    InitialDiagnosis out;
    out.partial = !terminated;
    if (out.partial) session.partial = true;
    session.advance(Phase::summarizing);
    out.report = summarize_report(consultation, session, ctx);
    return out;
  });
}

Suggestions assess_report(const DiagnosticReport& report, const MedicalRecord& record, const DialogueContext& ctx,
                          CallTag tag) {
  if (report.empty()) throw Error(ErrorCode::precondition, "assess_report needs a non-empty student report");
  if (record.truth.diseases.empty()) throw Error(ErrorCode::precondition, "assess_report needs the record's truth");
  RoleSpec expert = spec(ctx, Role::expert, "expert_assess", "expert");
  ChatRequest req;
  req.system = render_system_prompt(expert, &record);
  req.history.push_back(
      {"user", render_user_prompt(expert, &record, {{"student_report", render_report(report, ctx.language)}}), {}});
  tag.role = "expert";
  tag.purpose = "assess";
  tag.patient_id = record.patient_id;
  req.tag = std::move(tag);
  return structured_call<Suggestions>(ctx.chat(), "expert", std::move(req), ctx.prompts(), ctx.language,
                                      parse_suggestions);
}

KnowledgeCard summarize_knowledge(const std::string& disease_name, const DialogueContext& ctx, CallTag tag) {
  if (text::trim(disease_name).empty()) throw Error(ErrorCode::precondition, "summarize_knowledge needs a disease");
  RoleSpec expert = spec(ctx, Role::expert, "expert_knowledge", "expert");
  ChatRequest req;
  req.system = render_system_prompt(expert, nullptr);
  req.history.push_back({"user", render_user_prompt(expert, nullptr, {{"disease_name", disease_name}}), {}});
  tag.role = "expert";
  tag.purpose = "knowledge";
  req.tag = std::move(tag);
  return structured_call<KnowledgeCard>(ctx.chat(), "expert", std::move(req), ctx.prompts(), ctx.language,
                                        parse_knowledge_card);
}

LearningOutcome run_learning_case(SessionState& session, const MedicalRecord& record, Memory& memory,
                                  const DialogueContext& ctx) {
  if (auto v = validate_record(record); !v.empty()) {
    throw Error(ErrorCode::validation, v.front().describe());
  }
  session.scenario = Scenario::learning;
  auto initial = run_initial_diagnosis(session, record, ctx);
  return run_guarded<LearningOutcome>(session, [&] {
    LearningOutcome out;
    out.report = initial.report;
    out.partial = initial.partial;
    session.advance(Phase::assessing);
    CallTag tag{session.session_id, record.patient_id, "expert", "assess",
                static_cast<int>(session.transcript.size()), 0};
    out.bundle.suggestions = assess_report(out.report, record, ctx, tag);
    std::vector<std::string> diseases;
    for (const auto& d : record.truth.diseases) {
      if (std::find(diseases.begin(), diseases.end(), d) == diseases.end()) diseases.push_back(d);
    }
    for (std::size_t i = 0; i < diseases.size(); ++i) {
      tag.turn = static_cast<int>(session.transcript.size() + i);
      out.bundle.knowledge[diseases[i]] = summarize_knowledge(diseases[i], ctx, tag);
    }
    memory.store_feedback(record.patient_id, record.truth_symptoms(), diseases, out.bundle);
    session.advance(Phase::done);
    return out;
  });
}

// --- practicing -------------------------------------------------------------------

std::string related_diseases_block(const std::vector<RecallHit>& hits, Strategy strategy, InquiryTarget target,
                                   Language lang) {
  const bool zh = lang == Language::zh;
  const bool to_patient = target == InquiryTarget::patient;
  std::string out;
  for (const auto& h : hits) {
    if (!out.empty()) out += '\n';
    out += zh ? fmt::format("##相关疾病：{}##：", h.disease) : fmt::format("##Related Disease: {}##:", h.disease);
    if (strategy == Strategy::suggestion) {
      const auto& s = h.suggestions.at(to_patient ? ReportSection::symptoms : ReportSection::examinations);
      out += zh ? fmt::format("#{}建议# {}", to_patient ? "症状" : "医学检查项目", s)
                : fmt::format("#{} Suggestions# {}", to_patient ? "Symptoms" : "Medical Examination Items", s);
    } else if (to_patient) {
      out += fmt::format("{} {}", zh ? "#主要症状#" : "#Primary Symptoms#", render_items(h.card.main_symptoms));
    } else {
      out += fmt::format("{} {}", zh ? "#常用的辅助检查方法#" : "#Commonly Used Auxiliary Examination Methods#",
                         render_items(h.card.auxiliary_exam_methods));
    }
  }
  return out;
}

std::vector<std::string> generate_differential_questions(const DiagnosticReport& report, const MedicalRecord& record,
                                                         const std::vector<RecallHit>& hits, Strategy strategy,
                                                         InquiryTarget target, const DialogueContext& ctx,
                                                         CallTag tag) {
  if (hits.empty()) throw Error(ErrorCode::precondition, "differential questions need retrieved diseases");
  const bool to_patient = target == InquiryTarget::patient;
  RoleSpec student = spec(ctx, Role::student, to_patient ? "student_inquire_patient" : "student_inquire_radiologist",
                          "student");
  std::map<std::string, std::string> extras{{"symptoms", render_items(report.symptoms)}};
  if (!to_patient) extras["examinations"] = render_items(report.examinations);
  ChatRequest req;
  req.system = render_system_prompt(student, &record, extras);
  req.history.push_back({"user",
                         render_user_prompt(student, &record,
                                            {{"related_diseases", related_diseases_block(hits, strategy, target,
                                                                                         ctx.language)}}),
                         {}});
  tag.role = "student";
  tag.purpose = to_patient ? "inquire_patient" : "inquire_radiologist";
  tag.patient_id = record.patient_id;
  req.tag = std::move(tag);
  return structured_call<std::vector<std::string>>(
      ctx.chat(), "student", std::move(req), ctx.prompts(), ctx.language,
      [target](const std::string& reply) {
        auto q = parse_inquiry(reply, target);
        if (!q) throw ParseError("reply has no inquiry block", reply);
        return *q;
      });
}

DiagnosticReport peer_discussion(const DiagnosticReport& a, const DiagnosticReport& b, const DialogueContext& ctx,
                                 CallTag tag) {
  if (a.diagnostic_results.empty() || b.diagnostic_results.empty()) {
    throw Error(ErrorCode::precondition, "peer discussion needs two final reports");
  }
  const bool zh = ctx.language == Language::zh;
  RoleSpec chair = spec(ctx, Role::chair, "chair_discussion", "chair");
  std::string participants = zh ? "#医生A#和#医生B#" : "#Doctor A# and #Doctor B#";
  std::string reports = fmt::format("{}\n{}\n\n{}\n{}", zh ? "#医生A#" : "#Doctor A#", render_report(a, ctx.language),
                                    zh ? "#医生B#" : "#Doctor B#", render_report(b, ctx.language));
  ChatRequest req;
  req.system = render_system_prompt(chair, nullptr, {{"participants", participants}});
  req.history.push_back({"user", render_user_prompt(chair, nullptr, {{"reports", reports}}), {}});
  tag.role = "chair";
  tag.purpose = "discussion";
  req.tag = std::move(tag);
  return structured_call<DiagnosticReport>(ctx.chat(), "chair", std::move(req), ctx.prompts(), ctx.language,
                                           parse_complete_report);
}

namespace {

std::string initial_diagnosis_text(const DiagnosticReport& r, Language lang) {
  if (lang == Language::zh) {
    return fmt::format("#症状# {}\n#辅助检查# {}", render_items(r.symptoms), render_items(r.examinations));
  }
  return fmt::format("#Symptoms# {}\n#Examinations# {}", render_items(r.symptoms), render_items(r.examinations));
}

std::string join_questions(const std::vector<std::string>& questions, Language lang, bool to_examiner) {
  std::string body = render_items(questions);
  if (to_examiner) return fmt::format("{} {}", examiner_marker(lang), body);
  return body;
}

PracticeOutcome run_single_strategy(SessionState& session, const MedicalRecord& record, const Memory& memory,
                                    Strategy strategy, double range, const DialogueContext& ctx) {
  visible_case_limit(range, 0);  // validates the range before any model call
  session.scenario = Scenario::practicing;
  session.record_ref = record.patient_id;
  PracticeOutcome out;
  out.strategy = strategy;
  auto body = [&] {
    Consultation consultation(ctx, session, record);
    bool terminated = consultation.run(session.turn_cap);
    if (!terminated) out.partial = session.partial = true;
    session.advance(Phase::summarizing);
    out.initial_report = summarize_report(consultation, session, ctx);
    out.final_report = out.initial_report;

    if (strategy == Strategy::none || range == 0.0) {
      session.advance(Phase::done);
      return out;
    }
    session.advance(Phase::recalling);
    std::string query = text::join(out.initial_report.symptoms, "; ");
    out.hits = memory.recall_by_symptoms(query, ctx.recall_k, range);
    if (out.hits.empty()) {
      session.advance(Phase::done);
      return out;
    }
    CallTag tag{session.session_id, record.patient_id, "student", "", static_cast<int>(session.transcript.size()), 0};
    out.patient_questions = generate_differential_questions(out.initial_report, record, out.hits, strategy,
                                                            InquiryTarget::patient, ctx, tag);
    out.radiologist_questions = generate_differential_questions(out.initial_report, record, out.hits, strategy,
                                                                InquiryTarget::radiologist, ctx, tag);

    session.advance(Phase::further_inquiry);
    std::vector<std::string> names;
    for (const auto& h : out.hits) names.push_back(h.disease);
    RoleSpec further = spec(ctx, Role::student, "student_further_inquiry", "student");
    consultation.set_student_system(
        render_system_prompt(further, &record,
                             {{"initial_diagnosis", initial_diagnosis_text(out.initial_report, ctx.language)},
                              {"retrieved_diseases", text::join(names, ctx.language == Language::zh ? "、" : ", ")}}),
        true);
    consultation.submit_student(join_questions(out.patient_questions, ctx.language, false));
    if (!consultation.ended()) {
      consultation.submit_student(join_questions(out.radiologist_questions, ctx.language, true));
    }
    if (!consultation.ended() && !consultation.run(session.turn_cap)) out.partial = session.partial = true;
    session.advance(Phase::summarizing);
    out.final_report = summarize_report(consultation, session, ctx);
    session.advance(Phase::done);
    return out;
  };
  return run_guarded<PracticeOutcome>(session, body);
}

}  // namespace

PracticeOutcome run_discussion(SessionState& session, const PracticeOutcome& knowledge,
                               const PracticeOutcome& suggestion, const DialogueContext& ctx) {
  session.scenario = Scenario::practicing;
  return run_guarded<PracticeOutcome>(session, [&] {
    session.advance(Phase::discussing);
    PracticeOutcome out;
    out.strategy = Strategy::discussion;
    out.initial_report = knowledge.initial_report;
    out.hits = knowledge.hits;
    out.partial = knowledge.partial || suggestion.partial;
    CallTag tag{session.session_id, session.record_ref, "chair", "discussion", 0, 0};
    out.final_report = peer_discussion(knowledge.final_report, suggestion.final_report, ctx, tag);
    session.advance(Phase::done);
    return out;
  });
}

PracticeOutcome run_practicing_case(SessionState& session, const MedicalRecord& record, const Memory& memory,
                                    Strategy strategy, double retrieval_range, const DialogueContext& ctx) {
  if (strategy != Strategy::discussion) {
    return run_single_strategy(session, record, memory, strategy, retrieval_range, ctx);
  }
  session.record_ref = record.patient_id;
  auto sub = [&](Strategy s) {
    SessionState child;
    child.session_id = fmt::format("{}/{}", session.session_id, to_string(s));
    child.scenario = Scenario::practicing;
    child.record_ref = record.patient_id;
    child.turn_cap = session.turn_cap;
    child.language = session.language;
    return child;
  };
  SessionState k_session = sub(Strategy::knowledge);
  SessionState s_session = sub(Strategy::suggestion);
  PracticeOutcome k, s;
  try {
    k = run_single_strategy(k_session, record, memory, Strategy::knowledge, retrieval_range, ctx);
    s = run_single_strategy(s_session, record, memory, Strategy::suggestion, retrieval_range, ctx);
  } catch (...) {
    if (session.phase != Phase::aborted) session.advance(Phase::aborted);
    throw;
  }
  PracticeOutcome out;
  if (k.hits.empty() && s.hits.empty()) {
    // Nothing recalled: both students kept the initial report.
    session.advance(Phase::discussing);
    session.advance(Phase::done);
    out = k;
    out.strategy = Strategy::discussion;
  } else {
    out = run_discussion(session, k, s, ctx);
  }
  out.sub_sessions = {std::move(k_session), std::move(s_session)};
  return out;
}

}  // namespace medco
