#pragma once

#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "medco/dialogue.hpp"
#include "support.hpp"

namespace medco::testing {

/// Checks a transcript against the routing rules, independent of the code
/// that produced it:
///  - student speaks to the patient or the examiner; the patient to the doctor
///    or the examiner; the radiologist to the doctor or the patient;
///  - a patient message is addressed to the examiner iff it starts with the
///    examiner marker;
///  - every message to the examiner is answered next by the radiologist, back
///    to whoever asked;
///  - every radiologist message answers the message right before it;
///  - a non-terminal student message to the patient is followed by a patient
///    message; after a terminal message only the student may speak (the
///    further-inquiry stage reopens the consultation).
inline std::vector<std::string> routing_violations(const std::vector<Message>& t, Language lang) {
  std::vector<std::string> out;
  auto bad = [&](std::size_t i, const std::string& why) { out.push_back(fmt::format("message {}: {}", i, why)); };
  std::string exam_marker(examiner_marker(lang));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& m = t[i];
    if (m.turn != static_cast<int>(i)) bad(i, "turn index out of sequence");
    switch (m.speaker) {
      case Role::student:
        if (m.addressee != Addressee::patient && m.addressee != Addressee::examiner) bad(i, "student addressee");
        break;
      case Role::patient: {
        if (m.addressee != Addressee::doctor && m.addressee != Addressee::examiner) bad(i, "patient addressee");
        std::string lead = m.content.substr(m.content.find_first_not_of(" \t\n") == std::string::npos
                                                ? 0
                                                : m.content.find_first_not_of(" \t\n"));
        bool marked = lead.rfind(exam_marker, 0) == 0;
        if (marked != (m.addressee == Addressee::examiner)) bad(i, "patient marker disagrees with addressee");
        break;
      }
      case Role::radiologist: {
        if (i == 0 || t[i - 1].addressee != Addressee::examiner) {
          bad(i, "radiologist spoke without a request");
          break;
        }
        Addressee back = t[i - 1].speaker == Role::student ? Addressee::doctor : Addressee::patient;
        if (m.addressee != back) bad(i, "radiologist answer not routed back to the requester");
        break;
      }
      default: bad(i, "unexpected speaker");
    }
    if (m.addressee == Addressee::examiner && (i + 1 >= t.size() || t[i + 1].speaker != Role::radiologist)) {
      bad(i, "examiner request left unanswered");
    }
    if (m.speaker == Role::student && m.addressee == Addressee::patient && !m.terminal &&
        (i + 1 >= t.size() || t[i + 1].speaker != Role::patient)) {
      bad(i, "student message to the patient left unanswered");
    }
    if (m.terminal && i + 1 < t.size() && t[i + 1].speaker != Role::student) {
      bad(i, "non-student message after the termination token");
    }
  }
  return out;
}

struct GoldenRun {
  nlohmann::json golden;
  MedicalRecord record;
  SessionState session;
  bool terminated = false;
  std::shared_ptr<ScriptedProvider> provider;
};

inline nlohmann::json load_golden(const std::string& name) {
  return nlohmann::json::parse(slurp(std::filesystem::path(MEDCO_TESTS_DIR) / "golden" / (name + ".json")));
}

/// Replays a golden file's scripted replies through a Consultation.
inline GoldenRun run_golden(const std::string& name) {
  GoldenRun g;
  g.golden = load_golden(name);
  if (g.golden.contains("record")) {
    g.record = g.golden["record"].get<MedicalRecord>();
  } else {
    auto corpus = load_corpus(demo_corpus());
    g.record = *find_record(corpus, g.golden["record_id"].get<std::string>());
  }
  g.provider = std::make_shared<ScriptedProvider>();
  for (const auto& r : g.golden["replies"]) {
    g.provider->register_reply(name, r["role"].get<std::string>(), r["turn"].get<int>(), r["reply"].get<std::string>());
  }
  static Backends backends;
  backends = Backends::scripted(g.provider);
  DialogueContext ctx;
  ctx.backends = &backends;
  ctx.catalog = &PromptCatalog::builtin();
  ctx.language = language_from_string(g.golden["language"].get<std::string>());
  ctx.max_exam_hops = g.golden.value("max_exam_hops", 3);
  ctx.corpus_root = demo_corpus();
  g.session.session_id = name;
  g.session.language = ctx.language;
  g.session.record_ref = g.record.patient_id;
  Consultation c(ctx, g.session, g.record);
  g.terminated = c.run(20);
  return g;
}

}  // namespace medco::testing
