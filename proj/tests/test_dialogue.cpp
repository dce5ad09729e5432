#include <doctest.h>

#include "medco/dialogue.hpp"
#include "medco/error.hpp"
#include "medco/simulated.hpp"
#include "protocol.hpp"
#include "support.hpp"

using namespace medco;
using namespace medco::testing;

namespace {

struct SimWorld {
  std::vector<MedicalRecord> corpus = load_corpus(demo_corpus());
  std::shared_ptr<ScriptedProvider> provider = make_simulated_provider(corpus, Language::en);
  Backends backends = Backends::scripted(provider);
  DialogueContext ctx;

  SimWorld() {
    ctx.backends = &backends;
    ctx.catalog = &PromptCatalog::builtin();
    ctx.corpus_root = demo_corpus();
  }

  const MedicalRecord& record(const std::string& id) const { return *find_record(corpus, id); }
};

SessionState session(const std::string& id, Scenario scenario) {
  SessionState s;
  s.session_id = id;
  s.scenario = scenario;
  return s;
}

}  // namespace

TEST_CASE("golden transcripts replay exactly and satisfy the routing rules") {
  for (const char* name : {"en_stroke", "zh_tuberculosis"}) {
    CAPTURE(name);
    auto g = run_golden(name);
    CHECK(g.terminated == g.golden["terminated"].get<bool>());
    auto expected = g.golden["expected"].get<std::vector<Message>>();
    CHECK(g.session.transcript == expected);
    CHECK(routing_violations(g.session.transcript, g.session.language).empty());
    CHECK(routing_violations(expected, g.session.language).empty());
  }
}

TEST_CASE("the routing checker catches broken transcripts") {
  auto g = load_golden("en_stroke");
  auto t = g["expected"].get<std::vector<Message>>();
  auto broken = t;
  broken[3].addressee = Addressee::patient;  // answer to the student sent to the patient
  CHECK_FALSE(routing_violations(broken, Language::en).empty());
  broken = t;
  broken.erase(broken.begin() + 6);  // unanswered examiner request
  for (std::size_t i = 0; i < broken.size(); ++i) broken[i].turn = static_cast<int>(i);
  CHECK_FALSE(routing_violations(broken, Language::en).empty());
  broken = t;
  broken[5].addressee = Addressee::doctor;  // marker says examiner
  CHECK_FALSE(routing_violations(broken, Language::en).empty());
  broken = t;
  broken.back().terminal = false;
  broken[broken.size() - 2].terminal = true;  // patient goes on after the token
  CHECK_FALSE(routing_violations(broken, Language::en).empty());
}

TEST_CASE("simulated consultations satisfy the routing rules") {
  SimWorld w;
  for (const auto& r : w.corpus) {
    auto s = session("sim-" + r.patient_id, Scenario::learning);
    Consultation c(w.ctx, s, r);
    CHECK(c.run(20));
    CHECK(routing_violations(s.transcript, Language::en).empty());
    CHECK(s.transcript.back().terminal);
  }
}

TEST_CASE("turn cap stops a consultation without the token") {
  auto p = std::make_shared<ScriptedProvider>();
  p->set_fallback([](const ChatRequest& r) {
    return r.tag.role == "student" ? std::string("How are you feeling?") : std::string("<To the doctor> Not great.");
  });
  auto b = Backends::scripted(p);
  DialogueContext ctx;
  ctx.backends = &b;
  ctx.catalog = &PromptCatalog::builtin();
  auto r = make_record("C1", "Neurology", "headache", {"Migraine"});
  auto s = session("cap", Scenario::learning);
  Consultation c(ctx, s, r);
  CHECK_FALSE(c.run(3));
  CHECK(c.student_turns() == 3);
  CHECK(s.transcript.size() == 6);
  CHECK(routing_violations(s.transcript, Language::en).empty());

  // Picking an existing transcript back up continues the count.
  Consultation resumed(ctx, s, r);
  CHECK(resumed.student_turns() == 3);
  CHECK_FALSE(resumed.ended());
}

TEST_CASE("submitting after the end is a state error") {
  auto g = run_golden("en_stroke");
  DialogueContext ctx;
  auto b = Backends::scripted(g.provider);
  ctx.backends = &b;
  ctx.catalog = &PromptCatalog::builtin();
  Consultation c(ctx, g.session, g.record);
  CHECK(c.ended());
  try {
    c.submit_student("one more thing");
    FAIL("expected state error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::state);
  }
}

TEST_CASE("each role sees only its own thread") {
  auto g = run_golden("en_stroke");
  DialogueContext ctx;
  auto b = Backends::scripted(g.provider);
  ctx.backends = &b;
  ctx.catalog = &PromptCatalog::builtin();
  Consultation c(ctx, g.session, g.record);
  auto student = c.history_for(Role::student);
  for (const auto& turn : student) {
    CHECK(turn.content.find("I need a blood glucose test") == std::string::npos);
  }
  auto radiologist = c.history_for(Role::radiologist);
  auto fewshot = radiologist_fewshot(Language::en);
  REQUIRE(radiologist.size() >= fewshot.size());
  CHECK(radiologist[0].content == fewshot[0].content);
  auto patient = c.history_for(Role::patient);
  CHECK(patient.front().content == "Hello, what brings you in today?");
}

TEST_CASE("phase machine") {
  using P = Phase;
  CHECK(SessionState::allowed(Scenario::learning, P::summarizing, P::assessing));
  CHECK_FALSE(SessionState::allowed(Scenario::learning, P::summarizing, P::recalling));
  CHECK_FALSE(SessionState::allowed(Scenario::practicing, P::summarizing, P::assessing));
  CHECK(SessionState::allowed(Scenario::practicing, P::recalling, P::further_inquiry));
  CHECK(SessionState::allowed(Scenario::interactive, P::assessing, P::recalling));
  CHECK_FALSE(SessionState::allowed(Scenario::learning, P::done, P::aborted));
  CHECK(SessionState::allowed(Scenario::learning, P::initial_diagnosis, P::aborted));
  auto s = session("x", Scenario::learning);
  CHECK_THROWS_AS(s.advance(P::done), Error);
  s.advance(P::summarizing);
  s.advance(P::assessing);
  s.advance(P::done);
  CHECK(s.phase_history == std::vector<P>{P::initial_diagnosis, P::summarizing, P::assessing, P::done});
}

TEST_CASE("learning stores one atomic memory write per case") {
  SimWorld w;
  Memory memory(std::make_shared<HashingEmbedder>(256, 42));
  auto s = session("learn-N002", Scenario::learning);
  auto outcome = run_learning_case(s, w.record("N002"), memory, w.ctx);
  CHECK(s.phase == Phase::done);
  CHECK(memory.case_count() == 1);
  CHECK(memory.disease_count() == w.record("N002").truth.diseases.size());
  CHECK(outcome.bundle.knowledge.size() == w.record("N002").truth.diseases.size());
  CHECK_FALSE(outcome.report.diagnostic_results.empty());
}

TEST_CASE("practice with and without recall") {
  SimWorld w;
  Memory memory(std::make_shared<HashingEmbedder>(256, 42));
  for (const char* id : {"N002", "R002"}) {
    auto s = session(std::string("learn-") + id, Scenario::learning);
    run_learning_case(s, w.record(id), memory, w.ctx);
  }

  auto none = session("none", Scenario::practicing);
  auto plain = run_practicing_case(none, w.record("N001"), memory, Strategy::none, 1.0, w.ctx);
  CHECK(plain.hits.empty());
  CHECK(plain.final_report == plain.initial_report);
  CHECK(none.phase_history == std::vector<Phase>{Phase::initial_diagnosis, Phase::summarizing, Phase::done});

  auto zero = session("zero", Scenario::practicing);
  auto gated = run_practicing_case(zero, w.record("N001"), memory, Strategy::knowledge, 0.0, w.ctx);
  CHECK(gated.hits.empty());

  auto know = session("know", Scenario::practicing);
  auto k = run_practicing_case(know, w.record("N001"), memory, Strategy::knowledge, 1.0, w.ctx);
  CHECK_FALSE(k.hits.empty());
  CHECK_FALSE(k.patient_questions.empty());
  CHECK(know.phase == Phase::done);
  CHECK(std::find(know.phase_history.begin(), know.phase_history.end(), Phase::further_inquiry) !=
        know.phase_history.end());
  CHECK(routing_violations(know.transcript, Language::en).empty());

  auto disc = session("disc", Scenario::practicing);
  auto d = run_practicing_case(disc, w.record("N001"), memory, Strategy::discussion, 1.0, w.ctx);
  CHECK(d.sub_sessions.size() == 2);
  CHECK(disc.phase_history.back() == Phase::done);
  CHECK_FALSE(d.final_report.diagnostic_results.empty());

  CHECK_THROWS_AS(run_practicing_case(disc, w.record("N001"), memory, Strategy::knowledge, 1.5, w.ctx), Error);
}

TEST_CASE("backend failures abort the session and propagate") {
  auto p = strict_scripted();
  auto b = Backends::scripted(p);
  DialogueContext ctx;
  ctx.backends = &b;
  ctx.catalog = &PromptCatalog::builtin();
  auto s = session("fail", Scenario::learning);
  auto r = make_record("F1", "Neurology", "headache", {"Migraine"});
  try {
    run_initial_diagnosis(s, r, ctx);
    FAIL("expected missing_fixture");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::missing_fixture);
  }
  CHECK(s.phase == Phase::aborted);
}

TEST_CASE("related disease blocks follow the strategy") {
  RecallHit h;
  h.disease = "Cerebral infarction";
  h.card.main_symptoms = {"Hemiplegia"};
  h.card.auxiliary_exam_methods = {"Head MRI"};
  h.suggestions.at(ReportSection::symptoms) = "Ask about onset time";
  h.suggestions.at(ReportSection::examinations) = "Order diffusion MRI";
  auto k = related_diseases_block({h}, Strategy::knowledge, InquiryTarget::radiologist, Language::en);
  CHECK(k.find("Cerebral infarction") != std::string::npos);
  CHECK(k.find("Head MRI") != std::string::npos);
  auto s = related_diseases_block({h}, Strategy::suggestion, InquiryTarget::radiologist, Language::en);
  CHECK(s.find("Order diffusion MRI") != std::string::npos);
}

TEST_CASE("summaries need all five sections") {
  CHECK_THROWS_AS(parse_complete_report("#Diagnostic Results# (1) Flu"), ParseError);
}
