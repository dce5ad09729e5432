#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <thread>

#include "medco/error.hpp"
#include "medco/http_server.hpp"
#include "medco/service.hpp"
#include "medco/simulated.hpp"
#include "protocol.hpp"
#include "support.hpp"

using namespace medco;
using namespace medco::testing;
using nlohmann::json;

namespace {

const char* kDiagnosis =
    "My diagnosis: Cerebral infarction. Rationale: acute focal deficit. Treatment plan: antiplatelet therapy.";

struct World {
  RunConfig config = RunConfig::defaults();
  std::vector<MedicalRecord> corpus = load_corpus(demo_corpus());
  std::shared_ptr<Backends> backends = make_backends(config, corpus);
  std::shared_ptr<Memory> memory = std::make_shared<Memory>(std::make_shared<HashingEmbedder>(256, 42));

  std::unique_ptr<SessionService> service(ServiceOptions options = {}) {
    if (!options.clock) options.clock = std::make_shared<LogicalClock>();
    return std::make_unique<SessionService>(config, corpus, demo_corpus(), backends, memory, options);
  }
};

void run_human_inquiry(SessionService& svc, const std::string& sid) {
  auto a = svc.post_message(sid, "Hello, what brings you in today?");
  REQUIRE(a.size() == 2);
  CHECK(a[0].speaker == Role::student);
  CHECK(a[1].speaker == Role::patient);
  auto b = svc.post_message(sid, "<To the examiner> Please give me the head CT and the serum sodium.");
  REQUIRE(b.size() == 2);
  CHECK(b[1].speaker == Role::radiologist);
  CHECK(b[1].addressee == Addressee::doctor);
  auto c = svc.post_message(sid, kDiagnosis);
  CHECK(c.back().terminal);
}

}  // namespace

TEST_CASE("case list for the session picker") {
  World w;
  auto svc = w.service();
  auto cases = svc->list_cases();
  REQUIRE(cases.size() == 4);
  CHECK(cases[0].patient_id == "N001");
  CHECK(cases[0].department == "Neurology");
  CHECK_FALSE(cases[0].teaser.empty());
}

TEST_CASE("human session: inquiry, assessment, recall") {
  World w;
  auto svc = w.service();
  auto d = svc->create_session(SessionMode::human_student, "N001", true);
  CHECK(d.session_id == "s0001");
  CHECK(d.presentation.find("unclear speech") != std::string::npos);
  CHECK_FALSE(d.inquiry_closed);
  CHECK_THROWS_AS(svc->step(d.session_id), Error);

  try {
    svc->assess(d.session_id);
    FAIL("expected state error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::state);
  }

  run_human_inquiry(*svc, d.session_id);
  CHECK(svc->describe(d.session_id).inquiry_closed);
  CHECK(routing_violations(svc->transcript(d.session_id), Language::en).empty());
  try {
    svc->post_message(d.session_id, "One more question");
    FAIL("expected state error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::state);
  }

  auto a = svc->assess(d.session_id);
  CHECK(a.stored);
  CHECK(w.memory->case_count() == 1);
  for (int s : a.hde.scores) CHECK((s >= 1 && s <= 4));
  CHECK_FALSE(a.suggestions.at(ReportSection::diagnostic_results).empty());
  auto hits = svc->recall(d.session_id);
  CHECK_FALSE(hits.empty());
  CHECK(svc->describe(d.session_id).phase == Phase::recalling);
  CHECK_THROWS_AS(svc->assess(d.session_id), Error);
}

TEST_CASE("observe sessions advance one agentic turn per step") {
  World w;
  auto svc = w.service();
  auto d = svc->create_session(SessionMode::observe, "R001");
  CHECK_THROWS_AS(svc->post_message(d.session_id, "hi"), Error);
  int steps = 0;
  while (!svc->describe(d.session_id).inquiry_closed && steps < 25) {
    CHECK_FALSE(svc->step(d.session_id).empty());
    ++steps;
  }
  CHECK(svc->describe(d.session_id).inquiry_closed);
  CHECK(routing_violations(svc->transcript(d.session_id), Language::en).empty());
  auto a = svc->assess(d.session_id);
  CHECK_FALSE(a.stored);
  CHECK(w.memory->empty());
}

TEST_CASE("unknown records, unknown sessions, capacity") {
  World w;
  ServiceOptions opt;
  opt.max_sessions = 2;
  auto svc = w.service(opt);
  try {
    svc->create_session(SessionMode::human_student, "NOPE");
    FAIL("expected not_found");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::not_found);
  }
  CHECK_THROWS_AS(svc->describe("s9999"), Error);
  auto a = svc->create_session(SessionMode::human_student, "N001");
  svc->create_session(SessionMode::human_student, "N002");
  try {
    svc->create_session(SessionMode::human_student, "R001");
    FAIL("expected capacity");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::capacity);
  }
  svc->close_session(a.session_id);
  CHECK(svc->session_count() == 1);
  CHECK_NOTHROW(svc->create_session(SessionMode::human_student, "R001"));
  CHECK_THROWS_AS(svc->post_message("s0002", "   "), Error);
}

TEST_CASE("concurrent sessions stay isolated") {
  World w;
  auto svc = w.service();
  std::vector<std::string> ids;
  for (const char* pid : {"N001", "N002", "R001", "R002"}) {
    ids.push_back(svc->create_session(SessionMode::human_student, pid).session_id);
  }
  std::vector<std::thread> threads;
  std::atomic<int> errors{0};
  for (const auto& id : ids) {
    threads.emplace_back([&, id] {
      try {
        for (int i = 0; i < 3; ++i) svc->post_message(id, "Tell me more about how you feel.");
      } catch (...) {
        ++errors;
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(errors == 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto d = svc->describe(ids[i]);
    auto t = svc->transcript(ids[i]);
    CHECK(t.size() == 6);
    const auto& rec = *find_record(w.corpus, d.patient_id);
    CHECK(t[1].content.find(rec.basic_info.chief_complaint) != std::string::npos);
    CHECK(routing_violations(t, Language::en).empty());
  }
}

TEST_CASE("events: catch-up, waiting, and no duplicates") {
  World w;
  auto svc = w.service();
  auto sid = svc->create_session(SessionMode::human_student, "N001").session_id;
  CHECK(svc->events_after(sid, -1).empty());
  std::thread poster([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    svc->post_message(sid, "Hello there.");
  });
  auto got = svc->events_after(sid, -1, std::chrono::milliseconds(3000));
  poster.join();
  REQUIRE_FALSE(got.empty());
  CHECK(got[0].turn == 0);
  auto all = svc->events_after(sid, -1);
  CHECK(all.size() == 2);
  CHECK(svc->events_after(sid, 0).size() == 1);
  CHECK(svc->events_after(sid, 1).empty());
  CHECK_FALSE(svc->finished(sid));
}

TEST_CASE("a backend failure leaves the session retryable") {
  World w;
  auto scripted = std::make_shared<ScriptedProvider>();
  auto sim = make_simulated_provider(w.corpus, Language::en);
  std::atomic<bool> fail{true};
  scripted->set_fallback([&](const ChatRequest& r) -> std::string {
    if (r.tag.role == "patient" && fail.exchange(false)) throw Error(ErrorCode::backend, "patient model down");
    return sim->chat(r);
  });
  w.backends = std::make_shared<Backends>(Backends::scripted(scripted));
  auto svc = w.service();
  auto sid = svc->create_session(SessionMode::human_student, "N001").session_id;
  CHECK_THROWS_AS(svc->post_message(sid, "Hello."), Error);
  CHECK(svc->transcript(sid).empty());
  CHECK(svc->post_message(sid, "Hello.").size() == 2);
}

TEST_CASE("sessions recover from the state directory") {
  TempDir dir;
  World w;
  std::vector<Message> before;
  std::string sid;
  {
    ServiceOptions opt;
    opt.state_dir = dir.path();
    auto svc = w.service(opt);
    sid = svc->create_session(SessionMode::human_student, "N001", true).session_id;
    svc->post_message(sid, "Hello, what brings you in today?");
    svc->post_message(sid, "<To the examiner> Head CT please.");
    before = svc->transcript(sid);
    auto done = svc->create_session(SessionMode::human_student, "R001").session_id;
    run_human_inquiry(*svc, done);
    svc->assess(done);
    svc->close_session(done);
  }
  CHECK(std::filesystem::exists(dir / (sid + ".jsonl")));
  ServiceOptions opt;
  opt.state_dir = dir.path();
  auto svc = w.service(opt);
  CHECK(svc->recover() == 1);
  CHECK(svc->transcript(sid) == before);
  auto d = svc->describe(sid);
  CHECK(d.mode == SessionMode::human_student);
  CHECK(d.learn);
  CHECK(d.next_turn == static_cast<int>(before.size()));
  auto more = svc->post_message(sid, kDiagnosis);
  CHECK(more.front().turn == static_cast<int>(before.size()));
  CHECK(svc->describe(sid).inquiry_closed);
  CHECK(svc->create_session(SessionMode::human_student, "N002").session_id == "s0003");
}

// --- HTTP ---------------------------------------------------------------------

namespace {

struct Server {
  World world;
  std::unique_ptr<SessionService> service;
  std::unique_ptr<HttpServer> http;
  std::unique_ptr<httplib::Client> client;
  httplib::Headers auth{{"Authorization", "Bearer secret"}};

  explicit Server(std::string token = "secret") {
    service = world.service();
    HttpServerOptions o;
    o.port = 0;
    o.token = std::move(token);
    o.stream_idle = std::chrono::milliseconds(300);
    http = std::make_unique<HttpServer>(*service, o);
    int port = http->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(10, 0);
  }

  httplib::Result post(const std::string& path, const json& body = json::object()) {
    return client->Post(path, auth, body.dump(), "application/json");
  }
  httplib::Result get(const std::string& path, httplib::Headers extra = {}) {
    extra.insert(auth.begin(), auth.end());
    return client->Get(path, extra);
  }
};

struct SseEvent {
  std::string id;
  std::string event;
  std::string data;
};

std::vector<SseEvent> parse_sse(const std::string& body) {
  std::vector<SseEvent> out;
  SseEvent cur;
  std::istringstream in(body);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) {
      if (!cur.event.empty()) out.push_back(cur);
      cur = {};
    } else if (line.rfind("id: ", 0) == 0) {
      cur.id = line.substr(4);
    } else if (line.rfind("event: ", 0) == 0) {
      cur.event = line.substr(7);
    } else if (line.rfind("data: ", 0) == 0) {
      cur.data = line.substr(6);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("http status mapping") {
  CHECK(http_status_for(ErrorCode::not_found) == 404);
  CHECK(http_status_for(ErrorCode::state) == 409);
  CHECK(http_status_for(ErrorCode::capacity) == 429);
  CHECK(http_status_for(ErrorCode::auth) == 401);
  CHECK(http_status_for(ErrorCode::validation) == 400);
  CHECK(http_status_for(ErrorCode::backend) == 502);
  CHECK(http_status_for(ErrorCode::io) == 500);
}

TEST_CASE("http: auth, cases, full session, errors") {
  Server s;
  auto unauth = s.client->Get("/v1/cases");
  REQUIRE(unauth);
  CHECK(unauth->status == 401);
  CHECK(json::parse(unauth->body)["error"]["code"] == "auth");

  auto health = s.get("/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);

  auto cases = s.get("/v1/cases");
  REQUIRE(cases);
  CHECK(json::parse(cases->body)["cases"].size() == 4);

  auto created = s.post("/v1/sessions", {{"patient_id", "N001"}, {"mode", "human_student"}, {"learn", true}});
  REQUIRE(created);
  CHECK(created->status == 201);
  auto desc = json::parse(created->body);
  std::string sid = desc["session_id"];
  CHECK(desc["phase"] == "initial_diagnosis");

  auto msg = s.post("/v1/sessions/" + sid + "/message", {{"text", "Hello, what brings you in today?"}});
  REQUIRE(msg);
  CHECK(msg->status == 200);
  CHECK(json::parse(msg->body)["messages"].size() == 2);

  auto early = s.post("/v1/sessions/" + sid + "/assess");
  REQUIRE(early);
  CHECK(early->status == 409);

  auto bad = s.client->Post("/v1/sessions/" + sid + "/message", s.auth, "not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  auto missing = s.post("/v1/sessions/s9999/message", {{"text", "hi"}});
  REQUIRE(missing);
  CHECK(missing->status == 404);
  auto unknown_case = s.post("/v1/sessions", {{"patient_id", "ZZZ"}, {"mode", "human_student"}});
  REQUIRE(unknown_case);
  CHECK(unknown_case->status == 404);

  s.post("/v1/sessions/" + sid + "/message", {{"text", kDiagnosis}});
  auto assess = s.post("/v1/sessions/" + sid + "/assess");
  REQUIRE(assess);
  CHECK(assess->status == 200);
  auto a = json::parse(assess->body);
  CHECK(a["stored"] == true);
  CHECK(a.contains("suggestions"));
  CHECK(a.contains("hde"));
  auto recall = s.post("/v1/sessions/" + sid + "/recall");
  REQUIRE(recall);
  CHECK(json::parse(recall->body)["hits"].size() >= 1);

  auto transcript = s.get("/v1/sessions/" + sid + "/transcript");
  REQUIRE(transcript);
  auto t = json::parse(transcript->body);
  CHECK(t["messages"].size() == 4);

  auto del = s.client->Delete("/v1/sessions/" + sid, s.auth);
  REQUIRE(del);
  CHECK(del->status == 200);
  auto gone = s.get("/v1/sessions/" + sid);
  REQUIRE(gone);
  CHECK(gone->status == 404);
}

TEST_CASE("http: event stream resumes without duplicates") {
  Server s;
  auto created = s.post("/v1/sessions", {{"patient_id", "N002"}, {"mode", "human_student"}});
  std::string sid = json::parse(created->body)["session_id"];
  s.post("/v1/sessions/" + sid + "/message", {{"text", "Hello, what brings you in today?"}});
  s.post("/v1/sessions/" + sid + "/message", {{"text", "<To the examiner> Head MRI please."}});

  auto first = s.get("/v1/sessions/" + sid + "/events?timeout_ms=200");
  REQUIRE(first);
  CHECK(first->status == 200);
  auto ev = parse_sse(first->body);
  REQUIRE(ev.size() == 5);
  for (int i = 0; i < 4; ++i) {
    CHECK(ev[i].event == "message");
    CHECK(ev[i].id == std::to_string(i));
    CHECK(json::parse(ev[i].data)["turn"] == i);
  }
  CHECK(ev.back().event == "end");

  auto resumed = s.get("/v1/sessions/" + sid + "/events?timeout_ms=200", {{"Last-Event-ID", "1"}});
  auto ev2 = parse_sse(resumed->body);
  REQUIRE(ev2.size() == 3);
  CHECK(ev2[0].id == "2");
  CHECK(ev2[1].id == "3");

  std::thread poster([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    s.service->post_message(sid, "How long has this been going on?");
  });
  auto live = s.get("/v1/sessions/" + sid + "/events?after=3&timeout_ms=2000");
  poster.join();
  auto ev3 = parse_sse(live->body);
  REQUIRE(ev3.size() >= 2);
  CHECK(ev3[0].id == "4");
  std::set<std::string> ids;
  for (const auto& e : ev3) {
    if (e.event == "message") CHECK(ids.insert(e.id).second);
  }

  auto bad = s.get("/v1/sessions/" + sid + "/events?after=abc");
  REQUIRE(bad);
  CHECK(bad->status == 400);
}

TEST_CASE("http: open server without a token") {
  Server s("");
  auto r = s.client->Get("/v1/health");
  REQUIRE(r);
  CHECK(r->status == 200);
  auto full = s.client->Post("/v1/sessions", json{{"patient_id", "N001"}, {"mode", "observe"}}.dump(),
                             "application/json");
  REQUIRE(full);
  CHECK(full->status == 201);
  std::string sid = json::parse(full->body)["session_id"];
  auto step = s.client->Post("/v1/sessions/" + sid + "/step", "", "application/json");
  REQUIRE(step);
  CHECK(step->status == 200);
  CHECK_FALSE(json::parse(step->body)["messages"].empty());
}
