#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <random>

#include "medco/error.hpp"
#include "medco/memory.hpp"
#include "support.hpp"

using namespace medco;
using namespace medco::testing;

namespace {

KnowledgeCard card_for(const std::string& disease) {
  KnowledgeCard c;
  c.definition = {disease + " definition"};
  c.pathogenesis = {"mechanism"};
  c.main_symptoms = {"symptom"};
  c.auxiliary_exam_methods = {"exam"};
  c.treatment_plans = {"treatment"};
  return c;
}

FeedbackBundle bundle_for(const std::vector<std::string>& diseases, const std::string& note = "note") {
  FeedbackBundle b;
  for (auto sec : kReportSections) b.suggestions.at(sec) = note;
  for (const auto& d : diseases) b.knowledge[d] = card_for(d);
  return b;
}

/// Case i has the disease "Disease i" and a symptom text unique to it.
std::shared_ptr<Memory> filled(std::size_t n, std::shared_ptr<EmbeddingProvider> embedder = nullptr) {
  if (!embedder) embedder = std::make_shared<HashingEmbedder>(256, 42);
  auto m = std::make_shared<Memory>(embedder);
  static const std::vector<std::string> words = {"fever",  "cough",   "headache", "nausea",   "rash",   "dizziness",
                                                 "chest",  "pain",    "swelling", "fatigue",  "vomiting", "numbness",
                                                 "wheeze", "itching", "jaundice", "weakness", "tremor", "palpitations"};
  for (std::size_t i = 0; i < n; ++i) {
    std::string text = fmt::format("{} {} {} case{}", words[i % words.size()], words[(i * 7 + 3) % words.size()],
                                   words[(i * 5 + 1) % words.size()], i);
    std::string disease = fmt::format("Disease {}", i);
    m->store_feedback(fmt::format("P{:02}", i), {text}, {disease}, bundle_for({disease}));
  }
  return m;
}

class FailingEmbedder : public EmbeddingProvider {
 public:
  std::vector<std::vector<float>> embed(const std::vector<std::string>&) override {
    throw Error(ErrorCode::backend, "embedding service down");
  }
  std::size_t dimension() const override { return 8; }
};

}  // namespace

TEST_CASE("every stored key retrieves its own case first") {
  auto m = filled(24);
  auto snap = m->snapshot();
  REQUIRE(snap.symptoms.size() == 24);
  for (const auto& [key, entry] : snap.symptoms) {
    auto hits = m->recall_by_symptoms(entry.text, 1, 1.0);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].patient_id == entry.patient_id);
    CHECK(hits[0].disease == entry.diseases[0]);
    CHECK(hits[0].score == doctest::Approx(1.0));
  }
}

TEST_CASE("range gating exposes ceil(range * N) cases") {
  auto m = filled(16);
  const std::vector<std::pair<double, std::size_t>> expected = {{0.0, 0}, {0.25, 4}, {0.5, 8}, {0.75, 12}, {1.0, 16}};
  for (auto [range, count] : expected) {
    auto visible = m->visible_cases(range);
    CHECK(visible.size() == count);
    for (std::size_t i = 0; i < visible.size(); ++i) CHECK(visible[i] == fmt::format("P{:02}", i));
    auto hits = m->recall_by_symptoms("fever cough headache", 16, range);
    CHECK(hits.size() == count);
    for (const auto& h : hits) {
      CHECK(std::find(visible.begin(), visible.end(), h.patient_id) != visible.end());
    }
  }
  CHECK_THROWS_AS(m->recall_by_symptoms("x", 1, 1.5), Error);
  CHECK_THROWS_AS(m->visible_cases(-0.1), Error);
}

TEST_CASE("visible_case_limit matches an integer ceiling oracle") {
  for (std::size_t n = 0; n <= 40; ++n) {
    for (std::size_t num = 0; num <= 20; ++num) {
      double range = double(num) / 20.0;
      std::size_t oracle = (num * n + 19) / 20;  // ceil(num * n / 20) in integers
      CHECK(visible_case_limit(range, n) == oracle);
    }
  }
}

TEST_CASE("recall returns distinct diseases ordered by score") {
  auto e = std::make_shared<HashingEmbedder>(256, 1);
  Memory m(e);
  m.store_feedback("A", {"fever cough"}, {"Flu", "Asthma"}, bundle_for({"Flu", "Asthma"}, "a"));
  m.store_feedback("B", {"fever cough sputum"}, {"Flu", "Pneumonia"}, bundle_for({"Flu", "Pneumonia"}, "b"));
  m.store_feedback("C", {"itchy rash"}, {"Eczema"}, bundle_for({"Eczema"}, "c"));
  auto hits = m.recall_by_symptoms("fever cough", 10, 1.0);
  std::set<std::string> names;
  for (const auto& h : hits) names.insert(h.disease);
  CHECK(names.size() == hits.size());
  CHECK(hits.front().patient_id == "A");
  for (std::size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].score >= hits[i].score);
  CHECK(m.recall_by_symptoms("fever cough", 2, 1.0).size() == 2);
  CHECK(m.recall_by_symptoms("anything", 3, 0.0).empty());
  // Flu's card was last written by B.
  CHECK(m.find_disease("Flu")->patient_id == "B");
  CHECK(m.find_case("C")->suggestions.at(ReportSection::symptoms) == "c");
}

TEST_CASE("re-storing a case upserts instead of duplicating") {
  auto m = filled(4);
  auto before = m->case_count();
  m->store_feedback("P01", {"new text"}, {"Disease 1"}, bundle_for({"Disease 1"}, "updated"));
  CHECK(m->case_count() == before);
  CHECK(m->find_case("P01")->suggestions.at(ReportSection::rationales) == "updated");
  CHECK(m->find_case("P01")->insertion_index == 1);
}

TEST_CASE("store preconditions") {
  Memory m(std::make_shared<HashingEmbedder>(64));
  CHECK_THROWS_AS(m.store_feedback("", {"s"}, {"D"}, bundle_for({"D"})), Error);
  CHECK_THROWS_AS(m.store_feedback("A", {"s"}, {"D"}, bundle_for({"E"})), Error);
  auto bad = bundle_for({"D"});
  bad.knowledge["D"].pathogenesis.clear();
  CHECK_THROWS_AS(m.store_feedback("A", {"s"}, {"D"}, bad), Error);
  CHECK(m.empty());
}

TEST_CASE("backend failure leaves memory unchanged") {
  Memory m(std::make_shared<FailingEmbedder>());
  CHECK_THROWS_AS(m.store_feedback("A", {"s"}, {"D"}, bundle_for({"D"})), Error);
  CHECK(m.empty());
  CHECK(m.disease_count() == 0);
}

TEST_CASE("persist and restore are bit-exact") {
  TempDir dir;
  auto embedder = std::make_shared<HashingEmbedder>(256, 42);
  auto m = filled(20, embedder);
  m->persist(dir / "m.json");
  Memory back(embedder);
  back.restore(dir / "m.json");
  CHECK(back.snapshot() == m->snapshot());
  auto a = m->snapshot().symptoms.begin()->second.vector;
  auto b = back.snapshot().symptoms.begin()->second.vector;
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  back.persist(dir / "m2.json");
  CHECK(slurp(dir / "m.json") == slurp(dir / "m2.json"));
  for (double r : {0.0, 0.3, 1.0}) {
    auto x = m->recall_by_symptoms("fever cough", 5, r);
    auto y = back.recall_by_symptoms("fever cough", 5, r);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i].disease == y[i].disease);
      CHECK(x[i].score == y[i].score);
    }
  }
}

TEST_CASE("restore rejects corrupt or foreign files without side effects") {
  TempDir dir;
  auto embedder = std::make_shared<HashingEmbedder>(256, 42);
  auto m = filled(3, embedder);
  auto before = m->snapshot();

  spit(dir / "empty.json", "");
  Memory e(embedder);
  e.restore(dir / "empty.json");
  CHECK(e.empty());

  spit(dir / "junk.json", "{\"format\":\"medco-memory\",\"version\":1,\"cases\":[{");
  try {
    m->restore(dir / "junk.json");
    FAIL("expected format error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::format);
  }
  CHECK(m->snapshot() == before);

  m->persist(dir / "good.json");
  auto j = nlohmann::json::parse(slurp(dir / "good.json"));
  CHECK(j["format"] == "medco-memory");
  j["version"] = 2;
  spit(dir / "v2.json", j.dump());
  try {
    m->restore(dir / "v2.json");
    FAIL("expected version mismatch");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::version_mismatch);
  }
  CHECK(m->snapshot() == before);
  CHECK_THROWS_AS(m->restore(dir / "nope.json"), Error);
}

TEST_CASE("feedback bundle json round trip") {
  auto b = bundle_for({"Flu", "Asthma"}, "x");
  CHECK(nlohmann::json(b).get<FeedbackBundle>() == b);
}
