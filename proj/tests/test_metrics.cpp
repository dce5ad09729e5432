#include <doctest.h>

#include <cmath>
#include <random>

#include "medco/error.hpp"
#include "medco/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace medco;
using namespace medco::testing;

TEST_CASE("icd code shape and levels") {
  CHECK(is_icd_code("I63.9"));
  CHECK(is_icd_code("A16.202"));
  CHECK(is_icd_code("E11"));
  CHECK_FALSE(is_icd_code("163.9"));
  CHECK_FALSE(is_icd_code("I6"));
  CHECK_FALSE(is_icd_code("I63."));
  CHECK_FALSE(is_icd_code("I63.9999"));
  CHECK(icd_levels("A16.202") == IcdLevels{"A", "A16", "A16.202"});
  CHECK_THROWS_AS(icd_levels("x"), Error);
}

TEST_CASE("icd levels agree with string prefixes on random codes") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    auto code = random_icd_code(rng);
    auto l = icd_levels(code);
    CHECK(l.coarse == code.substr(0, 1));
    CHECK(l.medium == code.substr(0, 3));
    CHECK(l.fine == code);
  }
}

TEST_CASE("cascade matches the prefix oracle and is monotone") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 300; ++i) {
    std::vector<std::string> pred(rng() % 5), truth(1 + rng() % 4);
    for (auto& c : pred) c = random_icd_code(rng);
    for (auto& c : truth) c = random_icd_code(rng);
    auto got = cascade_from_codes(pred, truth);
    auto want = cascade_oracle(pred, truth);
    CHECK(got.coarse == doctest::Approx(want.coarse));
    CHECK(got.medium == doctest::Approx(want.medium));
    CHECK(got.fine == doctest::Approx(want.fine));
    CHECK(got.coarse >= got.medium);
    CHECK(got.medium >= got.fine);
  }
  CHECK(cascade_from_codes({"I63.9"}, {}).empty_truth);
  auto r = cascade_from_codes({"I63.9", "I10"}, {"I63.0", "I10", "E11.9"});
  CHECK(r.coarse == doctest::Approx(2.0 / 3));
  CHECK(r.medium == doctest::Approx(2.0 / 3));
  CHECK(r.fine == doctest::Approx(1.0 / 3));
}

TEST_CASE("max matching equals brute force") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 300; ++i) {
    auto pred = random_code_sets(rng, rng() % 5);
    auto truth = random_code_sets(rng, rng() % 5);
    auto r = sema_from_code_sets(pred, truth);
    CHECK(r.tp == brute_force_matching(pred, truth));
    CHECK(r.tp + r.fp == pred.size());
    CHECK(r.tp + r.fn == truth.size());
  }
  // A greedy first-fit choice would match only one here.
  std::vector<std::set<std::string>> pred = {{"A", "B"}, {"A"}};
  std::vector<std::set<std::string>> truth = {{"A"}, {"B"}};
  CHECK(sema_from_code_sets(pred, truth).tp == 2);
  std::vector<std::vector<std::size_t>> adj = {{0, 1}, {0}};
  CHECK(max_bipartite_matching(adj, 2) == 2);
}

TEST_CASE("sema precision, recall and f1") {
  auto r = sema_from_code_sets({{"A"}, {"B"}, {"Z"}}, {{"A"}, {"B"}, {"C"}, {"D"}});
  CHECK(r.precision == doctest::Approx(200.0 / 3));
  CHECK(r.recall == doctest::Approx(50.0));
  CHECK(r.f1 == doctest::Approx(oracle_f1(200.0 / 3, 50.0)));
  auto e = sema_from_code_sets({}, {{"A"}});
  CHECK(e.precision == 0);
  CHECK(e.f1 == 0);
  CHECK(harmonic_f1(0, 0) == 0);
}

TEST_CASE("entity extraction") {
  DiagnosticReport r;
  r.diagnostic_results = {"(1) Cerebral infarction; Hypertension.", "hypertension", "肺结核、2型糖尿病。", "  "};
  CHECK(extract_disease_entities(r) ==
        std::vector<std::string>{"Cerebral infarction", "Hypertension", "肺结核", "2型糖尿病"});
}

TEST_CASE("icd terms and index") {
  auto terms = load_icd_terms(demo_corpus() / "icd10.csv");
  CHECK(terms.size() == 25);
  HashingEmbedder e(256, 42);
  IcdIndex index(terms, e);
  CHECK(index.top1("Cerebral infarction") == "I63.9");
  CHECK(index.top1("Essential hypertension") == "I10");
  auto top = index.top_k("Pulmonary tuberculosis", 3);
  CHECK(top.size() == 3);
  CHECK(index.top_k("x", 100).size() == terms.size());

  TempDir dir;
  spit(dir / "dup.csv", "code,title\nI10,Hypertension\nI10,Again\n");
  CHECK_THROWS_AS(load_icd_terms(dir / "dup.csv"), Error);
  spit(dir / "bad.csv", "code,title\nnot-a-code,Something\n");
  CHECK_THROWS_AS(load_icd_terms(dir / "bad.csv"), Error);
}

TEST_CASE("sema and cascade through the index") {
  HashingEmbedder e(256, 42);
  IcdIndex index(load_icd_terms(demo_corpus() / "icd10.csv"), e);
  auto same = sema_case({"Cerebral infarction", "Hypertension"}, {"Cerebral infarction", "Hypertension"}, index);
  CHECK(same.f1 == doctest::Approx(100.0));
  auto c = cascade_case({"Cerebral infarction"}, {"Cerebral infarction", "Hypertension"}, index);
  CHECK(c.fine == doctest::Approx(0.5));
  CHECK(c.coarse >= c.medium);
}

TEST_CASE("hde aggregation") {
  std::vector<HdeScore> s = {{{2, 3, 4, 1, 2}}, {{4, 3, 2, 1, 2}}};
  auto row = aggregate_hde(s);
  CHECK(row.section_means == std::array<double, 5>{3, 3, 3, 1, 2});
  CHECK(row.avg == doctest::Approx(12.0 / 5));
  double var = 0;
  for (double m : row.section_means) var += (m - 2.4) * (m - 2.4);
  CHECK(row.std == doctest::Approx(std::sqrt(var / 5)));
  CHECK(s[0].avg() == doctest::Approx(2.4));
  CHECK_THROWS_AS(aggregate_hde({}), Error);
}

TEST_CASE("icd aggregation") {
  SemaResult a;
  a.entity_count = 2;
  a.precision = 50;
  a.recall = 100;
  SemaResult b;
  b.entity_count = 4;
  b.precision = 100;
  b.recall = 50;
  CascadeResult ca{1.0, 0.5, 0.5, false};
  CascadeResult cb{0, 0, 0, true};
  auto row = aggregate_icd({a, b}, {ca, cb});
  CHECK(row.entity_count == doctest::Approx(3));
  CHECK(row.precision == doctest::Approx(75));
  CHECK(row.recall == doctest::Approx(75));
  CHECK(row.f1 == doctest::Approx(75));
  CHECK(row.coarse == doctest::Approx(100));
  CHECK(row.fine == doctest::Approx(50));
}

TEST_CASE("judge scores through the judge binding") {
  auto p = std::make_shared<ScriptedProvider>();
  p->register_reply("j", "expert", "judge", 0, "no scores here", 0);
  p->register_reply("j", "expert", "judge", 0,
                    "#Symptom# 3\n#Medical Examination# 3\n#Diagnostic Results# 4\n#Diagnostic Rationales# 2\n"
                    "#Treatment Plan# 3",
                    1);
  auto b = Backends::scripted(p);
  auto rec = make_record("J1", "Neurology", "headache", {"Migraine"});
  DiagnosticReport r;
  r.diagnostic_results = {"Migraine"};
  auto s = judge_hde(r, rec, b, PromptCatalog::builtin(), Language::en, CallTag{"j", "", "", "", 0, 0});
  CHECK(s.scores == std::array<int, 5>{3, 3, 4, 2, 3});
  CHECK(p->requests()[0].history.at(0).content.find("Migraine") != std::string::npos);
}
