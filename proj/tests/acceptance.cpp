// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>

#include "medco/agents.hpp"
#include "medco/memory.hpp"
#include "medco/metrics.hpp"
#include "medco/records.hpp"
#include "medco/tools.hpp"
#include "oracles.hpp"
#include "protocol.hpp"
#include "support.hpp"

using namespace medco;
using namespace medco::testing;
namespace fs = std::filesystem;

namespace {

struct Check {
  std::vector<std::string> problems;
  void expect(bool ok, const std::string& what) {
    if (!ok && problems.size() < 10) problems.push_back(what);
  }
};

int failures = 0;

void criterion(const std::string& name, const std::function<void(Check&)>& body) {
  Check c;
  try {
    body(c);
  } catch (const std::exception& e) {
    c.problems.push_back(std::string("exception: ") + e.what());
  }
  if (c.problems.empty()) {
    std::cout << "PASS " << name << "\n";
  } else {
    ++failures;
    std::cout << "FAIL " << name << "\n";
    for (const auto& p : c.problems) std::cout << "    " << p << "\n";
  }
  std::cout.flush();
}

void table_arithmetic(Check& c) {
  struct Row {
    std::array<double, 5> means;
    double avg;
  };
  const std::vector<Row> rows = {{{2.595, 1.785, 1.960, 1.879, 1.607}, 1.965},
                                 {{2.688, 1.980, 2.134, 1.931, 1.628}, 2.072},
                                 {{2.895, 2.113, 2.247, 2.243, 1.919}, 2.283}};
  for (const auto& r : rows) {
    double oracle = 0;
    for (double m : r.means) oracle += m;
    oracle /= 5;
    auto row = hde_row_from_means(r.means);
    c.expect(std::abs(row.avg - r.avg) <= 0.0005, fmt::format("avg {:.4f} vs {:.3f}", row.avg, r.avg));
    c.expect(std::abs(oracle - r.avg) <= 0.0005, fmt::format("oracle {:.4f} vs {:.3f}", oracle, r.avg));
  }
}

void f1_identity(Check& c) {
  struct Row {
    double p, r, f1;
  };
  const std::vector<Row> rows = {{47.20, 17.95, 26.01}, {51.45, 23.43, 32.20}, {55.13, 21.81, 31.25},
                                 {49.77, 22.31, 30.81}, {48.41, 23.12, 31.30}, {45.78, 29.72, 36.04},
                                 {21.74, 10.42, 14.08}, {40.00, 20.83, 27.40}, {42.31, 22.92, 29.73}};
  for (const auto& r : rows) {
    c.expect(std::abs(harmonic_f1(r.p, r.r) - r.f1) <= 0.01, fmt::format("f1({}, {}) != {}", r.p, r.r, r.f1));
    c.expect(std::abs(oracle_f1(r.p, r.r) - r.f1) <= 0.01, fmt::format("oracle f1({}, {}) != {}", r.p, r.r, r.f1));
  }
}

void cascade(Check& c) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 200; ++i) {
    auto code = random_icd_code(rng);
    auto l = icd_levels(code);
    c.expect(l.coarse == code.substr(0, 1) && l.medium == code.substr(0, 3) && l.fine == code,
             "levels of " + code);
  }
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::string> pred(rng() % 6), truth(1 + rng() % 5);
    for (auto& x : pred) x = random_icd_code(rng);
    for (auto& x : truth) x = random_icd_code(rng);
    auto got = cascade_from_codes(pred, truth);
    auto want = cascade_oracle(pred, truth);
    c.expect(got.coarse >= got.medium && got.medium >= got.fine, fmt::format("not monotone on case {}", i));
    c.expect(std::abs(got.coarse - want.coarse) < 1e-12 && std::abs(got.medium - want.medium) < 1e-12 &&
                 std::abs(got.fine - want.fine) < 1e-12,
             fmt::format("oracle mismatch on case {}", i));
  }
}

void sema_matching(Check& c) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 500; ++i) {
    auto pred = random_code_sets(rng, rng() % 5);
    auto truth = random_code_sets(rng, rng() % 5);
    auto r = sema_from_code_sets(pred, truth);
    auto tp = brute_force_matching(pred, truth);
    c.expect(r.tp == tp, fmt::format("instance {}: {} vs brute force {}", i, r.tp, tp));
  }
}

std::shared_ptr<Memory> filled_memory(std::size_t n, std::shared_ptr<EmbeddingProvider> e) {
  auto m = std::make_shared<Memory>(e);
  for (std::size_t i = 0; i < n; ++i) {
    std::string disease = fmt::format("Disease {}", i);
    FeedbackBundle b;
    for (auto sec : kReportSections) b.suggestions.at(sec) = "note";
    KnowledgeCard card;
    card.definition = {disease};
    card.pathogenesis = {"mechanism"};
    card.main_symptoms = {"symptom"};
    card.auxiliary_exam_methods = {"exam"};
    card.treatment_plans = {"treatment"};
    b.knowledge[disease] = card;
    m->store_feedback(fmt::format("P{:02}", i), {fmt::format("complaint number {} with marker{}", i, i * 31)},
                      {disease}, b);
  }
  return m;
}

void memory(Check& c) {
  auto e = std::make_shared<HashingEmbedder>(256, 42);
  auto m = filled_memory(16, e);
  for (const auto& [key, entry] : m->snapshot().symptoms) {
    auto hits = m->recall_by_symptoms(entry.text, 1, 1.0);
    c.expect(hits.size() == 1 && hits[0].patient_id == entry.patient_id, "self-retrieval for " + entry.patient_id);
  }
  const std::map<double, std::size_t> gating = {{0.0, 0}, {0.25, 4}, {0.5, 8}, {0.75, 12}, {1.0, 16}};
  for (auto [range, count] : gating) {
    c.expect(m->visible_cases(range).size() == count, fmt::format("visible at {}", range));
    c.expect(m->recall_by_symptoms("complaint", 16, range).size() == count, fmt::format("recall at {}", range));
  }
  TempDir dir;
  m->persist(dir / "m.json");
  Memory back(e);
  back.restore(dir / "m.json");
  c.expect(back.snapshot() == m->snapshot(), "restored state differs");
  auto a = m->snapshot().symptoms.begin()->second.vector;
  auto b = back.snapshot().symptoms.begin()->second.vector;
  c.expect(a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0,
           "vectors differ bitwise");
  back.persist(dir / "m2.json");
  c.expect(slurp(dir / "m.json") == slurp(dir / "m2.json"), "re-persisted bytes differ");
}

void protocol(Check& c) {
  for (auto lang : {Language::en, Language::zh}) {
    std::string body = lang == Language::en ? "please do a CT" : "请做CT";
    c.expect(parse_addressee(std::string(doctor_marker(lang)) + body, lang) == Addressee::doctor, "doctor marker");
    c.expect(parse_addressee(std::string(examiner_marker(lang)) + body, lang) == Addressee::examiner,
             "examiner marker");
    c.expect(parse_addressee(std::string(patient_marker(lang)) + body, lang) == Addressee::patient, "patient marker");
    c.expect(parse_addressee(body, lang) == Addressee::broadcast, "unmarked text");
    c.expect(strip_addressee(std::string(examiner_marker(lang)) + " " + body, lang) == body, "strip marker");
    c.expect(detect_terminal(body + " " + std::string(termination_token(lang)), lang), "termination token");
    c.expect(!detect_terminal(body, lang), "false termination");
  }
  c.expect(parse_addressee("<对检查员讲>CT", Language::en) == Addressee::broadcast, "cross-language marker");

  for (const char* name : {"en_stroke", "zh_tuberculosis"}) {
    auto g = run_golden(name);
    auto v = routing_violations(g.session.transcript, g.session.language);
    for (const auto& x : v) c.expect(false, std::string(name) + ": " + x);
    std::vector<Message> expected;
    for (const auto& m : g.golden["expected"]) expected.push_back(m.get<Message>());
    c.expect(g.session.transcript == expected, std::string(name) + ": transcript differs from golden");
  }

  c.expect(normalize_examination_reply("- Blood lipids", Language::en) == "- Blood lipids: No abnormalities detected",
           "en unknown exam item");
  c.expect(normalize_examination_reply("- 血钾", Language::zh) == "- 血钾：无异常", "zh unknown exam item");
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

int run(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

void e2e(Check& c) {
  auto start = std::chrono::steady_clock::now();
  TempDir a, b;
  std::string cli = MEDCO_CLI_PATH;
  std::string corpus = demo_corpus().string();
  for (const TempDir* d : {&a, &b}) {
    std::string base = fmt::format("'{}' -q --corpus '{}' --run-dir '{}' ", cli, corpus, (d->path() / "run").string());
    c.expect(run(base + "learn") == 0, "learn");
    for (const char* s : {"knowledge", "suggestion", "discussion"}) {
      c.expect(run(base + "practice --strategy " + s) == 0, std::string("practice ") + s);
    }
    c.expect(run(base + "eval") == 0, "eval");
  }
  auto ta = tree(a / "run");
  auto tb = tree(b / "run");
  c.expect(ta.count("results/hde.tsv") && ta.count("results/icd.tsv"), "result tables missing");
  c.expect(ta.size() == tb.size(), "file sets differ");
  for (const auto& [name, bytes] : ta) {
    auto it = tb.find(name);
    c.expect(it != tb.end() && it->second == bytes, "differs: " + name);
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.expect(secs < 60, fmt::format("took {:.1f}s", secs));
}

void split(Check& c) {
  auto corpus = synthetic_corpus_506();
  c.expect(corpus.size() == 506, "corpus size");
  SplitPolicy policy{0.5, {{"Internal Medicine", 29.0 / 46.0}}};
  auto s = split_dataset(corpus, 42, policy);
  c.expect(s.train.size() == 259, fmt::format("train {}", s.train.size()));
  c.expect(s.test.size() == 247, fmt::format("test {}", s.test.size()));
}

}  // namespace

int main() {
  criterion("table arithmetic: HDE averages 1.965 / 2.072 / 2.283", table_arithmetic);
  criterion("F1 harmonic identity on reported rows", f1_identity);
  criterion("CASCADE prefix oracle and monotonicity", cascade);
  criterion("SEMA maximum matching equals brute force", sema_matching);
  criterion("memory self-retrieval, range gating, bit-exact persistence", memory);
  criterion("dialogue protocol: markers, routing, unknown exam items", protocol);
  criterion("deterministic end-to-end demo run under 60s", e2e);
  criterion("506-case split gives 259/247", split);
  return failures == 0 ? 0 : 1;
}
