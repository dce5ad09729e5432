#include <doctest.h>

#include <set>

#include "medco/error.hpp"
#include "medco/records.hpp"
#include "support.hpp"

using namespace medco;
using namespace medco::testing;

TEST_CASE("demo corpus loads and validates") {
  auto corpus = load_corpus(demo_corpus());
  REQUIRE(corpus.size() == 4);
  CHECK(validate_corpus(corpus).empty());
  CHECK(corpus[0].patient_id == "N001");
  CHECK(corpus[0].truth.diseases == std::vector<std::string>{"Cerebral infarction", "Hypertension", "Hyperlipidemia"});
  CHECK(corpus[1].examination.attachments.size() == 2);
  CHECK(corpus[1].examination.attachments[1].declared_kind == ImageKind::report_photo);
}

TEST_CASE("save then load round-trips every field") {
  TempDir dir;
  auto corpus = load_corpus(demo_corpus());
  corpus[0].examination.attachments[0].cached_interpretation = "Examination type: CT";
  save_corpus(corpus, dir.path());
  CHECK(load_corpus(dir.path()) == corpus);
}

TEST_CASE("jsonl and json array inputs") {
  TempDir dir;
  auto a = make_record("A1", "Neurology", "headache", {"Migraine"});
  auto b = make_record("B1", "Neurology", "dizziness", {"Vertigo"});
  spit(dir / "c.jsonl", nlohmann::json(a).dump() + "\n\n" + nlohmann::json(b).dump() + "\n");
  auto from_lines = load_corpus(dir / "c.jsonl");
  REQUIRE(from_lines.size() == 2);
  CHECK(from_lines[1] == b);
  spit(dir / "c.json", nlohmann::json::array({a, b}).dump());
  CHECK(load_corpus(dir / "c.json") == from_lines);
}

TEST_CASE("invalid records are reported with their field") {
  auto r = make_record("X", "Neurology", "  ", {});
  auto v = validate_record(r);
  std::set<std::string> fields;
  for (const auto& x : v) fields.insert(x.field);
  CHECK(fields.count("basic_info.chief_complaint"));
  CHECK(fields.count("truth.diseases"));

  TempDir dir;
  spit(dir / "bad.jsonl", nlohmann::json(make_record("ok", "N", "c", {"d"})).dump() + "\n" +
                              nlohmann::json(r).dump() + "\n");
  try {
    load_corpus(dir / "bad.jsonl");
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::validation);
    CHECK(std::string(e.what()).find("truth.diseases") != std::string::npos);
  }
}

TEST_CASE("malformed json is a format error") {
  TempDir dir;
  spit(dir / "x.jsonl", "{not json}\n");
  try {
    load_corpus(dir / "x.jsonl");
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::format);
  }
}

TEST_CASE("duplicate patient ids are a corpus violation") {
  std::vector<MedicalRecord> c{make_record("A", "N", "c", {"d"}), make_record("A", "N", "c", {"d"})};
  auto v = validate_corpus(c);
  REQUIRE(v.size() == 1);
  CHECK(v[0].field == "patient_id");
}

TEST_CASE("department split of 506 cases gives 259/247") {
  auto corpus = synthetic_corpus_506();
  REQUIRE(corpus.size() == 506);
  SplitPolicy policy{0.5, {{"Internal Medicine", 29.0 / 46.0}}};
  auto split = split_dataset(corpus, 42, policy);
  CHECK(split.train.size() == 259);
  CHECK(split.test.size() == 247);

  std::set<std::string> all(split.train.begin(), split.train.end());
  all.insert(split.test.begin(), split.test.end());
  CHECK(all.size() == 506);
  CHECK(split_dataset(corpus, 42, policy) == split);
  CHECK(split_dataset(corpus, 43, policy) != split);
}

TEST_CASE("split keeps each department's share") {
  auto corpus = neurology_cases(16, "N", 1);
  auto more = neurology_cases(16, "M", 2);
  for (auto& r : more) r.department = "Cardiology";
  corpus.insert(corpus.end(), more.begin(), more.end());
  auto split = split_dataset(corpus, 7, 0.5);
  std::size_t neuro = 0;
  for (const auto& id : split.train) neuro += id[0] == 'N';
  CHECK(neuro == 8);
  CHECK(split.train.size() == 16);
  CHECK_THROWS_AS(split_dataset(corpus, 7, 1.5), Error);
  CHECK_THROWS_AS(split_dataset({}, 7, 0.5), Error);
}

TEST_CASE("select_records rejects unknown ids") {
  auto corpus = load_corpus(demo_corpus());
  CHECK(select_records(corpus, {"R002", "N001"})[0].patient_id == "R002");
  CHECK_THROWS_AS(select_records(corpus, {"nope"}), Error);
}

TEST_CASE("truth symptoms are the chief complaint") {
  auto r = make_record("A", "N", "  sudden headache ", {"d"});
  CHECK(r.truth_symptoms() == std::vector<std::string>{"sudden headache"});
}
