#include "medco/records.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "medco/error.hpp"
#include "medco/text.hpp"

namespace medco {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(ImageKind kind) {
  switch (kind) {
    case ImageKind::radiological: return "radiological";
    case ImageKind::report_photo: return "report_photo";
    case ImageKind::other: return "other";
    case ImageKind::unknown: return "unknown";
  }
  return "unknown";
}

ImageKind image_kind_from_string(std::string_view s) {
  if (s == "radiological") return ImageKind::radiological;
  if (s == "report_photo") return ImageKind::report_photo;
  if (s == "other") return ImageKind::other;
  if (s == "unknown" || s.empty()) return ImageKind::unknown;
  throw Error(ErrorCode::format, fmt::format("unknown image kind '{}'", s));
}

std::vector<std::string> MedicalRecord::truth_symptoms() const {
  std::vector<std::string> out;
  auto cc = text::trim_copy(basic_info.chief_complaint);
  if (!cc.empty()) out.push_back(std::move(cc));
  return out;
}

void to_json(json& j, const MedicalRecord& r) {
  json attachments = json::array();
  for (const auto& a : r.examination.attachments) {
    json ja = {{"uri", a.uri}, {"declared_kind", to_string(a.declared_kind)}};
    if (a.cached_interpretation) ja["cached_interpretation"] = *a.cached_interpretation;
    attachments.push_back(std::move(ja));
  }
  j = json{
      {"patient_id", r.patient_id},
      {"department", r.department},
      {"basic_info",
       {{"chief_complaint", r.basic_info.chief_complaint},
        {"present_illness", r.basic_info.present_illness},
        {"past_history", r.basic_info.past_history},
        {"personal_history", r.basic_info.personal_history},
        {"personality", r.basic_info.personality}}},
      {"examination",
       {{"physical_exam", r.examination.physical_exam},
        {"auxiliary_exams", r.examination.auxiliary_exams},
        {"attachments", std::move(attachments)}}},
      {"truth",
       {{"diseases", r.truth.diseases},
        {"rationale", r.truth.rationale},
        {"treatment_plan", r.truth.treatment_plan}}},
  };
}

namespace {

// Reads an optional string member; absent means empty, wrong type is a format error.
std::string get_string(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (!it->is_string()) throw Error(ErrorCode::format, fmt::format("{}.{}: expected string", path, key));
  return it->get<std::string>();
}

const json& get_object(const json& obj, const char* key, const std::string& path) {
  static const json empty = json::object();
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return empty;
  if (!it->is_object()) throw Error(ErrorCode::format, fmt::format("{}.{}: expected object", path, key));
  return *it;
}

}  // namespace

void from_json(const json& j, MedicalRecord& r) {
  if (!j.is_object()) throw Error(ErrorCode::format, "record: expected object");
  r.patient_id = get_string(j, "patient_id", "record");
  r.department = get_string(j, "department", "record");

  const json& bi = get_object(j, "basic_info", "record");
  r.basic_info.chief_complaint = get_string(bi, "chief_complaint", "basic_info");
  r.basic_info.present_illness = get_string(bi, "present_illness", "basic_info");
  r.basic_info.past_history = get_string(bi, "past_history", "basic_info");
  r.basic_info.personal_history = get_string(bi, "personal_history", "basic_info");
  r.basic_info.personality = get_string(bi, "personality", "basic_info");

  const json& ex = get_object(j, "examination", "record");
  r.examination.physical_exam = get_string(ex, "physical_exam", "examination");
  r.examination.auxiliary_exams = get_string(ex, "auxiliary_exams", "examination");
  r.examination.attachments.clear();
  if (auto it = ex.find("attachments"); it != ex.end() && !it->is_null()) {
    if (!it->is_array()) throw Error(ErrorCode::format, "examination.attachments: expected array");
    for (const auto& ja : *it) {
      ImageAttachment a;
      a.uri = get_string(ja, "uri", "examination.attachments[]");
      a.declared_kind = image_kind_from_string(get_string(ja, "declared_kind", "examination.attachments[]"));
      if (auto ci = ja.find("cached_interpretation"); ci != ja.end() && ci->is_string()) {
        a.cached_interpretation = ci->get<std::string>();
      }
      r.examination.attachments.push_back(std::move(a));
    }
  }

  const json& tr = get_object(j, "truth", "record");
  r.truth.diseases.clear();
  if (auto it = tr.find("diseases"); it != tr.end() && !it->is_null()) {
    if (!it->is_array()) throw Error(ErrorCode::format, "truth.diseases: expected array");
    for (const auto& d : *it) {
      if (!d.is_string()) throw Error(ErrorCode::format, "truth.diseases[]: expected string");
      r.truth.diseases.push_back(d.get<std::string>());
    }
  }
  r.truth.rationale = get_string(tr, "rationale", "truth");
  r.truth.treatment_plan = get_string(tr, "treatment_plan", "truth");
}

std::string Violation::describe() const {
  if (patient_id.empty()) return fmt::format("{}: {}", field, message);
  return fmt::format("{}: {}: {}", patient_id, field, message);
}

std::vector<Violation> validate_record(const MedicalRecord& r) {
  std::vector<Violation> out;
  auto add = [&](std::string field, std::string message) {
    out.push_back({r.patient_id, std::move(field), std::move(message)});
  };
  if (text::trim(r.patient_id).empty()) add("patient_id", "patient_id empty");
  if (text::trim(r.department).empty()) add("department", "department empty");
  if (text::trim(r.basic_info.chief_complaint).empty()) add("basic_info.chief_complaint", "chief_complaint empty");
  if (r.truth.diseases.empty()) add("truth.diseases", "truth.diseases empty");
  for (std::size_t i = 0; i < r.truth.diseases.size(); ++i) {
    if (text::trim(r.truth.diseases[i]).empty()) add(fmt::format("truth.diseases[{}]", i), "disease name empty");
  }
  for (std::size_t i = 0; i < r.examination.attachments.size(); ++i) {
    if (text::trim(r.examination.attachments[i].uri).empty()) {
      add(fmt::format("examination.attachments[{}].uri", i), "uri empty");
    }
  }
  return out;
}

std::vector<Violation> validate_corpus(const std::vector<MedicalRecord>& corpus) {
  std::vector<Violation> out;
  std::set<std::string> seen;
  for (const auto& r : corpus) {
    auto v = validate_record(r);
    out.insert(out.end(), v.begin(), v.end());
    if (!r.patient_id.empty() && !seen.insert(r.patient_id).second) {
      out.push_back({r.patient_id, "patient_id", "duplicate patient_id in corpus"});
    }
  }
  return out;
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot read {}", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MedicalRecord parse_record(const std::string& doc, std::size_t index, const std::string& origin) {
  json j;
  try {
    j = json::parse(doc);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::format, fmt::format("record {} ({}): malformed document: {}", index, origin, e.what()));
  }
  try {
    return j.get<MedicalRecord>();
  } catch (const Error& e) {
    throw Error(ErrorCode::format, fmt::format("record {} ({}): {}", index, origin, e.what()));
  }
}

void check_loaded(const std::vector<MedicalRecord>& records) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto v = validate_record(records[i]);
    if (!v.empty()) {
      std::vector<std::string> parts;
      for (const auto& x : v) parts.push_back(x.describe());
      throw Error(ErrorCode::validation, fmt::format("record {}: {}", i, fmt::join(parts, "; ")));
    }
    if (!seen.insert(records[i].patient_id).second) {
      throw Error(ErrorCode::validation,
                  fmt::format("record {}: {}: duplicate patient_id in corpus", i, records[i].patient_id));
    }
  }
}

}  // namespace

std::vector<MedicalRecord> load_corpus(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw Error(ErrorCode::io, fmt::format("corpus path {} does not exist", path.string()));

  std::vector<MedicalRecord> records;
  if (fs::is_directory(path)) {
    fs::path cases = fs::is_directory(path / "cases") ? path / "cases" : path;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(cases)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (std::size_t i = 0; i < files.size(); ++i) {
      records.push_back(parse_record(read_file(files[i]), i, files[i].filename().string()));
    }
  } else {
    std::string content = read_file(path);
    if (path.extension() == ".json") {
      if (text::trim(content).empty()) return records;
      json arr;
      try {
        arr = json::parse(content);
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::format, fmt::format("{}: malformed document: {}", path.string(), e.what()));
      }
      if (!arr.is_array()) throw Error(ErrorCode::format, fmt::format("{}: expected an array of records", path.string()));
      for (std::size_t i = 0; i < arr.size(); ++i) records.push_back(parse_record(arr[i].dump(), i, path.filename().string()));
    } else {
      std::istringstream lines(content);
      std::string line;
      std::size_t index = 0;
      while (std::getline(lines, line)) {
        if (text::trim(line).empty()) continue;
        records.push_back(parse_record(line, index++, path.filename().string()));
      }
    }
  }
  check_loaded(records);
  return records;
}

void save_corpus(const std::vector<MedicalRecord>& corpus, const fs::path& dir) {
  fs::create_directories(dir / "cases");
  for (const auto& r : corpus) {
    std::ofstream out(dir / "cases" / (r.patient_id + ".json"), std::ios::binary);
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write case {}", r.patient_id));
    out << json(r).dump(2) << '\n';
  }
}

fs::path corpus_root(const fs::path& corpus_path) {
  return fs::is_directory(corpus_path) ? corpus_path : corpus_path.parent_path();
}

const MedicalRecord* find_record(const std::vector<MedicalRecord>& corpus, std::string_view id) {
  for (const auto& r : corpus) {
    if (r.patient_id == id) return &r;
  }
  return nullptr;
}

void to_json(json& j, const DatasetSplit& s) { j = json{{"train", s.train}, {"test", s.test}}; }

void from_json(const json& j, DatasetSplit& s) {
  s.train = j.at("train").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
}

double SplitPolicy::fraction_for(const std::string& department) const {
  auto it = per_department.find(department);
  return it == per_department.end() ? default_fraction : it->second;
}

DatasetSplit split_dataset(const std::vector<MedicalRecord>& corpus, std::uint64_t seed, const SplitPolicy& policy) {
  if (corpus.empty()) throw Error(ErrorCode::invalid_argument, "cannot split an empty corpus");
  auto check = [](double f) {
    if (!(f >= 0.0 && f <= 1.0)) throw Error(ErrorCode::invalid_argument, fmt::format("train fraction {} outside [0,1]", f));
  };
  check(policy.default_fraction);
  for (const auto& [dept, f] : policy.per_department) check(f);

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::string>> by_dept;
  for (const auto& r : corpus) {
    auto [it, inserted] = by_dept.try_emplace(r.department);
    if (inserted) order.push_back(r.department);
    it->second.push_back(r.patient_id);
  }

  DatasetSplit split;
  for (const auto& dept : order) {
    auto ids = by_dept[dept];
    std::mt19937_64 rng(seed ^ text::fnv1a64(dept));
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(ids[i - 1], ids[j]);
    }
    auto n_train = static_cast<std::size_t>(std::floor(policy.fraction_for(dept) * static_cast<double>(ids.size()) + 1e-9));
    split.train.insert(split.train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  }
  return split;
}

DatasetSplit split_dataset(const std::vector<MedicalRecord>& corpus, std::uint64_t seed, double train_fraction) {
  return split_dataset(corpus, seed, SplitPolicy{train_fraction, {}});
}

std::vector<MedicalRecord> select_records(const std::vector<MedicalRecord>& corpus, const std::vector<std::string>& ids) {
  std::vector<MedicalRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const MedicalRecord* r = find_record(corpus, id);
    if (!r) throw Error(ErrorCode::not_found, fmt::format("unknown patient_id '{}'", id));
    out.push_back(*r);
  }
  return out;
}

}  // namespace medco
