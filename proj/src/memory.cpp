#include "medco/memory.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "medco/text.hpp"

namespace medco {

using nlohmann::json;

void to_json(json& j, const FeedbackBundle& b) {
  j = json{{"suggestions", b.suggestions}, {"knowledge", json::object()}};
  for (const auto& [name, card] : b.knowledge) j["knowledge"][name] = card;
}

void from_json(const json& j, FeedbackBundle& b) {
  b.suggestions = j.at("suggestions").get<Suggestions>();
  b.knowledge.clear();
  const json knowledge = j.value("knowledge", json::object());
  for (const auto& [name, card] : knowledge.items()) {
    b.knowledge[name] = card.get<KnowledgeCard>();
  }
}

std::size_t visible_case_limit(double range, std::size_t n) {
  if (!(range >= 0.0 && range <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, fmt::format("retrieval range {} outside [0,1]", range));
  }
  auto limit = static_cast<std::size_t>(std::ceil(range * static_cast<double>(n) - 1e-9));
  return std::min(limit, n);
}

Memory::Memory(std::shared_ptr<EmbeddingProvider> embedder) : embedder_(std::move(embedder)) {
  if (!embedder_) throw Error(ErrorCode::invalid_argument, "memory needs an embedding provider");
}

void Memory::store_feedback(const std::string& patient_id, const std::vector<std::string>& truth_symptoms,
                            const std::vector<std::string>& truth_diseases, const FeedbackBundle& bundle) {
  if (patient_id.empty()) throw Error(ErrorCode::precondition, "store_feedback without a patient id");
  std::set<std::string> disease_set(truth_diseases.begin(), truth_diseases.end());
  std::set<std::string> knowledge_keys;
  for (const auto& [name, card] : bundle.knowledge) {
    knowledge_keys.insert(name);
    if (!card.valid()) throw Error(ErrorCode::precondition, "knowledge card for " + name + " is incomplete");
  }
  if (disease_set != knowledge_keys) {
    throw Error(ErrorCode::precondition,
                fmt::format("case {}: knowledge keys do not match the truth diseases", patient_id));
  }
  if (disease_set.empty() || disease_set.count("")) {
    throw Error(ErrorCode::precondition, fmt::format("case {}: empty disease name", patient_id));
  }

  std::vector<std::string> symptoms;
  for (const auto& s : truth_symptoms) {
    auto t = text::trim_copy(s);
    if (!t.empty() && std::find(symptoms.begin(), symptoms.end(), t) == symptoms.end()) symptoms.push_back(t);
  }
  std::vector<std::vector<float>> vectors;
  if (!symptoms.empty()) vectors = embedder_->embed(symptoms);
  if (vectors.size() != symptoms.size()) throw Error(ErrorCode::backend, "embedder returned a short batch");

  std::unique_lock lock(mu_);
  for (const auto& v : vectors) {
    if (state_.dimension == 0) state_.dimension = v.size();
    if (v.size() != state_.dimension) {
      throw Error(ErrorCode::backend, fmt::format("embedding dimension {} differs from the index ({})", v.size(),
                                                  state_.dimension));
    }
  }

  auto& c = state_.cases[patient_id];
  if (c.patient_id.empty()) {
    c.patient_id = patient_id;
    c.insertion_index = state_.cases.size() - 1;
  }
  c.suggestions = bundle.suggestions;

  for (const auto& name : truth_diseases) {
    auto [it, inserted] = state_.diseases.try_emplace(name);
    if (inserted) {
      it->second.name = name;
      it->second.insertion_index = state_.diseases.size() - 1;
    }
    it->second.card = bundle.knowledge.at(name);
    it->second.patient_id = patient_id;
  }

  for (auto it = state_.symptoms.begin(); it != state_.symptoms.end();) {
    bool stale = it->first.first == patient_id &&
                 std::find(symptoms.begin(), symptoms.end(), it->first.second) == symptoms.end();
    it = stale ? state_.symptoms.erase(it) : std::next(it);
  }
  std::vector<std::string> diseases;
  for (const auto& d : truth_diseases) {
    if (std::find(diseases.begin(), diseases.end(), d) == diseases.end()) diseases.push_back(d);
  }
  for (std::size_t i = 0; i < symptoms.size(); ++i) {
    auto [it, inserted] = state_.symptoms.try_emplace({patient_id, symptoms[i]});
    if (inserted) {
      it->second.text = symptoms[i];
      it->second.patient_id = patient_id;
      it->second.insertion_index = state_.next_symptom_index++;
    }
    it->second.diseases = diseases;
    it->second.vector = vectors[i];
  }
}

std::vector<std::string> Memory::visible_cases(double range) const {
  std::shared_lock lock(mu_);
  std::size_t limit = visible_case_limit(range, state_.cases.size());
  std::vector<const CaseEntry*> ordered;
  for (const auto& [_, c] : state_.cases) ordered.push_back(&c);
  std::sort(ordered.begin(), ordered.end(),
            [](const CaseEntry* a, const CaseEntry* b) { return a->insertion_index < b->insertion_index; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < limit; ++i) out.push_back(ordered[i]->patient_id);
  return out;
}

std::vector<RecallHit> Memory::recall_by_symptoms(const std::string& symptom_summary, std::size_t k,
                                                  double range) const {
  std::size_t limit;
  {
    std::shared_lock lock(mu_);
    limit = visible_case_limit(range, state_.cases.size());
    if (limit == 0 || k == 0 || state_.symptoms.empty()) return {};
  }
  auto query = embedder_->embed({symptom_summary}).at(0);

  std::shared_lock lock(mu_);
  limit = visible_case_limit(range, state_.cases.size());
  struct Candidate {
    double score;
    std::size_t case_index;
    const SymptomEntry* entry;
  };
  std::vector<Candidate> candidates;
  for (const auto& [key, entry] : state_.symptoms) {
    auto c = state_.cases.find(entry.patient_id);
    if (c == state_.cases.end() || c->second.insertion_index >= limit) continue;
    if (entry.vector.size() != query.size()) {
      throw Error(ErrorCode::backend, "query embedding dimension differs from the index");
    }
    double score = 0;
    for (std::size_t i = 0; i < query.size(); ++i) score += double(query[i]) * entry.vector[i];
    candidates.push_back({score, c->second.insertion_index, &entry});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.case_index != b.case_index) return a.case_index < b.case_index;
    return a.entry->text < b.entry->text;
  });

  std::vector<RecallHit> hits;
  std::set<std::string> seen;
  for (const auto& cand : candidates) {
    for (const auto& disease : cand.entry->diseases) {
      if (hits.size() >= k) return hits;
      if (!seen.insert(disease).second) continue;
      auto d = state_.diseases.find(disease);
      if (d == state_.diseases.end()) continue;
      RecallHit hit;
      hit.disease = disease;
      hit.card = d->second.card;
      hit.patient_id = cand.entry->patient_id;
      hit.suggestions = state_.cases.at(cand.entry->patient_id).suggestions;
      hit.score = cand.score;
      hits.push_back(std::move(hit));
    }
  }
  return hits;
}

std::size_t Memory::case_count() const {
  std::shared_lock lock(mu_);
  return state_.cases.size();
}

std::size_t Memory::disease_count() const {
  std::shared_lock lock(mu_);
  return state_.diseases.size();
}

std::size_t Memory::symptom_count() const {
  std::shared_lock lock(mu_);
  return state_.symptoms.size();
}

MemoryState Memory::snapshot() const {
  std::shared_lock lock(mu_);
  return state_;
}

std::optional<CaseEntry> Memory::find_case(const std::string& patient_id) const {
  std::shared_lock lock(mu_);
  auto it = state_.cases.find(patient_id);
  if (it == state_.cases.end()) return std::nullopt;
  return it->second;
}

std::optional<DiseaseEntry> Memory::find_disease(const std::string& name) const {
  std::shared_lock lock(mu_);
  auto it = state_.diseases.find(name);
  if (it == state_.diseases.end()) return std::nullopt;
  return it->second;
}

void Memory::clear() {
  std::unique_lock lock(mu_);
  state_ = MemoryState{};
}

namespace {

std::string encode_vector(const std::vector<float>& v) {
  std::vector<std::uint8_t> bytes(v.size() * sizeof(float));
  std::memcpy(bytes.data(), v.data(), bytes.size());
  return text::base64_encode(bytes);
}

std::vector<float> decode_vector(const std::string& s, std::size_t dimension) {
  auto bytes = text::base64_decode(s);
  if (bytes.size() != dimension * sizeof(float)) {
    throw Error(ErrorCode::format, fmt::format("vector has {} bytes, expected {}", bytes.size(),
                                               dimension * sizeof(float)));
  }
  std::vector<float> v(dimension);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

}  // namespace

void Memory::persist(const std::filesystem::path& path) const {
  json j;
  {
    std::shared_lock lock(mu_);
    j = json{{"format", "medco-memory"},
             {"version", kFormatVersion},
             {"dimension", state_.dimension},
             {"next_symptom_index", state_.next_symptom_index},
             {"cases", json::array()},
             {"diseases", json::array()},
             {"symptoms", json::array()}};
    for (const auto& [_, c] : state_.cases) {
      j["cases"].push_back(
          {{"patient_id", c.patient_id}, {"insertion_index", c.insertion_index}, {"suggestions", c.suggestions}});
    }
    for (const auto& [_, d] : state_.diseases) {
      j["diseases"].push_back({{"name", d.name},
                               {"insertion_index", d.insertion_index},
                               {"patient_id", d.patient_id},
                               {"card", d.card}});
    }
    for (const auto& [_, s] : state_.symptoms) {
      j["symptoms"].push_back({{"text", s.text},
                               {"patient_id", s.patient_id},
                               {"diseases", s.diseases},
                               {"insertion_index", s.insertion_index},
                               {"vector", encode_vector(s.vector)}});
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write memory snapshot " + path.string());
    out << j.dump(1) << '\n';
    if (!out) throw Error(ErrorCode::io, "failed writing memory snapshot " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

void Memory::restore(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read memory snapshot " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  std::string content = buf.str();
  if (text::trim(content).empty()) {
    clear();
    return;
  }

  MemoryState next;
  try {
    json j = json::parse(content);
    if (!j.is_object() || j.value("format", "") != "medco-memory") {
      throw Error(ErrorCode::format, "not a memory snapshot: " + path.string());
    }
    int version = j.at("version").get<int>();
    if (version != kFormatVersion) {
      throw Error(ErrorCode::version_mismatch,
                  fmt::format("memory snapshot version {} (expected {})", version, kFormatVersion));
    }
    next.dimension = j.at("dimension").get<std::size_t>();
    next.next_symptom_index = j.at("next_symptom_index").get<std::size_t>();
    for (const auto& c : j.at("cases")) {
      CaseEntry e{c.at("patient_id").get<std::string>(), c.at("suggestions").get<Suggestions>(),
                  c.at("insertion_index").get<std::size_t>()};
      next.cases[e.patient_id] = e;
    }
    for (const auto& d : j.at("diseases")) {
      DiseaseEntry e{d.at("name").get<std::string>(), d.at("card").get<KnowledgeCard>(),
                     d.at("patient_id").get<std::string>(), d.at("insertion_index").get<std::size_t>()};
      next.diseases[e.name] = e;
    }
    for (const auto& s : j.at("symptoms")) {
      SymptomEntry e;
      e.text = s.at("text").get<std::string>();
      e.patient_id = s.at("patient_id").get<std::string>();
      e.diseases = s.at("diseases").get<std::vector<std::string>>();
      e.insertion_index = s.at("insertion_index").get<std::size_t>();
      e.vector = decode_vector(s.at("vector").get<std::string>(), next.dimension);
      if (!next.cases.count(e.patient_id)) {
        throw Error(ErrorCode::format, "symptom entry references unknown case " + e.patient_id);
      }
      next.symptoms[{e.patient_id, e.text}] = std::move(e);
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::format, fmt::format("corrupt memory snapshot {}: {}", path.string(), e.what()));
  }
  std::unique_lock lock(mu_);
  state_ = std::move(next);
}

}  // namespace medco
