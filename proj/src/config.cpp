#include "medco/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "medco/error.hpp"
#include "medco/simulated.hpp"

namespace medco {

using nlohmann::json;

const std::vector<std::string>& binding_names() {
  static const std::vector<std::string> names = {"patient", "student", "radiologist", "expert",
                                                 "chair",   "judge",   "vision",      "extract"};
  return names;
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  BackendProfile sim;
  sim.name = "simulated";
  sim.kind = "scripted";
  BackendProfile embed;
  embed.name = "hashing";
  embed.kind = "hashing";
  embed.dimension = 256;
  c.profiles = {sim, embed};
  for (const auto& b : binding_names()) c.bindings[b] = "simulated";
  c.embedding = "hashing";
  return c;
}

const BackendProfile& RunConfig::profile(const std::string& name) const {
  for (const auto& p : profiles) {
    if (p.name == name) return p;
  }
  throw Error(ErrorCode::validation, fmt::format("unknown backend profile '{}'", name));
}

void RunConfig::validate() const {
  std::set<std::string> seen;
  for (const auto& p : profiles) {
    p.validate();
    if (!seen.insert(p.name).second) {
      throw Error(ErrorCode::validation, fmt::format("duplicate backend profile '{}'", p.name));
    }
  }
  for (const auto& b : binding_names()) {
    auto it = bindings.find(b);
    if (it == bindings.end()) throw Error(ErrorCode::validation, fmt::format("binding '{}' is not configured", b));
  }
  for (const auto& [binding, name] : bindings) {
    const auto& p = profile(name);
    if (p.kind != "scripted" && p.kind != "live") {
      throw Error(ErrorCode::validation, fmt::format("binding '{}' needs a chat profile, got '{}'", binding, p.kind));
    }
  }
  const auto& e = profile(embedding);
  if (e.kind != "hashing" && e.kind != "live_embedding") {
    throw Error(ErrorCode::validation, fmt::format("embedding profile '{}' is not an embedder", embedding));
  }
  if (turn_cap <= 0) throw Error(ErrorCode::validation, "turn_cap must be positive");
  if (max_exam_hops <= 0) throw Error(ErrorCode::validation, "max_exam_hops must be positive");
  if (recall_k == 0) throw Error(ErrorCode::validation, "recall_k must be positive");
  if (sema_k == 0) throw Error(ErrorCode::validation, "sema_k must be positive");
  if (max_inflight == 0) throw Error(ErrorCode::validation, "max_inflight must be positive");
  auto check_fraction = [](double f) {
    if (!(f >= 0.0 && f <= 1.0)) throw Error(ErrorCode::validation, "split fraction outside [0,1]");
  };
  check_fraction(split.default_fraction);
  for (const auto& [_, f] : split.per_department) check_fraction(f);
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::io, "sha256 failed");
  }
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

std::string RunConfig::hash() const {
  json j = *this;
  return sha256_hex(j.dump()).substr(0, 16);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"language", std::string(to_string(c.language))},
           {"seed", c.seed},
           {"split", {{"default_fraction", c.split.default_fraction}, {"per_department", c.split.per_department}}},
           {"turn_cap", c.turn_cap},
           {"max_exam_hops", c.max_exam_hops},
           {"recall_k", c.recall_k},
           {"marker_mode", c.marker_mode == MarkerMode::exact ? "exact" : "lenient"},
           {"max_inflight", c.max_inflight},
           {"strict", c.strict},
           {"use_images", c.use_images},
           {"judged_extraction", c.judged_extraction},
           {"sema_k", c.sema_k},
           {"icd_terms", c.icd_terms},
           {"prompts_dir", c.prompts_dir},
           {"profiles", c.profiles},
           {"bindings", c.bindings},
           {"embedding", c.embedding}};
}

void from_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw Error(ErrorCode::format, "config must be a JSON object");
  RunConfig d = RunConfig::defaults();
  c = d;
  if (j.contains("language")) c.language = language_from_string(j.at("language").get<std::string>());
  c.seed = j.value("seed", d.seed);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split.default_fraction = s.value("default_fraction", d.split.default_fraction);
    c.split.per_department = s.value("per_department", std::map<std::string, double>{});
  }
  c.turn_cap = j.value("turn_cap", d.turn_cap);
  c.max_exam_hops = j.value("max_exam_hops", d.max_exam_hops);
  c.recall_k = j.value("recall_k", d.recall_k);
  if (j.contains("marker_mode")) {
    auto m = j.at("marker_mode").get<std::string>();
    if (m == "exact") {
      c.marker_mode = MarkerMode::exact;
    } else if (m == "lenient") {
      c.marker_mode = MarkerMode::lenient;
    } else {
      throw Error(ErrorCode::validation, fmt::format("unknown marker_mode '{}'", m));
    }
  }
  c.max_inflight = j.value("max_inflight", d.max_inflight);
  c.strict = j.value("strict", d.strict);
  c.use_images = j.value("use_images", d.use_images);
  c.judged_extraction = j.value("judged_extraction", d.judged_extraction);
  c.sema_k = j.value("sema_k", d.sema_k);
  c.icd_terms = j.value("icd_terms", d.icd_terms);
  c.prompts_dir = j.value("prompts_dir", d.prompts_dir);
  if (j.contains("profiles")) c.profiles = j.at("profiles").get<std::vector<BackendProfile>>();
  if (j.contains("bindings")) {
    for (const auto& [k, v] : j.at("bindings").items()) c.bindings[k] = v.get<std::string>();
  }
  c.embedding = j.value("embedding", d.embedding);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot read config {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, fmt::format("config {}: {}", path.string(), e.what()));
  }
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, fmt::format("config {}: {}", path.string(), e.what()));
  }
  c.validate();
  return c;
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, fmt::format("cannot write config {}", path.string()));
  out << json(config).dump(2) << "\n";
}

std::shared_ptr<Backends> make_backends(const RunConfig& config, const std::vector<MedicalRecord>& corpus) {
  config.validate();
  global_limiter().set_capacity(config.max_inflight);
  auto backends = std::make_shared<Backends>();
  std::shared_ptr<HttpTransport> transport;
  auto http = [&] {
    if (!transport) transport = make_http_transport();
    return transport;
  };

  std::set<std::string> used;
  for (const auto& [_, name] : config.bindings) used.insert(name);
  for (const auto& name : used) {
    const auto& p = config.profile(name);
    if (p.kind == "scripted") {
      auto provider = p.simulated_fallback ? make_simulated_provider(corpus, config.language)
                                           : std::make_shared<ScriptedProvider>();
      if (!p.fixtures.empty()) provider->load_fixtures(p.fixtures);
      backends->add_chat(p.name, provider);
    } else {
      backends->add_chat(p.name, std::make_shared<LiveChatClient>(p, http()));
    }
  }
  for (const auto& [binding, name] : config.bindings) backends->bind(binding, name);

  const auto& e = config.profile(config.embedding);
  if (e.kind == "hashing") {
    backends->set_embedder(std::make_shared<HashingEmbedder>(static_cast<std::size_t>(e.dimension), config.seed));
  } else {
    backends->set_embedder(std::make_shared<LiveEmbeddingClient>(e, http()));
  }
  return backends;
}

}  // namespace medco
