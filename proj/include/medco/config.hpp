#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medco/agents.hpp"
#include "medco/backends.hpp"
#include "medco/records.hpp"

namespace medco {

struct RunConfig {
  Language language = Language::en;
  std::uint64_t seed = 42;
  SplitPolicy split;
  int turn_cap = 20;
  int max_exam_hops = 3;
  std::size_t recall_k = 3;
  MarkerMode marker_mode = MarkerMode::exact;
  std::size_t max_inflight = 4;
  bool strict = false;  // abort a phase on the first failed case
  bool use_images = false;
  bool judged_extraction = false;
  std::size_t sema_k = 10;
  std::string icd_terms;    // CSV path; empty means <corpus>/icd10.csv
  std::string prompts_dir;  // optional overrides of the built-in prompts

  std::vector<BackendProfile> profiles;
  std::map<std::string, std::string> bindings;  // binding -> chat profile
  std::string embedding;                         // embedding profile name

  /// Offline defaults: one scripted profile with the simulated fallback for
  /// every binding and a 256-d hashing embedder.
  static RunConfig defaults();

  /// Throws validation on unknown profile references or bad ranges.
  void validate() const;

  const BackendProfile& profile(const std::string& name) const;

  /// First 16 hex digits of SHA-256 over the canonical JSON form.
  std::string hash() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Missing keys keep their defaults. Throws io or format.
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

/// Every binding name a complete configuration covers.
const std::vector<std::string>& binding_names();

/// Providers and embedder for a configuration. Scripted profiles with the
/// simulated fallback answer from the corpus; fixture files are loaded on top.
std::shared_ptr<Backends> make_backends(const RunConfig& config, const std::vector<MedicalRecord>& corpus);

std::string sha256_hex(const std::string& data);

}  // namespace medco
