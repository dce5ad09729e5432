#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medco/agents.hpp"

namespace medco {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::string now() = 0;  // ISO-8601 UTC
};

class SystemClock : public Clock {
 public:
  std::string now() override;
};

/// Deterministic timestamps: a fixed epoch plus one second per call.
class LogicalClock : public Clock {
 public:
  std::string now() override;

 private:
  std::atomic<long long> tick_{0};
};

struct TranscriptLine {
  std::string session_id;
  Message message;
  std::string timestamp;

  bool operator==(const TranscriptLine&) const = default;
};

void to_json(nlohmann::json& j, const TranscriptLine& l);
void from_json(const nlohmann::json& j, TranscriptLine& l);

/// Writes one JSON object per line.
void write_transcript(const std::filesystem::path& path, const std::string& session_id,
                      const std::vector<Message>& messages, Clock& clock);
std::vector<TranscriptLine> read_transcript(const std::filesystem::path& path);

struct SessionMetadata {
  std::string session_id;
  std::string patient_id;
  std::string scenario;
  std::string strategy;
  double retrieval_range = 0;
  std::string config_hash;
  std::string language;
  std::vector<std::string> phases;
  bool partial = false;
  std::string outcome = "done";  // done | aborted
  std::string error;
};

void to_json(nlohmann::json& j, const SessionMetadata& m);
void from_json(const nlohmann::json& j, SessionMetadata& m);

void write_metadata(const std::filesystem::path& path, const SessionMetadata& meta);
SessionMetadata read_metadata(const std::filesystem::path& path);

}  // namespace medco
