#include "medco/transcript.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include <fmt/format.h>

#include "medco/error.hpp"

namespace medco {

using nlohmann::json;

namespace {

std::string format_utc(std::time_t secs, int millis) {
  std::tm tm{};
  gmtime_r(&secs, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                     tm.tm_hour, tm.tm_min, tm.tm_sec, millis);
}

}  // namespace

std::string SystemClock::now() {
  auto t = std::chrono::system_clock::now();
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
  return format_utc(static_cast<std::time_t>(ms / 1000), static_cast<int>(ms % 1000));
}

std::string LogicalClock::now() {
  constexpr std::time_t kEpoch = 1704067200;  // 2024-01-01T00:00:00Z
  return format_utc(kEpoch + static_cast<std::time_t>(tick_++), 0);
}

void to_json(json& j, const TranscriptLine& l) {
  j = json{{"session_id", l.session_id},
           {"turn", l.message.turn},
           {"speaker", to_string(l.message.speaker)},
           {"addressee", to_string(l.message.addressee)},
           {"content", l.message.content},
           {"terminal", l.message.terminal},
           {"timestamp", l.timestamp}};
}

void from_json(const json& j, TranscriptLine& l) {
  l.session_id = j.at("session_id").get<std::string>();
  l.message.turn = j.at("turn").get<int>();
  l.message.speaker = role_from_string(j.at("speaker").get<std::string>());
  l.message.addressee = addressee_from_string(j.at("addressee").get<std::string>());
  l.message.content = j.at("content").get<std::string>();
  l.message.terminal = j.value("terminal", false);
  l.timestamp = j.value("timestamp", "");
}

void write_transcript(const std::filesystem::path& path, const std::string& session_id,
                      const std::vector<Message>& messages, Clock& clock) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write transcript " + path.string());
  for (const auto& m : messages) out << json(TranscriptLine{session_id, m, clock.now()}).dump() << '\n';
}

std::vector<TranscriptLine> read_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read transcript " + path.string());
  std::vector<TranscriptLine> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<TranscriptLine>());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::format, fmt::format("{} line {}: {}", path.string(), n, e.what()));
    }
  }
  return out;
}

void to_json(json& j, const SessionMetadata& m) {
  j = json{{"session_id", m.session_id},   {"patient_id", m.patient_id},   {"scenario", m.scenario},
           {"strategy", m.strategy},       {"retrieval_range", m.retrieval_range},
           {"config_hash", m.config_hash}, {"language", m.language},       {"phases", m.phases},
           {"partial", m.partial},         {"outcome", m.outcome},         {"error", m.error}};
}

void from_json(const json& j, SessionMetadata& m) {
  m.session_id = j.value("session_id", "");
  m.patient_id = j.value("patient_id", "");
  m.scenario = j.value("scenario", "");
  m.strategy = j.value("strategy", "");
  m.retrieval_range = j.value("retrieval_range", 0.0);
  m.config_hash = j.value("config_hash", "");
  m.language = j.value("language", "");
  m.phases = j.value("phases", std::vector<std::string>{});
  m.partial = j.value("partial", false);
  m.outcome = j.value("outcome", "done");
  m.error = j.value("error", "");
}

void write_metadata(const std::filesystem::path& path, const SessionMetadata& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write session metadata " + path.string());
  out << json(meta).dump(2) << '\n';
}

SessionMetadata read_metadata(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read session metadata " + path.string());
  try {
    return json::parse(in).get<SessionMetadata>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace medco
