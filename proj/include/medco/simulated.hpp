#pragma once

#include <memory>
#include <string>
#include <vector>

#include "medco/agents.hpp"
#include "medco/backends.hpp"
#include "medco/records.hpp"

namespace medco {

/// Deterministic rule-based stand-in for every role, used as the scripted
/// provider's fallback so full runs work offline. Replies are derived from the
/// request purpose, the conversation so far, and the corpus record named in
/// the call tag.
///
/// The simulated student only ever names the first truth disease on its own;
/// further diseases enter its diagnosis only through recalled memory, so
/// strategies and retrieval ranges produce measurable differences.
class SimulatedClinic {
 public:
  SimulatedClinic(std::vector<MedicalRecord> corpus, Language lang);

  std::string respond(const ChatRequest& request) const;

  const MedicalRecord* record(const std::string& patient_id) const;

 private:
  std::string patient(const ChatRequest& r) const;
  std::string student(const ChatRequest& r) const;
  std::string radiologist(const ChatRequest& r) const;
  std::string summarize(const ChatRequest& r) const;
  std::string assess(const ChatRequest& r) const;
  std::string knowledge(const ChatRequest& r) const;
  std::string inquire(const ChatRequest& r, bool patient_target) const;
  std::string discussion(const ChatRequest& r) const;
  std::string judge(const ChatRequest& r) const;
  std::string classify(const ChatRequest& r) const;
  std::string vision_report(const ChatRequest& r, bool radiology) const;
  std::string extract(const ChatRequest& r) const;

  std::vector<MedicalRecord> corpus_;
  Language lang_;
};

/// Scripted provider whose fallback is a SimulatedClinic over the corpus.
std::shared_ptr<ScriptedProvider> make_simulated_provider(std::vector<MedicalRecord> corpus, Language lang);

}  // namespace medco
