#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "medco/agents.hpp"
#include "medco/backends.hpp"
#include "medco/records.hpp"

namespace medco {

enum class ImageClass { radiological, report_photo, none };
std::string_view to_string(ImageClass c);

/// Image interpretations keyed by attachment URI; persisted next to the corpus.
class InterpretationCache {
 public:
  struct Entry {
    ImageClass kind = ImageClass::none;
    std::string text;

    bool operator==(const Entry&) const = default;
  };

  std::optional<Entry> get(const std::string& uri) const;
  void put(const std::string& uri, Entry entry);
  std::size_t size() const;

  void load(const std::filesystem::path& path);  // missing file is fine
  void save(const std::filesystem::path& path) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, Entry> entries_;
};

struct ToolContext {
  const Backends* backends = nullptr;
  const PromptCatalog* catalog = nullptr;
  Language language = Language::en;
  std::filesystem::path corpus_root;
  InterpretationCache* cache = nullptr;
  std::string session_tag = "tools";
  std::string patient_id;
};

/// Reads the image at root/uri and returns it base64-encoded. Throws io if
/// unreadable and format if it is neither PNG nor JPEG.
ImagePayload load_image(const std::filesystem::path& root, const std::string& uri);

/// declared_kind short-circuits; otherwise the vision profile is asked with
/// the tool-selection prompt.
ImageClass classify_image(const ImageAttachment& attachment, const ToolContext& ctx);

struct Interpretation {
  std::string uri;
  ImageClass kind = ImageClass::none;
  std::string text;
  bool flagged = false;  // fewer than two report section cues present
};

/// Imaging report for a radiological image. Served from the cache or the
/// attachment's cached interpretation when present.
Interpretation radiology_report(const ImageAttachment& attachment, const ToolContext& ctx);

/// Interpretation of a report photo; same caching.
Interpretation report_vqa(const ImageAttachment& attachment, const ToolContext& ctx);

/// Classifies every attachment and runs exactly one of radiology_report,
/// report_vqa, or nothing per attachment.
std::vector<Interpretation> interpret_attachments(const MedicalRecord& record, const ToolContext& ctx);

/// Number of the four report section cues (type, technique, findings,
/// conclusion) present in the text.
int report_section_cues(const std::string& text, Language lang);

/// Renders the radiologist system prompt with the record's examinations and
/// the image interpretations.
std::string radiologist_system_prompt(const MedicalRecord& record, const std::vector<Interpretation>& interpretations,
                                      const ToolContext& ctx);

/// Answers one examination request in the `#Examination Items#` format.
/// `history` is the radiologist's prior conversation (may be empty).
std::string answer_examination_request(const std::string& request, const MedicalRecord& record,
                                       const std::vector<Interpretation>& interpretations, const ToolContext& ctx,
                                       std::vector<ChatTurn> history = {}, int turn = 0);

/// Rewrites bare `- item` lines (no value) to `- item: No abnormalities detected`.
std::string normalize_examination_reply(const std::string& reply, Language lang);

}  // namespace medco
