#include "medco/tools.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "medco/structured.hpp"
#include "medco/text.hpp"

namespace medco {

using nlohmann::json;

std::string_view to_string(ImageClass c) {
  switch (c) {
    case ImageClass::radiological: return "radiological";
    case ImageClass::report_photo: return "report_photo";
    case ImageClass::none: return "none";
  }
  return "none";
}

namespace {

ImageClass image_class_from_string(std::string_view s) {
  if (s == "radiological") return ImageClass::radiological;
  if (s == "report_photo") return ImageClass::report_photo;
  if (s == "none") return ImageClass::none;
  throw Error(ErrorCode::format, fmt::format("unknown image class '{}'", s));
}

const Backends& backends_of(const ToolContext& ctx) {
  if (!ctx.backends) throw Error(ErrorCode::precondition, "tool context has no backends");
  return *ctx.backends;
}

const PromptCatalog& catalog_of(const ToolContext& ctx) {
  return ctx.catalog ? *ctx.catalog : PromptCatalog::builtin();
}

}  // namespace

// --- cache ------------------------------------------------------------------------

std::optional<InterpretationCache::Entry> InterpretationCache::get(const std::string& uri) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(uri);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void InterpretationCache::put(const std::string& uri, Entry entry) {
  std::lock_guard lock(mu_);
  entries_[uri] = std::move(entry);
}

std::size_t InterpretationCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

void InterpretationCache::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read interpretation cache " + path.string());
  std::map<std::string, Entry> loaded;
  try {
    json j = json::parse(in);
    for (const auto& [uri, e] : j.items()) {
      loaded[uri] = Entry{image_class_from_string(e.at("kind").get<std::string>()), e.at("text").get<std::string>()};
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, fmt::format("interpretation cache {}: {}", path.string(), e.what()));
  }
  std::lock_guard lock(mu_);
  for (auto& [uri, e] : loaded) entries_[uri] = std::move(e);
}

void InterpretationCache::save(const std::filesystem::path& path) const {
  json j = json::object();
  {
    std::lock_guard lock(mu_);
    for (const auto& [uri, e] : entries_) j[uri] = {{"kind", to_string(e.kind)}, {"text", e.text}};
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write interpretation cache " + path.string());
  out << j.dump(2) << '\n';
}

// --- images -----------------------------------------------------------------------

ImagePayload load_image(const std::filesystem::path& root, const std::string& uri) {
  auto path = root / uri;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read image " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ImagePayload p;
  if (bytes.size() >= 8 && bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0) {
    p.mime = "image/png";
  } else if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
             static_cast<unsigned char>(bytes[1]) == 0xD8 && static_cast<unsigned char>(bytes[2]) == 0xFF) {
    p.mime = "image/jpeg";
  } else {
    throw Error(ErrorCode::format, "unsupported image container (PNG or JPEG expected): " + path.string());
  }
  p.base64 = text::base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  return p;
}

namespace {

ChatRequest vision_request(const std::string& prompt_id, const ImageAttachment& att, const ToolContext& ctx,
                           const std::string& purpose) {
  const auto& catalog = catalog_of(ctx);
  RoleSpec spec = RoleSpec::from_catalog(catalog, Role::radiologist, prompt_id, ctx.language, "vision");
  ImagePayload image = load_image(ctx.corpus_root, att.uri);
  ChatRequest req;
  req.system = render_system_prompt(spec, nullptr, {{"image_path", att.uri}});
  std::string user = spec.prompt().user ? render_user_prompt(spec, nullptr, {{"image_path", att.uri}}) : att.uri;
  req.history.push_back({"user", user, {image}});
  req.tag = CallTag{ctx.session_tag, ctx.patient_id, "radiologist", purpose, 0, 0};
  return req;
}

ImageClass parse_tool_choice(const std::string& reply) {
  std::string s = text::strip_whitespace(reply);
  std::string lower = text::ascii_lower(s);
  bool radiology = text::contains(lower, "#radiology#") || text::contains(s, "#影像报告#");
  bool vqa = text::contains(lower, "#reportvqa#") || text::contains(s, "#报告解读#");
  bool none = text::contains(lower, "#none#") || text::contains(s, "#无#");
  if (radiology + vqa + none != 1) throw ParseError("tool selection reply names no single tool", reply);
  if (radiology) return ImageClass::radiological;
  if (vqa) return ImageClass::report_photo;
  return ImageClass::none;
}

Interpretation run_vision_tool(const ImageAttachment& att, const ToolContext& ctx, ImageClass kind) {
  Interpretation out{att.uri, kind, {}, false};
  if (ctx.cache) {
    if (auto hit = ctx.cache->get(att.uri); hit && hit->kind == kind) {
      out.text = hit->text;
      out.flagged = report_section_cues(out.text, ctx.language) < 2;
      return out;
    }
  }
  if (att.cached_interpretation && !att.cached_interpretation->empty()) {
    out.text = *att.cached_interpretation;
  } else {
    bool radiology = kind == ImageClass::radiological;
    auto req = vision_request(radiology ? "tool_radiology" : "tool_report_vqa", att, ctx,
                              radiology ? "radiology" : "report_vqa");
    out.text = backends_of(ctx).chat("vision", req);
  }
  out.flagged = report_section_cues(out.text, ctx.language) < 2;
  if (ctx.cache) ctx.cache->put(att.uri, {kind, out.text});
  return out;
}

}  // namespace

ImageClass classify_image(const ImageAttachment& att, const ToolContext& ctx) {
  switch (att.declared_kind) {
    case ImageKind::radiological: return ImageClass::radiological;
    case ImageKind::report_photo: return ImageClass::report_photo;
    case ImageKind::other: return ImageClass::none;
    case ImageKind::unknown: break;
  }
  if (ctx.cache) {
    if (auto hit = ctx.cache->get(att.uri)) return hit->kind;
  }
  auto req = vision_request("tool_select", att, ctx, "classify");
  return structured_call<ImageClass>(backends_of(ctx), "vision", std::move(req), catalog_of(ctx), ctx.language,
                                     parse_tool_choice);
}

Interpretation radiology_report(const ImageAttachment& att, const ToolContext& ctx) {
  if (classify_image(att, ctx) != ImageClass::radiological) {
    throw Error(ErrorCode::precondition, "radiology_report needs a radiological image: " + att.uri);
  }
  return run_vision_tool(att, ctx, ImageClass::radiological);
}

Interpretation report_vqa(const ImageAttachment& att, const ToolContext& ctx) {
  if (classify_image(att, ctx) != ImageClass::report_photo) {
    throw Error(ErrorCode::precondition, "report_vqa needs a report photo: " + att.uri);
  }
  return run_vision_tool(att, ctx, ImageClass::report_photo);
}

std::vector<Interpretation> interpret_attachments(const MedicalRecord& record, const ToolContext& ctx) {
  std::vector<Interpretation> out;
  for (const auto& att : record.examination.attachments) {
    ImageClass kind = classify_image(att, ctx);
    if (kind == ImageClass::none) {
      if (ctx.cache && !ctx.cache->get(att.uri)) ctx.cache->put(att.uri, {ImageClass::none, {}});
      continue;
    }
    out.push_back(run_vision_tool(att, ctx, kind));
  }
  return out;
}

int report_section_cues(const std::string& report, Language lang) {
  static const std::vector<std::vector<std::string>> en = {
      {"type", "modality", "examination:"},
      {"technical", "technique", "image quality"},
      {"findings", "finding"},
      {"conclusion", "impression"},
  };
  static const std::vector<std::vector<std::string>> zh = {
      {"类型", "检查项目"}, {"技术", "图像质量"}, {"所见", "发现"}, {"结论", "诊断意见", "印象"}};
  std::string lower = text::ascii_lower(report);
  int count = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    bool hit = false;
    for (const auto& cue : en[i]) hit = hit || text::contains(lower, cue);
    for (const auto& cue : zh[i]) hit = hit || text::contains(report, cue);
    count += hit;
  }
  (void)lang;
  return count;
}

std::string radiologist_system_prompt(const MedicalRecord& record, const std::vector<Interpretation>& interpretations,
                                      const ToolContext& ctx) {
  RoleSpec spec = RoleSpec::from_catalog(catalog_of(ctx), Role::radiologist, "radiologist_exam", ctx.language,
                                         "radiologist");
  std::string imaging;
  for (const auto& i : interpretations) {
    if (!imaging.empty()) imaging += "\n";
    imaging += fmt::format("[{}] {}", i.uri, i.text);
  }
  if (imaging.empty()) imaging = ctx.language == Language::zh ? "无" : "None";
  std::map<std::string, std::string> extras;
  if (spec.declared_slots().count("imaging_report")) extras["imaging_report"] = imaging;
  return render_system_prompt(spec, &record, extras);
}

std::string normalize_examination_reply(const std::string& reply, Language lang) {
  const std::string fill = lang == Language::zh ? "无异常" : "No abnormalities detected";
  std::istringstream in(reply);
  std::string line;
  std::string out;
  bool first = true;
  while (std::getline(in, line)) {
    std::string_view t = text::trim(line);
    if (text::starts_with(t, "- ")) {
      std::string_view item = text::trim(t.substr(2));
      bool has_value = item.find(':') != std::string_view::npos || text::contains(item, "\xEF\xBC\x9A");
      if (!item.empty() && !has_value) {
        line = fmt::format(fmt::runtime(lang == Language::zh ? "- {}：{}" : "- {}: {}"), item, fill);
      }
    }
    if (!first) out += '\n';
    out += line;
    first = false;
  }
  return out;
}

std::string answer_examination_request(const std::string& request, const MedicalRecord& record,
                                       const std::vector<Interpretation>& interpretations, const ToolContext& ctx,
                                       std::vector<ChatTurn> history, int turn) {
  if (record.examination.physical_exam.empty() && record.examination.auxiliary_exams.empty() &&
      record.examination.attachments.empty()) {
    throw Error(ErrorCode::precondition, "record " + record.patient_id + " has no examination data");
  }
  ChatRequest req;
  req.system = radiologist_system_prompt(record, interpretations, ctx);
  req.history = std::move(history);
  req.history.push_back({"user", request, {}});
  req.tag = CallTag{ctx.session_tag, record.patient_id, "radiologist", "dialogue", turn, 0};
  return normalize_examination_reply(backends_of(ctx).chat("radiologist", req), ctx.language);
}

}  // namespace medco
