#include "medco/agents.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "medco/error.hpp"
#include "medco/text.hpp"

namespace medco {

namespace detail {
const std::map<std::string, std::string>& builtin_prompt_files();
}

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Language lang) { return lang == Language::zh ? "zh" : "en"; }

Language language_from_string(std::string_view s) {
  if (s == "en") return Language::en;
  if (s == "zh") return Language::zh;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown language '{}'", s));
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::patient: return "patient";
    case Role::student: return "student";
    case Role::radiologist: return "radiologist";
    case Role::expert: return "expert";
    case Role::chair: return "chair";
  }
  return "patient";
}

Role role_from_string(std::string_view s) {
  if (s == "patient") return Role::patient;
  if (s == "student") return Role::student;
  if (s == "radiologist") return Role::radiologist;
  if (s == "expert") return Role::expert;
  if (s == "chair") return Role::chair;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown role '{}'", s));
}

std::string_view to_string(Addressee a) {
  switch (a) {
    case Addressee::doctor: return "doctor";
    case Addressee::examiner: return "examiner";
    case Addressee::patient: return "patient";
    case Addressee::broadcast: return "broadcast";
  }
  return "broadcast";
}

Addressee addressee_from_string(std::string_view s) {
  if (s == "doctor") return Addressee::doctor;
  if (s == "examiner") return Addressee::examiner;
  if (s == "patient") return Addressee::patient;
  if (s == "broadcast") return Addressee::broadcast;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown addressee '{}'", s));
}

void to_json(json& j, const Message& m) {
  j = json{{"turn", m.turn},
           {"speaker", to_string(m.speaker)},
           {"addressee", to_string(m.addressee)},
           {"content", m.content},
           {"terminal", m.terminal}};
}

void from_json(const json& j, Message& m) {
  m.turn = j.at("turn").get<int>();
  m.speaker = role_from_string(j.at("speaker").get<std::string>());
  m.addressee = addressee_from_string(j.at("addressee").get<std::string>());
  m.content = j.at("content").get<std::string>();
  m.terminal = j.value("terminal", false);
}

std::string_view doctor_marker(Language lang) {
  return lang == Language::zh ? "<对医生讲>" : "<To the doctor>";
}
std::string_view examiner_marker(Language lang) {
  return lang == Language::zh ? "<对检查员讲>" : "<To the examiner>";
}
std::string_view patient_marker(Language lang) {
  return lang == Language::zh ? "<对病人讲>" : "<To the patient>";
}
std::string_view termination_token(Language lang) {
  return lang == Language::zh ? "<结束>" : "<end>";
}

namespace {

std::string fullwidth_brackets(std::string_view marker) {
  // ＜ U+FF1C, ＞ U+FF1E
  std::string out(marker);
  if (out.size() >= 2 && out.front() == '<' && out.back() == '>') {
    out = "\xEF\xBC\x9C" + out.substr(1, out.size() - 2) + "\xEF\xBC\x9E";
  }
  return out;
}

std::string_view skip_lenient_prefix(std::string_view s) {
  static const std::vector<std::string_view> punct = {
      "*", "_", "\"", "'", "`", "[", "(", "\xE2\x80\x9C" /*“*/, "\xE2\x80\x98" /*‘*/,
      "\xE3\x80\x8C" /*「*/, "\xE3\x80\x90" /*【*/, "\xEF\xBC\x88" /*（*/};
  bool progressed = true;
  while (progressed) {
    progressed = false;
    s = text::trim(s);
    for (auto p : punct) {
      if (text::starts_with(s, p)) {
        s.remove_prefix(p.size());
        progressed = true;
        break;
      }
    }
  }
  return s;
}

// Length of the matched marker prefix, 0 if none.
std::size_t match_marker(std::string_view s, std::string_view marker, MarkerMode mode) {
  if (text::starts_with(s, marker)) return marker.size();
  if (mode == MarkerMode::lenient) {
    std::string fw = fullwidth_brackets(marker);
    if (text::starts_with(s, fw)) return fw.size();
  }
  return 0;
}

struct MarkerHit {
  Addressee addressee = Addressee::broadcast;
  std::size_t consumed = 0;  // bytes of the trimmed view up to the end of the marker
};

MarkerHit find_marker(std::string_view content, Language lang, MarkerMode mode) {
  std::string_view s = text::trim(content);
  std::string_view start = mode == MarkerMode::lenient ? skip_lenient_prefix(s) : s;
  std::size_t offset = static_cast<std::size_t>(start.data() - s.data());
  const std::pair<std::string_view, Addressee> markers[] = {
      {doctor_marker(lang), Addressee::doctor},
      {examiner_marker(lang), Addressee::examiner},
      {patient_marker(lang), Addressee::patient},
  };
  for (const auto& [marker, who] : markers) {
    if (std::size_t n = match_marker(start, marker, mode)) return {who, offset + n};
  }
  return {};
}

}  // namespace

Addressee parse_addressee(std::string_view content, Language lang, MarkerMode mode) {
  return find_marker(content, lang, mode).addressee;
}

std::string strip_addressee(std::string_view content, Language lang, MarkerMode mode) {
  std::string_view s = text::trim(content);
  MarkerHit hit = find_marker(content, lang, mode);
  if (hit.addressee == Addressee::broadcast) return std::string(s);
  std::string_view rest = s.substr(hit.consumed);
  if (mode == MarkerMode::lenient) {
    // Drop trailing emphasis and a separating colon after the marker.
    while (!rest.empty() && (rest.front() == '*' || rest.front() == '_' || rest.front() == ':')) rest.remove_prefix(1);
  }
  return text::trim_copy(rest);
}

bool detect_terminal(std::string_view content, Language lang) {
  if (content.empty()) return false;
  return text::contains(text::strip_whitespace(content), termination_token(lang));
}

// --- PromptTemplate ----------------------------------------------------------

namespace {

bool is_slot_start(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }
bool is_slot_char(char c) { return is_slot_start(c) || (c >= '0' && c <= '9'); }

}  // namespace

PromptTemplate::PromptTemplate(std::string source) : source_(std::move(source)) {
  std::string literal;
  const std::string& s = source_;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '{' && i + 1 < s.size() && s[i + 1] == '{') {
      literal += '{';
      ++i;
      continue;
    }
    if (c == '}' && i + 1 < s.size() && s[i + 1] == '}') {
      literal += '}';
      ++i;
      continue;
    }
    if (c == '{' && i + 1 < s.size() && is_slot_start(s[i + 1])) {
      std::size_t j = i + 1;
      while (j < s.size() && is_slot_char(s[j])) ++j;
      if (j < s.size() && s[j] == '}') {
        if (!literal.empty()) segments_.push_back({false, std::move(literal)});
        literal.clear();
        std::string name = s.substr(i + 1, j - i - 1);
        slots_.insert(name);
        segments_.push_back({true, std::move(name)});
        i = j;
        continue;
      }
    }
    literal += c;
  }
  if (!literal.empty()) segments_.push_back({false, std::move(literal)});
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  std::string out;
  for (const auto& seg : segments_) {
    if (!seg.is_slot) {
      out += seg.text;
      continue;
    }
    auto it = values.find(seg.text);
    if (it == values.end()) {
      throw Error(ErrorCode::missing_slot, fmt::format("missing prompt slot '{}'", seg.text));
    }
    out += it->second;
  }
  return out;
}

// --- PromptCatalog -----------------------------------------------------------

void PromptCatalog::add_file(const std::string& lang_and_name, std::string content) {
  // "<lang>/<id>.<system|user>.txt"
  auto slash = lang_and_name.find('/');
  if (slash == std::string::npos) return;
  Language lang = language_from_string(lang_and_name.substr(0, slash));
  std::string name = lang_and_name.substr(slash + 1);
  if (name.size() < 4 || name.substr(name.size() - 4) != ".txt") return;
  name.resize(name.size() - 4);
  auto dot = name.rfind('.');
  if (dot == std::string::npos) return;
  std::string id = name.substr(0, dot);
  std::string part = name.substr(dot + 1);
  // Files end with a newline; templates do not.
  while (!content.empty() && (content.back() == '\n' || content.back() == '\r')) content.pop_back();
  PromptEntry& entry = entries_[{lang, id}];
  if (part == "system") {
    entry.system = PromptTemplate(std::move(content));
  } else if (part == "user") {
    entry.user = PromptTemplate(std::move(content));
  }
}

const PromptCatalog& PromptCatalog::builtin() {
  static const PromptCatalog catalog = [] {
    PromptCatalog c;
    for (const auto& [name, content] : detail::builtin_prompt_files()) c.add_file(name, content);
    return c;
  }();
  return catalog;
}

PromptCatalog PromptCatalog::load_dir(const fs::path& dir) {
  PromptCatalog c = builtin();
  for (std::string_view lang : {"en", "zh"}) {
    fs::path sub = dir / std::string(lang);
    if (!fs::is_directory(sub)) continue;
    for (const auto& entry : fs::directory_iterator(sub)) {
      if (!entry.is_regular_file()) continue;
      std::ifstream in(entry.path(), std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      c.add_file(std::string(lang) + "/" + entry.path().filename().string(), ss.str());
    }
  }
  return c;
}

const PromptEntry& PromptCatalog::get(Language lang, std::string_view id) const {
  auto it = entries_.find({lang, std::string(id)});
  if (it == entries_.end()) {
    throw Error(ErrorCode::not_found, fmt::format("no prompt '{}' for language {}", id, to_string(lang)));
  }
  return it->second;
}

bool PromptCatalog::has(Language lang, std::string_view id) const {
  return entries_.count({lang, std::string(id)}) > 0;
}

std::vector<std::string> PromptCatalog::ids(Language lang) const {
  std::vector<std::string> out;
  for (const auto& [key, entry] : entries_) {
    if (key.first == lang) out.push_back(key.second);
  }
  return out;
}

void PromptCatalog::export_dir(const fs::path& dir) const {
  for (const auto& [key, entry] : entries_) {
    fs::path sub = dir / std::string(to_string(key.first));
    fs::create_directories(sub);
    std::ofstream(sub / (key.second + ".system.txt"), std::ios::binary) << entry.system.source() << '\n';
    if (entry.user) std::ofstream(sub / (key.second + ".user.txt"), std::ios::binary) << entry.user->source() << '\n';
  }
}

// --- RoleSpec ----------------------------------------------------------------

namespace {

std::vector<std::string> required_slots(Role role, std::string_view prompt_id) {
  switch (role) {
    case Role::patient:
      if (prompt_id == "patient") return {"personality", "basic_info"};
      break;
    case Role::radiologist:
      if (prompt_id == "radiologist_exam") return {"physical_exam", "auxiliary_exams"};
      break;
    case Role::expert:
      if (prompt_id == "expert_assess" || prompt_id == "judge_hde") return {"ground_truth"};
      break;
    default:
      break;
  }
  return {};
}

}  // namespace

RoleSpec::RoleSpec(Role role, std::string prompt_id, PromptEntry prompt, Language language, std::string backend_profile)
    : role_(role),
      prompt_id_(std::move(prompt_id)),
      prompt_(std::move(prompt)),
      language_(language),
      backend_profile_(std::move(backend_profile)) {
  auto declared = declared_slots();
  for (const auto& slot : required_slots(role_, prompt_id_)) {
    if (!declared.count(slot)) {
      throw Error(ErrorCode::validation, fmt::format("prompt '{}' for role {} must declare slot '{}'", prompt_id_,
                                                     to_string(role_), slot));
    }
  }
}

RoleSpec RoleSpec::from_catalog(const PromptCatalog& catalog, Role role, std::string prompt_id, Language language,
                                std::string backend_profile) {
  const PromptEntry& entry = catalog.get(language, prompt_id);
  return RoleSpec(role, std::move(prompt_id), entry, language, std::move(backend_profile));
}

std::set<std::string> RoleSpec::declared_slots() const {
  std::set<std::string> out = prompt_.system.slots();
  if (prompt_.user) out.insert(prompt_.user->slots().begin(), prompt_.user->slots().end());
  return out;
}

std::map<std::string, std::string> record_slots(const MedicalRecord& r, Language lang) {
  const bool zh = lang == Language::zh;
  const auto& bi = r.basic_info;
  std::string basic = zh ? fmt::format("主诉：{}\n现病史：{}\n既往史：{}\n个人史：{}", bi.chief_complaint,
                                       bi.present_illness, bi.past_history, bi.personal_history)
                         : fmt::format("Chief complaint: {}\nPresent illness: {}\nPast history: {}\nPersonal history: {}",
                                       bi.chief_complaint, bi.present_illness, bi.past_history, bi.personal_history);
  std::string general = zh ? fmt::format("科室：{}；主诉：{}", r.department, bi.chief_complaint)
                           : fmt::format("Department: {}; Chief complaint: {}", r.department, bi.chief_complaint);
  std::string diseases = text::join(r.truth.diseases, zh ? "、" : "; ");
  std::string truth =
      zh ? fmt::format("#现病史# {}\n#查体# {}\n#辅助检查# {}\n#诊断结果# {}\n#诊断依据# {}\n#治疗方案# {}",
                       bi.present_illness, r.examination.physical_exam, r.examination.auxiliary_exams, diseases,
                       r.truth.rationale, r.truth.treatment_plan)
         : fmt::format(
               "#Present Illness# {}\n#Physical Examination# {}\n#Auxiliary Examinations# {}\n#Diagnostic Results# "
               "{}\n#Rationale# {}\n#Treatment Plan# {}",
               bi.present_illness, r.examination.physical_exam, r.examination.auxiliary_exams, diseases,
               r.truth.rationale, r.truth.treatment_plan);
  return {
      {"personality", bi.personality},
      {"basic_info", std::move(basic)},
      {"general_info", std::move(general)},
      {"physical_exam", r.examination.physical_exam},
      {"auxiliary_exams", r.examination.auxiliary_exams},
      {"ground_truth", std::move(truth)},
  };
}

namespace {

std::string render_part(const RoleSpec& spec, const PromptTemplate& tmpl, const MedicalRecord* record,
                        const std::map<std::string, std::string>& extras) {
  auto declared = spec.declared_slots();
  for (const auto& [key, value] : extras) {
    if (!declared.count(key)) {
      throw Error(ErrorCode::unknown_slot, fmt::format("prompt '{}' has no slot '{}'", spec.prompt_id(), key));
    }
  }
  std::map<std::string, std::string> values;
  if (record) {
    for (auto& [key, value] : record_slots(*record, spec.language())) {
      if (tmpl.slots().count(key)) values[key] = std::move(value);
    }
  }
  for (const auto& [key, value] : extras) values[key] = value;
  return tmpl.render(values);
}

}  // namespace

std::string render_system_prompt(const RoleSpec& spec, const MedicalRecord* record,
                                 const std::map<std::string, std::string>& extras) {
  return render_part(spec, spec.prompt().system, record, extras);
}

std::string render_user_prompt(const RoleSpec& spec, const MedicalRecord* record,
                               const std::map<std::string, std::string>& extras) {
  if (!spec.prompt().user) {
    throw Error(ErrorCode::not_found, fmt::format("prompt '{}' has no user template", spec.prompt_id()));
  }
  return render_part(spec, *spec.prompt().user, record, extras);
}

}  // namespace medco
