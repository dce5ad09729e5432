#include "medco/simulated.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "medco/report.hpp"
#include "medco/text.hpp"

namespace medco {

namespace {

std::string last_user(const ChatRequest& r) {
  for (auto it = r.history.rbegin(); it != r.history.rend(); ++it) {
    if (it->role == "user") return it->content;
  }
  return {};
}

int assistant_turns(const ChatRequest& r) {
  return static_cast<int>(std::count_if(r.history.begin(), r.history.end(),
                                        [](const ChatTurn& t) { return t.role == "assistant"; }));
}

void add_unique(std::vector<std::string>& v, const std::string& s) {
  if (s.empty()) return;
  auto lower = text::ascii_lower(s);
  for (const auto& x : v) {
    if (text::ascii_lower(x) == lower) return;
  }
  v.push_back(s);
}

// Text between `open` and the next occurrence of `close` (or end of text).
std::string between(const std::string& s, std::string_view open, std::string_view close) {
  auto a = s.find(open);
  if (a == std::string::npos) return {};
  a += open.size();
  auto b = close.empty() ? std::string::npos : s.find(close, a);
  return text::trim_copy(std::string_view(s).substr(a, b == std::string::npos ? std::string::npos : b - a));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    add_unique(out, text::trim_copy(cur));
    cur.clear();
  };
  for (char32_t cp : text::utf8_decode(s)) {
    if (cp == U';' || cp == 0xFF1B || cp == 0x3001) {
      flush();
    } else {
      cur += text::utf8_encode(cp);
    }
  }
  flush();
  return out;
}

std::string first_sentence(const std::string& s) {
  std::string_view v = text::trim(s);
  for (std::string_view stop : {". ", "。"}) {
    auto p = v.find(stop);
    if (p != std::string_view::npos) v = v.substr(0, p);
  }
  while (!v.empty() && v.back() == '.') v.remove_suffix(1);
  return std::string(text::trim(v));
}

std::string strip_period(std::string s) {
  for (;;) {
    if (!s.empty() && s.back() == '.') {
      s.pop_back();
    } else if (s.size() >= 3 && s.compare(s.size() - 3, 3, "。") == 0) {
      s.erase(s.size() - 3);
    } else {
      return s;
    }
  }
}

bool icontains(const std::string& s, std::string_view needle) {
  return text::contains(text::ascii_lower(s), text::ascii_lower(needle));
}

}  // namespace

SimulatedClinic::SimulatedClinic(std::vector<MedicalRecord> corpus, Language lang)
    : corpus_(std::move(corpus)), lang_(lang) {}

const MedicalRecord* SimulatedClinic::record(const std::string& patient_id) const {
  return find_record(corpus_, patient_id);
}

std::string SimulatedClinic::respond(const ChatRequest& r) const {
  const auto& p = r.tag.purpose;
  const auto& role = r.tag.role;
  if (p == "personality") {
    return lang_ == Language::zh ? "你性格平和，配合医生，说话简短。" : "You are calm and cooperative, and you keep your answers short.";
  }
  if (p == "summarize") return summarize(r);
  if (p == "assess") return assess(r);
  if (p == "knowledge") return knowledge(r);
  if (p == "inquire_patient") return inquire(r, true);
  if (p == "inquire_radiologist") return inquire(r, false);
  if (p == "discussion") return discussion(r);
  if (p == "judge") return judge(r);
  if (p == "classify") return classify(r);
  if (p == "radiology") return vision_report(r, true);
  if (p == "report_vqa") return vision_report(r, false);
  if (p == "extract") return extract(r);
  if (role == "patient") return patient(r);
  if (role == "student") return student(r);
  if (role == "radiologist") return radiologist(r);
  throw Error(ErrorCode::missing_fixture, fmt::format("simulated clinic has no rule for {}/{}", role, p));
}

// --- dialogue roles -----------------------------------------------------------------

namespace {

constexpr std::string_view kDxEn = "My diagnosis:";
constexpr std::string_view kDxZh = "我的诊断：";

bool is_exam_item_block(const std::string& s) {
  return text::contains(s, "#Examination Items#") || text::contains(s, "#检查项目#");
}

}  // namespace

std::string SimulatedClinic::patient(const ChatRequest& r) const {
  const bool zh = lang_ == Language::zh;
  const MedicalRecord* rec = record(r.tag.patient_id);
  std::string doctor(doctor_marker(lang_));
  std::string examiner(examiner_marker(lang_));
  std::string q = last_user(r);
  if (!rec) return doctor + (zh ? " 我不太舒服。" : " I am not feeling well.");
  const auto& bi = rec->basic_info;

  if (is_exam_item_block(q)) {
    return fmt::format("{} {}{}", doctor, zh ? "检查员告诉我：" : "The examiner told me: ", q);
  }
  if (text::contains(q, kDxEn) || text::contains(q, kDxZh)) {
    return fmt::format("{} {} {}", doctor, zh ? "谢谢医生，我会按照治疗方案配合治疗。" : "Thank you, doctor. I will follow the treatment plan.",
                       termination_token(lang_));
  }
  bool exam_request = zh ? text::contains(q, "检查") : (icontains(q, "examination") || icontains(q, " test"));
  if (exam_request) {
    return fmt::format("{} {}", examiner,
                       zh ? "您好，我需要做医生要求的查体和辅助检查，能否告诉我这些检查结果？"
                          : "Hello, I need to have the physical and auxiliary examinations the doctor requested. Can "
                            "you tell me the results of these tests?");
  }
  if (assistant_turns(r) == 0) return fmt::format("{} {}", doctor, bi.chief_complaint);
  if (icontains(q, "history") || text::contains(q, "病史")) {
    return fmt::format("{} {} {}", doctor, bi.present_illness, bi.past_history);
  }
  return fmt::format("{} {}", doctor, bi.present_illness.empty() ? bi.chief_complaint : bi.present_illness);
}

std::string SimulatedClinic::student(const ChatRequest& r) const {
  const bool zh = lang_ == Language::zh;
  const MedicalRecord* rec = record(r.tag.patient_id);
  bool further = text::contains(r.system, zh ? "根据知识库检索" : "According to the knowledge base retrieval");
  int n = assistant_turns(r);
  if (!further && n < 3) {
    static const std::string en[] = {
        "Hello, what brings you in today?",
        "How long has this been going on, and do you have any past medical history?",
        "Please complete a physical examination and the relevant auxiliary examinations, then tell me the results."};
    static const std::string cn[] = {"你好，请问哪里不舒服？", "这种情况持续多久了？既往有什么病史吗？",
                                     "请先去做体格检查和相关的辅助检查，然后告诉我结果。"};
    return zh ? cn[n] : en[n];
  }
  std::vector<std::string> dx;
  if (rec && !rec->truth.diseases.empty()) add_unique(dx, rec->truth.diseases.front());
  if (further && rec) {
    std::string retrieved = zh ? between(r.system, "其可能患有这些疾病: ", "\n") : between(r.system, "following conditions: ", "\n");
    retrieved = strip_period(retrieved);
    std::vector<std::string> names = zh ? split_list(retrieved) : text::split(retrieved, ',');
    for (auto& name : names) {
      std::string t = text::trim_copy(name);
      for (const auto& truth : rec->truth.diseases) {
        if (text::ascii_lower(truth) == text::ascii_lower(t)) add_unique(dx, truth);
      }
    }
  }
  if (dx.empty()) dx.push_back(zh ? "待定" : "undetermined condition");
  std::string list = text::join(dx, zh ? "；" : "; ");
  if (zh) return fmt::format("{}{}。诊断依据：症状与检查结果相符。治疗方案：针对{}进行规范治疗。", kDxZh, list, list);
  return fmt::format("{} {}. Rationale: the symptoms and examination results are consistent with this diagnosis. "
                     "Treatment plan: standard management of {}.",
                     kDxEn, list, list);
}

std::string SimulatedClinic::radiologist(const ChatRequest& r) const {
  const bool zh = lang_ == Language::zh;
  const MedicalRecord* rec = record(r.tag.patient_id);
  std::string q = last_user(r);
  std::string out = zh ? "#检查项目#" : "#Examination Items#";
  if (rec) {
    out += fmt::format("\n- {}: {}", zh ? "查体" : "Physical examination", rec->examination.physical_exam);
    out += fmt::format("\n- {}: {}", zh ? "辅助检查" : "Auxiliary examinations", rec->examination.auxiliary_exams);
  }
  std::string imaging = zh ? between(r.system, "#医学影像报告#", "\n") : between(r.system, "#Medical Imaging Report#", "\nThere will be");
  if (!imaging.empty() && imaging != "None" && imaging != "无") {
    out += fmt::format("\n{}\n- {}", zh ? "#影像检查#" : "#Imaging Examination#", imaging);
  }
  if (icontains(q, "genomic") || text::contains(q, "基因")) out += zh ? "\n- 基因组测序" : "\n- Genomic Sequencing";
  return out;
}

// --- structured replies ---------------------------------------------------------------

std::string SimulatedClinic::summarize(const ChatRequest& r) const {
  const MedicalRecord* rec = record(r.tag.patient_id);
  DiagnosticReport rep;
  if (rec) {
    add_unique(rep.symptoms, first_sentence(rec->basic_info.chief_complaint));
    add_unique(rep.symptoms, first_sentence(rec->basic_info.present_illness));
  }
  std::vector<std::string> dx;
  for (const auto& t : r.history) {
    if (t.role == "user") {
      std::istringstream in(t.content);
      std::string line;
      while (std::getline(in, line)) {
        auto v = text::trim(line);
        if (text::starts_with(v, "- ")) add_unique(rep.examinations, std::string(text::trim(v.substr(2))));
      }
    } else {
      std::string d = lang_ == Language::zh ? between(t.content, kDxZh, "。") : between(t.content, kDxEn, ". ");
      if (!d.empty()) dx = split_list(d);
    }
  }
  for (auto& e : rep.examinations) {
    if (e.find('(') != std::string::npos) e.erase(std::remove(e.begin(), e.end(), '('), e.end());
  }
  if (rep.examinations.empty()) rep.examinations.push_back(lang_ == Language::zh ? "暂无检查结果" : "No examination results yet");
  if (dx.empty()) dx.push_back(lang_ == Language::zh ? "待定" : "Undetermined");
  rep.diagnostic_results = dx;
  for (const auto& d : dx) {
    rep.rationales.push_back(lang_ == Language::zh ? fmt::format("症状与检查结果支持{}", d)
                                                   : fmt::format("Symptoms and examination findings support {}", d));
    rep.treatment_plan.push_back(lang_ == Language::zh ? fmt::format("针对{}的规范治疗", d)
                                                       : fmt::format("Standard management of {}", d));
  }
  for (auto s : kReportSections) {
    for (auto& item : rep.section(s)) {
      // Keep enumerators out of item text so the reply parses back cleanly.
      std::replace(item.begin(), item.end(), '#', ' ');
    }
  }
  return render_report(rep, lang_);
}

std::string SimulatedClinic::assess(const ChatRequest& r) const {
  const bool zh = lang_ == Language::zh;
  const MedicalRecord* rec = record(r.tag.patient_id);
  Suggestions s;
  std::string diseases = rec ? text::join(rec->truth.diseases, zh ? "、" : ", ") : std::string();
  if (zh) {
    s.at(ReportSection::symptoms) = fmt::format("注意询问主诉相关细节：{}", rec ? first_sentence(rec->basic_info.present_illness) : "");
    s.at(ReportSection::examinations) = fmt::format("建议完善以下检查：{}", rec ? rec->examination.auxiliary_exams : "");
    s.at(ReportSection::diagnostic_results) = fmt::format("鉴别诊断时应考虑{}", diseases);
    s.at(ReportSection::rationales) = "将症状、体征与检查结果逐条对应";
    s.at(ReportSection::treatment_plan) = rec ? fmt::format("参考方案：{}", rec->truth.treatment_plan) : "制定个体化方案";
  } else {
    s.at(ReportSection::symptoms) =
        fmt::format("Ask about the course of illness in detail, e.g. {}", rec ? first_sentence(rec->basic_info.present_illness) : "");
    s.at(ReportSection::examinations) = fmt::format("Request these examinations: {}", rec ? rec->examination.auxiliary_exams : "");
    s.at(ReportSection::diagnostic_results) = fmt::format("Consider {} in the differential", diseases);
    s.at(ReportSection::rationales) = "Link each diagnosis to specific symptoms and examination findings";
    s.at(ReportSection::treatment_plan) =
        rec ? fmt::format("Compare with the reference plan: {}", rec->truth.treatment_plan) : "Individualize treatment";
  }
  for (auto sec : kReportSections) {
    auto& v = s.at(sec);
    std::replace(v.begin(), v.end(), '#', ' ');
    if (text::trim(v).empty()) v = zh ? "无" : "None";
  }
  return render_suggestions(s, lang_);
}

std::string SimulatedClinic::knowledge(const ChatRequest& r) const {
  const bool zh = lang_ == Language::zh;
  std::string q = last_user(r);
  std::string name = zh ? between(q, "#疾病名称：", "\n") : between(q, "#Disease's name:", "\n");
  if (name.empty()) name = text::trim_copy(q);
  KnowledgeCard c;
  for (const auto& rec : corpus_) {
    bool has = std::any_of(rec.truth.diseases.begin(), rec.truth.diseases.end(),
                           [&](const std::string& d) { return text::ascii_lower(d) == text::ascii_lower(name); });
    if (!has) continue;
    if (c.main_symptoms.size() < 3) add_unique(c.main_symptoms, first_sentence(rec.basic_info.chief_complaint));
    if (c.auxiliary_exam_methods.size() < 3) add_unique(c.auxiliary_exam_methods, first_sentence(rec.examination.auxiliary_exams));
    if (c.treatment_plans.size() < 3) add_unique(c.treatment_plans, first_sentence(rec.truth.treatment_plan));
  }
  c.definition.push_back(zh ? fmt::format("{}是一种需要规范诊治的临床疾病", name)
                            : fmt::format("{} is a clinical condition requiring structured diagnosis and management", name));
  c.pathogenesis.push_back(zh ? "多因素共同作用所致" : "Multifactorial, involving predisposing and precipitating factors");
  if (c.main_symptoms.empty()) c.main_symptoms.push_back(zh ? fmt::format("{}的典型症状", name) : fmt::format("Typical symptoms of {}", name));
  if (c.auxiliary_exam_methods.empty()) c.auxiliary_exam_methods.push_back(zh ? "常规实验室检查" : "Routine laboratory tests");
  if (c.treatment_plans.empty()) c.treatment_plans.push_back(zh ? "对症支持治疗" : "Supportive and targeted therapy");
  for (std::size_t i = 0; i < kKnowledgeFieldCount; ++i) {
    for (auto& item : c.field(static_cast<KnowledgeField>(i))) {
      std::replace(item.begin(), item.end(), '#', ' ');
      std::replace(item.begin(), item.end(), '(', ' ');
    }
  }
  return render_knowledge_card(c, lang_);
}

std::string SimulatedClinic::inquire(const ChatRequest& r, bool patient_target) const {
  const bool zh = lang_ == Language::zh;
  std::string block = last_user(r);
  std::vector<std::string> names;
  std::string_view open = zh ? "##相关疾病：" : "##Related Disease: ";
  std::size_t pos = 0;
  while ((pos = block.find(open, pos)) != std::string::npos) {
    pos += open.size();
    auto end = block.find("##", pos);
    if (end == std::string::npos) break;
    add_unique(names, block.substr(pos, end - pos));
    pos = end;
  }
  std::vector<std::string> qs;
  for (const auto& n : names) {
    if (patient_target) {
      qs.push_back(zh ? fmt::format("您是否有{}的典型表现？", n) : fmt::format("Have you noticed symptoms typical of {}?", n));
    } else {
      qs.push_back(zh ? fmt::format("是否有支持{}的检查结果？", n)
                      : fmt::format("Are there examination results that support or exclude {}?", n));
    }
  }
  if (qs.empty()) qs.push_back(zh ? "还有其他不适吗？" : "Do you have any other symptoms?");
  std::string head = patient_target ? (zh ? "#询问病人#" : "#Inquire Patient#") : (zh ? "#询问检查员#" : "#Inquire Radiologist#");
  return head + render_items(qs);
}

std::string SimulatedClinic::discussion(const ChatRequest& r) const {
  std::string all = last_user(r);
  std::string_view b_marker = lang_ == Language::zh ? "#医生B#" : "#Doctor B#";
  auto split = all.find(b_marker);
  std::string a_text = split == std::string::npos ? all : all.substr(0, split);
  std::string b_text = split == std::string::npos ? std::string() : all.substr(split + b_marker.size());
  auto a = parse_report_sections(a_text).report;
  auto b = parse_report_sections(b_text).report;
  DiagnosticReport merged;
  for (auto s : kReportSections) {
    for (const auto& item : a.section(s)) add_unique(merged.section(s), item);
    for (const auto& item : b.section(s)) add_unique(merged.section(s), item);
    if (merged.section(s).empty()) merged.section(s).push_back(lang_ == Language::zh ? "无" : "None");
  }
  return render_report(merged, lang_);
}

std::string SimulatedClinic::judge(const ChatRequest& r) const {
  const MedicalRecord* rec = record(r.tag.patient_id);
  std::string u = last_user(r);
  std::string_view marker = lang_ == Language::zh ? "#学生诊断结果#" : "#Diagnosis of the student#";
  auto pos = u.find(marker);
  auto report = parse_report_sections(pos == std::string::npos ? u : u.substr(pos + marker.size())).report;
  double frac = 0;
  if (rec && !rec->truth.diseases.empty()) {
    int hit = 0;
    std::string results = text::ascii_lower(text::join(report.diagnostic_results, " | "));
    for (const auto& d : rec->truth.diseases) hit += text::contains(results, text::ascii_lower(d));
    frac = double(hit) / rec->truth.diseases.size();
  }
  auto clamp = [](int v) { return std::clamp(v, 1, 4); };
  bool has_exams = !report.examinations.empty() &&
                   !text::contains(report.examinations.front(), "No examination results") &&
                   !text::contains(report.examinations.front(), "暂无检查结果");
  int symptom = clamp(report.symptoms.size() >= 2 ? 3 : 2);
  int exam = clamp(has_exams ? 3 : 1);
  int results = clamp(1 + static_cast<int>(std::lround(3 * frac)));
  int rationale = clamp(frac > 0.5 ? 3 : 2);
  int treatment = clamp(1 + static_cast<int>(std::lround(2 * frac)));
  if (lang_ == Language::zh) {
    return fmt::format("#症状# {}\n#医学检查# {}\n#诊断结果# {}\n#诊断依据# {}\n#治疗方案# {}", symptom, exam, results,
                       rationale, treatment);
  }
  return fmt::format("#Symptom# {}\n#Medical Examination# {}\n#Diagnostic Results# {}\n#Rationale# {}\n#Treatment Plan# {}",
                     symptom, exam, results, rationale, treatment);
}

std::string SimulatedClinic::classify(const ChatRequest& r) const {
  std::string u = text::ascii_lower(last_user(r));
  const bool zh = lang_ == Language::zh;
  if (text::contains(u, "report")) return zh ? "#报告解读#" : "#ReportVQA#";
  for (std::string_view cue : {"ct", "mri", "xray", "x-ray", "radiograph", "ultrasound"}) {
    if (text::contains(u, cue)) return zh ? "#影像报告#" : "#Radiology#";
  }
  return zh ? "#无#" : "#None#";
}

std::string SimulatedClinic::vision_report(const ChatRequest& r, bool radiology) const {
  const MedicalRecord* rec = record(r.tag.patient_id);
  std::string aux = rec ? first_sentence(rec->examination.auxiliary_exams) : std::string();
  if (lang_ == Language::zh) {
    return fmt::format("检查类型：{}。技术细节：图像质量满意。所见：{}。结论：请结合临床。", radiology ? "影像检查" : "检查报告照片", aux);
  }
  return fmt::format(
      "Type of examination: {}. Technical details: adequate image quality. Findings: {}. Conclusion: correlate "
      "clinically.",
      radiology ? "medical imaging study" : "photographed imaging report", aux);
}

std::string SimulatedClinic::extract(const ChatRequest& r) const {
  std::vector<std::string> out;
  for (const auto& item : split_enumerated(last_user(r))) {
    for (const auto& part : split_list(item)) add_unique(out, part);
  }
  return render_items(out);
}

std::shared_ptr<ScriptedProvider> make_simulated_provider(std::vector<MedicalRecord> corpus, Language lang) {
  auto clinic = std::make_shared<SimulatedClinic>(std::move(corpus), lang);
  auto provider = std::make_shared<ScriptedProvider>();
  provider->set_fallback([clinic](const ChatRequest& r) { return clinic->respond(r); });
  return provider;
}

}  // namespace medco
