#include "medco/experiments.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "medco/error.hpp"
#include "medco/transcript.hpp"

namespace medco {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write {}", tmp.string()));
    out << content;
    if (!out) throw Error(ErrorCode::io, fmt::format("short write to {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot read {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string error_code_of(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return std::string(to_string(err->code()));
  return "internal";
}

// One logical clock per session keeps timestamps identical after a resume.
void write_session(const fs::path& dir, const std::string& file_stem, const SessionState& session,
                   const std::string& strategy, double range, const std::string& config_hash,
                   const std::string& error = {}) {
  fs::create_directories(dir);
  LogicalClock clock;
  write_transcript(dir / (file_stem + ".jsonl"), session.session_id, session.transcript, clock);
  SessionMetadata meta;
  meta.session_id = session.session_id;
  meta.patient_id = session.record_ref;
  meta.scenario = std::string(to_string(session.scenario));
  meta.strategy = strategy;
  meta.retrieval_range = range;
  meta.config_hash = config_hash;
  meta.language = std::string(to_string(session.language));
  for (Phase p : session.phase_history) meta.phases.emplace_back(to_string(p));
  meta.partial = session.partial;
  meta.outcome = session.phase == Phase::aborted || !error.empty() ? "aborted" : "done";
  meta.error = error;
  write_metadata(dir / (file_stem + ".meta.json"), meta);
}

json hde_json(const HdeScore& s) { return json(s.scores); }

json sema_json(const SemaResult& s) {
  return json{{"entity_count", s.entity_count}, {"tp", s.tp},         {"fp", s.fp}, {"fn", s.fn},
              {"precision", s.precision},      {"recall", s.recall}, {"f1", s.f1}};
}

SemaResult sema_from_json(const json& j) {
  SemaResult s;
  s.entity_count = j.at("entity_count").get<std::size_t>();
  s.tp = j.at("tp").get<std::size_t>();
  s.fp = j.at("fp").get<std::size_t>();
  s.fn = j.at("fn").get<std::size_t>();
  s.precision = j.at("precision").get<double>();
  s.recall = j.at("recall").get<double>();
  s.f1 = j.at("f1").get<double>();
  return s;
}

struct ManifestEntry {
  std::string slug;
  std::string label;
  Strategy strategy = Strategy::none;
  double range = 1.0;
  bool multimodal = false;
  std::string config_hash;
  std::size_t failures = 0;
};

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::vector<ManifestEntry> out;
  if (!fs::exists(path)) return out;
  for (const auto& e : read_json_file(path)) {
    ManifestEntry m;
    m.slug = e.at("slug").get<std::string>();
    m.label = e.at("label").get<std::string>();
    m.strategy = strategy_from_string(e.at("strategy").get<std::string>());
    m.range = e.at("range").get<double>();
    m.multimodal = e.at("multimodal").get<bool>();
    m.config_hash = e.value("config_hash", "");
    m.failures = e.value("failures", std::size_t{0});
    out.push_back(std::move(m));
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  json arr = json::array();
  for (const auto& m : entries) {
    arr.push_back(json{{"slug", m.slug},
                       {"label", m.label},
                       {"strategy", std::string(to_string(m.strategy))},
                       {"range", m.range},
                       {"multimodal", m.multimodal},
                       {"config_hash", m.config_hash},
                       {"failures", m.failures}});
  }
  write_atomic(path, arr.dump(2) + "\n");
}

std::vector<CaseResult> read_cases(const fs::path& path) {
  std::vector<CaseResult> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<CaseResult>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::format, fmt::format("{}: {}", path.string(), e.what()));
    }
  }
  return out;
}

}  // namespace

void RunPaths::create() const {
  fs::create_directories(transcripts());
  fs::create_directories(memory_dir());
  fs::create_directories(results() / "cases");
}

void to_json(json& j, const CaseFailure& f) {
  j = json{{"patient_id", f.patient_id}, {"phase", f.phase}, {"label", f.label}, {"code", f.code},
           {"message", f.message}};
}

void from_json(const json& j, CaseFailure& f) {
  f.patient_id = j.at("patient_id").get<std::string>();
  f.phase = j.at("phase").get<std::string>();
  f.label = j.value("label", "");
  f.code = j.at("code").get<std::string>();
  f.message = j.value("message", "");
}

void to_json(json& j, const CaseResult& c) {
  j = json{{"patient_id", c.patient_id},
           {"hde", hde_json(c.hde)},
           {"sema", sema_json(c.sema)},
           {"cascade",
            {{"coarse", c.cascade.coarse},
             {"medium", c.cascade.medium},
             {"fine", c.cascade.fine},
             {"empty_truth", c.cascade.empty_truth}}},
           {"pred_entities", c.pred_entities},
           {"truth_entities", c.truth_entities},
           {"partial", c.partial},
           {"flags", c.flags},
           {"report", c.report}};
}

void from_json(const json& j, CaseResult& c) {
  c.patient_id = j.at("patient_id").get<std::string>();
  c.hde.scores = j.at("hde").get<std::array<int, kReportSectionCount>>();
  c.sema = sema_from_json(j.at("sema"));
  const auto& cj = j.at("cascade");
  c.cascade.coarse = cj.at("coarse").get<double>();
  c.cascade.medium = cj.at("medium").get<double>();
  c.cascade.fine = cj.at("fine").get<double>();
  c.cascade.empty_truth = cj.at("empty_truth").get<bool>();
  c.pred_entities = j.value("pred_entities", std::vector<std::string>{});
  c.truth_entities = j.value("truth_entities", std::vector<std::string>{});
  c.partial = j.value("partial", false);
  c.flags = j.value("flags", std::vector<std::string>{});
  if (j.contains("report")) c.report = j.at("report").get<DiagnosticReport>();
}

std::string row_label(Strategy strategy, double range, bool multimodal) {
  if (multimodal) return "Student + Multi-modality";
  if (strategy == Strategy::none || range <= 0.0) return "Student";
  if (range < 1.0) return fmt::format("same but know {}%", static_cast<int>(std::lround(range * 100.0)));
  switch (strategy) {
    case Strategy::knowledge: return "w/ knowledge";
    case Strategy::suggestion: return "w/ suggestions";
    case Strategy::discussion: return "w/ discussion";
    case Strategy::none: break;
  }
  return "Student";
}

std::string row_slug(Strategy strategy, double range, bool multimodal) {
  return fmt::format("{}-r{:.2f}{}", to_string(strategy), range, multimodal ? "-mm" : "");
}

ResultRow aggregate_row(const std::vector<CaseResult>& cases, Strategy strategy, double range, bool multimodal,
                        const std::string& config_hash) {
  ResultRow row;
  row.label = row_label(strategy, range, multimodal);
  row.slug = row_slug(strategy, range, multimodal);
  row.strategy = strategy;
  row.range = range;
  row.multimodal = multimodal;
  row.cases = cases.size();
  row.config_hash = config_hash;
  if (cases.empty()) return row;
  std::vector<HdeScore> hde;
  std::vector<SemaResult> sema;
  std::vector<CascadeResult> cascade;
  for (const auto& c : cases) {
    hde.push_back(c.hde);
    sema.push_back(c.sema);
    cascade.push_back(c.cascade);
  }
  row.hde = aggregate_hde(hde);
  row.icd = aggregate_icd(sema, cascade);
  return row;
}

const char* const kHdeHeader =
    "label\tSymptom\tMedical Examination\tDiagnostic Results\tDiagnostic Rationales\tTreatment Plan\tAvg(std)\t"
    "config_hash";
const char* const kIcdHeader = "label\t#\tR\tP\tF1\tCoarse(%)\tMedium(%)\tFine(%)\tconfig_hash";

std::string format_hde_row(const ResultRow& row) {
  const auto& m = row.hde.section_means;
  return fmt::format("{}\t{:.3f}\t{:.3f}\t{:.3f}\t{:.3f}\t{:.3f}\t{:.3f}({:.3f})\t{}", row.label, m[0], m[1], m[2], m[3],
                     m[4], row.hde.avg, row.hde.std, row.config_hash);
}

std::string format_icd_row(const ResultRow& row) {
  const auto& i = row.icd;
  return fmt::format("{}\t{:.2f}\t{:.2f}\t{:.2f}\t{:.2f}\t{:.2f}\t{:.2f}\t{:.2f}\t{}", row.label, i.entity_count,
                     i.recall, i.precision, i.f1, i.coarse, i.medium, i.fine, row.config_hash);
}

void emit_results(const std::vector<ResultRow>& rows, const fs::path& dir) {
  std::string hde = std::string(kHdeHeader) + "\n";
  std::string icd = std::string(kIcdHeader) + "\n";
  for (const auto& r : rows) {
    hde += format_hde_row(r) + "\n";
    icd += format_icd_row(r) + "\n";
  }
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::io, e.what());
  }
  write_atomic(dir / "hde.tsv", hde);
  write_atomic(dir / "icd.tsv", icd);
}

std::vector<MedicalRecord> multimodal_subset(const std::vector<MedicalRecord>& records) {
  std::vector<MedicalRecord> out;
  for (const auto& r : records) {
    if (!r.examination.attachments.empty()) out.push_back(r);
  }
  return out;
}

// --- Experiment -------------------------------------------------------------------

Experiment::Experiment(RunConfig config, std::vector<MedicalRecord> corpus, fs::path corpus_path, fs::path run_dir,
                       std::shared_ptr<Backends> backends)
    : config_(std::move(config)),
      config_hash_(config_.hash()),
      corpus_(std::move(corpus)),
      corpus_root_(corpus_root(corpus_path)),
      paths_{std::move(run_dir)},
      backends_(std::move(backends)),
      cache_(std::make_unique<InterpretationCache>()) {
  config_.validate();
  if (!backends_) backends_ = make_backends(config_, corpus_);
  if (config_.prompts_dir.empty()) {
    catalog_ = std::shared_ptr<const PromptCatalog>(std::shared_ptr<void>{}, &PromptCatalog::builtin());
  } else {
    catalog_ = std::make_shared<PromptCatalog>(PromptCatalog::load_dir(config_.prompts_dir));
  }
  icd_path_ = config_.icd_terms.empty() ? corpus_root_ / "icd10.csv" : fs::path(config_.icd_terms);
  paths_.create();
  save_config(config_, paths_.config());
  cache_->load(paths_.image_cache());
}

DatasetSplit Experiment::split() const { return split_dataset(corpus_, config_.seed, config_.split); }

std::vector<MedicalRecord> Experiment::train_records() const { return select_records(corpus_, split().train); }

std::vector<MedicalRecord> Experiment::test_records() const { return select_records(corpus_, split().test); }

DialogueContext Experiment::dialogue_context(bool use_images) const {
  DialogueContext ctx;
  ctx.backends = backends_.get();
  ctx.catalog = catalog_.get();
  ctx.language = config_.language;
  ctx.turn_cap = config_.turn_cap;
  ctx.marker_mode = config_.marker_mode;
  ctx.max_exam_hops = config_.max_exam_hops;
  ctx.recall_k = config_.recall_k;
  ctx.use_images = use_images;
  ctx.cache = cache_.get();
  ctx.corpus_root = corpus_root_;
  return ctx;
}

std::shared_ptr<Memory> Experiment::new_memory() const {
  // The memory shares the embedder; the Backends object outlives it.
  std::shared_ptr<EmbeddingProvider> embedder(backends_, &backends_->embedder());
  return std::make_shared<Memory>(embedder);
}

const IcdIndex& Experiment::icd_index() {
  if (!icd_) icd_ = std::make_unique<IcdIndex>(load_icd_terms(icd_path_), backends_->embedder());
  return *icd_;
}

void Experiment::record_failure(const CaseFailure& f) {
  spdlog::warn("{} case {} failed ({}): {}", f.phase, f.patient_id, f.code, f.message);
  fs::create_directories(paths_.results());
  std::ofstream out(paths_.failures(), std::ios::app);
  out << json(f).dump() << "\n";
}

LearningReport Experiment::learn(const std::vector<MedicalRecord>& train, Memory& memory,
                                 std::optional<std::size_t> stop_after) {
  LearningReport report;
  std::set<std::string> done;
  json progress = json{{"done", json::array()}, {"failures", json::array()}};
  if (fs::exists(paths_.progress())) {
    progress = read_json_file(paths_.progress());
    for (const auto& id : progress.at("done")) done.insert(id.get<std::string>());
    if (fs::exists(paths_.memory())) memory.restore(paths_.memory());
    for (const auto& f : progress.at("failures")) report.failures.push_back(f.get<CaseFailure>());
  }

  const DialogueContext ctx = dialogue_context(false);
  const fs::path dir = paths_.transcripts() / "learning";
  std::size_t processed = 0;
  for (const auto& record : train) {
    if (done.count(record.patient_id)) {
      ++report.resumed;
      continue;
    }
    if (stop_after && processed >= *stop_after) return report;

    SessionState session;
    session.session_id = "learn/" + record.patient_id;
    session.scenario = Scenario::learning;
    session.record_ref = record.patient_id;
    session.turn_cap = config_.turn_cap;
    session.language = config_.language;
    try {
      run_learning_case(session, record, memory, ctx);
      write_session(dir, record.patient_id, session, "none", 1.0, config_hash_);
    } catch (const std::exception& e) {
      CaseFailure f{record.patient_id, "learning", "learning", error_code_of(e), e.what()};
      write_session(dir, record.patient_id, session, "none", 1.0, config_hash_, e.what());
      record_failure(f);
      if (config_.strict) throw;
      report.failures.push_back(f);
      progress["failures"].push_back(f);
    }
    progress["done"].push_back(record.patient_id);
    memory.persist(paths_.memory());
    write_atomic(paths_.progress(), progress.dump(2) + "\n");
    ++processed;
    ++report.learned;
  }
  memory.persist(paths_.memory());
  report.complete = true;
  return report;
}

CaseResult Experiment::evaluate(const DiagnosticReport& report, const MedicalRecord& record,
                                const std::string& session_tag) {
  CaseResult r;
  r.patient_id = record.patient_id;
  r.report = report;
  CallTag tag{session_tag + "/eval", record.patient_id, "expert", "judge", 0, 0};
  r.hde = judge_hde(report, record, *backends_, *catalog_, config_.language, tag);
  if (config_.judged_extraction) {
    CallTag et{session_tag + "/eval", record.patient_id, "expert", "extract", 0, 0};
    r.pred_entities = extract_disease_entities_judged(report, *backends_, *catalog_, config_.language, et);
  } else {
    r.pred_entities = extract_disease_entities(report);
  }
  r.truth_entities = extract_entities(record.truth.diseases);
  const IcdIndex& index = icd_index();
  r.sema = sema_case(r.pred_entities, r.truth_entities, index, config_.sema_k);
  r.cascade = cascade_case(r.pred_entities, r.truth_entities, index);
  return r;
}

PracticeReport Experiment::run_rows(const std::vector<MedicalRecord>& records, const Memory& memory,
                                    Strategy strategy, double range, bool multimodal) {
  if (!(range >= 0.0 && range <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, fmt::format("retrieval range {} outside [0,1]", range));
  }
  const std::string slug = row_slug(strategy, range, multimodal);
  const std::string label = row_label(strategy, range, multimodal);
  const std::string phase = multimodal ? "multimodal" : "practicing";
  const DialogueContext ctx = dialogue_context(multimodal);
  const fs::path dir = paths_.transcripts() / slug;
  const std::string strategy_name(to_string(strategy));

  PracticeReport out;
  for (const auto& original : records) {
    MedicalRecord record = original;
    std::vector<std::string> flags;
    if (multimodal) {
      std::vector<ImageAttachment> usable;
      for (const auto& att : record.examination.attachments) {
        if (att.cached_interpretation || cache_->get(att.uri) || fs::exists(corpus_root_ / att.uri)) {
          usable.push_back(att);
        } else if (config_.strict) {
          throw Error(ErrorCode::not_found,
                      fmt::format("case {}: attachment {} is missing", record.patient_id, att.uri));
        }
      }
      if (usable.empty()) {
        if (config_.strict) {
          throw Error(ErrorCode::precondition, fmt::format("case {} has no usable attachment", record.patient_id));
        }
        flags.push_back("text_only");
      }
      record.examination.attachments = std::move(usable);
    }

    SessionState session;
    session.session_id = fmt::format("practice/{}/{}", slug, record.patient_id);
    session.scenario = Scenario::practicing;
    session.record_ref = record.patient_id;
    session.turn_cap = config_.turn_cap;
    session.language = config_.language;
    try {
      PracticeOutcome outcome = run_practicing_case(session, record, memory, strategy, range, ctx);
      write_session(dir, record.patient_id, session, strategy_name, range, config_hash_);
      for (const auto& sub : outcome.sub_sessions) {
        std::string stem = sub.session_id.substr(sub.session_id.rfind('/') + 1);
        write_session(dir, record.patient_id + "." + stem, sub, stem, range, config_hash_);
      }
      CaseResult result = evaluate(outcome.final_report, record, session.session_id);
      result.partial = outcome.partial;
      result.flags = flags;
      out.cases.push_back(std::move(result));
    } catch (const std::exception& e) {
      CaseFailure f{record.patient_id, phase, label, error_code_of(e), e.what()};
      write_session(dir, record.patient_id, session, strategy_name, range, config_hash_, e.what());
      record_failure(f);
      if (config_.strict) throw;
      out.failures.push_back(f);
    }
  }

  out.row = aggregate_row(out.cases, strategy, range, multimodal, config_hash_);
  out.row.failures = out.failures.size();

  std::string lines;
  for (const auto& c : out.cases) lines += json(c).dump() + "\n";
  write_atomic(paths_.results() / "cases" / (slug + ".jsonl"), lines);

  auto manifest = read_manifest(paths_.manifest());
  ManifestEntry entry{slug, label, strategy, range, multimodal, config_hash_, out.failures.size()};
  bool replaced = false;
  for (auto& m : manifest) {
    if (m.slug == slug) {
      m = entry;
      replaced = true;
    }
  }
  if (!replaced) manifest.push_back(entry);
  write_manifest(paths_.manifest(), manifest);
  if (multimodal) cache_->save(paths_.image_cache());
  evaluate_run(paths_.root);
  return out;
}

PracticeReport Experiment::practice(const std::vector<MedicalRecord>& test, const Memory& memory, Strategy strategy,
                                    double range) {
  return run_rows(test, memory, strategy, range, false);
}

PracticeReport Experiment::multimodal(const std::vector<MedicalRecord>& records, const Memory& memory,
                                      Strategy strategy, double range) {
  return run_rows(records, memory, strategy, range, true);
}

std::vector<PracticeReport> Experiment::curve(const std::vector<MedicalRecord>& test, const Memory& memory,
                                              const std::vector<Strategy>& strategies,
                                              const std::vector<double>& ranges) {
  std::vector<PracticeReport> out;
  for (Strategy s : strategies) {
    for (double r : ranges) out.push_back(practice(test, memory, s, r));
  }
  return out;
}

std::vector<ResultRow> evaluate_run(const fs::path& run_dir) {
  RunPaths paths{run_dir};
  if (!fs::exists(paths.root)) throw Error(ErrorCode::not_found, fmt::format("no run at {}", run_dir.string()));
  std::vector<ResultRow> rows;
  for (const auto& m : read_manifest(paths.manifest())) {
    auto cases = read_cases(paths.results() / "cases" / (m.slug + ".jsonl"));
    ResultRow row = aggregate_row(cases, m.strategy, m.range, m.multimodal, m.config_hash);
    row.failures = m.failures;
    rows.push_back(std::move(row));
  }
  emit_results(rows, paths.results());
  return rows;
}

}  // namespace medco
