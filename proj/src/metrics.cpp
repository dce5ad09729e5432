#include "medco/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <regex>

#include <fmt/format.h>

#include "medco/structured.hpp"
#include "medco/text.hpp"

namespace medco {

bool is_icd_code(std::string_view code) {
  static const std::regex pattern("^[A-Z][0-9]{2}(\\.[0-9]{1,3})?$");
  return std::regex_match(code.begin(), code.end(), pattern);
}

IcdLevels icd_levels(std::string_view code) {
  if (!is_icd_code(code)) throw Error(ErrorCode::invalid_argument, fmt::format("malformed ICD-10 code '{}'", code));
  return {std::string(code.substr(0, 1)), std::string(code.substr(0, 3)), std::string(code)};
}

namespace {

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw Error(ErrorCode::format, "unterminated quote");
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<IcdTerm> load_icd_terms(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read ICD terminology " + path.string());
  std::vector<IcdTerm> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    std::vector<std::string> cols;
    try {
      cols = parse_csv_line(line);
    } catch (const Error& e) {
      throw Error(ErrorCode::format, fmt::format("{} line {}: {}", path.string(), n, e.what()));
    }
    if (n == 1 && cols.size() >= 1 && text::ascii_lower(text::trim(cols[0])) == "code") continue;
    if (cols.size() != 2) {
      throw Error(ErrorCode::format, fmt::format("{} line {}: expected code,title", path.string(), n));
    }
    IcdTerm term{text::trim_copy(cols[0]), text::trim_copy(cols[1])};
    if (!is_icd_code(term.code)) {
      throw Error(ErrorCode::format, fmt::format("{} line {}: malformed code '{}'", path.string(), n, term.code));
    }
    if (term.title.empty()) throw Error(ErrorCode::format, fmt::format("{} line {}: empty title", path.string(), n));
    if (!seen.insert(term.code).second) {
      throw Error(ErrorCode::validation, fmt::format("{} line {}: duplicate code {}", path.string(), n, term.code));
    }
    out.push_back(std::move(term));
  }
  return out;
}

IcdIndex::IcdIndex(std::vector<IcdTerm> terms, EmbeddingProvider& embedder)
    : terms_(std::move(terms)), embedder_(&embedder) {
  std::set<std::string> seen;
  std::vector<std::string> titles;
  for (const auto& t : terms_) {
    if (!seen.insert(t.code).second) throw Error(ErrorCode::validation, "duplicate ICD code " + t.code);
    if (text::trim(t.title).empty()) throw Error(ErrorCode::validation, "empty title for ICD code " + t.code);
    titles.push_back(t.title);
  }
  if (!titles.empty()) vectors_ = embedder.embed(titles);
}

std::vector<std::string> IcdIndex::top_k(const std::string& query, std::size_t k) const {
  if (terms_.empty() || k == 0) return {};
  auto q = embedder_->embed({query}).at(0);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(terms_.size());
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    double s = 0;
    for (std::size_t d = 0; d < q.size() && d < vectors_[i].size(); ++d) s += double(q[d]) * vectors_[i][d];
    scored.emplace_back(s, i);
  }
  k = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [&](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return terms_[a.second].code < terms_[b.second].code;
                    });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(terms_[scored[i].second].code);
  return out;
}

std::string IcdIndex::top1(const std::string& query) const {
  auto r = top_k(query, 1);
  return r.empty() ? std::string() : r.front();
}

// --- entities -------------------------------------------------------------------

std::vector<std::string> extract_entities(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  std::vector<std::string> lowered;
  auto add = [&](std::string s) {
    std::string_view v = text::trim(s);
    for (;;) {
      if (!v.empty() && v.back() == '.') {
        v.remove_suffix(1);
      } else if (v.size() >= 3 && v.substr(v.size() - 3) == "。") {
        v.remove_suffix(3);
      } else {
        break;
      }
      v = text::trim(v);
    }
    if (v.empty()) return;
    std::string l = text::ascii_lower(v);
    if (std::find(lowered.begin(), lowered.end(), l) != lowered.end()) return;
    lowered.push_back(l);
    out.emplace_back(v);
  };
  for (const auto& item : items) {
    for (const auto& piece : split_enumerated(item)) {
      std::string cur;
      for (char32_t cp : text::utf8_decode(piece)) {
        if (cp == U';' || cp == 0xFF1B || cp == 0x3001 || cp == U'\n') {
          add(cur);
          cur.clear();
        } else {
          cur += text::utf8_encode(cp);
        }
      }
      add(cur);
    }
  }
  return out;
}

std::vector<std::string> extract_disease_entities(const DiagnosticReport& report) {
  return extract_entities(report.diagnostic_results);
}

std::vector<std::string> extract_disease_entities_judged(const DiagnosticReport& report, const Backends& backends,
                                                         const PromptCatalog& catalog, Language lang, CallTag tag) {
  if (report.diagnostic_results.empty()) return {};
  RoleSpec spec = RoleSpec::from_catalog(catalog, Role::expert, "entity_extraction", lang, "extract");
  ChatRequest req;
  req.system = render_system_prompt(spec, nullptr);
  req.history.push_back(
      {"user", render_user_prompt(spec, nullptr, {{"diagnostic_results", render_items(report.diagnostic_results)}}),
       {}});
  tag.role = "expert";
  tag.purpose = "extract";
  req.tag = std::move(tag);
  return structured_call<std::vector<std::string>>(backends, "extract", std::move(req), catalog, lang,
                                                   [](const std::string& reply) {
                                                     auto items = extract_entities({reply});
                                                     if (items.empty()) throw ParseError("no entities", reply);
                                                     return items;
                                                   });
}

// --- SEMA -----------------------------------------------------------------------

std::size_t max_bipartite_matching(const std::vector<std::vector<std::size_t>>& adj, std::size_t right_count) {
  std::vector<long> match_right(right_count, -1);
  std::vector<char> visited;
  std::function<bool(std::size_t)> augment = [&](std::size_t u) {
    for (std::size_t v : adj[u]) {
      if (visited[v]) continue;
      visited[v] = 1;
      if (match_right[v] < 0 || augment(static_cast<std::size_t>(match_right[v]))) {
        match_right[v] = static_cast<long>(u);
        return true;
      }
    }
    return false;
  };
  std::size_t size = 0;
  for (std::size_t u = 0; u < adj.size(); ++u) {
    visited.assign(right_count, 0);
    if (augment(u)) ++size;
  }
  return size;
}

double harmonic_f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

SemaResult sema_from_code_sets(const std::vector<std::set<std::string>>& pred,
                               const std::vector<std::set<std::string>>& truth) {
  std::vector<std::vector<std::size_t>> adj(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      bool meet = std::any_of(pred[i].begin(), pred[i].end(), [&](const std::string& c) { return truth[j].count(c); });
      if (meet) adj[i].push_back(j);
    }
  }
  SemaResult r;
  r.entity_count = pred.size();
  r.tp = max_bipartite_matching(adj, truth.size());
  r.fp = pred.size() - r.tp;
  r.fn = truth.size() - r.tp;
  r.precision = pred.empty() ? 0.0 : 100.0 * r.tp / pred.size();
  r.recall = truth.empty() ? 0.0 : 100.0 * r.tp / truth.size();
  r.f1 = harmonic_f1(r.precision, r.recall);
  return r;
}

SemaResult sema_case(const std::vector<std::string>& pred_entities, const std::vector<std::string>& truth_entities,
                     const IcdIndex& index, std::size_t k) {
  auto codes = [&](const std::vector<std::string>& entities) {
    std::vector<std::set<std::string>> out;
    for (const auto& e : entities) {
      auto top = index.top_k(e, k);
      out.emplace_back(top.begin(), top.end());
    }
    return out;
  };
  return sema_from_code_sets(codes(pred_entities), codes(truth_entities));
}

// --- CASCADE --------------------------------------------------------------------

CascadeResult cascade_from_codes(const std::vector<std::string>& pred_codes,
                                 const std::vector<std::string>& truth_codes) {
  CascadeResult r;
  if (truth_codes.empty()) {
    r.empty_truth = true;
    return r;
  }
  std::vector<IcdLevels> pred;
  for (const auto& c : pred_codes) {
    if (is_icd_code(c)) pred.push_back(icd_levels(c));
  }
  std::size_t coarse = 0, medium = 0, fine = 0;
  for (const auto& c : truth_codes) {
    auto t = icd_levels(c);
    coarse += std::any_of(pred.begin(), pred.end(), [&](const IcdLevels& p) { return p.coarse == t.coarse; });
    medium += std::any_of(pred.begin(), pred.end(), [&](const IcdLevels& p) { return p.medium == t.medium; });
    fine += std::any_of(pred.begin(), pred.end(), [&](const IcdLevels& p) { return p.fine == t.fine; });
  }
  double n = static_cast<double>(truth_codes.size());
  r.coarse = coarse / n;
  r.medium = medium / n;
  r.fine = fine / n;
  return r;
}

CascadeResult cascade_case(const std::vector<std::string>& pred_entities,
                           const std::vector<std::string>& truth_entities, const IcdIndex& index) {
  std::vector<std::string> pred, truth;
  for (const auto& e : pred_entities) {
    if (auto c = index.top1(e); !c.empty()) pred.push_back(c);
  }
  for (const auto& e : truth_entities) {
    if (auto c = index.top1(e); !c.empty()) truth.push_back(c);
  }
  return cascade_from_codes(pred, truth);
}

// --- HDE ------------------------------------------------------------------------

double HdeScore::avg() const {
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

HdeScore judge_hde(const DiagnosticReport& report, const MedicalRecord& record, const Backends& backends,
                   const PromptCatalog& catalog, Language lang, CallTag tag) {
  if (record.truth.diseases.empty()) throw Error(ErrorCode::precondition, "judge_hde needs the record's truth");
  RoleSpec spec = RoleSpec::from_catalog(catalog, Role::expert, "judge_hde", lang, "judge");
  ChatRequest req;
  req.system = render_system_prompt(spec, &record);
  req.history.push_back(
      {"user", render_user_prompt(spec, &record, {{"student_report", render_report(report, lang)}}), {}});
  tag.role = "expert";
  tag.purpose = "judge";
  tag.patient_id = record.patient_id;
  req.tag = std::move(tag);
  return structured_call<HdeScore>(backends, "judge", std::move(req), catalog, lang,
                                   [](const std::string& reply) { return HdeScore{parse_hde_scores(reply)}; });
}

// --- aggregation ----------------------------------------------------------------

HdeRow hde_row_from_means(const std::array<double, kReportSectionCount>& means) {
  HdeRow row;
  row.section_means = means;
  double sum = std::accumulate(means.begin(), means.end(), 0.0);
  row.avg = sum / kReportSectionCount;
  double var = 0;
  for (double m : means) var += (m - row.avg) * (m - row.avg);
  row.std = std::sqrt(var / kReportSectionCount);
  return row;
}

HdeRow aggregate_hde(const std::vector<HdeScore>& scores) {
  if (scores.empty()) throw Error(ErrorCode::invalid_argument, "aggregate needs at least one case");
  std::array<double, kReportSectionCount> means{};
  for (const auto& s : scores) {
    for (std::size_t i = 0; i < kReportSectionCount; ++i) means[i] += s.scores[i];
  }
  for (double& m : means) m /= static_cast<double>(scores.size());
  HdeRow row = hde_row_from_means(means);
  row.cases = scores.size();
  return row;
}

IcdRow aggregate_icd(const std::vector<SemaResult>& sema, const std::vector<CascadeResult>& cascade) {
  if (sema.empty()) throw Error(ErrorCode::invalid_argument, "aggregate needs at least one case");
  IcdRow row;
  row.cases = sema.size();
  for (const auto& s : sema) {
    row.entity_count += static_cast<double>(s.entity_count);
    row.precision += s.precision;
    row.recall += s.recall;
  }
  double n = static_cast<double>(sema.size());
  row.entity_count /= n;
  row.precision /= n;
  row.recall /= n;
  row.f1 = harmonic_f1(row.precision, row.recall);
  std::size_t counted = 0;
  for (const auto& c : cascade) {
    if (c.empty_truth) continue;
    row.coarse += c.coarse;
    row.medium += c.medium;
    row.fine += c.fine;
    ++counted;
  }
  if (counted) {
    row.coarse = 100.0 * row.coarse / counted;
    row.medium = 100.0 * row.medium / counted;
    row.fine = 100.0 * row.fine / counted;
  }
  return row;
}

}  // namespace medco
