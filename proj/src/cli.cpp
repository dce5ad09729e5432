#include "medco/cli.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "medco/config.hpp"
#include "medco/error.hpp"
#include "medco/experiments.hpp"
#include "medco/http_server.hpp"
#include "medco/service.hpp"
#include "medco/text.hpp"

namespace medco {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string corpus = "data/demo";
  std::string config;
  std::string run_dir = "runs/default";
  bool strict = false;
  bool quiet = false;
};

RunConfig load_run_config(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig::defaults() : load_config(g.config);
  if (g.strict) c.strict = true;
  return c;
}

DatasetSplit read_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot read split {}", path));
  try {
    return json::parse(in).get<DatasetSplit>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, fmt::format("split {}: {}", path, e.what()));
  }
}

std::vector<double> parse_ranges(const std::string& text) {
  std::vector<double> out;
  for (const auto& part : text::split(text, ',')) {
    std::string t = text::trim_copy(part);
    if (t.empty()) continue;
    double v = 0;
    try {
      std::size_t used = 0;
      v = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw CLI::ValidationError("--ranges", fmt::format("'{}' is not a number", t));
    }
    if (!(v >= 0.0 && v <= 1.0)) throw CLI::ValidationError("--ranges", fmt::format("{} is outside [0,1]", t));
    out.push_back(v);
  }
  if (out.empty()) throw CLI::ValidationError("--ranges", "no ranges given");
  return out;
}

json row_json(const ResultRow& r) {
  return json{{"label", r.label},
              {"slug", r.slug},
              {"cases", r.cases},
              {"failures", r.failures},
              {"hde", format_hde_row(r)},
              {"icd", format_icd_row(r)}};
}

void load_memory_if_present(Memory& memory, const fs::path& path, bool required) {
  if (fs::exists(path)) {
    memory.restore(path);
  } else if (required) {
    throw Error(ErrorCode::not_found, fmt::format("no memory snapshot at {}", path.string()));
  }
}

std::atomic<HttpServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (HttpServer* s = g_server.load()) s->stop();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-agent medical education copilot"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--corpus", g.corpus, "Corpus directory or file");
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--run-dir", g.run_dir, "Run directory");
  app.add_flag("--strict", g.strict, "Abort a phase on the first failed case");
  bool verbose = false;
  auto* quiet_flag = app.add_flag("-q,--quiet", g.quiet, "Only log warnings");
  app.add_flag("-v,--verbose", verbose, "Log debug output")->excludes(quiet_flag);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate a corpus and print its split");
  std::string ingest_path;
  std::string split_out;
  ingest->add_option("corpus", ingest_path, "Corpus path (defaults to --corpus)");
  ingest->add_option("--split-out", split_out, "Write the seeded split as JSON");

  // learn
  auto* learn = app.add_subcommand("learn", "Run the learning scenario over the train split");
  std::string train_path;
  std::string memory_out;
  std::size_t stop_after = 0;
  bool restart = false;
  learn->add_option("--train", train_path, "Split JSON whose train ids are learned");
  learn->add_option("--out", memory_out, "Copy the final memory snapshot here");
  learn->add_option("--stop-after", stop_after, "Stop after this many cases (resume later)")->check(CLI::PositiveNumber);
  learn->add_flag("--restart", restart, "Discard an existing checkpoint");

  // practice
  auto* practice = app.add_subcommand("practice", "Run the practicing scenario over the test split");
  std::string strategy_name = "knowledge";
  double range = 1.0;
  std::string memory_in;
  std::string test_path;
  practice->add_option("--strategy", strategy_name, "none, knowledge, suggestion or discussion")
      ->check(CLI::IsMember({"none", "knowledge", "suggestion", "suggestions", "discussion", "both"}));
  practice->add_option("--range", range, "Retrieval range")->check(CLI::Range(0.0, 1.0));
  practice->add_option("--memory", memory_in, "Memory snapshot (defaults to the run's)");
  practice->add_option("--test", test_path, "Split JSON whose test ids are practiced");

  // eval
  auto* eval = app.add_subcommand("eval", "Rebuild the result tables of a run");
  std::string eval_run;
  eval->add_option("--run", eval_run, "Run directory (defaults to --run-dir)");

  // curve
  auto* curve = app.add_subcommand("curve", "Practice rows over a grid of retrieval ranges");
  std::string ranges_text = "0,0.25,0.5,0.75,1";
  std::vector<std::string> curve_strategies{"knowledge"};
  curve->add_option("--ranges", ranges_text, "Comma-separated ranges in [0,1]");
  curve->add_option("--strategies", curve_strategies, "Strategies to sweep")
      ->delimiter(',')
      ->check(CLI::IsMember({"knowledge", "suggestion", "suggestions", "discussion", "both"}));
  curve->add_option("--memory", memory_in, "Memory snapshot (defaults to the run's)");

  // multimodal
  auto* mm = app.add_subcommand("multimodal", "Practice with the image tools on the cases with attachments");
  std::string mm_strategy = "none";
  double mm_range = 1.0;
  mm->add_option("--strategy", mm_strategy)->check(CLI::IsMember({"none", "knowledge", "suggestion", "discussion"}));
  mm->add_option("--range", mm_range)->check(CLI::Range(0.0, 1.0));
  mm->add_option("--memory", memory_in, "Memory snapshot (defaults to the run's)");

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the /v1 session API");
  HttpServerOptions http;
  std::string state_dir;
  std::size_t max_sessions = 64;
  serve->add_option("--port", http.port)->check(CLI::Range(0, 65535));
  serve->add_option("--host", http.host);
  serve->add_option("--token", http.token, "Shared bearer token");
  serve->add_option("--state-dir", state_dir, "Session log directory (enables recovery)");
  serve->add_option("--max-sessions", max_sessions)->check(CLI::PositiveNumber);
  serve->add_option("--memory", memory_in, "Memory snapshot to recall from and learn into");

  auto fail = [&](std::string_view code, const std::string& message, int status) {
    err << json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
    return status;
  };

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  spdlog::set_level(g.quiet ? spdlog::level::warn : verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    RunConfig config = load_run_config(g);

    if (*ingest) {
      fs::path path = ingest_path.empty() ? fs::path(g.corpus) : fs::path(ingest_path);
      auto corpus = load_corpus(path);
      DatasetSplit split = split_dataset(corpus, config.seed, config.split);
      std::map<std::string, std::size_t> departments;
      for (const auto& r : corpus) ++departments[r.department];
      if (!split_out.empty()) {
        std::ofstream f(split_out, std::ios::trunc);
        if (!f) throw Error(ErrorCode::io, fmt::format("cannot write {}", split_out));
        f << json(split).dump(2) << "\n";
      }
      out << json{{"cases", corpus.size()},
                  {"departments", departments},
                  {"train", split.train.size()},
                  {"test", split.test.size()}}
                 .dump()
          << "\n";
      return 0;
    }

    if (*eval) {
      auto rows = evaluate_run(eval_run.empty() ? fs::path(g.run_dir) : fs::path(eval_run));
      for (const auto& r : rows) out << row_json(r).dump() << "\n";
      return 0;
    }

    auto corpus = load_corpus(g.corpus);

    if (*serve) {
      auto backends = make_backends(config, corpus);
      std::shared_ptr<EmbeddingProvider> embedder(backends, &backends->embedder());
      auto memory = std::make_shared<Memory>(embedder);
      if (!memory_in.empty()) load_memory_if_present(*memory, memory_in, false);
      ServiceOptions so;
      so.max_sessions = max_sessions;
      so.state_dir = state_dir;
      SessionService service(config, corpus, corpus_root(g.corpus), backends, memory, so);
      std::size_t recovered = service.recover();
      if (recovered) spdlog::info("recovered {} sessions", recovered);
      HttpServer server(service, http);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.run();
      g_server = nullptr;
      if (!memory_in.empty()) memory->persist(memory_in);
      return 0;
    }

    Experiment exp(config, corpus, g.corpus, g.run_dir);

    if (*learn) {
      std::vector<MedicalRecord> train =
          train_path.empty() ? exp.train_records() : select_records(corpus, read_split(train_path).train);
      if (restart) {
        fs::remove(exp.paths().progress());
        fs::remove(exp.paths().memory());
      }
      auto memory = exp.new_memory();
      auto report = exp.learn(train, *memory, stop_after ? std::optional<std::size_t>(stop_after) : std::nullopt);
      if (!memory_out.empty() && report.complete) memory->persist(memory_out);
      out << json{{"learned", report.learned},
                  {"resumed", report.resumed},
                  {"complete", report.complete},
                  {"cases", memory->case_count()},
                  {"failures", report.failures}}
                 .dump()
          << "\n";
      return 0;
    }

    auto memory = exp.new_memory();
    fs::path memory_path = memory_in.empty() ? exp.paths().memory() : fs::path(memory_in);

    if (*practice) {
      Strategy strategy = strategy_from_string(strategy_name);
      load_memory_if_present(*memory, memory_path, strategy != Strategy::none && range > 0.0);
      std::vector<MedicalRecord> test =
          test_path.empty() ? exp.test_records() : select_records(corpus, read_split(test_path).test);
      auto report = exp.practice(test, *memory, strategy, range);
      out << row_json(report.row).dump() << "\n";
      return 0;
    }

    if (*curve) {
      std::vector<Strategy> strategies;
      for (const auto& s : curve_strategies) strategies.push_back(strategy_from_string(s));
      auto ranges = parse_ranges(ranges_text);
      load_memory_if_present(*memory, memory_path, true);
      for (const auto& r : exp.curve(exp.test_records(), *memory, strategies, ranges)) {
        out << row_json(r.row).dump() << "\n";
      }
      return 0;
    }

    if (*mm) {
      Strategy strategy = strategy_from_string(mm_strategy);
      load_memory_if_present(*memory, memory_path, strategy != Strategy::none && mm_range > 0.0);
      auto subset = multimodal_subset(exp.test_records());
      auto report = exp.multimodal(subset, *memory, strategy, mm_range);
      out << row_json(report.row).dump() << "\n";
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  } catch (const Error& e) {
    return fail(to_string(e.code()), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return fail("usage", "no subcommand", 2);
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace medco
