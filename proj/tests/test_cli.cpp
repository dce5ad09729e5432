#include <doctest.h>

#include <sstream>

#include "medco/cli.hpp"
#include "support.hpp"

using namespace medco;
using namespace medco::testing;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"practice", "--range", "1.5"}).code == 2);
  CHECK(cli({"practice", "--strategy", "magic"}).code == 2);
  CHECK(cli({"-q", "-v", "ingest"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("runtime errors exit with 1 and a JSON error line") {
  TempDir dir;
  auto r = cli({"--corpus", (dir / "missing").string(), "ingest"});
  CHECK(r.code == 1);
  auto j = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  CHECK(j["error"]["code"] == "io");
}

TEST_CASE("ingest, learn, practice, eval, multimodal and curve") {
  TempDir dir;
  std::string corpus = demo_corpus().string();
  std::string run = (dir / "run").string();
  auto base = [&](std::vector<std::string> rest) {
    std::vector<std::string> a = {"-q", "--corpus", corpus, "--run-dir", run};
    a.insert(a.end(), rest.begin(), rest.end());
    return cli(a);
  };

  auto ingest = base({"ingest", "--split-out", (dir / "split.json").string()});
  CHECK(ingest.code == 0);
  auto split = nlohmann::json::parse(slurp(dir / "split.json"));
  CHECK(split["train"].size() == 2);
  CHECK(split["test"].size() == 2);

  CHECK(base({"learn", "--stop-after", "1"}).code == 0);
  CHECK(base({"learn", "--out", (dir / "mem.json").string()}).code == 0);
  CHECK(std::filesystem::exists(dir / "mem.json"));

  for (const char* s : {"none", "knowledge", "suggestion", "discussion"}) {
    auto r = base({"practice", "--strategy", s, "--range", "1"});
    CHECK_MESSAGE(r.code == 0, r.err);
  }
  auto eval = base({"eval"});
  CHECK(eval.code == 0);
  auto hde = slurp(dir / "run/results/hde.tsv");
  CHECK(count_lines(hde) == 5);
  CHECK(hde.find("w/ discussion") != std::string::npos);

  CHECK(base({"multimodal"}).code == 0);
  CHECK(slurp(dir / "run/results/hde.tsv").find("Student + Multi-modality") != std::string::npos);

  std::string curve_run = (dir / "curve").string();
  CHECK(cli({"-q", "--corpus", corpus, "--run-dir", curve_run, "learn"}).code == 0);
  auto curve = cli({"-q", "--corpus", corpus, "--run-dir", curve_run, "curve", "--ranges", "0,0.25,0.5,0.75,1"});
  CHECK(curve.code == 0);
  auto curve_hde = slurp(dir / "curve/results/hde.tsv");
  CHECK(count_lines(curve_hde) == 6);
  CHECK(curve_hde.find("same but know 75%") != std::string::npos);

  CHECK(cli({"-q", "--corpus", corpus, "--run-dir", curve_run, "curve", "--ranges", "0,2"}).code != 0);
}
