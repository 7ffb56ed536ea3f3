#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run cli(const fs::path& workdir, const std::string& args) {
  const std::string cmd =
      std::string(TERNARYCL_CLI_PATH) + " --workdir '" + workdir.string() + "' " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

const std::string kFixture = TERNARYCL_FIXTURE_DIR;
const std::string kConfig = "--config '" + kFixture + "/config.json'";

void prepare(const fs::path& wd) {
  REQUIRE(cli(wd, "prepare --source '" + kFixture + "'").code == 0);
}

}  // namespace

TEST_CASE("cli: full pipeline on the fixture with manifests at every stage") {
  TempDir dir;
  const auto wd = dir.path() / "work";
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::string> steps{
      "prepare --source '" + kFixture + "'",
      "slice --keep 0.5 --seed 7",
      "mine-synonyms --threshold 0.3",
      "pretrain " + kConfig,
      "finetune " + kConfig,
      "eval --slice full",
      "eval --slice full --protocol filtered",
      "pretrain " + kConfig + " --data sparsity",
      "finetune " + kConfig + " --data sparsity",
      "eval --slice sparsity",
      "eval --slice fewshot",
      "export-embeddings --format tsv",
  };
  for (const auto& s : steps) {
    const auto r = cli(wd, s);
    INFO(s << "\n" << r.output);
    REQUIRE(r.code == 0);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(seconds < 60.0);

  for (const char* d : {"data", "slices", "checkpoints/full/pretrain", "checkpoints/full/finetune",
                        "checkpoints/sparsity/pretrain", "checkpoints/sparsity/finetune", "reports", "logs"}) {
    INFO(d);
    REQUIRE(fs::exists(wd / d / "manifest.json"));
    const auto m = read_json(wd / d / "manifest.json");
    CHECK(m.is_object());
    std::size_t manifests = 0;
    for (const auto& e : fs::directory_iterator(wd / d)) manifests += e.path().filename() == "manifest.json";
    CHECK(manifests == 1);
  }
  const auto data = read_json(wd / "data/manifest.json");
  CHECK(data.at("dataset").at("train") == 30);
  CHECK(data.at("synonyms").at("pairs").get<int>() > 0);
  CHECK(data.at("inputs").size() == 4);
  CHECK(data.at("version").is_string());
  CHECK(read_json(wd / "slices/manifest.json").at("train_triples") == 15);

  const auto ft = read_json(wd / "checkpoints/full/finetune/manifest.json");
  CHECK(ft.at("config").at("stage") == "finetune");
  CHECK(ft.at("config").at("model").at("dim") == 16);
  CHECK(ft.at("init").at("checkpoint") == "checkpoints/full/pretrain/best");
  CHECK(ft.at("inputs").contains("train.txt"));

  const auto report = read_json(wd / "reports/full-full-raw.json");
  CHECK(report.at("n_queries") == 16);
  CHECK(report.at("protocol") == "raw");
  CHECK(report.at("H").contains("100"));
  CHECK(fs::exists(wd / "reports" / report.at("per_query_ranks_path").get<std::string>()));
  for (const char* s : {"few_shot_entity", "few_shot_relation", "zero_shot_entity", "zero_shot_relation"}) {
    CHECK(fs::exists(wd / "reports" / ("sparsity-" + std::string(s) + "-raw.json")));
  }

  // |E| rows of label + D values
  for (const char* f : {"full-entity-table.tsv", "full-entity-text.tsv"}) {
    std::ifstream in(wd / "reports" / f);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      CHECK(std::count(line.begin(), line.end(), '\t') == 16);
      ++rows;
    }
    CHECK(rows == data.at("dataset").at("entities").get<std::size_t>());
  }

  // one JSON record per epoch
  std::ifstream log(wd / "logs/full-pretrain.jsonl");
  std::string line;
  std::size_t epochs = 0;
  while (std::getline(log, line)) {
    const auto rec = json::parse(line);
    CHECK(rec.contains("mean_loss"));
    CHECK(rec.contains("wall_ms"));
    ++epochs;
  }
  CHECK(epochs == 10);
  CHECK(!fs::exists(wd / ".lock"));
}

TEST_CASE("cli: identical inputs and seed give identical outputs") {
  TempDir dir;
  for (const char* name : {"a", "b"}) {
    const auto wd = dir.path() / name;
    prepare(wd);
    REQUIRE(cli(wd, "pretrain " + kConfig + " --epochs 3").code == 0);
    REQUIRE(cli(wd, "finetune " + kConfig + " --epochs 5").code == 0);
    REQUIRE(cli(wd, "eval").code == 0);
  }
  for (const char* f : {"data/train.txt", "checkpoints/full/pretrain/last.bin", "checkpoints/full/pretrain/last.json",
                        "checkpoints/full/finetune/last.bin", "checkpoints/full/finetune/best.json",
                        "reports/full-full-raw.json", "reports/full-full-raw.ranks.tsv"}) {
    INFO(f);
    CHECK(slurp(dir.path() / "a" / f) == slurp(dir.path() / "b" / f));
  }
}

TEST_CASE("cli: ablation flags run end to end with distinct loss traces") {
  TempDir dir;
  const auto wd = dir.path() / "work";
  prepare(wd);
  REQUIRE(cli(wd, "mine-synonyms --threshold 0.3").code == 0);
  const std::vector<std::pair<std::string, std::string>> runs{
      {"all", ""},           {"no-ce", "--disable CE"},    {"no-cr", "--disable CR"},
      {"no-csf", "--disable CSF"}, {"no-csy", "--disable CSY"}, {"fusion-a", "--fusion A"}};
  std::set<std::string> traces;
  for (const auto& [run, flags] : runs) {
    const auto r = cli(wd, "pretrain " + kConfig + " --epochs 3 --run " + run + " " + flags);
    INFO(run << "\n" << r.output);
    REQUIRE(r.code == 0);
    const auto m = read_json(wd / "checkpoints" / run / "pretrain/manifest.json");
    traces.insert(m.at("result").at("loss_trace").dump());
    REQUIRE(cli(wd, "finetune " + kConfig + " --epochs 2 --run " + run).code == 0);
    REQUIRE(cli(wd, "eval --run " + run).code == 0);
  }
  CHECK(traces.size() == runs.size());
  const auto no_csf = read_json(wd / "checkpoints/no-csf/pretrain/manifest.json");
  CHECK(no_csf.at("config").at("self_contrast") == false);
  CHECK(cli(wd, "pretrain " + kConfig + " --disable CE,CR").code == 1);
  CHECK(cli(wd, "pretrain " + kConfig + " --disable XX").code == 1);
  CHECK(cli(wd, "finetune " + kConfig + " --epochs 2 --fresh --run scratch").code == 0);
}

TEST_CASE("cli: validation errors exit 1, runtime failures exit 2") {
  TempDir dir;
  const auto wd = dir.path() / "work";
  auto r = cli(wd, "eval");
  CHECK(r.code == 1);
  CHECK(r.output.find("run `prepare` first") != std::string::npos);

  prepare(wd);
  r = cli(wd, "eval");
  CHECK(r.code == 1);
  CHECK(r.output.find("checkpoint not found") != std::string::npos);

  r = cli(wd, "pretrain --no-such-flag");
  CHECK(r.code == 1);
  CHECK(r.output.find("Usage") != std::string::npos);
  CHECK(cli(wd, "").code == 1);
  CHECK(cli(wd, "slice --keep 1.5 --seed 1").code == 1);
  CHECK(cli(wd, "eval --slice sparsity").code == 1);
  CHECK(cli(wd, "eval --protocol fuzzy").code == 1);
  CHECK(cli(wd, "prepare --source /nonexistent").code == 1);
  CHECK(cli(wd, "--version").code == 0);

  // a lock held by a live process (this one) blocks the workdir
  std::ofstream(wd / ".lock") << getpid() << "\n";
  r = cli(wd, "slice --keep 0.5 --seed 1");
  CHECK(r.code == 2);
  CHECK(r.output.find("locked") != std::string::npos);
  // a stale lock is taken over
  std::ofstream(wd / ".lock") << 999999999 << "\n";
  CHECK(cli(wd, "slice --keep 0.5 --seed 1").code == 0);
  CHECK(!fs::exists(wd / ".lock"));
}
