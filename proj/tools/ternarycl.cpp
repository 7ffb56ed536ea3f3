// SPDX-License-Identifier: Apache-2.0
//
// ternarycl: dataset preparation, slicing, synonym mining, pretraining,
// finetuning, evaluation and embedding export over one working directory.

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include <openssl/evp.h>

#include "ternarycl/encoder.hpp"
#include "ternarycl/evaluator.hpp"
#include "ternarycl/kg_data.hpp"
#include "ternarycl/parallel.hpp"
#include "ternarycl/trainer.hpp"
#include "ternarycl/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ternarycl;

namespace {

/// Bad input from the user: exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string iso_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

json file_hashes(const std::vector<fs::path>& files) {
  json out = json::object();
  for (const auto& f : files) {
    if (fs::exists(f)) out[f.filename().string()] = {{"sha256", sha256_file(f)}, {"bytes", fs::file_size(f)}};
  }
  return out;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string format_float(float x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, r.ptr};
}

class Workdir {
 public:
  explicit Workdir(fs::path root) : root_(std::move(root)) {}
  const fs::path& root() const { return root_; }
  fs::path data() const { return root_ / "data"; }
  fs::path slices() const { return root_ / "slices"; }
  fs::path checkpoints(const std::string& run, Stage stage) const {
    return root_ / "checkpoints" / run / to_string(stage);
  }
  fs::path reports() const { return root_ / "reports"; }
  fs::path logs() const { return root_ / "logs"; }

 private:
  fs::path root_;
};

/// Exclusive lock on a workdir held for the lifetime of the object. A lock
/// left behind by a dead process is taken over.
class WorkdirLock {
 public:
  explicit WorkdirLock(const fs::path& root) : path_(root / ".lock") {
    fs::create_directories(root);
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        if (::write(fd, pid.data(), pid.size()) < 0) {
          ::close(fd);
          throw std::runtime_error("cannot write lock file " + path_.string());
        }
        ::close(fd);
        held_ = true;
        return;
      }
      long owner = 0;
      std::ifstream(path_) >> owner;
      if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM)) {
        throw std::runtime_error("workdir " + root.string() + " is locked by running process " +
                                 std::to_string(owner));
      }
      std::error_code ec;
      fs::remove(path_, ec);
    }
    throw std::runtime_error("cannot acquire lock " + path_.string());
  }
  ~WorkdirLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  fs::path path_;
  bool held_ = false;
};

json run_manifest(const std::string& command, const std::vector<std::string>& args) {
  return {{"command", command}, {"argv", args}, {"version", build_version()}, {"started_at", iso_now()}};
}

/// Directories with several outputs keep one manifest with an entry per file.
void record_entry(const fs::path& dir, const std::string& file, json entry) {
  const auto path = dir / "manifest.json";
  json m = fs::exists(path) ? read_json(path) : json{{"entries", json::object()}};
  entry["finished_at"] = iso_now();
  m["entries"][file] = std::move(entry);
  write_json(path, m);
}

std::vector<fs::path> data_files(const Workdir& wd) {
  return {wd.data() / "train.txt", wd.data() / "valid.txt", wd.data() / "test.txt", wd.data() / "clusters.txt"};
}

DatasetBundle load_full(const Workdir& wd) {
  if (!fs::exists(wd.data() / "manifest.json")) {
    throw ValidationError("dataset not prepared in " + wd.root().string() + "; run `prepare` first");
  }
  const auto f = data_files(wd);
  return load_dataset(f[0], f[1], f[2], f[3]);
}

DatasetBundle load_bundle(const Workdir& wd, const std::string& data) {
  DatasetBundle full = load_full(wd);
  if (data == "full") return full;
  const auto manifest = wd.slices() / "manifest.json";
  if (!fs::exists(manifest)) throw ValidationError("no sparsity slice in " + wd.root().string() + "; run `slice` first");
  const json m = read_json(manifest);
  SliceInfo info{"data/train.txt", m.at("keep").get<double>(), m.at("seed").get<std::uint64_t>()};
  return with_train(full, read_triples(wd.slices() / "train.txt", full.vocab), info);
}

SynonymTable load_synonyms(const Workdir& wd, const Vocabulary& vocab) {
  const auto path = wd.data() / "synonyms.txt";
  if (!fs::exists(path)) return {std::vector<std::vector<EntityId>>(vocab.entity_count())};
  return read_synonyms(path, vocab);
}

json shot_summary(const DatasetBundle& b) {
  const auto s = extract_shot_slices(b);
  json j;
  for (std::size_t k = 0; k <= kMaxShot; ++k) {
    j["entities"][std::to_string(k)] = s.entities[k].size();
    j["relations"][std::to_string(k)] = s.relations[k].size();
    j["entity_tests"][std::to_string(k)] = s.entity_tests[k].size();
    j["relation_tests"][std::to_string(k)] = s.relation_tests[k].size();
  }
  j["few_shot_entities"] = s.few_shot_entities().size();
  j["few_shot_relations"] = s.few_shot_relations().size();
  j["few_shot_entity_tests"] = s.few_shot_entity_tests().size();
  j["few_shot_relation_tests"] = s.few_shot_relation_tests().size();
  return j;
}

json dataset_summary(const DatasetBundle& b) {
  return {{"train", b.train.size()},
          {"valid", b.valid.size()},
          {"test", b.test.size()},
          {"entities", b.vocab.entity_count()},
          {"base_relations", b.vocab.base_relation_count()},
          {"words", b.vocab.word_count()},
          {"clusters", b.clusters.members.size()},
          {"duplicate_triples", b.warnings.duplicate_triples},
          {"eval_overlaps_train", b.warnings.eval_overlaps_train}};
}

// ------------------------------------------------------------------ commands

struct PrepareArgs {
  std::string source, train, valid, test, clusters;
};

int cmd_prepare(const Workdir& wd, const PrepareArgs& a, const std::vector<std::string>& argv) {
  auto pick = [&](const std::string& explicit_path, const char* name) -> fs::path {
    if (!explicit_path.empty()) return explicit_path;
    if (a.source.empty()) throw ValidationError(std::string("--") + name + " or --source is required");
    for (const char* ext : {".txt", ".txt.gz", ""}) {
      const fs::path p = fs::path(a.source) / (std::string(name) + ext);
      if (fs::exists(p)) return p;
    }
    throw ValidationError("no " + std::string(name) + " file in " + a.source);
  };
  const std::vector<fs::path> inputs{pick(a.train, "train"), pick(a.valid, "valid"), pick(a.test, "test"),
                                     pick(a.clusters, "clusters")};
  for (const auto& p : inputs) {
    if (!fs::exists(p)) throw ValidationError("input file not found: " + p.string());
  }
  const auto b = load_dataset(inputs[0], inputs[1], inputs[2], inputs[3]);
  fs::create_directories(wd.data());
  const auto out = data_files(wd);
  write_triples(out[0], b.train, b.vocab);
  write_triples(out[1], b.valid, b.vocab);
  write_triples(out[2], b.test, b.vocab);
  write_clusters(out[3], b.clusters, b.vocab);
  fs::remove(wd.data() / "synonyms.txt");

  json m = run_manifest("prepare", argv);
  json in = json::object();
  for (const auto& p : inputs) in[p.string()] = {{"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}};
  m["inputs"] = in;
  m["outputs"] = file_hashes(out);
  m["dataset"] = dataset_summary(b);
  m["shot_slices"] = shot_summary(b);
  m["finished_at"] = iso_now();
  write_json(wd.data() / "manifest.json", m);
  std::cout << "prepared " << b.train.size() << " train / " << b.valid.size() << " valid / " << b.test.size()
            << " test triples, " << b.vocab.entity_count() << " entities, " << b.vocab.base_relation_count()
            << " relations\n";
  if (b.warnings.duplicate_triples || b.warnings.eval_overlaps_train) {
    std::cerr << "warning: dropped " << b.warnings.duplicate_triples << " duplicate triples and "
              << b.warnings.eval_overlaps_train << " valid/test triples also present in train\n";
  }
  return 0;
}

int cmd_slice(const Workdir& wd, double keep, std::uint64_t seed, const std::vector<std::string>& argv) {
  if (!(keep > 0 && keep <= 1)) throw ValidationError("--keep must be in (0, 1]");
  const auto full = load_full(wd);
  const auto sliced = slice_sparsity(full, keep, seed);
  fs::create_directories(wd.slices());
  write_triples(wd.slices() / "train.txt", sliced.train, sliced.vocab);
  json m = run_manifest("slice", argv);
  m["keep"] = keep;
  m["seed"] = seed;
  m["source"] = file_hashes({wd.data() / "train.txt"});
  m["outputs"] = file_hashes({wd.slices() / "train.txt"});
  m["train_triples"] = sliced.train.size();
  m["full_train_triples"] = full.train.size();
  m["shot_slices"] = shot_summary(sliced);
  m["finished_at"] = iso_now();
  write_json(wd.slices() / "manifest.json", m);
  const auto& shots = m["shot_slices"];
  std::cout << "kept " << sliced.train.size() << " of " << full.train.size() << " train triples; few-shot entities "
            << shots["few_shot_entities"] << ", zero-shot entities " << shots["entities"]["0"] << "\n";
  return 0;
}

fs::path existing_checkpoint(const Workdir& wd, const std::string& run, Stage stage) {
  const auto dir = wd.checkpoints(run, stage);
  for (const char* name : {"best", "last"}) {
    if (fs::exists(dir / (std::string(name) + ".json"))) return dir / name;
  }
  throw ValidationError("checkpoint not found: no " + std::string(to_string(stage)) + " checkpoint for run '" + run +
                        "' in " + dir.string() + "; run `" + to_string(stage) + "` first");
}

struct MineArgs {
  double threshold = 0.8;
  std::optional<double> semantic;
  std::string run = "full";
};

int cmd_mine(const Workdir& wd, const MineArgs& a, const std::vector<std::string>& argv) {
  const auto b = load_full(wd);
  SynonymOptions options{a.threshold, a.semantic};
  std::optional<Tensor<float>> text;
  if (a.semantic) {
    const auto ck = load_checkpoint(existing_checkpoint(wd, a.run, Stage::Pretrain), b.vocab);
    text.emplace(Shape{b.vocab.entity_count(), ck.model.config.dim});
    parallel_for(b.vocab.entity_count(), ck.config.worker_count(), [&](std::size_t e, std::size_t) {
      Tape<float> tape(ck.model.store);
      Scorer<float> s(ck.model, b.vocab, tape);
      const auto& v = tape.value(s.entity_text(static_cast<EntityId>(e)));
      std::copy(v.data().begin(), v.data().end(), text->row(e).begin());
    });
  }
  const auto table = mine_synonyms(b, text ? &*text : nullptr, options);
  write_synonyms(wd.data() / "synonyms.txt", table, b.vocab);

  json m = read_json(wd.data() / "manifest.json");
  json entry = run_manifest("mine-synonyms", argv);
  entry["idf_threshold"] = a.threshold;
  entry["semantic_threshold"] = a.semantic ? json(*a.semantic) : json(nullptr);
  entry["pairs"] = table.pair_count();
  entry["outputs"] = file_hashes({wd.data() / "synonyms.txt"});
  entry["finished_at"] = iso_now();
  m["synonyms"] = entry;
  write_json(wd.data() / "manifest.json", m);
  std::cout << "mined " << table.pair_count() << " synonym pairs\n";
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string data = "full";
  std::string run;
  std::vector<std::string> disable;
  std::string fusion;
  std::optional<std::size_t> epochs, batch_size, n_neg_ent, n_neg_rel, threads;
  std::optional<double> lr, tau;
  std::optional<std::uint64_t> seed;
  std::string word_vectors;
  bool resume = false;
  bool fresh = false;
};

TrainConfig build_config(const TrainArgs& a, Stage stage) {
  TrainConfig c = TrainConfig::defaults(stage);
  try {
    if (!a.config_path.empty()) {
      json j = read_json(a.config_path);
      if (j.contains("pretrain") || j.contains("finetune")) {
        json section = j.contains(to_string(stage)) ? j.at(to_string(stage)) : json::object();
        // one model shape for both stages unless a section overrides it
        for (const char* other : {"pretrain", "finetune"}) {
          if (!section.contains("model") && j.contains(other) && j.at(other).contains("model")) {
            section["model"] = j.at(other).at("model");
          }
        }
        j = section;
      }
      if (j.contains("stage") && j.at("stage") != to_string(stage)) {
        throw ValidationError(a.config_path + ": stage '" + j.at("stage").get<std::string>() + "' does not match command");
      }
      j["stage"] = to_string(stage);
      c = j.get<TrainConfig>();
    }
    for (const auto& item : a.disable) {
      std::stringstream parts(item);
      std::string d;
      while (std::getline(parts, d, ',')) {
        if (d == "CE") c.entity_contrast = false;
        else if (d == "CR") c.relation_contrast = false;
        else if (d == "CSF") c.self_contrast = false;
        else if (d == "CSY") c.synonym_contrast = false;
        else throw ValidationError("--disable expects CE, CR, CSF or CSY, got '" + d + "'");
      }
    }
    if (!a.fusion.empty()) c.fusion_variant = a.fusion == "A" ? FusionVariant::A : FusionVariant::B;
    if (a.epochs) c.epochs = *a.epochs;
    if (a.batch_size) c.batch_size = *a.batch_size;
    if (a.n_neg_ent) c.n_neg_ent = *a.n_neg_ent;
    if (a.n_neg_rel) c.n_neg_rel = *a.n_neg_rel;
    if (a.threads) c.threads = *a.threads;
    if (a.lr) c.lr = *a.lr;
    if (a.tau) c.tau = *a.tau;
    if (a.seed) c.seed = *a.seed;
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  } catch (const json::exception& e) {
    throw ValidationError(a.config_path + ": " + e.what());
  }
  for (const auto& note : c.grid_notes()) std::cerr << "note: " << note << "\n";
  return c;
}

json history_summary(const TrainResult& r) {
  json j = {{"epochs_run", r.history.size()},
            {"completed_epochs", r.last.epoch},
            {"adam_steps", r.last.adam.step},
            {"stopped_early", r.last.stopped_early},
            {"best_epoch", r.last.best_epoch},
            {"best_val_ARR", r.last.best_val_arr ? json(*r.last.best_val_arr) : json(nullptr)}};
  j["final_mean_loss"] = r.history.empty() ? json(nullptr) : json(r.history.back().mean_loss);
  json losses = json::array();
  for (const auto& h : r.history) losses.push_back(h.mean_loss);
  j["loss_trace"] = losses;
  return j;
}

int cmd_train(const Workdir& wd, TrainArgs a, Stage stage, const std::vector<std::string>& argv) {
  if (a.data != "full" && a.data != "sparsity") throw ValidationError("--data must be full or sparsity");
  if (a.run.empty()) a.run = a.data;
  const TrainConfig config = build_config(a, stage);
  const auto bundle = load_bundle(wd, a.data);
  const auto dir = wd.checkpoints(a.run, stage);
  fs::create_directories(dir);
  fs::create_directories(wd.logs());
  const std::string log_name = a.run + "-" + to_string(stage) + ".jsonl";

  const bool resuming = a.resume && fs::exists(dir / "last.json");
  std::ofstream log(wd.logs() / log_name, resuming ? std::ios::app : std::ios::trunc);
  TrainHooks hooks{.checkpoint_dir = dir, .log = &log, .on_pretrain_batch = {}};
  if (!resuming) {
    for (const char* name : {"best.json", "best.bin", "last.json", "last.bin"}) fs::remove(dir / name);
  }

  json m = run_manifest(to_string(stage), argv);
  m["run"] = a.run;
  m["data"] = a.data;
  m["config"] = config;
  m["seed"] = config.seed;
  std::vector<fs::path> inputs = data_files(wd);
  if (a.data == "sparsity") inputs.push_back(wd.slices() / "train.txt");

  TrainResult result;
  if (stage == Stage::Pretrain) {
    const auto synonyms = load_synonyms(wd, bundle.vocab);
    inputs.push_back(wd.data() / "synonyms.txt");
    if (config.synonym_contrast && synonyms.pair_count() == 0) {
      std::cerr << "note: no synonym pairs (run `mine-synonyms`); synonym contrast adds no patterns\n";
    }
    std::optional<Checkpoint> start;
    if (resuming) {
      start = load_checkpoint(dir / "last", bundle.vocab);
    } else if (!a.word_vectors.empty()) {
      start = fresh_checkpoint(config, bundle.vocab);
      const auto wv = load_pretrained_word_vectors(a.word_vectors, bundle.vocab, config.model.word_dim, config.seed);
      start->model.store[start->model.encoder.words].value = wv.table;
      m["word_vectors"] = {{"path", a.word_vectors}, {"coverage", wv.coverage}};
      std::cerr << "word vectors cover " << wv.covered << " of " << bundle.vocab.word_count() << " words\n";
    }
    m["patterns"] = pretrain_patterns(bundle, synonyms, config).size();
    result = pretrain(bundle, synonyms, config, hooks, std::move(start));
  } else {
    Checkpoint start;
    if (resuming) {
      start = load_checkpoint(dir / "last", bundle.vocab);
      m["init"] = "resume";
    } else if (a.fresh) {
      start = fresh_checkpoint(config, bundle.vocab);
      m["init"] = "fresh";
    } else {
      const auto from = existing_checkpoint(wd, a.run, Stage::Pretrain);
      start = load_checkpoint(from, bundle.vocab);
      m["init"] = {{"checkpoint", fs::relative(from, wd.root()).string()},
                   {"files", file_hashes({from.string() + ".json", from.string() + ".bin"})}};
    }
    result = finetune(bundle, std::move(start), config, hooks);
  }

  m["inputs"] = file_hashes(inputs);
  m["dataset"] = dataset_summary(bundle);
  m["result"] = history_summary(result);
  m["outputs"] = file_hashes({dir / "last.json", dir / "last.bin", dir / "best.json", dir / "best.bin"});
  m["log"] = fs::relative(wd.logs() / log_name, wd.root()).string();
  m["finished_at"] = iso_now();
  write_json(dir / "manifest.json", m);
  record_entry(wd.logs(), log_name, {{"command", to_string(stage)}, {"run", a.run}, {"config", config}});

  const auto& last = result.history.empty() ? EpochRecord{} : result.history.back();
  std::cout << to_string(stage) << " run '" << a.run << "': " << result.last.epoch << " epochs, final mean loss "
            << last.mean_loss;
  if (result.last.best_val_arr) std::cout << ", best valid ARR " << *result.last.best_val_arr << " at epoch " << result.last.best_epoch;
  std::cout << "\n";
  return 0;
}

struct EvalArgs {
  std::string slice = "full";
  std::string protocol = "raw";
  std::string run;
  std::string data;
  std::string stage = "finetune";
  std::string split = "test";
};

json report_json(const MetricsReport& r, const std::string& ranks_file) {
  json j = r;
  j.erase("queries");
  j["per_query_ranks_path"] = ranks_file;
  return j;
}

void write_ranks(const fs::path& path, const MetricsReport& r, const DatasetBundle& b) {
  std::ofstream out(path);
  out << "entity\trelation\tdirection\tanswer_cluster\trank\n";
  for (const auto& q : r.queries) {
    out << b.vocab.entity_name(q.entity) << "\t" << b.vocab.relation_name(q.relation) << "\t"
        << (q.head_query ? "head" : "tail") << "\t" << q.answer_cluster << "\t" << q.rank << "\n";
  }
}

std::string fmt_metric(const std::optional<double>& v) {
  if (!v) return "null";
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << *v;
  return o.str();
}

int cmd_eval(const Workdir& wd, EvalArgs a, const std::vector<std::string>& argv) {
  if (a.slice != "full" && a.slice != "sparsity" && a.slice != "fewshot") {
    throw ValidationError("--slice must be full, sparsity or fewshot");
  }
  Protocol protocol;
  try {
    protocol = protocol_from_string(a.protocol);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  if (a.data.empty()) a.data = a.slice == "full" ? "full" : "sparsity";
  if (a.run.empty()) a.run = a.data;
  const Stage stage = a.stage == "pretrain" ? Stage::Pretrain : Stage::Finetune;
  if (a.split != "test" && a.split != "valid") throw ValidationError("--split must be test or valid");

  const auto bundle = load_bundle(wd, a.data);
  const auto ck_path = existing_checkpoint(wd, a.run, stage);
  const auto ck = load_checkpoint(ck_path, bundle.vocab);
  const EvalOptions options{protocol, ck.config.worker_count()};

  std::map<std::string, MetricsReport> reports;
  const auto& triples = a.split == "test" ? bundle.test : bundle.valid;
  if (a.slice == "fewshot") {
    if (a.split != "test") throw ValidationError("--slice fewshot evaluates the test split only");
    reports = evaluate_shot_slices(bundle, ck.model, options);
  } else {
    reports[a.slice] = evaluate(bundle, ck.model, triples, a.slice, options);
  }

  fs::create_directories(wd.reports());
  for (const auto& [name, r] : reports) {
    const std::string stem = a.run + "-" + name + "-" + (a.split == "test" ? "" : "valid-") + to_string(protocol);
    write_ranks(wd.reports() / (stem + ".ranks.tsv"), r, bundle);
    json j = report_json(r, stem + ".ranks.tsv");
    write_json(wd.reports() / (stem + ".json"), j);
    json entry = run_manifest("eval", argv);
    entry["checkpoint"] = fs::relative(ck_path, wd.root()).string();
    entry["checkpoint_files"] = file_hashes({ck_path.string() + ".json", ck_path.string() + ".bin"});
    entry["data"] = a.data;
    entry["inputs"] = file_hashes(data_files(wd));
    record_entry(wd.reports(), stem + ".json", entry);
    std::cout << name << " (" << to_string(protocol) << ", " << r.n_queries << " queries): AR " << fmt_metric(r.ar)
              << "  ARR " << fmt_metric(r.arr) << "  H@1 " << fmt_metric(r.hits.at(1)) << "  H@10 "
              << fmt_metric(r.hits.at(10)) << "  H@50 " << fmt_metric(r.hits.at(50)) << "  H@100 "
              << fmt_metric(r.hits.at(100)) << "\n";
  }
  return 0;
}

int cmd_export(const Workdir& wd, const std::string& format, std::string run, const std::string& stage_name,
               const std::vector<std::string>& argv) {
  if (format != "tsv") throw ValidationError("--format must be tsv");
  if (run.empty()) run = "full";
  const Stage stage = stage_name == "pretrain" ? Stage::Pretrain : Stage::Finetune;
  const auto bundle = load_full(wd);
  const auto ck_path = existing_checkpoint(wd, run, stage);
  const auto ck = load_checkpoint(ck_path, bundle.vocab);
  const auto& model = ck.model;
  const std::size_t n = bundle.vocab.entity_count(), d = model.config.dim;

  Tensor<float> text({n, d});
  parallel_for(n, ck.config.worker_count(), [&](std::size_t e, std::size_t) {
    Tape<float> tape(model.store);
    Scorer<float> s(model, bundle.vocab, tape);
    const auto& v = tape.value(s.head_repr(static_cast<EntityId>(e)));
    std::copy(v.data().begin(), v.data().end(), text.row(e).begin());
  });

  fs::create_directories(wd.reports());
  auto write = [&](const std::string& file, const Tensor<float>& table) {
    std::ofstream out(wd.reports() / file);
    for (std::size_t e = 0; e < n; ++e) {
      out << bundle.vocab.entity_name(static_cast<EntityId>(e));
      for (float x : table.row(e)) out << "\t" << format_float(x);
      out << "\n";
    }
    json entry = run_manifest("export-embeddings", argv);
    entry["checkpoint"] = fs::relative(ck_path, wd.root()).string();
    entry["rows"] = n;
    entry["columns"] = d + 1;
    record_entry(wd.reports(), file, entry);
  };
  write(run + "-entity-table.tsv", model.store[model.scorer.entities].value);
  write(run + "-entity-text.tsv", text);
  std::cout << "exported " << n << " x " << d << " entity embeddings to " << wd.reports().string() << "\n";
  return 0;
}

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--config", a.config_path, "JSON training config (flat or with pretrain/finetune sections)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--data", a.data, "train on the full data or the sparsity slice")
      ->check(CLI::IsMember({"full", "sparsity"}));
  cmd->add_option("--run", a.run, "run name under checkpoints/ (default: the --data value)");
  cmd->add_option("--disable", a.disable, "ablate CE, CR, CSF or CSY (repeatable, comma separated)");
  cmd->add_option("--fusion", a.fusion, "fusion variant")->check(CLI::IsMember({"A", "B"}));
  cmd->add_option("--epochs", a.epochs);
  cmd->add_option("--batch-size", a.batch_size);
  cmd->add_option("--lr", a.lr);
  cmd->add_option("--tau", a.tau);
  cmd->add_option("--neg-ent", a.n_neg_ent, "negative entities per pattern");
  cmd->add_option("--neg-rel", a.n_neg_rel, "negative relations per pattern");
  cmd->add_option("--seed", a.seed);
  cmd->add_option("--threads", a.threads, "worker threads (default: TERNARYCL_THREADS or 1)");
  cmd->add_flag("--resume", a.resume, "continue from the run's last checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ternarycl: contrastive ternary-pattern training for open knowledge graphs"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string workdir = ".";
  app.add_option("--workdir", workdir, "working directory holding data/, slices/, checkpoints/, reports/, logs/");
  app.set_version_flag("--version", build_version());

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "load, validate and normalise a dataset into data/");
  prepare->add_option("--source", prep.source, "directory with train, valid, test and clusters files (.txt or .txt.gz)");
  prepare->add_option("--train", prep.train);
  prepare->add_option("--valid", prep.valid);
  prepare->add_option("--test", prep.test);
  prepare->add_option("--clusters", prep.clusters);

  double keep = 0.2;
  std::uint64_t slice_seed = 0;
  auto* slice = app.add_subcommand("slice", "keep a seeded fraction of the train triples in slices/");
  slice->add_option("--keep", keep, "fraction of train triples to keep")->required();
  slice->add_option("--seed", slice_seed)->required();

  MineArgs mine;
  auto* mine_cmd = app.add_subcommand("mine-synonyms", "write synonym pairs to data/synonyms.txt");
  mine_cmd->add_option("--threshold", mine.threshold, "IDF token-overlap threshold");
  mine_cmd->add_option("--semantic-threshold", mine.semantic, "cosine threshold on textual embeddings of a pretrain run");
  mine_cmd->add_option("--run", mine.run, "pretrain run providing textual embeddings");

  TrainArgs pre_args;
  auto* pre = app.add_subcommand("pretrain", "contrastive pretraining");
  add_train_options(pre, pre_args);
  pre->add_option("--word-vectors", pre_args.word_vectors, "whitespace-separated word vectors to initialise the word table")
      ->check(CLI::ExistingFile);

  TrainArgs ft_args;
  auto* ft = app.add_subcommand("finetune", "link-prediction finetuning from the run's pretrain checkpoint");
  add_train_options(ft, ft_args);
  ft->add_flag("--fresh", ft_args.fresh, "start from fresh parameters instead of a pretrain checkpoint");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "mention-ranking evaluation into reports/");
  eval->add_option("--slice", ev.slice, "full, sparsity or fewshot")->check(CLI::IsMember({"full", "sparsity", "fewshot"}));
  eval->add_option("--protocol", ev.protocol, "raw or filtered")->check(CLI::IsMember({"raw", "filtered"}));
  eval->add_option("--run", ev.run);
  eval->add_option("--data", ev.data, "full or sparsity (default follows --slice)")->check(CLI::IsMember({"full", "sparsity"}));
  eval->add_option("--stage", ev.stage)->check(CLI::IsMember({"pretrain", "finetune"}));
  eval->add_option("--split", ev.split)->check(CLI::IsMember({"test", "valid"}));

  std::string format = "tsv", export_run, export_stage = "finetune";
  auto* exp = app.add_subcommand("export-embeddings", "entity table rows and textual sums as TSV in reports/");
  exp->add_option("--format", format)->check(CLI::IsMember({"tsv"}));
  exp->add_option("--run", export_run);
  exp->add_option("--stage", export_stage)->check(CLI::IsMember({"pretrain", "finetune"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  const std::vector<std::string> args(argv, argv + argc);
  const Workdir wd(workdir);
  try {
    WorkdirLock lock(wd.root());
    if (*prepare) return cmd_prepare(wd, prep, args);
    if (*slice) return cmd_slice(wd, keep, slice_seed, args);
    if (*mine_cmd) return cmd_mine(wd, mine, args);
    if (*pre) return cmd_train(wd, pre_args, Stage::Pretrain, args);
    if (*ft) return cmd_train(wd, ft_args, Stage::Finetune, args);
    if (*eval) return cmd_eval(wd, ev, args);
    if (*exp) return cmd_export(wd, format, export_run, export_stage, args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
