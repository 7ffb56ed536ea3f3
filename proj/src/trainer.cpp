// SPDX-License-Identifier: Apache-2.0

#include "ternarycl/trainer.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <zlib.h>

#include "ternarycl/ops.hpp"
#include "ternarycl/parallel.hpp"

namespace ternarycl {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const char* to_string(Stage s) { return s == Stage::Pretrain ? "pretrain" : "finetune"; }

Stage stage_from_string(const std::string& s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "finetune") return Stage::Finetune;
  throw std::invalid_argument("unknown stage '" + s + "' (expected pretrain or finetune)");
}

// ------------------------------------------------------------------ config

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  c.epochs = stage == Stage::Pretrain ? 200 : 500;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid training config: " + what); };
  if (!(std::isfinite(lr) && lr > 0)) fail("lr must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(std::isfinite(tau) && tau > 0)) fail("tau must be > 0");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1)) fail("adam beta1 must be in [0, 1)");
  if (!(adam.beta2 >= 0 && adam.beta2 < 1)) fail("adam beta2 must be in [0, 1)");
  if (!(std::isfinite(adam.eps) && adam.eps > 0)) fail("adam eps must be > 0");
  if (!(label_smoothing >= 0 && label_smoothing < 1)) fail("label_smoothing must be in [0, 1)");
  if (!entity_contrast && !relation_contrast) fail("entity and relation contrast cannot both be disabled");
  model.validate();
}

std::vector<std::string> TrainConfig::grid_notes() const {
  auto str = [](double x) {
    std::ostringstream o;
    o << x;
    return o.str();
  };
  std::vector<std::string> notes;
  const std::set<double> lr_grid = stage == Stage::Pretrain ? std::set<double>{1e-3, 1e-4, 5e-5, 1e-5}
                                                            : std::set<double>{1e-3, 1e-4, 8e-5, 5e-5, 1e-5};
  if (!lr_grid.count(lr)) notes.push_back("lr " + str(lr) + " is outside the tuning grid");
  if (!std::set<std::size_t>{32, 64, 128, 256, 512}.count(batch_size)) {
    notes.push_back("batch_size " + std::to_string(batch_size) + " is outside the tuning grid");
  }
  if (stage == Stage::Pretrain && !std::set<double>{0.1, 0.05, 0.01}.count(tau)) {
    notes.push_back("tau " + str(tau) + " is outside the tuning grid");
  }
  return notes;
}

LossOptions TrainConfig::loss_options() const { return {fusion_variant, entity_contrast, relation_contrast}; }

std::size_t TrainConfig::worker_count() const { return threads ? threads : default_thread_count(); }

void to_json(json& j, const ModelConfig& c) {
  j = {{"dim", c.dim},           {"reshape_rows", c.reshape_rows}, {"reshape_cols", c.reshape_cols},
       {"conv_filters", c.conv_filters}, {"kernel", c.kernel},     {"word_dim", c.word_dim}};
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* n) { return k == n; }) == known.end()) {
      throw std::invalid_argument(where + ": unknown key '" + k + "'");
    }
  }
}

template <typename V>
void read_opt(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

void from_json(const json& j, ModelConfig& c) {
  reject_unknown(j, {"dim", "reshape_rows", "reshape_cols", "conv_filters", "kernel", "word_dim"}, "model config");
  read_opt(j, "dim", c.dim);
  read_opt(j, "reshape_rows", c.reshape_rows);
  read_opt(j, "reshape_cols", c.reshape_cols);
  read_opt(j, "conv_filters", c.conv_filters);
  read_opt(j, "kernel", c.kernel);
  read_opt(j, "word_dim", c.word_dim);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"stage", to_string(c.stage)},
       {"lr", c.lr},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"tau", c.tau},
       {"n_neg_ent", c.n_neg_ent},
       {"n_neg_rel", c.n_neg_rel},
       {"fusion_variant", c.fusion_variant == FusionVariant::A ? "A" : "B"},
       {"seed", c.seed},
       {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
       {"entity_contrast", c.entity_contrast},
       {"relation_contrast", c.relation_contrast},
       {"self_contrast", c.self_contrast},
       {"synonym_contrast", c.synonym_contrast},
       {"label_smoothing", c.label_smoothing},
       {"eval_every", c.eval_every},
       {"patience", c.patience},
       {"threads", c.threads},
       {"model", c.model}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"stage", "lr", "batch_size", "epochs", "tau", "n_neg_ent", "n_neg_rel", "fusion_variant", "seed",
                  "adam", "entity_contrast", "relation_contrast", "self_contrast", "synonym_contrast",
                  "label_smoothing", "eval_every", "patience", "threads", "model"},
                 "training config");
  c = TrainConfig::defaults(j.contains("stage") ? stage_from_string(j.at("stage").get<std::string>()) : c.stage);
  read_opt(j, "lr", c.lr);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "tau", c.tau);
  read_opt(j, "n_neg_ent", c.n_neg_ent);
  read_opt(j, "n_neg_rel", c.n_neg_rel);
  if (j.contains("fusion_variant")) {
    const auto v = j.at("fusion_variant").get<std::string>();
    if (v != "A" && v != "B") throw std::invalid_argument("training config: fusion_variant must be A or B");
    c.fusion_variant = v == "A" ? FusionVariant::A : FusionVariant::B;
  }
  read_opt(j, "seed", c.seed);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    reject_unknown(a, {"beta1", "beta2", "eps"}, "adam config");
    read_opt(a, "beta1", c.adam.beta1);
    read_opt(a, "beta2", c.adam.beta2);
    read_opt(a, "eps", c.adam.eps);
  }
  read_opt(j, "entity_contrast", c.entity_contrast);
  read_opt(j, "relation_contrast", c.relation_contrast);
  read_opt(j, "self_contrast", c.self_contrast);
  read_opt(j, "synonym_contrast", c.synonym_contrast);
  read_opt(j, "label_smoothing", c.label_smoothing);
  read_opt(j, "eval_every", c.eval_every);
  read_opt(j, "patience", c.patience);
  read_opt(j, "threads", c.threads);
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
}

// ------------------------------------------------------------------ adam

template <typename T>
AdamState<T> AdamState<T>::zeros(const ParameterStore<T>& store) {
  AdamState s;
  for (const auto& p : store.all()) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

template <typename T>
void adam_step(ParameterStore<T>& params, const Gradients<T>& grads, AdamState<T>& state, double lr,
               const AdamOptions& options) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::uint32_t i = 0; i < params.size(); ++i) {
    const ParamId id{i};
    const auto& g = grads[id];
    if (g.shape() != params[id].value.shape() || state.m[i].shape() != g.shape() || state.v[i].shape() != g.shape()) {
      throw std::invalid_argument("adam_step: shape mismatch for '" + params[id].name + "'");
    }
    for (T x : g.data()) {
      if (!std::isfinite(x)) throw NonFiniteGradient(params[id].name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(options.beta1), b2 = static_cast<T>(options.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(options.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(options.beta2, t));
  const T rate = static_cast<T>(lr), eps = static_cast<T>(options.eps);
  for (std::uint32_t i = 0; i < params.size(); ++i) {
    auto p = params[ParamId{i}].value.data();
    const auto g = grads[ParamId{i}].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      p[k] -= rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(ParameterStore<float>&, const Gradients<float>&, AdamState<float>&, double,
                               const AdamOptions&);
template void adam_step<double>(ParameterStore<double>&, const Gradients<double>&, AdamState<double>&, double,
                                const AdamOptions&);

// ------------------------------------------------------------------ checkpoints

Checkpoint fresh_checkpoint(const TrainConfig& config, const Vocabulary& vocab) {
  Checkpoint c;
  c.config = config;
  c.model = init_model<float>(config.model, vocab, config.seed);
  c.adam = AdamState<float>::zeros(c.model.store);
  return c;
}

namespace {

struct NamedTensor {
  std::string name;
  const Tensor<float>* tensor;
};

std::vector<NamedTensor> checkpoint_tensors(const Checkpoint& c) {
  std::vector<NamedTensor> out;
  const auto& params = c.model.store.all();
  for (const auto& p : params) out.push_back({p.name, &p.value});
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"adam.m/" + params[i].name, &c.adam.m.at(i)});
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"adam.v/" + params[i].name, &c.adam.v.at(i)});
  return out;
}

fs::path with_suffix(const fs::path& prefix, const char* suffix) { return fs::path(prefix.string() + suffix); }

template <typename V>
void put(std::ofstream& out, uLong& crc, std::uint64_t& offset, const V* data, std::size_t count) {
  const auto bytes = count * sizeof(V);
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(bytes));
  offset += bytes;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const auto tmp = with_suffix(path, ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& prefix) {
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  const auto bin = with_suffix(prefix, ".bin");
  const auto tmp = with_suffix(prefix, ".bin.tmp");
  json index = json::array();
  uLong crc = crc32(0L, Z_NULL, 0);
  std::uint64_t offset = 0;
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    for (const auto& [name, tensor] : checkpoint_tensors(ckpt)) {
      index.push_back({{"name", name}, {"offset", offset}, {"dims", tensor->shape()}});
      const auto rank = static_cast<std::uint32_t>(tensor->rank());
      put(out, crc, offset, &rank, 1);
      std::vector<std::uint64_t> dims(tensor->shape().begin(), tensor->shape().end());
      put(out, crc, offset, dims.data(), dims.size());
      put(out, crc, offset, tensor->data().data(), tensor->size());
    }
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, bin);

  const auto& vocab_shape = ckpt.model.store[ckpt.model.scorer.entities].value.shape();
  json manifest = {
      {"format", "ternarycl-checkpoint"},
      {"version", 1},
      {"bin", bin.filename().string()},
      {"bytes", offset},
      {"crc32", static_cast<std::uint64_t>(crc)},
      {"tensors", index},
      {"config", ckpt.config},
      {"vocab",
       {{"entities", vocab_shape.at(0)},
        {"relations", ckpt.model.store[ckpt.model.scorer.relations].value.dim(0)},
        {"words", ckpt.model.store[ckpt.model.encoder.words].value.dim(0)}}},
      {"progress",
       {{"stage", to_string(ckpt.config.stage)},
        {"epoch", ckpt.epoch},
        {"adam_step", ckpt.adam.step},
        {"best_val_ARR", ckpt.best_val_arr ? json(*ckpt.best_val_arr) : json(nullptr)},
        {"best_epoch", ckpt.best_epoch},
        {"evals_since_best", ckpt.evals_since_best},
        {"stopped_early", ckpt.stopped_early}}},
      {"rng", {{"seed", ckpt.config.seed}, {"next_epoch", ckpt.epoch}}},
  };
  write_text_atomic(with_suffix(prefix, ".json"), manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& prefix, const Vocabulary& vocab) {
  const auto manifest_path = with_suffix(prefix, ".json");
  const auto bin_path = with_suffix(prefix, ".bin");
  if (!fs::exists(manifest_path) || !fs::exists(bin_path)) {
    throw DataError("checkpoint not found: " + prefix.string());
  }
  json m;
  try {
    std::ifstream in(manifest_path);
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  if (m.value("format", "") != "ternarycl-checkpoint" || m.value("version", 0) != 1) {
    throw DataError(manifest_path.string() + ": not a checkpoint manifest");
  }

  std::ifstream in(bin_path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != m.at("bytes").get<std::uint64_t>()) throw DataError(bin_path.string() + ": truncated");
  const auto crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()),
                         static_cast<uInt>(bytes.size()));
  if (static_cast<std::uint64_t>(crc) != m.at("crc32").get<std::uint64_t>()) {
    throw DataError(bin_path.string() + ": checksum mismatch");
  }

  Checkpoint c;
  try {
    c.config = m.at("config").get<TrainConfig>();
    c.config.validate();
  } catch (const std::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  const auto& v = m.at("vocab");
  if (v.at("entities").get<std::size_t>() != vocab.entity_count() ||
      v.at("relations").get<std::size_t>() != vocab.relation_count() ||
      v.at("words").get<std::size_t>() != vocab.word_count()) {
    throw DataError(manifest_path.string() + ": checkpoint was trained on a different vocabulary");
  }
  c.model = init_model<float>(c.config.model, vocab, 0);
  c.adam = AdamState<float>::zeros(c.model.store);

  std::map<std::string, Tensor<float>*> slots;
  auto& params = c.model.store.all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    slots[params[i].name] = &params[i].value;
    slots["adam.m/" + params[i].name] = &c.adam.m[i];
    slots["adam.v/" + params[i].name] = &c.adam.v[i];
  }
  std::size_t filled = 0;
  for (const auto& entry : m.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto it = slots.find(name);
    if (it == slots.end()) throw DataError(manifest_path.string() + ": unexpected tensor '" + name + "'");
    Tensor<float>& dst = *it->second;
    std::size_t pos = entry.at("offset").get<std::size_t>();
    auto take = [&](void* out, std::size_t n) {
      if (pos + n > bytes.size()) throw DataError(bin_path.string() + ": tensor '" + name + "' out of range");
      std::memcpy(out, bytes.data() + pos, n);
      pos += n;
    };
    std::uint32_t rank = 0;
    take(&rank, sizeof rank);
    std::vector<std::uint64_t> dims(rank);
    take(dims.data(), rank * sizeof(std::uint64_t));
    const Shape shape(dims.begin(), dims.end());
    if (shape != dst.shape() || entry.at("dims").get<Shape>() != shape) {
      throw DataError(bin_path.string() + ": tensor '" + name + "' has shape " + shape_string(shape) +
                      ", model expects " + shape_string(dst.shape()));
    }
    take(dst.data().data(), dst.size() * sizeof(float));
    ++filled;
    slots.erase(it);
  }
  if (!slots.empty()) throw DataError(manifest_path.string() + ": missing tensor '" + slots.begin()->first + "'");
  (void)filled;

  const auto& p = m.at("progress");
  c.epoch = p.at("epoch").get<std::size_t>();
  c.adam.step = p.at("adam_step").get<std::uint64_t>();
  if (!p.at("best_val_ARR").is_null()) c.best_val_arr = p.at("best_val_ARR").get<double>();
  c.best_epoch = p.at("best_epoch").get<std::size_t>();
  c.evals_since_best = p.at("evals_since_best").get<std::size_t>();
  c.stopped_early = p.at("stopped_early").get<bool>();
  return c;
}

void to_json(json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"lr", r.lr}, {"wall_ms", r.wall_ms}, {"examples", r.examples}};
  if (r.val_arr) j["val_ARR"] = *r.val_arr;
}

// ------------------------------------------------------------------ loops

namespace {

constexpr std::uint64_t kPretrainShuffle = 0x70726531;
constexpr std::uint64_t kPretrainNegatives = 0x70726532;
constexpr std::uint64_t kFinetuneShuffle = 0x66696e31;

/// Adds per-example losses for one minibatch into grads[worker]; returns
/// the loss of each example in batch order.
using BatchFn = std::function<std::vector<double>(std::size_t epoch, std::span<const std::size_t> batch,
                                                  const Model<float>& model, std::vector<Gradients<float>>& grads,
                                                  std::size_t workers)>;

void save_abort(const TrainHooks& hooks, const Checkpoint& ck) {
  if (hooks.checkpoint_dir) save_checkpoint(ck, *hooks.checkpoint_dir / "abort");
}

TrainResult run_epochs(const DatasetBundle& bundle, Checkpoint ck, const TrainHooks& hooks, std::size_t n_examples,
                       std::uint64_t shuffle_tag, const BatchFn& fn) {
  const TrainConfig& config = ck.config;
  const std::size_t workers = config.worker_count();
  std::vector<Gradients<float>> grads;
  for (std::size_t w = 0; w < workers; ++w) grads.emplace_back(ck.model.store);

  TrainResult result;
  for (std::size_t epoch = ck.epoch; epoch < config.epochs && !ck.stopped_early; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n_examples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = Rng::derive(config.seed, {shuffle_tag, epoch});
    shuffle.shuffle(order.begin(), order.end());

    double total = 0;
    for (std::size_t begin = 0; begin < n_examples; begin += config.batch_size) {
      const std::span<const std::size_t> batch(order.data() + begin,
                                               std::min(config.batch_size, n_examples - begin));
      for (auto& g : grads) g.zero();
      const auto losses = fn(epoch, batch, ck.model, grads, workers);
      double batch_sum = 0;
      for (std::size_t i = 0; i < losses.size(); ++i) {
        if (!std::isfinite(losses[i])) {
          save_abort(hooks, ck);
          throw TrainingError("non-finite loss " + std::to_string(losses[i]) + " at epoch " +
                              std::to_string(epoch + 1) + ", example " + std::to_string(batch[i]));
        }
        batch_sum += losses[i];
      }
      for (std::size_t w = 1; w < workers; ++w) grads[0].add_(grads[w]);
      grads[0].scale_(1.0f / static_cast<float>(batch.size()));
      try {
        adam_step(ck.model.store, grads[0], ck.adam, config.lr, config.adam);
      } catch (const NonFiniteGradient&) {
        save_abort(hooks, ck);
        throw;
      }
      total += batch_sum;
    }

    EpochRecord record;
    record.epoch = epoch + 1;
    record.mean_loss = total / static_cast<double>(n_examples);
    record.lr = config.lr;
    record.examples = n_examples;
    ck.epoch = epoch + 1;

    bool improved = false;
    if (config.eval_every && ck.epoch % config.eval_every == 0 && !bundle.valid.empty()) {
      const auto report = evaluate(bundle, ck.model, bundle.valid, "valid", {Protocol::Raw, workers});
      record.val_arr = report.arr;
      if (!ck.best_val_arr || *report.arr > *ck.best_val_arr) {
        ck.best_val_arr = report.arr;
        ck.best_epoch = ck.epoch;
        ck.evals_since_best = 0;
        improved = true;
      } else if (++ck.evals_since_best >= config.patience && config.patience) {
        ck.stopped_early = true;
      }
    }
    record.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    if (improved) {
      result.best = ck;
      if (hooks.checkpoint_dir) save_checkpoint(ck, *hooks.checkpoint_dir / "best");
    }
    if (hooks.checkpoint_dir) save_checkpoint(ck, *hooks.checkpoint_dir / "last");
    if (hooks.log) *hooks.log << json(record).dump() << "\n" << std::flush;
    result.history.push_back(record);
  }
  if (!result.best && ck.best_val_arr && hooks.checkpoint_dir && fs::exists(*hooks.checkpoint_dir / "best.json")) {
    result.best = load_checkpoint(*hooks.checkpoint_dir / "best", bundle.vocab);
  }
  result.last = std::move(ck);
  return result;
}

}  // namespace

std::vector<PositivePattern> pretrain_patterns(const DatasetBundle& bundle, const SynonymTable& synonyms,
                                               const TrainConfig& config) {
  auto patterns = make_fusion_patterns(bundle);
  if (config.self_contrast) {
    auto self = make_self_patterns(bundle);
    patterns.insert(patterns.end(), self.begin(), self.end());
  }
  if (config.synonym_contrast) {
    auto syn = make_synonym_patterns(bundle, synonyms);
    patterns.insert(patterns.end(), syn.begin(), syn.end());
  }
  return patterns;
}

TrainResult pretrain(const DatasetBundle& bundle, const SynonymTable& synonyms, const TrainConfig& config,
                     const TrainHooks& hooks, std::optional<Checkpoint> resume) {
  if (config.stage != Stage::Pretrain) throw std::invalid_argument("pretrain: config.stage must be pretrain");
  config.validate();
  const auto patterns = pretrain_patterns(bundle, synonyms, config);
  if (patterns.empty()) throw TrainingError("no training patterns");

  Checkpoint ck;
  if (resume) {
    if (resume->config.stage != Stage::Pretrain) throw std::invalid_argument("pretrain: cannot resume a finetune checkpoint");
    if (!(resume->model.config == config.model)) throw std::invalid_argument("pretrain: model config differs from checkpoint");
    ck = std::move(*resume);
    ck.config = config;
  } else {
    ck = fresh_checkpoint(config, bundle.vocab);
  }

  const LossOptions options = config.loss_options();
  const std::size_t n_ent = config.entity_contrast ? config.n_neg_ent : 0;
  const std::size_t n_rel = config.relation_contrast ? config.n_neg_rel : 0;
  BatchFn fn = [&](std::size_t epoch, std::span<const std::size_t> batch, const Model<float>& model,
                   std::vector<Gradients<float>>& grads, std::size_t workers) {
    std::vector<ContrastiveBatch> batches(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Rng rng = Rng::derive(config.seed, {kPretrainNegatives, epoch, batch[i]});
      const auto& pattern = patterns[batch[i]];
      batches[i] = {pattern, sample_negatives(bundle, pattern, n_ent, n_rel, rng), config.tau};
    }
    if (hooks.on_pretrain_batch) hooks.on_pretrain_batch(epoch, batches);
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), workers, [&](std::size_t i, std::size_t w) {
      Tape<float> tape(model.store);
      Scorer<float> scorer(model, bundle.vocab, tape);
      const NodeRef loss = pattern_loss(scorer, batches[i], options);
      losses[i] = tape.scalar(loss);
      tape.backward(loss, grads[w]);
    });
    return losses;
  };
  return run_epochs(bundle, std::move(ck), hooks, patterns.size(), kPretrainShuffle, fn);
}

Tensor<float> finetune_targets(const DatasetBundle& bundle, EntityId h, RelationId r, double smoothing) {
  const std::size_t n = bundle.vocab.entity_count();
  Tensor<float> y({n});
  for (EntityId t : bundle.answer_index.answers(h, r)) y[t] = 1.0f;
  if (smoothing > 0) {
    for (auto& x : y.data()) x = static_cast<float>(x * (1.0 - smoothing) + smoothing / static_cast<double>(n));
  }
  return y;
}

TrainResult finetune(const DatasetBundle& bundle, Checkpoint start, TrainConfig config, const TrainHooks& hooks) {
  if (config.stage != Stage::Finetune) throw std::invalid_argument("finetune: config.stage must be finetune");
  config.model = start.model.config;
  config.validate();
  const auto examples = bundle.train_with_reverse();
  if (examples.empty()) throw TrainingError("no training examples");

  Checkpoint ck = std::move(start);
  if (ck.config.stage != Stage::Finetune) {
    ck.adam = AdamState<float>::zeros(ck.model.store);
    ck.epoch = 0;
    ck.best_val_arr.reset();
    ck.best_epoch = 0;
    ck.evals_since_best = 0;
    ck.stopped_early = false;
  }
  ck.config = config;

  BatchFn fn = [&](std::size_t, std::span<const std::size_t> batch, const Model<float>& model,
                   std::vector<Gradients<float>>& grads, std::size_t workers) {
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), workers, [&](std::size_t i, std::size_t w) {
      const Triple& t = examples[batch[i]];
      Tape<float> tape(model.store);
      Scorer<float> scorer(model, bundle.vocab, tape);
      const NodeRef logits = scorer.all_logits(t.head, t.relation);
      const NodeRef loss =
          ops::bce_with_logits(tape, logits, finetune_targets(bundle, t.head, t.relation, config.label_smoothing));
      losses[i] = tape.scalar(loss);
      tape.backward(loss, grads[w]);
    });
    return losses;
  };
  return run_epochs(bundle, std::move(ck), hooks, examples.size(), kFinetuneShuffle, fn);
}

}  // namespace ternarycl
