// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ternarycl/contrastive.hpp"
#include "ternarycl/evaluator.hpp"
#include "ternarycl/kg_data.hpp"
#include "ternarycl/scorer.hpp"

namespace ternarycl {

enum class Stage { Pretrain, Finetune };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamOptions&) const = default;
};

struct TrainConfig {
  Stage stage = Stage::Pretrain;
  double lr = 1e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  double tau = 0.05;
  std::size_t n_neg_ent = 50;
  std::size_t n_neg_rel = 10;
  FusionVariant fusion_variant = FusionVariant::B;
  std::uint64_t seed = 42;
  AdamOptions adam;

  // ablation switches
  bool entity_contrast = true;
  bool relation_contrast = true;
  bool self_contrast = true;
  bool synonym_contrast = true;

  double label_smoothing = 0.0;  // finetune only
  std::size_t eval_every = 5;    // epochs between validation runs; 0 disables
  std::size_t patience = 25;     // evaluations without improvement; 0 disables early stop
  std::size_t threads = 0;       // 0: TERNARYCL_THREADS or 1
  ModelConfig model;

  /// pretrain: 200 epochs; finetune: 500 epochs
  static TrainConfig defaults(Stage stage);

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
  /// Human-readable notes for values outside the tuning grids.
  std::vector<std::string> grid_notes() const;
  LossOptions loss_options() const;
  std::size_t worker_count() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Unknown keys are rejected; missing keys keep the stage defaults.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;  // one per parameter, store order
  std::uint64_t step = 0;

  static AdamState zeros(const ParameterStore<T>& store);
  bool operator==(const AdamState&) const = default;
};

/// Raised before any update when a gradient holds NaN or Inf.
class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(std::string tensor)
      : std::runtime_error("non-finite gradient in tensor '" + tensor + "'"), tensor_(std::move(tensor)) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One Adam update with bias correction; increments state.step first.
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <typename T>
void adam_step(ParameterStore<T>& params, const Gradients<T>& grads, AdamState<T>& state, double lr,
               const AdamOptions& options);

struct Checkpoint {
  TrainConfig config;
  Model<float> model;
  AdamState<float> adam;
  std::size_t epoch = 0;  // completed epochs of config.stage
  std::optional<double> best_val_arr;
  std::size_t best_epoch = 0;
  std::size_t evals_since_best = 0;
  bool stopped_early = false;
};

/// Fresh parameters from config.model and config.seed, zero moments.
Checkpoint fresh_checkpoint(const TrainConfig& config, const Vocabulary& vocab);

/// Writes <prefix>.bin (per tensor: u32 rank, u64 dims, float32 data, all
/// little-endian) and <prefix>.json (tensor index, config, progress). Both
/// are written to temporaries and renamed. Output depends only on content.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& prefix);
/// Throws DataError when files are missing, corrupt or do not fit the vocabulary.
Checkpoint load_checkpoint(const std::filesystem::path& prefix, const Vocabulary& vocab);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0;
  double lr = 0;
  double wall_ms = 0;
  std::optional<double> val_arr;
  std::size_t examples = 0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainHooks {
  /// last.{bin,json} every epoch, best.{bin,json} on validation improvement
  std::optional<std::filesystem::path> checkpoint_dir;
  std::ostream* log = nullptr;  // JSON lines, one EpochRecord per epoch
  /// Called with each pretraining minibatch before the update.
  std::function<void(std::size_t epoch, std::span<const ContrastiveBatch>)> on_pretrain_batch;
};

struct TrainResult {
  Checkpoint last;
  std::optional<Checkpoint> best;  // set when validation ran
  std::vector<EpochRecord> history;

  /// best when validation ran, else last
  const Checkpoint& selected() const { return best ? *best : last; }
};

/// Ordinary, self and synonym patterns of a bundle under the ablation switches.
std::vector<PositivePattern> pretrain_patterns(const DatasetBundle& bundle, const SynonymTable& synonyms,
                                               const TrainConfig& config);

/// Contrastive pretraining. Each epoch shuffles all patterns, draws fresh
/// negatives per pattern and applies one Adam step per minibatch on the mean
/// pattern loss. `resume` continues a pretrain checkpoint.
TrainResult pretrain(const DatasetBundle& bundle, const SynonymTable& synonyms, const TrainConfig& config,
                     const TrainHooks& hooks = {}, std::optional<Checkpoint> resume = std::nullopt);

/// Multi-hot targets over all entities for (h, r) from the train answers,
/// smoothed to y (1 - s) + s / |E|.
Tensor<float> finetune_targets(const DatasetBundle& bundle, EntityId h, RelationId r, double smoothing);

/// Link-prediction finetuning with binary cross-entropy over all entities,
/// one example per train triple and per reverse triple. Starting from a
/// pretrain checkpoint resets the optimizer; a finetune checkpoint resumes.
/// The model configuration always comes from `start`.
TrainResult finetune(const DatasetBundle& bundle, Checkpoint start, TrainConfig config,
                     const TrainHooks& hooks = {});

}  // namespace ternarycl
