// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ternarycl/tensor.hpp"

namespace ternarycl {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using WordId = std::uint32_t;
using ClusterId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;
  auto operator<=>(const Triple&) const = default;
};

/// Malformed input file. The message carries the path and 1-based line.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lowercases, maps every ASCII non-alphanumeric byte to a space and splits
/// on whitespace. Bytes >= 0x80 are kept so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view surface);

inline constexpr std::string_view kReverseToken = "<rev>";
inline constexpr std::string_view kSelfToken = "<self>";
inline constexpr std::string_view kSynonymToken = "<syn>";

/// Entity, relation and word tables.
///
/// Relation ids are laid out as: base relations [0, B), their reverses
/// [B, 2B) with reverse_of(r) = r + B, then the self relation 2B and the
/// synonym relation 2B + 1. Reverse relations have the surface
/// "<rev> base..." and the reserved relations the single tokens "<self>"
/// and "<syn>". Words 0..2 are the three reserved tokens; all other ids
/// follow first appearance in the input.
class Vocabulary {
 public:
  class Builder {
   public:
    Builder();
    /// Returns the existing id when the surface was seen before.
    EntityId intern_entity(std::string_view surface);
    RelationId intern_relation(std::string_view surface);
    Vocabulary build() &&;

   private:
    std::vector<WordId> intern_words(std::string_view surface);
    WordId intern_word(const std::string& word);

    std::vector<std::string> entity_names_, relation_names_, words_;
    std::vector<std::vector<WordId>> entity_surfaces_, relation_surfaces_;
    std::unordered_map<std::string, EntityId> entity_ids_;
    std::unordered_map<std::string, RelationId> relation_ids_;
    std::unordered_map<std::string, WordId> word_ids_;
  };

  std::size_t entity_count() const { return entity_names_.size(); }
  std::size_t base_relation_count() const { return base_relations_; }
  /// base + reverse + 2 reserved
  std::size_t relation_count() const { return relation_surfaces_.size(); }
  std::size_t word_count() const { return words_.size(); }

  const std::string& entity_name(EntityId e) const { return entity_names_.at(e); }
  std::string relation_name(RelationId r) const;
  const std::string& word(WordId w) const { return words_.at(w); }

  std::span<const WordId> entity_surface(EntityId e) const { return entity_surfaces_.at(e); }
  std::span<const WordId> relation_surface(RelationId r) const { return relation_surfaces_.at(r); }

  std::optional<EntityId> find_entity(std::string_view name) const;
  std::optional<RelationId> find_relation(std::string_view name) const;
  std::optional<WordId> find_word(std::string_view word) const;

  RelationId self_relation() const { return static_cast<RelationId>(2 * base_relations_); }
  RelationId synonym_relation() const { return static_cast<RelationId>(2 * base_relations_ + 1); }
  bool is_base(RelationId r) const { return r < base_relations_; }
  bool is_reverse(RelationId r) const { return r >= base_relations_ && r < 2 * base_relations_; }
  bool is_reserved(RelationId r) const { return r == self_relation() || r == synonym_relation(); }
  /// Involution between base and reverse relations; throws for reserved ids.
  RelationId reverse_of(RelationId r) const;

 private:
  std::vector<std::string> entity_names_, base_relation_names_, words_;
  std::vector<std::vector<WordId>> entity_surfaces_, relation_surfaces_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
  std::unordered_map<std::string, WordId> word_ids_;
  std::size_t base_relations_ = 0;
};

/// Partition of the entities into gold clusters.
struct ClusterTable {
  std::vector<ClusterId> cluster_of;
  std::vector<std::vector<EntityId>> members;

  std::span<const EntityId> cluster_members(EntityId e) const { return members.at(cluster_of.at(e)); }
};

/// E(h,r) and R(h,t) over a train set and its reverse triples: for a base
/// relation r, t in answers(h, r) iff (h, r, t) is a train triple, and
/// h in answers(t, reverse_of(r)) iff the same holds.
class AnswerIndex {
 public:
  AnswerIndex() = default;
  AnswerIndex(std::span<const Triple> train, const Vocabulary& vocab);

  std::span<const EntityId> answers(EntityId head, RelationId relation) const;
  std::span<const RelationId> relations_between(EntityId head, EntityId tail) const;
  bool contains(const Triple& t) const;

  /// every distinct (head, relation) key, sorted
  std::vector<std::pair<EntityId, RelationId>> query_keys() const;

  bool operator==(const AnswerIndex& other) const;

 private:
  static std::uint64_t key(std::uint32_t a, std::uint32_t b) { return (std::uint64_t{a} << 32) | b; }
  std::unordered_map<std::uint64_t, std::vector<EntityId>> tails_;
  std::unordered_map<std::uint64_t, std::vector<RelationId>> relations_;
};

struct SliceInfo {
  std::string source;
  double keep_fraction = 1.0;
  std::uint64_t seed = 0;
};

struct LoadWarnings {
  std::size_t duplicate_triples = 0;
  /// valid/test triples dropped because they also occur in train
  std::size_t eval_overlaps_train = 0;
};

struct DatasetBundle {
  std::vector<Triple> train, valid, test;
  Vocabulary vocab;
  ClusterTable clusters;
  AnswerIndex answer_index;
  LoadWarnings warnings;
  std::optional<SliceInfo> slice;

  /// base train triples followed by their reverses
  std::vector<Triple> train_with_reverse() const;
};

/// Reads tab-separated "head<TAB>relation<TAB>tail" triple files and a
/// cluster file with one tab-separated cluster of entity surfaces per line.
/// Files ending in ".gz" are decompressed on the fly. Entities missing from
/// the cluster file become singleton clusters.
DatasetBundle load_dataset(const std::filesystem::path& train, const std::filesystem::path& valid,
                           const std::filesystem::path& test, const std::filesystem::path& clusters);

/// Same vocabulary, clusters, valid and test; train is replaced by a uniform
/// sample of round(keep_fraction * |train|) triples kept in original order.
DatasetBundle slice_sparsity(const DatasetBundle& bundle, double keep_fraction, std::uint64_t seed);

/// Replaces train by `train` (which must be a subset of the current train)
/// and rebuilds the answer index. Used to reattach a saved slice.
DatasetBundle with_train(const DatasetBundle& bundle, std::vector<Triple> train, std::optional<SliceInfo> slice);

inline constexpr std::size_t kMaxShot = 3;

/// Entities and relations grouped by their number of train links k = 0..3,
/// with the test triples touching each group. Entity degree counts each
/// base train triple once per distinct endpoint.
struct ShotSlices {
  std::vector<std::size_t> entity_degree;
  std::vector<std::size_t> relation_degree;  // base relations only
  std::array<std::vector<EntityId>, kMaxShot + 1> entities;
  std::array<std::vector<RelationId>, kMaxShot + 1> relations;
  std::array<std::vector<Triple>, kMaxShot + 1> entity_tests;
  std::array<std::vector<Triple>, kMaxShot + 1> relation_tests;

  // k = 1..3 merged, test triples deduplicated in test-file order
  std::vector<EntityId> few_shot_entities() const;
  std::vector<RelationId> few_shot_relations() const;
  std::vector<Triple> few_shot_entity_tests() const { return few_shot_entity_tests_; }
  std::vector<Triple> few_shot_relation_tests() const { return few_shot_relation_tests_; }

  std::vector<Triple> few_shot_entity_tests_;
  std::vector<Triple> few_shot_relation_tests_;
};

ShotSlices extract_shot_slices(const DatasetBundle& bundle);

struct SynonymTable {
  std::vector<std::vector<EntityId>> syn_of;

  std::size_t pair_count() const;  // unordered pairs
  /// Throws std::logic_error unless the table is symmetric and irreflexive.
  void validate() const;
};

/// Inverse-log document-frequency token weights over entity surfaces.
class IdfWeights {
 public:
  explicit IdfWeights(const Vocabulary& vocab);
  double weight(WordId w) const { return weights_.at(w); }
  /// shared weight / max(total weight of a, total weight of b)
  double overlap(std::span<const WordId> a, std::span<const WordId> b) const;

 private:
  std::vector<double> weights_;
};

struct SynonymOptions {
  double idf_threshold = 0.8;
  std::optional<double> sem_threshold;
};

/// Pairs whose IDF token overlap reaches idf_threshold, plus (when
/// sem_threshold is set) pairs whose textual embeddings ([|E|, D] rows)
/// have cosine >= sem_threshold.
SynonymTable mine_synonyms(const DatasetBundle& bundle, const Tensor<float>* text_embeddings,
                           const SynonymOptions& options);

// Plain-text serialisation, the exact inverse of load_dataset's parser.
void write_triples(const std::filesystem::path& path, std::span<const Triple> triples, const Vocabulary& vocab);
void write_clusters(const std::filesystem::path& path, const ClusterTable& clusters, const Vocabulary& vocab);
void write_synonyms(const std::filesystem::path& path, const SynonymTable& table, const Vocabulary& vocab);
SynonymTable read_synonyms(const std::filesystem::path& path, const Vocabulary& vocab);
/// Triples in a file resolved against an existing vocabulary; unknown
/// surfaces are an error.
std::vector<Triple> read_triples(const std::filesystem::path& path, const Vocabulary& vocab);

/// Every line of a text file, transparently gunzipped for ".gz" paths.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace ternarycl
