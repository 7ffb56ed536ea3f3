// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <unordered_map>

#include "ternarycl/encoder.hpp"
#include "ternarycl/kg_data.hpp"
#include "ternarycl/tape.hpp"

namespace ternarycl {

struct ModelConfig {
  std::size_t dim = 300;
  std::size_t reshape_rows = 15;
  std::size_t reshape_cols = 20;
  std::size_t conv_filters = 32;
  std::size_t kernel = 3;
  std::size_t word_dim = 300;

  /// Throws std::invalid_argument on inconsistent sizes.
  void validate() const;
  std::size_t conv_out_rows() const { return 2 * reshape_rows - kernel + 1; }
  std::size_t conv_out_cols() const { return reshape_cols - kernel + 1; }
  std::size_t flat_features() const { return conv_filters * conv_out_rows() * conv_out_cols(); }
  bool operator==(const ModelConfig&) const = default;
};

struct ScorerIds {
  ParamId entities;      // [|E|, D]
  ParamId relations;     // [|R| incl. reverse and reserved, D]; allocated, not read by the scorer
  ParamId conv_filters;  // [F, 1, k, k]
  ParamId conv_bias;     // [F]
  ParamId linear_weight; // [D, F * Ho * Wo]
  ParamId linear_bias;   // [D]
};

template <typename T>
struct Model {
  ModelConfig config;
  ParameterStore<T> store;
  EncoderIds encoder;
  ScorerIds scorer;
};

/// Fresh parameters: entity/relation tables uniform +-0.05, conv and linear
/// uniform +-1/sqrt(fan_in), encoder per add_encoder_params. Draw order is
/// fixed so float and double models from the same seed hold equal values.
template <typename T>
Model<T> init_model(const ModelConfig& config, const Vocabulary& vocab, std::uint64_t seed);

struct TripleScore {
  NodeRef value;  // [1]
  NodeRef phi;    // [D]
};

/// Forward graph builder for one tape. Textual encodings and head-relation
/// representations are cached, so scoring many tails or relations for the
/// same head shares one encoder pass.
template <typename T>
class Scorer {
 public:
  Scorer(const Model<T>& model, const Vocabulary& vocab, Tape<T>& tape);

  NodeRef entity_text(EntityId e);
  NodeRef relation_text(RelationId r);
  /// table row + textual embedding of the head
  NodeRef head_repr(EntityId h);
  /// relu(Linear(relu(Conv2d([reshape(head_repr); reshape(relation_text)]))))
  NodeRef phi(EntityId h, RelationId r);
  /// table row of an entity, [D]
  NodeRef entity_row(EntityId e);
  TripleScore beta(const Triple& t);
  /// phi(h, r) . E[t] for each tail -> [n]
  NodeRef tail_scores(EntityId h, RelationId r, std::span<const EntityId> tails);
  /// phi(h, r_i) . E[t] for each relation -> [n]
  NodeRef relation_scores(EntityId h, EntityId t, std::span<const RelationId> relations);
  /// phi(h, r) . E[e] for every entity -> [|E|]
  NodeRef all_logits(EntityId h, RelationId r);

  Tape<T>& tape() { return *tape_; }

 private:
  static std::uint64_t key(std::uint32_t a, std::uint32_t b) { return (std::uint64_t{a} << 32) | b; }

  const Model<T>* model_;
  const Vocabulary* vocab_;
  Tape<T>* tape_;
  std::unordered_map<EntityId, NodeRef> entity_text_, head_, rows_;
  std::unordered_map<RelationId, NodeRef> relation_text_;
  std::unordered_map<std::uint64_t, NodeRef> phi_;
};

/// (tail, reverse_of(relation), head). Throws std::invalid_argument unless
/// the relation is a base relation.
Triple reverse_triple(const Triple& t, const Vocabulary& vocab);

}  // namespace ternarycl
