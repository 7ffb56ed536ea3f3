// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ternarycl/kg_data.hpp"
#include "ternarycl/rng.hpp"
#include "ternarycl/scorer.hpp"

namespace ternarycl {

enum class PatternKind { Ordinary, Self, Synonym };
enum class FusionVariant { A, B };

const char* to_string(PatternKind kind);

/// One positive pattern around an anchor triple (h, r, t).
///
/// Ordinary patterns carry the 1-to-N sets: entity_positives = E(h, r)
/// (the tails sharing (h, r)) and relation_positives = R(h, t). Self and
/// synonym patterns are 1-to-1 with the reserved relation as anchor
/// relation. Exclusion lists are sorted and define the negative candidates
/// as universe minus exclusions.
struct PositivePattern {
  PatternKind kind = PatternKind::Ordinary;
  Triple anchor;
  std::vector<EntityId> entity_positives;
  std::vector<RelationId> relation_positives;
  std::vector<EntityId> entity_exclusions;
  std::vector<RelationId> relation_exclusions;
};

/// One pattern per train triple and per reverse train triple.
/// Relation exclusions are R(h, t) plus the two reserved relations.
std::vector<PositivePattern> make_fusion_patterns(const DatasetBundle& bundle);
/// One (h, r_self, h) pattern per entity; candidates E - {h} and R - {r_self}.
std::vector<PositivePattern> make_self_patterns(const DatasetBundle& bundle);
/// One (h, r_syn, s) pattern per ordered synonym pair; entity candidates
/// exclude S(h) and h, relation candidates exclude r_syn and R(h, s).
std::vector<PositivePattern> make_synonym_patterns(const DatasetBundle& bundle, const SynonymTable& synonyms);

struct NegativeDraw {
  std::vector<EntityId> entities;
  std::vector<RelationId> relations;
  std::size_t entity_shortfall = 0;    // requested but unavailable
  std::size_t relation_shortfall = 0;
};

/// `count` distinct ids drawn uniformly from [0, universe) minus the sorted
/// `excluded` list, in draw order. Returns every candidate when fewer exist.
/// Throws std::invalid_argument if no candidate exists and count > 0.
std::vector<std::uint32_t> sample_without_replacement(std::size_t universe, std::span<const std::uint32_t> excluded,
                                                      std::size_t count, Rng& rng, std::size_t* shortfall = nullptr);

NegativeDraw sample_negatives(const DatasetBundle& bundle, const PositivePattern& pattern, std::size_t n_entities,
                              std::size_t n_relations, Rng& rng);

/// Throws std::logic_error if a negative is a true answer for the pattern.
void check_negatives(const PositivePattern& pattern, const NegativeDraw& draw);

struct ContrastiveBatch {
  PositivePattern pattern;
  NegativeDraw negatives;
  double tau = 0.05;
};

struct LossOptions {
  FusionVariant variant = FusionVariant::B;
  bool entity_contrast = true;    // off: no p_e, no entity negatives
  bool relation_contrast = true;  // off: no p_r, no relation negatives
};

/// -log softmax of beta(h, r, t_pos) among {t_pos} + negatives, at temperature tau.
template <typename T>
NodeRef loss_entity(Scorer<T>& scorer, EntityId h, RelationId r, EntityId t_pos, std::span<const EntityId> negatives,
                    double tau);
/// -log softmax of beta(h, r_pos, t) among {r_pos} + negatives.
template <typename T>
NodeRef loss_relation(Scorer<T>& scorer, EntityId h, RelationId r_pos, EntityId t,
                      std::span<const RelationId> negatives, double tau);

/// Scores of the fusion positives p_f = p_e u p_r (anchor once, p_e first)
/// and the merged negatives, each already divided by tau.
struct FusionScores {
  NodeRef positives;
  std::optional<NodeRef> negatives;
};

template <typename T>
FusionScores fusion_scores(Scorer<T>& scorer, const ContrastiveBatch& batch, const LossOptions& options);

/// A: lse(positives and negatives) - lse(positives).
/// B: sum over positives p of lse(p, negatives) - p.
template <typename T>
NodeRef loss_fusion(Scorer<T>& scorer, const ContrastiveBatch& batch, const LossOptions& options);

/// Loss of one batch: fusion for ordinary patterns; entity plus relation
/// contrast (each weight 1) for self and synonym patterns.
template <typename T>
NodeRef pattern_loss(Scorer<T>& scorer, const ContrastiveBatch& batch, const LossOptions& options);

/// Closed-form gradients of the single-positive entity contrast.
struct EntityGradOracle {
  double normalizer = 0;              // A
  std::vector<double> weights;        // exp(beta_j / tau) per negative
  Tensor<double> d_phi;               // dS / d phi(h, r)
  Tensor<double> d_tail_pos;          // dS / d t+
  std::vector<Tensor<double>> d_tail_neg;
  Tensor<double> d_head;              // dS / d (entity row of h), through phi
};

/// Closed-form gradients of the single-positive relation contrast.
struct RelationGradOracle {
  double normalizer = 0;              // B
  std::vector<double> weights;
  Tensor<double> d_tail;              // dS / d t
  Tensor<double> d_phi_pos;           // dS / d phi(h, r+)
  std::vector<Tensor<double>> d_phi_neg;
  Tensor<double> d_head;
};

EntityGradOracle entity_gradient_oracle(const Model<double>& model, const Vocabulary& vocab, EntityId h,
                                        RelationId r, EntityId t_pos, std::span<const EntityId> negatives,
                                        double tau);
RelationGradOracle relation_gradient_oracle(const Model<double>& model, const Vocabulary& vocab, EntityId h,
                                            RelationId r_pos, EntityId t, std::span<const RelationId> negatives,
                                            double tau);

}  // namespace ternarycl
