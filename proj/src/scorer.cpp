// SPDX-License-Identifier: Apache-2.0

#include "ternarycl/scorer.hpp"

#include <cmath>
#include <stdexcept>

#include "ternarycl/ops.hpp"

namespace ternarycl {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (dim == 0 || dim % 2 != 0) fail("dim must be a positive even number, got " + std::to_string(dim));
  if (reshape_rows * reshape_cols != dim) {
    fail("reshape " + std::to_string(reshape_rows) + "x" + std::to_string(reshape_cols) + " does not hold dim " +
         std::to_string(dim));
  }
  if (kernel == 0 || kernel > 2 * reshape_rows || kernel > reshape_cols) {
    fail("kernel " + std::to_string(kernel) + " does not fit the stacked input");
  }
  if (conv_filters == 0) fail("conv_filters must be positive");
  if (word_dim == 0) fail("word_dim must be positive");
}

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& x : t.storage()) x = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <typename T>
Model<T> init_model(const ModelConfig& config, const Vocabulary& vocab, std::uint64_t seed) {
  config.validate();
  Model<T> m;
  m.config = config;
  Rng rng(seed);
  const std::size_t d = config.dim, k = config.kernel, f = config.conv_filters;
  m.scorer.entities = m.store.add("entity", uniform_tensor<T>({vocab.entity_count(), d}, 0.05, rng));
  m.scorer.relations = m.store.add("relation", uniform_tensor<T>({vocab.relation_count(), d}, 0.05, rng));
  const double conv_bound = 1.0 / std::sqrt(static_cast<double>(k * k));
  m.scorer.conv_filters = m.store.add("conv.filters", uniform_tensor<T>({f, 1, k, k}, conv_bound, rng));
  m.scorer.conv_bias = m.store.add("conv.bias", uniform_tensor<T>({f}, conv_bound, rng));
  const double lin_bound = 1.0 / std::sqrt(static_cast<double>(config.flat_features()));
  m.scorer.linear_weight = m.store.add("linear.weight", uniform_tensor<T>({d, config.flat_features()}, lin_bound, rng));
  m.scorer.linear_bias = m.store.add("linear.bias", uniform_tensor<T>({d}, lin_bound, rng));
  m.encoder = add_encoder_params(m.store, vocab.word_count(), config.word_dim, d / 2, rng);
  return m;
}

template <typename T>
Scorer<T>::Scorer(const Model<T>& model, const Vocabulary& vocab, Tape<T>& tape)
    : model_(&model), vocab_(&vocab), tape_(&tape) {
  if (&tape.store() != &model.store) throw std::invalid_argument("Scorer: tape is bound to a different store");
}

template <typename T>
NodeRef Scorer<T>::entity_text(EntityId e) {
  if (auto it = entity_text_.find(e); it != entity_text_.end()) return it->second;
  const NodeRef n = encode_sequence(*tape_, model_->encoder, vocab_->entity_surface(e));
  entity_text_.emplace(e, n);
  return n;
}

template <typename T>
NodeRef Scorer<T>::relation_text(RelationId r) {
  if (auto it = relation_text_.find(r); it != relation_text_.end()) return it->second;
  const NodeRef n = encode_sequence(*tape_, model_->encoder, vocab_->relation_surface(r));
  relation_text_.emplace(r, n);
  return n;
}

template <typename T>
NodeRef Scorer<T>::entity_row(EntityId e) {
  if (auto it = rows_.find(e); it != rows_.end()) return it->second;
  const std::size_t id = e;
  const NodeRef n = ops::reshape(
      *tape_, ops::embedding_lookup(*tape_, tape_->param(model_->scorer.entities), std::span<const std::size_t>(&id, 1)),
      {model_->config.dim});
  rows_.emplace(e, n);
  return n;
}

template <typename T>
NodeRef Scorer<T>::head_repr(EntityId h) {
  if (auto it = head_.find(h); it != head_.end()) return it->second;
  const NodeRef n = ops::add(*tape_, entity_row(h), entity_text(h));
  head_.emplace(h, n);
  return n;
}

template <typename T>
NodeRef Scorer<T>::phi(EntityId h, RelationId r) {
  if (auto it = phi_.find(key(h, r)); it != phi_.end()) return it->second;
  auto& tape = *tape_;
  const auto& c = model_->config;
  const auto& ids = model_->scorer;
  const std::vector<NodeRef> parts{ops::reshape(tape, head_repr(h), {c.reshape_rows, c.reshape_cols}),
                                   ops::reshape(tape, relation_text(r), {c.reshape_rows, c.reshape_cols})};
  const NodeRef stacked = ops::concat<T>(tape, parts);
  const NodeRef conv =
      ops::relu(tape, ops::conv2d(tape, stacked, tape.param(ids.conv_filters), tape.param(ids.conv_bias)));
  const NodeRef flat = ops::reshape(tape, conv, {c.flat_features()});
  const NodeRef out = ops::relu(
      tape, ops::add(tape, ops::matmul(tape, tape.param(ids.linear_weight), flat), tape.param(ids.linear_bias)));
  phi_.emplace(key(h, r), out);
  return out;
}

template <typename T>
TripleScore Scorer<T>::beta(const Triple& t) {
  const NodeRef p = phi(t.head, t.relation);
  return {ops::dot_rows(*tape_, p, entity_row(t.tail)), p};
}

template <typename T>
NodeRef Scorer<T>::tail_scores(EntityId h, RelationId r, std::span<const EntityId> tails) {
  if (tails.empty()) throw std::invalid_argument("tail_scores: empty tail list");
  std::vector<std::size_t> ids(tails.begin(), tails.end());
  const NodeRef rows = ops::embedding_lookup(*tape_, tape_->param(model_->scorer.entities), ids);
  return ops::matmul(*tape_, rows, phi(h, r));
}

template <typename T>
NodeRef Scorer<T>::relation_scores(EntityId h, EntityId t, std::span<const RelationId> relations) {
  if (relations.empty()) throw std::invalid_argument("relation_scores: empty relation list");
  const NodeRef tail = entity_row(t);
  std::vector<NodeRef> parts;
  parts.reserve(relations.size());
  for (RelationId r : relations) parts.push_back(ops::dot_rows(*tape_, phi(h, r), tail));
  return ops::concat<T>(*tape_, parts);
}

template <typename T>
NodeRef Scorer<T>::all_logits(EntityId h, RelationId r) {
  return ops::matmul(*tape_, tape_->param(model_->scorer.entities), phi(h, r));
}

Triple reverse_triple(const Triple& t, const Vocabulary& vocab) {
  if (!vocab.is_base(t.relation)) {
    throw std::invalid_argument("reverse_triple: relation " + vocab.relation_name(t.relation) +
                                " is not a base relation");
  }
  return {t.tail, vocab.reverse_of(t.relation), t.head};
}

template Model<float> init_model<float>(const ModelConfig&, const Vocabulary&, std::uint64_t);
template Model<double> init_model<double>(const ModelConfig&, const Vocabulary&, std::uint64_t);
template class Scorer<float>;
template class Scorer<double>;

}  // namespace ternarycl
