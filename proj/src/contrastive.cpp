// SPDX-License-Identifier: Apache-2.0

#include "ternarycl/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "ternarycl/ops.hpp"

namespace ternarycl {

const char* to_string(PatternKind kind) {
  switch (kind) {
    case PatternKind::Ordinary: return "ordinary";
    case PatternKind::Self: return "self";
    case PatternKind::Synonym: return "synonym";
  }
  return "?";
}

namespace {

template <typename V>
void sort_unique(V& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

std::vector<PositivePattern> make_fusion_patterns(const DatasetBundle& bundle) {
  const auto& idx = bundle.answer_index;
  const auto& vocab = bundle.vocab;
  std::vector<PositivePattern> out;
  const auto triples = bundle.train_with_reverse();
  out.reserve(triples.size());
  for (const Triple& t : triples) {
    PositivePattern p;
    p.kind = PatternKind::Ordinary;
    p.anchor = t;
    const auto tails = idx.answers(t.head, t.relation);
    const auto rels = idx.relations_between(t.head, t.tail);
    p.entity_positives.assign(tails.begin(), tails.end());
    p.relation_positives.assign(rels.begin(), rels.end());
    p.entity_exclusions = p.entity_positives;
    p.relation_exclusions = p.relation_positives;
    p.relation_exclusions.push_back(vocab.self_relation());
    p.relation_exclusions.push_back(vocab.synonym_relation());
    sort_unique(p.relation_exclusions);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PositivePattern> make_self_patterns(const DatasetBundle& bundle) {
  const RelationId self = bundle.vocab.self_relation();
  std::vector<PositivePattern> out;
  out.reserve(bundle.vocab.entity_count());
  for (EntityId h = 0; h < bundle.vocab.entity_count(); ++h) {
    PositivePattern p;
    p.kind = PatternKind::Self;
    p.anchor = {h, self, h};
    p.entity_positives = {h};
    p.relation_positives = {self};
    p.entity_exclusions = {h};
    p.relation_exclusions = {self};
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PositivePattern> make_synonym_patterns(const DatasetBundle& bundle, const SynonymTable& synonyms) {
  const RelationId syn = bundle.vocab.synonym_relation();
  if (!synonyms.syn_of.empty() && synonyms.syn_of.size() != bundle.vocab.entity_count()) {
    throw std::invalid_argument("make_synonym_patterns: synonym table size differs from entity count");
  }
  std::vector<PositivePattern> out;
  for (EntityId h = 0; h < synonyms.syn_of.size(); ++h) {
    for (EntityId s : synonyms.syn_of[h]) {
      PositivePattern p;
      p.kind = PatternKind::Synonym;
      p.anchor = {h, syn, s};
      p.entity_positives = {s};
      p.relation_positives = {syn};
      p.entity_exclusions = synonyms.syn_of[h];
      p.entity_exclusions.push_back(h);
      sort_unique(p.entity_exclusions);
      const auto rels = bundle.answer_index.relations_between(h, s);
      p.relation_exclusions.assign(rels.begin(), rels.end());
      p.relation_exclusions.push_back(syn);
      sort_unique(p.relation_exclusions);
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<std::uint32_t> sample_without_replacement(std::size_t universe, std::span<const std::uint32_t> excluded,
                                                      std::size_t count, Rng& rng, std::size_t* shortfall) {
  const auto excluded_end = std::lower_bound(excluded.begin(), excluded.end(), universe);
  const auto n_excluded = static_cast<std::size_t>(excluded_end - excluded.begin());
  const std::size_t candidates = universe - n_excluded;
  if (count > 0 && candidates == 0) {
    throw std::invalid_argument("sample_without_replacement: empty candidate list");
  }
  const std::size_t take = std::min(count, candidates);
  if (shortfall) *shortfall = count - take;
  std::vector<std::uint32_t> out;
  if (take == 0) return out;
  out.reserve(take);

  auto is_excluded = [&](std::uint32_t id) { return std::binary_search(excluded.begin(), excluded_end, id); };
  if (take * 4 >= candidates) {
    // dense request: explicit candidate list and a partial Fisher-Yates
    std::vector<std::uint32_t> pool;
    pool.reserve(candidates);
    for (std::uint32_t id = 0; id < universe; ++id) {
      if (!is_excluded(id)) pool.push_back(id);
    }
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + rng.uniform_index(pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }
  std::unordered_set<std::uint32_t> chosen;
  while (out.size() < take) {
    const auto id = static_cast<std::uint32_t>(rng.uniform_index(universe));
    if (is_excluded(id) || !chosen.insert(id).second) continue;
    out.push_back(id);
  }
  return out;
}

NegativeDraw sample_negatives(const DatasetBundle& bundle, const PositivePattern& pattern, std::size_t n_entities,
                              std::size_t n_relations, Rng& rng) {
  NegativeDraw d;
  d.entities = sample_without_replacement(bundle.vocab.entity_count(), pattern.entity_exclusions, n_entities, rng,
                                          &d.entity_shortfall);
  d.relations = sample_without_replacement(bundle.vocab.relation_count(), pattern.relation_exclusions, n_relations,
                                           rng, &d.relation_shortfall);
  check_negatives(pattern, d);
  return d;
}

void check_negatives(const PositivePattern& pattern, const NegativeDraw& draw) {
  auto contains = [](const auto& v, std::uint32_t x) { return std::find(v.begin(), v.end(), x) != v.end(); };
  for (EntityId e : draw.entities) {
    if (contains(pattern.entity_exclusions, e) || contains(pattern.entity_positives, e)) {
      throw std::logic_error("negative entity " + std::to_string(e) + " is a true answer");
    }
  }
  for (RelationId r : draw.relations) {
    if (contains(pattern.relation_exclusions, r) || contains(pattern.relation_positives, r)) {
      throw std::logic_error("negative relation " + std::to_string(r) + " is a true relation");
    }
  }
}

// ------------------------------------------------------------------ losses

namespace {

// lse(scores / tau) - scores[0] / tau over a [n] score vector
template <typename T>
NodeRef first_vs_rest(Tape<T>& tape, NodeRef scores, double tau) {
  const std::size_t n = tape.value(scores).size();
  const NodeRef scaled = ops::reshape(tape, ops::scale(tape, scores, static_cast<T>(1.0 / tau)), {1, n});
  const std::size_t target = 0;
  return ops::softmax_cross_rows(tape, scaled, std::span<const std::size_t>(&target, 1));
}

}  // namespace

template <typename T>
NodeRef loss_entity(Scorer<T>& scorer, EntityId h, RelationId r, EntityId t_pos, std::span<const EntityId> negatives,
                    double tau) {
  std::vector<EntityId> tails{t_pos};
  tails.insert(tails.end(), negatives.begin(), negatives.end());
  return first_vs_rest(scorer.tape(), scorer.tail_scores(h, r, tails), tau);
}

template <typename T>
NodeRef loss_relation(Scorer<T>& scorer, EntityId h, RelationId r_pos, EntityId t,
                      std::span<const RelationId> negatives, double tau) {
  std::vector<RelationId> rels{r_pos};
  rels.insert(rels.end(), negatives.begin(), negatives.end());
  return first_vs_rest(scorer.tape(), scorer.relation_scores(h, t, rels), tau);
}

template <typename T>
FusionScores fusion_scores(Scorer<T>& scorer, const ContrastiveBatch& batch, const LossOptions& options) {
  if (!options.entity_contrast && !options.relation_contrast) {
    throw std::invalid_argument("fusion loss: entity and relation contrast are both disabled");
  }
  auto& tape = scorer.tape();
  const auto& p = batch.pattern;
  const auto [h, r, t] = p.anchor;
  const T inv_tau = static_cast<T>(1.0 / batch.tau);

  std::vector<NodeRef> pos, neg;
  if (options.entity_contrast) {
    if (!p.entity_positives.empty()) pos.push_back(scorer.tail_scores(h, r, p.entity_positives));
    if (!batch.negatives.entities.empty()) neg.push_back(scorer.tail_scores(h, r, batch.negatives.entities));
  }
  if (options.relation_contrast) {
    std::vector<RelationId> rels;
    for (RelationId x : p.relation_positives) {
      // the anchor triple is already among the entity positives
      if (options.entity_contrast && x == r &&
          std::find(p.entity_positives.begin(), p.entity_positives.end(), t) != p.entity_positives.end()) {
        continue;
      }
      rels.push_back(x);
    }
    if (!rels.empty()) pos.push_back(scorer.relation_scores(h, t, rels));
    if (!batch.negatives.relations.empty()) neg.push_back(scorer.relation_scores(h, t, batch.negatives.relations));
  }
  if (pos.empty()) throw std::invalid_argument("fusion loss: empty positive set");

  FusionScores out;
  out.positives = ops::scale(tape, pos.size() == 1 ? pos[0] : ops::concat<T>(tape, pos), inv_tau);
  if (!neg.empty()) out.negatives = ops::scale(tape, neg.size() == 1 ? neg[0] : ops::concat<T>(tape, neg), inv_tau);
  return out;
}

template <typename T>
NodeRef loss_fusion(Scorer<T>& scorer, const ContrastiveBatch& batch, const LossOptions& options) {
  auto& tape = scorer.tape();
  const FusionScores s = fusion_scores(scorer, batch, options);
  const std::size_t n_pos = tape.value(s.positives).size();
  const std::size_t n_neg = s.negatives ? tape.value(*s.negatives).size() : 0;
  NodeRef all = s.positives;
  if (s.negatives) {
    const std::vector<NodeRef> parts{s.positives, *s.negatives};
    all = ops::concat<T>(tape, parts);
  }
  if (options.variant == FusionVariant::A) {
    return ops::sub(tape, ops::logsumexp(tape, all), ops::logsumexp(tape, s.positives));
  }
  // one row [p_i, negatives...] per positive, each contrasted against its first column
  std::vector<std::size_t> picks;
  picks.reserve(n_pos * (1 + n_neg));
  for (std::size_t i = 0; i < n_pos; ++i) {
    picks.push_back(i);
    for (std::size_t j = 0; j < n_neg; ++j) picks.push_back(n_pos + j);
  }
  const NodeRef rows = ops::reshape(tape, ops::gather(tape, all, picks), {n_pos, 1 + n_neg});
  const std::vector<std::size_t> targets(n_pos, 0);
  return ops::softmax_cross_rows(tape, rows, targets);
}

template <typename T>
NodeRef pattern_loss(Scorer<T>& scorer, const ContrastiveBatch& batch, const LossOptions& options) {
  if (batch.pattern.kind == PatternKind::Ordinary) return loss_fusion(scorer, batch, options);
  if (!options.entity_contrast && !options.relation_contrast) {
    throw std::invalid_argument("pattern loss: entity and relation contrast are both disabled");
  }
  const auto [h, r, t] = batch.pattern.anchor;
  std::optional<NodeRef> total;
  if (options.entity_contrast) total = loss_entity(scorer, h, r, t, batch.negatives.entities, batch.tau);
  if (options.relation_contrast) {
    const NodeRef rel = loss_relation(scorer, h, r, t, batch.negatives.relations, batch.tau);
    total = total ? ops::add(scorer.tape(), *total, rel) : rel;
  }
  return *total;
}

// ------------------------------------------------------------------ oracle

namespace {

std::vector<double> values(const Tensor<double>& t) { return t.storage(); }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// phi'(h, r)^T v summed over the given (relation, v) pairs, restricted to
// the entity row of h
Tensor<double> head_vjp(const Model<double>& model, const Vocabulary& vocab, EntityId h,
                        const std::vector<std::pair<RelationId, Tensor<double>>>& upstream) {
  Tape<double> tape(model.store);
  Scorer<double> scorer(model, vocab, tape);
  std::optional<NodeRef> total;
  for (const auto& [r, v] : upstream) {
    const NodeRef term = ops::dot_rows(tape, scorer.phi(h, r), tape.constant(v));
    total = total ? ops::add(tape, *total, term) : term;
  }
  Gradients<double> grads(model.store);
  tape.backward(*total, grads);
  const auto row = grads[model.scorer.entities].row(h);
  return Tensor<double>({row.size()}, std::vector<double>(row.begin(), row.end()));
}

Tensor<double> vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>({n}, std::move(v));
}

}  // namespace

EntityGradOracle entity_gradient_oracle(const Model<double>& model, const Vocabulary& vocab, EntityId h,
                                        RelationId r, EntityId t_pos, std::span<const EntityId> negatives,
                                        double tau) {
  const std::size_t d = model.config.dim;
  std::vector<double> phi, tp;
  std::vector<std::vector<double>> tn;
  {
    Tape<double> tape(model.store);
    Scorer<double> scorer(model, vocab, tape);
    phi = values(tape.value(scorer.phi(h, r)));
  }
  const auto& table = model.store[model.scorer.entities].value;
  auto row = [&](EntityId e) { return std::vector<double>(table.row(e).begin(), table.row(e).end()); };
  tp = row(t_pos);
  for (EntityId e : negatives) tn.push_back(row(e));

  EntityGradOracle o;
  const double pos_w = std::exp(dot(phi, tp) / tau);
  double neg_sum = 0;
  for (const auto& t : tn) {
    o.weights.push_back(std::exp(dot(phi, t) / tau));
    neg_sum += o.weights.back();
  }
  o.normalizer = pos_w + neg_sum;
  const double A = o.normalizer;

  // -dS/dt+ = phi/(tau A) sum_j w_j ;  -dS/dt_j = -phi/(tau A) w_j
  std::vector<double> d_tp(d), d_phi(d);
  for (std::size_t i = 0; i < d; ++i) d_tp[i] = -phi[i] / (tau * A) * neg_sum;
  o.d_tail_pos = vec(d_tp);
  for (std::size_t j = 0; j < tn.size(); ++j) {
    std::vector<double> g(d);
    for (std::size_t i = 0; i < d; ++i) g[i] = phi[i] / (tau * A) * o.weights[j];
    o.d_tail_neg.push_back(vec(g));
  }
  // -dS/dphi = 1/(tau A) (sum_j w_j t+ - sum_j w_j t_j)
  for (std::size_t i = 0; i < d; ++i) {
    double acc = neg_sum * tp[i];
    for (std::size_t j = 0; j < tn.size(); ++j) acc -= o.weights[j] * tn[j][i];
    d_phi[i] = -acc / (tau * A);
  }
  o.d_phi = vec(d_phi);
  o.d_head = head_vjp(model, vocab, h, {{r, o.d_phi}});
  return o;
}

RelationGradOracle relation_gradient_oracle(const Model<double>& model, const Vocabulary& vocab, EntityId h,
                                            RelationId r_pos, EntityId t, std::span<const RelationId> negatives,
                                            double tau) {
  const std::size_t d = model.config.dim;
  std::vector<double> phi_pos;
  std::vector<std::vector<double>> phi_neg;
  {
    Tape<double> tape(model.store);
    Scorer<double> scorer(model, vocab, tape);
    phi_pos = values(tape.value(scorer.phi(h, r_pos)));
    for (RelationId r : negatives) phi_neg.push_back(values(tape.value(scorer.phi(h, r))));
  }
  const auto& table = model.store[model.scorer.entities].value;
  const std::vector<double> tv(table.row(t).begin(), table.row(t).end());

  RelationGradOracle o;
  const double pos_w = std::exp(dot(phi_pos, tv) / tau);
  double neg_sum = 0;
  for (const auto& p : phi_neg) {
    o.weights.push_back(std::exp(dot(p, tv) / tau));
    neg_sum += o.weights.back();
  }
  o.normalizer = pos_w + neg_sum;
  const double B = o.normalizer;

  // -dS/dt = 1/(tau B) (sum_j w_j phi(h, r+) - sum_j w_j phi(h, r_j))
  std::vector<double> d_t(d), d_pos(d);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = neg_sum * phi_pos[i];
    for (std::size_t j = 0; j < phi_neg.size(); ++j) acc -= o.weights[j] * phi_neg[j][i];
    d_t[i] = -acc / (tau * B);
    // -dS/dphi(h, r+) = t/(tau B) sum_j w_j
    d_pos[i] = -tv[i] / (tau * B) * neg_sum;
  }
  o.d_tail = vec(d_t);
  o.d_phi_pos = vec(d_pos);
  std::vector<std::pair<RelationId, Tensor<double>>> upstream{{r_pos, o.d_phi_pos}};
  for (std::size_t j = 0; j < phi_neg.size(); ++j) {
    // -dS/dphi(h, r_j) = -t/(tau B) w_j
    std::vector<double> g(d);
    for (std::size_t i = 0; i < d; ++i) g[i] = tv[i] / (tau * B) * o.weights[j];
    o.d_phi_neg.push_back(vec(g));
    upstream.emplace_back(negatives[j], o.d_phi_neg.back());
  }
  o.d_head = head_vjp(model, vocab, h, upstream);
  return o;
}

#define TERNARYCL_INSTANTIATE(T)                                                                                     \
  template NodeRef loss_entity<T>(Scorer<T>&, EntityId, RelationId, EntityId, std::span<const EntityId>, double);     \
  template NodeRef loss_relation<T>(Scorer<T>&, EntityId, RelationId, EntityId, std::span<const RelationId>, double); \
  template FusionScores fusion_scores<T>(Scorer<T>&, const ContrastiveBatch&, const LossOptions&);                   \
  template NodeRef loss_fusion<T>(Scorer<T>&, const ContrastiveBatch&, const LossOptions&);                          \
  template NodeRef pattern_loss<T>(Scorer<T>&, const ContrastiveBatch&, const LossOptions&);

TERNARYCL_INSTANTIATE(float)
TERNARYCL_INSTANTIATE(double)

}  // namespace ternarycl
