// SPDX-License-Identifier: Apache-2.0

#include "ternarycl/evaluator.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>

#include "ternarycl/ops.hpp"
#include "ternarycl/parallel.hpp"

namespace ternarycl {

std::size_t default_thread_count() {
  if (const char* env = std::getenv("TERNARYCL_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return 1;
}

const char* to_string(Protocol p) { return p == Protocol::Raw ? "raw" : "filtered"; }

Protocol protocol_from_string(const std::string& s) {
  if (s == "raw") return Protocol::Raw;
  if (s == "filtered") return Protocol::Filtered;
  throw std::invalid_argument("unknown protocol '" + s + "' (expected raw or filtered)");
}

template <typename T>
std::size_t mention_rank(std::span<const T> scores, std::span<const EntityId> answers,
                         std::span<const EntityId> filtered) {
  if (answers.empty()) throw std::invalid_argument("mention_rank: empty answer set");
  std::vector<char> is_answer(scores.size(), 0), is_filtered(scores.size(), 0);
  T best = scores[answers[0]];
  for (EntityId a : answers) {
    if (a >= scores.size()) throw std::out_of_range("mention_rank: answer id outside score vector");
    is_answer[a] = 1;
    best = std::max(best, scores[a]);
  }
  for (EntityId f : filtered) {
    if (f < scores.size()) is_filtered[f] = 1;
  }
  std::size_t above = 0;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (!is_answer[e] && !is_filtered[e] && scores[e] >= best) ++above;
  }
  return above + 1;
}

template std::size_t mention_rank<float>(std::span<const float>, std::span<const EntityId>, std::span<const EntityId>);
template std::size_t mention_rank<double>(std::span<const double>, std::span<const EntityId>,
                                          std::span<const EntityId>);

MetricsReport summarize(std::vector<QueryResult> queries, std::string slice, Protocol protocol) {
  MetricsReport r;
  r.slice = std::move(slice);
  r.protocol = protocol;
  r.n_queries = queries.size();
  for (int n : kHitsAt) r.hits[n] = std::nullopt;
  if (!queries.empty()) {
    double sum_rank = 0, sum_rr = 0;
    std::map<int, std::size_t> hit_counts;
    for (const auto& q : queries) {
      if (q.rank < 1) throw std::logic_error("summarize: rank below 1");
      sum_rank += static_cast<double>(q.rank);
      sum_rr += 1.0 / static_cast<double>(q.rank);
      for (int n : kHitsAt) hit_counts[n] += q.rank <= static_cast<std::size_t>(n);
    }
    const double count = static_cast<double>(queries.size());
    r.ar = sum_rank / count;
    r.arr = 100.0 * sum_rr / count;
    for (int n : kHitsAt) r.hits[n] = 100.0 * static_cast<double>(hit_counts[n]) / count;
  }
  r.queries = std::move(queries);
  return r;
}

AnswerIndex all_known_answers(const DatasetBundle& bundle) {
  std::vector<Triple> all = bundle.train;
  all.insert(all.end(), bundle.valid.begin(), bundle.valid.end());
  all.insert(all.end(), bundle.test.begin(), bundle.test.end());
  return AnswerIndex(all, bundle.vocab);
}

MetricsReport evaluate(const DatasetBundle& bundle, const Model<float>& model, std::span<const Triple> triples,
                       const std::string& slice, const EvalOptions& options) {
  const auto& vocab = bundle.vocab;
  for (const Triple& t : triples) {
    if (t.head >= vocab.entity_count() || t.tail >= vocab.entity_count() || !vocab.is_base(t.relation)) {
      throw std::invalid_argument("evaluate: triple uses an id outside the vocabulary");
    }
  }
  std::optional<AnswerIndex> known;
  if (options.protocol == Protocol::Filtered) known = all_known_answers(bundle);

  std::vector<QueryResult> results(2 * triples.size());
  parallel_for(results.size(), options.threads, [&](std::size_t i, std::size_t) {
    const Triple& t = triples[i / 2];
    const bool head_query = i % 2 == 1;
    const EntityId from = head_query ? t.tail : t.head;
    const RelationId rel = head_query ? vocab.reverse_of(t.relation) : t.relation;
    const EntityId gold = head_query ? t.head : t.tail;

    Tape<float> tape(model.store);
    Scorer<float> scorer(model, vocab, tape);
    const auto& scores = tape.value(scorer.all_logits(from, rel));
    std::span<const EntityId> filter;
    if (known) filter = known->answers(from, rel);
    QueryResult q;
    q.entity = from;
    q.relation = t.relation;
    q.head_query = head_query;
    q.answer_cluster = bundle.clusters.cluster_of.at(gold);
    q.rank = mention_rank<float>(scores.data(), bundle.clusters.cluster_members(gold), filter);
    results[i] = q;
  });
  return summarize(std::move(results), slice, options.protocol);
}

std::map<std::string, MetricsReport> evaluate_shot_slices(const DatasetBundle& bundle, const Model<float>& model,
                                                          const EvalOptions& options) {
  const auto s = extract_shot_slices(bundle);
  std::map<std::string, MetricsReport> out;
  out["few_shot_entity"] = evaluate(bundle, model, s.few_shot_entity_tests(), "few_shot_entity", options);
  out["few_shot_relation"] = evaluate(bundle, model, s.few_shot_relation_tests(), "few_shot_relation", options);
  out["zero_shot_entity"] = evaluate(bundle, model, s.entity_tests[0], "zero_shot_entity", options);
  out["zero_shot_relation"] = evaluate(bundle, model, s.relation_tests[0], "zero_shot_relation", options);
  return out;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json hits = nlohmann::json::object();
  for (const auto& [n, v] : r.hits) hits[std::to_string(n)] = opt(v);
  nlohmann::json queries = nlohmann::json::array();
  for (const auto& q : r.queries) {
    queries.push_back({{"entity", q.entity},
                       {"relation", q.relation},
                       {"direction", q.head_query ? "head" : "tail"},
                       {"answer_cluster", q.answer_cluster},
                       {"rank", q.rank}});
  }
  j = {{"slice", r.slice}, {"protocol", to_string(r.protocol)}, {"n_queries", r.n_queries}, {"AR", opt(r.ar)},
       {"ARR", opt(r.arr)}, {"H", hits}, {"queries", queries}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  auto opt = [](const nlohmann::json& v) { return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()); };
  r.slice = j.at("slice").get<std::string>();
  r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
  r.n_queries = j.at("n_queries").get<std::size_t>();
  r.ar = opt(j.at("AR"));
  r.arr = opt(j.at("ARR"));
  r.hits.clear();
  for (const auto& [k, v] : j.at("H").items()) r.hits[std::stoi(k)] = opt(v);
  r.queries.clear();
  if (j.contains("queries")) {
    for (const auto& q : j.at("queries")) {
      r.queries.push_back({q.at("entity").get<EntityId>(), q.at("relation").get<RelationId>(),
                           q.at("direction").get<std::string>() == "head", q.at("answer_cluster").get<ClusterId>(),
                           q.at("rank").get<std::size_t>()});
    }
  }
}

}  // namespace ternarycl
