// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ternarycl/kg_data.hpp"
#include "ternarycl/scorer.hpp"

namespace ternarycl {

enum class Protocol { Raw, Filtered };

const char* to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

/// 1 + number of entities that are neither answers nor filtered and score
/// at least as high as the best-scoring answer (ties go against the answer).
/// `filtered` holds entity ids to drop unless they are answers.
template <typename T>
std::size_t mention_rank(std::span<const T> scores, std::span<const EntityId> answers,
                         std::span<const EntityId> filtered = {});

struct QueryResult {
  EntityId entity = 0;      // known side: head for tail queries, tail for head queries
  RelationId relation = 0;  // base relation of the test triple
  bool head_query = false;  // true: (?, r, t) scored as (t, r_rev, ?)
  ClusterId answer_cluster = 0;
  std::size_t rank = 0;

  bool operator==(const QueryResult&) const = default;
};

struct MetricsReport {
  std::string slice;
  Protocol protocol = Protocol::Raw;
  std::size_t n_queries = 0;
  // null when the slice is empty; ARR and H@N are percentages
  std::optional<double> ar, arr;
  std::map<int, std::optional<double>> hits;  // N in {1, 10, 50, 100}
  std::vector<QueryResult> queries;

  bool operator==(const MetricsReport&) const = default;
};

inline constexpr int kHitsAt[] = {1, 10, 50, 100};

/// Aggregates AR, ARR (x100) and H@N (x100) from per-query ranks.
MetricsReport summarize(std::vector<QueryResult> queries, std::string slice, Protocol protocol);

/// Entities known to be true answers of (h, r) in any split, in both directions.
AnswerIndex all_known_answers(const DatasetBundle& bundle);

struct EvalOptions {
  Protocol protocol = Protocol::Raw;
  std::size_t threads = 1;
};

/// Two queries per triple: (h, r, ?) answered by the cluster of t and
/// (t, r_rev, ?) answered by the cluster of h; scores are phi . E^T.
MetricsReport evaluate(const DatasetBundle& bundle, const Model<float>& model, std::span<const Triple> triples,
                       const std::string& slice, const EvalOptions& options);

/// Reports for few_shot_entity, few_shot_relation, zero_shot_entity and
/// zero_shot_relation over the bundle's (possibly sliced) train set.
std::map<std::string, MetricsReport> evaluate_shot_slices(const DatasetBundle& bundle, const Model<float>& model,
                                                          const EvalOptions& options);

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

}  // namespace ternarycl
