// SPDX-License-Identifier: Apache-2.0

#include "ternarycl/kg_data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include "ternarycl/rng.hpp"

namespace ternarycl {

namespace fs = std::filesystem;

std::vector<std::string> tokenize(std::string_view surface) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : surface) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto not_space = [](char c) { return !std::isspace(static_cast<unsigned char>(c)); };
  const auto b = std::find_if(s.begin(), s.end(), not_space);
  const auto e = std::find_if(s.rbegin(), s.rend(), not_space).base();
  return b < e ? std::string_view(&*b, static_cast<std::size_t>(e - b)) : std::string_view{};
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::string location(const fs::path& path, std::size_t line_no) {
  return path.string() + ":" + std::to_string(line_no);
}

bool is_blank(std::string_view line) { return trim(line).empty(); }

}  // namespace

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  if (path.extension() == ".gz") {
    gzFile file = gzopen(path.c_str(), "rb");
    if (!file) throw DataError("cannot open " + path.string());
    std::string current;
    char buffer[1 << 14];
    int n;
    while ((n = gzread(file, buffer, sizeof buffer)) > 0) {
      for (int i = 0; i < n; ++i) {
        if (buffer[i] == '\n') {
          lines.push_back(std::move(current));
          current.clear();
        } else {
          current.push_back(buffer[i]);
        }
      }
    }
    const bool failed = n < 0;
    gzclose(file);
    if (failed) throw DataError("corrupt gzip stream in " + path.string());
    if (!current.empty()) lines.push_back(std::move(current));
  } else {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) lines.push_back(std::move(line));
  }
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
  }
  return lines;
}

// ---------------------------------------------------------------- Vocabulary

Vocabulary::Builder::Builder() {
  intern_word(std::string(kReverseToken));
  intern_word(std::string(kSelfToken));
  intern_word(std::string(kSynonymToken));
}

WordId Vocabulary::Builder::intern_word(const std::string& word) {
  auto [it, inserted] = word_ids_.try_emplace(word, static_cast<WordId>(words_.size()));
  if (inserted) words_.push_back(word);
  return it->second;
}

std::vector<WordId> Vocabulary::Builder::intern_words(std::string_view surface) {
  auto tokens = tokenize(surface);
  if (tokens.empty()) {
    // punctuation-only surfaces keep their raw form as a single token
    std::string raw(surface);
    std::transform(raw.begin(), raw.end(), raw.begin(), [](unsigned char c) { return std::tolower(c); });
    tokens.push_back(std::move(raw));
  }
  std::vector<WordId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(intern_word(t));
  return ids;
}

EntityId Vocabulary::Builder::intern_entity(std::string_view surface) {
  if (trim(surface).empty()) throw DataError("empty entity surface form");
  auto [it, inserted] = entity_ids_.try_emplace(std::string(surface), static_cast<EntityId>(entity_names_.size()));
  if (inserted) {
    entity_names_.emplace_back(surface);
    entity_surfaces_.push_back(intern_words(surface));
  }
  return it->second;
}

RelationId Vocabulary::Builder::intern_relation(std::string_view surface) {
  if (trim(surface).empty()) throw DataError("empty relation surface form");
  auto [it, inserted] =
      relation_ids_.try_emplace(std::string(surface), static_cast<RelationId>(relation_names_.size()));
  if (inserted) {
    relation_names_.emplace_back(surface);
    relation_surfaces_.push_back(intern_words(surface));
  }
  return it->second;
}

Vocabulary Vocabulary::Builder::build() && {
  Vocabulary v;
  v.base_relations_ = relation_names_.size();
  v.entity_names_ = std::move(entity_names_);
  v.base_relation_names_ = std::move(relation_names_);
  v.words_ = std::move(words_);
  v.entity_surfaces_ = std::move(entity_surfaces_);
  v.entity_ids_ = std::move(entity_ids_);
  v.relation_ids_ = std::move(relation_ids_);
  v.word_ids_ = std::move(word_ids_);

  const auto rev = v.word_ids_.at(std::string(kReverseToken));
  v.relation_surfaces_ = relation_surfaces_;
  for (const auto& base : relation_surfaces_) {
    std::vector<WordId> s{rev};
    s.insert(s.end(), base.begin(), base.end());
    v.relation_surfaces_.push_back(std::move(s));
  }
  v.relation_surfaces_.push_back({v.word_ids_.at(std::string(kSelfToken))});
  v.relation_surfaces_.push_back({v.word_ids_.at(std::string(kSynonymToken))});
  return v;
}

std::string Vocabulary::relation_name(RelationId r) const {
  if (is_base(r)) return base_relation_names_[r];
  if (is_reverse(r)) return std::string(kReverseToken) + " " + base_relation_names_[r - base_relations_];
  if (r == self_relation()) return std::string(kSelfToken);
  if (r == synonym_relation()) return std::string(kSynonymToken);
  throw std::out_of_range("relation id " + std::to_string(r) + " outside vocabulary");
}

std::optional<EntityId> Vocabulary::find_entity(std::string_view name) const {
  auto it = entity_ids_.find(std::string(name));
  if (it == entity_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<RelationId> Vocabulary::find_relation(std::string_view name) const {
  auto it = relation_ids_.find(std::string(name));
  if (it == relation_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<WordId> Vocabulary::find_word(std::string_view word) const {
  auto it = word_ids_.find(std::string(word));
  if (it == word_ids_.end()) return std::nullopt;
  return it->second;
}

RelationId Vocabulary::reverse_of(RelationId r) const {
  if (is_base(r)) return static_cast<RelationId>(r + base_relations_);
  if (is_reverse(r)) return static_cast<RelationId>(r - base_relations_);
  throw std::invalid_argument("reverse_of: relation " + std::to_string(r) + " has no reverse");
}

// --------------------------------------------------------------- AnswerIndex

AnswerIndex::AnswerIndex(std::span<const Triple> train, const Vocabulary& vocab) {
  auto insert = [this](EntityId h, RelationId r, EntityId t) {
    tails_[key(h, r)].push_back(t);
    relations_[key(h, t)].push_back(r);
  };
  for (const Triple& t : train) {
    insert(t.head, t.relation, t.tail);
    insert(t.tail, vocab.reverse_of(t.relation), t.head);
  }
  for (auto& [k, v] : tails_) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  for (auto& [k, v] : relations_) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
}

std::span<const EntityId> AnswerIndex::answers(EntityId head, RelationId relation) const {
  auto it = tails_.find(key(head, relation));
  if (it == tails_.end()) return {};
  return it->second;
}

std::span<const RelationId> AnswerIndex::relations_between(EntityId head, EntityId tail) const {
  auto it = relations_.find(key(head, tail));
  if (it == relations_.end()) return {};
  return it->second;
}

bool AnswerIndex::contains(const Triple& t) const {
  const auto a = answers(t.head, t.relation);
  return std::binary_search(a.begin(), a.end(), t.tail);
}

std::vector<std::pair<EntityId, RelationId>> AnswerIndex::query_keys() const {
  std::vector<std::pair<EntityId, RelationId>> keys;
  keys.reserve(tails_.size());
  for (const auto& [k, v] : tails_) keys.emplace_back(static_cast<EntityId>(k >> 32), static_cast<RelationId>(k));
  std::sort(keys.begin(), keys.end());
  return keys;
}

bool AnswerIndex::operator==(const AnswerIndex& other) const {
  return tails_ == other.tails_ && relations_ == other.relations_;
}

// ------------------------------------------------------------------ loading

std::vector<Triple> DatasetBundle::train_with_reverse() const {
  std::vector<Triple> out = train;
  out.reserve(2 * train.size());
  for (const Triple& t : train) out.push_back({t.tail, vocab.reverse_of(t.relation), t.head});
  return out;
}

namespace {

struct RawTriple {
  std::string head, relation, tail;
};

std::vector<RawTriple> parse_triple_file(const fs::path& path) {
  std::vector<RawTriple> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto fields = split_tabs(lines[i]);
    if (fields.size() != 3) {
      throw DataError(location(path, i + 1) + ": expected 3 tab-separated fields, found " +
                      std::to_string(fields.size()));
    }
    for (auto f : fields) {
      if (trim(f).empty()) throw DataError(location(path, i + 1) + ": empty surface form");
    }
    out.push_back({std::string(trim(fields[0])), std::string(trim(fields[1])), std::string(trim(fields[2]))});
  }
  return out;
}

std::vector<Triple> dedup(std::vector<Triple> triples, std::size_t& duplicates) {
  std::set<Triple> seen;
  std::vector<Triple> out;
  out.reserve(triples.size());
  for (const Triple& t : triples) {
    if (seen.insert(t).second) {
      out.push_back(t);
    } else {
      ++duplicates;
    }
  }
  return out;
}

}  // namespace

DatasetBundle load_dataset(const fs::path& train, const fs::path& valid, const fs::path& test,
                           const fs::path& clusters) {
  const std::array<fs::path, 3> paths{train, valid, test};
  std::array<std::vector<RawTriple>, 3> raw;
  for (std::size_t s = 0; s < 3; ++s) raw[s] = parse_triple_file(paths[s]);

  Vocabulary::Builder builder;
  std::array<std::vector<Triple>, 3> splits;
  for (std::size_t s = 0; s < 3; ++s) {
    for (const auto& r : raw[s]) {
      const EntityId h = builder.intern_entity(r.head);
      const RelationId rel = builder.intern_relation(r.relation);
      const EntityId t = builder.intern_entity(r.tail);
      splits[s].push_back({h, rel, t});
    }
  }

  DatasetBundle bundle;
  bundle.vocab = std::move(builder).build();
  for (auto& s : splits) s = dedup(std::move(s), bundle.warnings.duplicate_triples);
  bundle.train = std::move(splits[0]);

  const std::set<Triple> train_set(bundle.train.begin(), bundle.train.end());
  auto drop_overlap = [&](std::vector<Triple> split) {
    std::vector<Triple> kept;
    for (const Triple& t : split) {
      if (train_set.count(t)) {
        ++bundle.warnings.eval_overlaps_train;
      } else {
        kept.push_back(t);
      }
    }
    return kept;
  };
  bundle.valid = drop_overlap(std::move(splits[1]));
  bundle.test = drop_overlap(std::move(splits[2]));

  const std::size_t n_ent = bundle.vocab.entity_count();
  constexpr ClusterId kUnassigned = ~ClusterId{0};
  bundle.clusters.cluster_of.assign(n_ent, kUnassigned);
  const auto lines = read_lines(clusters);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto id = static_cast<ClusterId>(bundle.clusters.members.size());
    std::vector<EntityId> members;
    for (auto field : split_tabs(lines[i])) {
      const auto name = trim(field);
      if (name.empty()) throw DataError(location(clusters, i + 1) + ": empty entity surface in cluster");
      const auto e = bundle.vocab.find_entity(name);
      if (!e) throw DataError(location(clusters, i + 1) + ": unknown entity '" + std::string(name) + "'");
      if (bundle.clusters.cluster_of[*e] == id) continue;
      if (bundle.clusters.cluster_of[*e] != kUnassigned) {
        throw DataError(location(clusters, i + 1) + ": entity '" + std::string(name) + "' already in another cluster");
      }
      bundle.clusters.cluster_of[*e] = id;
      members.push_back(*e);
    }
    std::sort(members.begin(), members.end());
    bundle.clusters.members.push_back(std::move(members));
  }
  for (EntityId e = 0; e < n_ent; ++e) {
    if (bundle.clusters.cluster_of[e] == kUnassigned) {
      bundle.clusters.cluster_of[e] = static_cast<ClusterId>(bundle.clusters.members.size());
      bundle.clusters.members.push_back({e});
    }
  }

  bundle.answer_index = AnswerIndex(bundle.train, bundle.vocab);
  return bundle;
}

DatasetBundle with_train(const DatasetBundle& bundle, std::vector<Triple> train, std::optional<SliceInfo> slice) {
  const std::set<Triple> original(bundle.train.begin(), bundle.train.end());
  for (const Triple& t : train) {
    if (!original.count(t)) throw DataError("slice triple is not part of the source train set");
  }
  DatasetBundle out = bundle;
  out.train = std::move(train);
  out.answer_index = AnswerIndex(out.train, out.vocab);
  out.slice = std::move(slice);
  return out;
}

DatasetBundle slice_sparsity(const DatasetBundle& bundle, double keep_fraction, std::uint64_t seed) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw std::invalid_argument("slice_sparsity: keep fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
  }
  const std::size_t n = bundle.train.size();
  const auto keep = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  order.resize(keep);
  std::sort(order.begin(), order.end());

  std::vector<Triple> train;
  train.reserve(keep);
  for (auto i : order) train.push_back(bundle.train[i]);
  const std::string source = bundle.slice ? bundle.slice->source : std::string("full");
  return with_train(bundle, std::move(train), SliceInfo{source, keep_fraction, seed});
}

// -------------------------------------------------------------- shot slices

std::vector<EntityId> ShotSlices::few_shot_entities() const {
  std::vector<EntityId> out;
  for (std::size_t k = 1; k <= kMaxShot; ++k) out.insert(out.end(), entities[k].begin(), entities[k].end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<RelationId> ShotSlices::few_shot_relations() const {
  std::vector<RelationId> out;
  for (std::size_t k = 1; k <= kMaxShot; ++k) out.insert(out.end(), relations[k].begin(), relations[k].end());
  std::sort(out.begin(), out.end());
  return out;
}

ShotSlices extract_shot_slices(const DatasetBundle& bundle) {
  ShotSlices s;
  s.entity_degree.assign(bundle.vocab.entity_count(), 0);
  s.relation_degree.assign(bundle.vocab.base_relation_count(), 0);
  for (const Triple& t : bundle.train) {
    ++s.entity_degree[t.head];
    if (t.tail != t.head) ++s.entity_degree[t.tail];
    ++s.relation_degree[t.relation];
  }
  for (EntityId e = 0; e < s.entity_degree.size(); ++e) {
    if (s.entity_degree[e] <= kMaxShot) s.entities[s.entity_degree[e]].push_back(e);
  }
  for (RelationId r = 0; r < s.relation_degree.size(); ++r) {
    if (s.relation_degree[r] <= kMaxShot) s.relations[s.relation_degree[r]].push_back(r);
  }
  auto is_few = [](std::size_t d) { return d >= 1 && d <= kMaxShot; };
  for (const Triple& t : bundle.test) {
    const std::size_t dh = s.entity_degree[t.head], dt = s.entity_degree[t.tail];
    for (std::size_t k = 0; k <= kMaxShot; ++k) {
      if (dh == k || dt == k) s.entity_tests[k].push_back(t);
    }
    if (is_few(dh) || is_few(dt)) s.few_shot_entity_tests_.push_back(t);
    const std::size_t dr = s.relation_degree[t.relation];
    if (dr <= kMaxShot) s.relation_tests[dr].push_back(t);
    if (is_few(dr)) s.few_shot_relation_tests_.push_back(t);
  }
  return s;
}

// ----------------------------------------------------------------- synonyms

std::size_t SynonymTable::pair_count() const {
  std::size_t n = 0;
  for (const auto& s : syn_of) n += s.size();
  return n / 2;
}

void SynonymTable::validate() const {
  for (EntityId a = 0; a < syn_of.size(); ++a) {
    for (EntityId b : syn_of[a]) {
      if (b == a) throw std::logic_error("synonym table: entity " + std::to_string(a) + " listed as its own synonym");
      if (b >= syn_of.size() || !std::binary_search(syn_of[b].begin(), syn_of[b].end(), a)) {
        throw std::logic_error("synonym table: pair (" + std::to_string(a) + ", " + std::to_string(b) +
                               ") is not symmetric");
      }
    }
  }
}

IdfWeights::IdfWeights(const Vocabulary& vocab) : weights_(vocab.word_count(), 0.0) {
  std::vector<std::size_t> df(vocab.word_count(), 0);
  for (EntityId e = 0; e < vocab.entity_count(); ++e) {
    std::vector<WordId> words(vocab.entity_surface(e).begin(), vocab.entity_surface(e).end());
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    for (WordId w : words) ++df[w];
  }
  for (std::size_t w = 0; w < df.size(); ++w) {
    if (df[w] > 0) weights_[w] = 1.0 / std::log(1.0 + static_cast<double>(df[w]));
  }
}

double IdfWeights::overlap(std::span<const WordId> a, std::span<const WordId> b) const {
  std::vector<WordId> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
  std::sort(sb.begin(), sb.end());
  sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
  double wa = 0, wb = 0, shared = 0;
  for (WordId w : sa) wa += weight(w);
  for (WordId w : sb) wb += weight(w);
  std::vector<WordId> common;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
  for (WordId w : common) shared += weight(w);
  const double denom = std::max(wa, wb);
  return denom > 0 ? shared / denom : 0.0;
}

SynonymTable mine_synonyms(const DatasetBundle& bundle, const Tensor<float>* text_embeddings,
                           const SynonymOptions& options) {
  if (!(options.idf_threshold > 0.0 && options.idf_threshold <= 1.0)) {
    throw std::invalid_argument("mine_synonyms: idf threshold must lie in (0, 1]");
  }
  if (options.sem_threshold && text_embeddings == nullptr) {
    throw std::invalid_argument("mine_synonyms: semantic threshold given without textual embeddings");
  }
  const auto& vocab = bundle.vocab;
  const std::size_t n = vocab.entity_count();
  const IdfWeights idf(vocab);

  std::vector<std::vector<WordId>> sets(n);
  std::vector<double> totals(n, 0.0);
  std::vector<std::vector<EntityId>> postings(vocab.word_count());
  for (EntityId e = 0; e < n; ++e) {
    auto& s = sets[e];
    s.assign(vocab.entity_surface(e).begin(), vocab.entity_surface(e).end());
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    for (WordId w : s) {
      totals[e] += idf.weight(w);
      postings[w].push_back(e);
    }
  }

  std::vector<std::set<EntityId>> syn(n);
  std::vector<double> shared(n, 0.0);
  std::vector<EntityId> touched;
  for (EntityId a = 0; a < n; ++a) {
    touched.clear();
    for (WordId w : sets[a]) {
      for (EntityId b : postings[w]) {
        if (b <= a) continue;
        if (shared[b] == 0.0) touched.push_back(b);
        shared[b] += idf.weight(w);
      }
    }
    for (EntityId b : touched) {
      const double denom = std::max(totals[a], totals[b]);
      if (denom > 0 && shared[b] / denom >= options.idf_threshold) {
        syn[a].insert(b);
        syn[b].insert(a);
      }
      shared[b] = 0.0;
    }
  }

  if (options.sem_threshold) {
    const auto& emb = *text_embeddings;
    if (emb.rank() != 2 || emb.dim(0) != n) {
      throw ShapeError("mine_synonyms: embeddings must be [" + std::to_string(n) + ",D], got " +
                       shape_string(emb.shape()));
    }
    const std::size_t d = emb.dim(1);
    std::vector<double> norms(n, 0.0);
    for (EntityId e = 0; e < n; ++e) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += double(emb.at(e, j)) * emb.at(e, j);
      norms[e] = std::sqrt(s);
    }
    for (EntityId a = 0; a < n; ++a) {
      if (norms[a] == 0) continue;
      for (EntityId b = a + 1; b < n; ++b) {
        if (norms[b] == 0) continue;
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += double(emb.at(a, j)) * emb.at(b, j);
        if (dot / (norms[a] * norms[b]) >= *options.sem_threshold) {
          syn[a].insert(b);
          syn[b].insert(a);
        }
      }
    }
  }

  SynonymTable table;
  table.syn_of.resize(n);
  for (EntityId e = 0; e < n; ++e) table.syn_of[e].assign(syn[e].begin(), syn[e].end());
  table.validate();
  return table;
}

// ---------------------------------------------------------------- writing

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_triples(const fs::path& path, std::span<const Triple> triples, const Vocabulary& vocab) {
  auto out = open_out(path);
  for (const Triple& t : triples) {
    out << vocab.entity_name(t.head) << '\t' << vocab.relation_name(t.relation) << '\t' << vocab.entity_name(t.tail)
        << '\n';
  }
}

void write_clusters(const fs::path& path, const ClusterTable& clusters, const Vocabulary& vocab) {
  auto out = open_out(path);
  for (const auto& members : clusters.members) {
    for (std::size_t i = 0; i < members.size(); ++i) out << (i ? "\t" : "") << vocab.entity_name(members[i]);
    out << '\n';
  }
}

void write_synonyms(const fs::path& path, const SynonymTable& table, const Vocabulary& vocab) {
  auto out = open_out(path);
  for (EntityId a = 0; a < table.syn_of.size(); ++a) {
    for (EntityId b : table.syn_of[a]) {
      if (a < b) out << vocab.entity_name(a) << '\t' << vocab.entity_name(b) << '\n';
    }
  }
}

SynonymTable read_synonyms(const fs::path& path, const Vocabulary& vocab) {
  std::vector<std::set<EntityId>> syn(vocab.entity_count());
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    const auto fields = split_tabs(lines[i]);
    if (fields.size() != 2) throw DataError(location(path, i + 1) + ": expected 2 tab-separated entities");
    const auto a = vocab.find_entity(trim(fields[0]));
    const auto b = vocab.find_entity(trim(fields[1]));
    if (!a || !b) throw DataError(location(path, i + 1) + ": unknown entity");
    if (*a == *b) continue;
    syn[*a].insert(*b);
    syn[*b].insert(*a);
  }
  SynonymTable table;
  table.syn_of.resize(syn.size());
  for (EntityId e = 0; e < syn.size(); ++e) table.syn_of[e].assign(syn[e].begin(), syn[e].end());
  return table;
}

std::vector<Triple> read_triples(const fs::path& path, const Vocabulary& vocab) {
  std::vector<Triple> out;
  const auto raw = parse_triple_file(path);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto h = vocab.find_entity(raw[i].head);
    const auto r = vocab.find_relation(raw[i].relation);
    const auto t = vocab.find_entity(raw[i].tail);
    if (!h || !r || !t) throw DataError(path.string() + ": triple " + std::to_string(i + 1) + " uses an unknown surface");
    out.push_back({*h, *r, *t});
  }
  return out;
}

}  // namespace ternarycl
