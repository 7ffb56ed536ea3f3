#include <doctest.h>

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ternarycl/kg_data.hpp"
#include "test_util.hpp"

using namespace ternarycl;

namespace {

DatasetBundle load(const TempDir& dir, const std::string& train, const std::string& valid = "",
                   const std::string& test = "", const std::string& clusters = "") {
  return load_dataset(dir.write("train.txt", train), dir.write("valid.txt", valid), dir.write("test.txt", test),
                      dir.write("clusters.txt", clusters));
}

// 12 entities, 4 relations; degrees chosen to populate every shot bucket.
const char* kTrain =
    "alpha\tlikes\tbeta\n"
    "alpha\tlikes\tgamma\n"
    "alpha\tknows\tdelta\n"
    "beta\tknows\tgamma\n"
    "gamma\tfounded\tepsilon\n"
    "delta\tlikes\tzeta\n"
    "eta\tvisits\ttheta\n";
const char* kTest =
    "alpha\tknows\tbeta\n"
    "iota\tlikes\tkappa\n"
    "eta\tlikes\tlambda\n"
    "theta\tfounded\tzeta\n";

}  // namespace

TEST_CASE("tokenize lowercases and splits on ASCII punctuation") {
  CHECK(tokenize("NBC-TV") == std::vector<std::string>{"nbc", "tv"});
  CHECK(tokenize("  New   York,City ") == std::vector<std::string>{"new", "york", "city"});
  CHECK(tokenize("Zürich") == std::vector<std::string>{"z\xc3\xbcrich"});
  CHECK(tokenize("--").empty());
}

TEST_CASE("single triple file gives 2 entities, 1 base relation and its reverse") {
  TempDir dir;
  const auto b = load(dir, "a\tlikes\tb\n");
  CHECK(b.vocab.entity_count() == 2);
  CHECK(b.vocab.base_relation_count() == 1);
  CHECK(b.vocab.relation_count() == 4);
  CHECK(b.train.size() == 1);
  CHECK(b.vocab.reverse_of(0) == 1);
  CHECK(b.vocab.reverse_of(1) == 0);
  CHECK(b.vocab.self_relation() != b.vocab.synonym_relation());
  CHECK(b.vocab.is_reserved(b.vocab.self_relation()));
  const auto rev = b.vocab.relation_surface(1);
  REQUIRE(rev.size() == 2);
  CHECK(b.vocab.word(rev[0]) == "<rev>");
  CHECK(b.vocab.word(rev[1]) == "likes");
  CHECK(b.clusters.members.size() == 2);
  for (RelationId r = 0; r < b.vocab.relation_count(); ++r) CHECK(!b.vocab.relation_surface(r).empty());
}

TEST_CASE("duplicate train lines are deduplicated with a warning") {
  TempDir dir;
  const auto b = load(dir, "a\tlikes\tb\na\tlikes\tb\n");
  CHECK(b.train.size() == 1);
  CHECK(b.warnings.duplicate_triples == 1);
}

TEST_CASE("test triples seen in train are dropped") {
  TempDir dir;
  const auto b = load(dir, "a\tr\tb\n", "", "a\tr\tb\nb\tr\ta\n");
  CHECK(b.test.size() == 1);
  CHECK(b.warnings.eval_overlaps_train == 1);
}

TEST_CASE("malformed input reports path and line number") {
  TempDir dir;
  try {
    load(dir, "a\tlikes\tb\nbroken line\n");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("train.txt:2") != std::string::npos);
  }
  CHECK_THROWS_AS(load(dir, "a\t \tb\n"), DataError);
  CHECK_THROWS_AS(load(dir, "a\tr\tb\n", "", "", "a\tnobody\n"), DataError);
}

TEST_CASE("punctuation-only surfaces fall back to their raw text") {
  TempDir dir;
  const auto b = load(dir, "%\tis\t?!\n");
  REQUIRE(b.vocab.entity_surface(0).size() == 1);
  CHECK(b.vocab.word(b.vocab.entity_surface(0)[0]) == "%");
}

TEST_CASE("gzip input is read transparently") {
  TempDir dir;
  const auto gz = dir.path() / "train.txt.gz";
  gzFile f = gzopen(gz.c_str(), "wb");
  const std::string body = "a\tlikes\tb\nb\tlikes\tc\n";
  gzwrite(f, body.data(), static_cast<unsigned>(body.size()));
  gzclose(f);
  const auto b = load_dataset(gz, dir.write("v", ""), dir.write("t", ""), dir.write("c", ""));
  CHECK(b.train.size() == 2);
  CHECK(b.vocab.entity_count() == 3);
}

TEST_CASE("clusters partition the entities") {
  TempDir dir;
  const auto b = load(dir, "nbc\tairs\tshow\nnbc tv\tairs\tnews\n", "", "", "nbc\tnbc tv\n");
  const auto nbc = *b.vocab.find_entity("nbc");
  const auto nbctv = *b.vocab.find_entity("nbc tv");
  CHECK(b.clusters.cluster_of[nbc] == b.clusters.cluster_of[nbctv]);
  std::size_t total = 0;
  for (const auto& m : b.clusters.members) total += m.size();
  CHECK(total == b.vocab.entity_count());
  for (EntityId e = 0; e < b.vocab.entity_count(); ++e) {
    const auto members = b.clusters.cluster_members(e);
    CHECK(std::count(members.begin(), members.end(), e) == 1);
  }
}

TEST_CASE("answer index reflects train triples in both directions") {
  TempDir dir;
  const auto b = load(dir, kTrain, "", kTest);
  const auto& v = b.vocab;
  const auto alpha = *v.find_entity("alpha"), beta = *v.find_entity("beta"), gamma = *v.find_entity("gamma");
  const auto likes = *v.find_relation("likes");
  const auto ans = b.answer_index.answers(alpha, likes);
  CHECK(std::vector<EntityId>(ans.begin(), ans.end()) == std::vector<EntityId>{beta, gamma});
  CHECK(b.answer_index.contains({beta, v.reverse_of(likes), alpha}));
  CHECK(!b.answer_index.contains({beta, likes, alpha}));
  const auto rels = b.answer_index.relations_between(alpha, beta);
  CHECK(std::vector<RelationId>(rels.begin(), rels.end()) == std::vector<RelationId>{likes});

  for (const Triple& t : b.train) CHECK(b.answer_index.contains(t));
  std::size_t entries = 0;
  for (auto [h, r] : b.answer_index.query_keys()) entries += b.answer_index.answers(h, r).size();
  CHECK(entries == 2 * b.train.size());
  CHECK(AnswerIndex(b.train, b.vocab) == b.answer_index);
}

TEST_CASE("vocabulary order survives a write and reload") {
  TempDir dir;
  const auto b = load(dir, kTrain, "", kTest, "beta\tgamma\n");
  TempDir out;
  write_triples(out.path() / "train.txt", b.train, b.vocab);
  write_triples(out.path() / "valid.txt", b.valid, b.vocab);
  write_triples(out.path() / "test.txt", b.test, b.vocab);
  write_clusters(out.path() / "clusters.txt", b.clusters, b.vocab);
  const auto r = load_dataset(out.path() / "train.txt", out.path() / "valid.txt", out.path() / "test.txt",
                              out.path() / "clusters.txt");
  CHECK(r.train == b.train);
  CHECK(r.test == b.test);
  CHECK(r.clusters.cluster_of == b.clusters.cluster_of);
  REQUIRE(r.vocab.entity_count() == b.vocab.entity_count());
  for (EntityId e = 0; e < b.vocab.entity_count(); ++e) CHECK(r.vocab.entity_name(e) == b.vocab.entity_name(e));
  CHECK(read_triples(out.path() / "test.txt", b.vocab) == b.test);
}

TEST_CASE("sparsity slices are uniform subsets of exact size") {
  TempDir dir;
  std::string train;
  for (int i = 0; i < 97; ++i) train += "e" + std::to_string(i) + "\tr" + std::to_string(i % 5) + "\te" + std::to_string(i + 1) + "\n";
  const auto b = load(dir, train);
  const std::set<Triple> original(b.train.begin(), b.train.end());
  for (double f : {1.0, 0.8, 0.6, 0.4, 0.2}) {
    const auto s = slice_sparsity(b, f, 13);
    CHECK(s.train.size() == static_cast<std::size_t>(std::llround(f * 97)));
    for (const Triple& t : s.train) CHECK(original.count(t) == 1);
    CHECK(std::is_sorted(s.train.begin(), s.train.end(), [&](const Triple& x, const Triple& y) {
      return std::find(b.train.begin(), b.train.end(), x) < std::find(b.train.begin(), b.train.end(), y);
    }));
    CHECK(s.vocab.entity_count() == b.vocab.entity_count());
    CHECK(AnswerIndex(s.train, s.vocab) == s.answer_index);
    CHECK(slice_sparsity(b, f, 13).train == s.train);
  }
  const auto full = slice_sparsity(b, 1.0, 3);
  CHECK(full.train == b.train);
  CHECK(full.answer_index == b.answer_index);
  CHECK(slice_sparsity(b, 0.2, 1).train != slice_sparsity(b, 0.2, 2).train);
  CHECK_THROWS_AS(slice_sparsity(b, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(slice_sparsity(b, 1.2, 1), std::invalid_argument);
}

TEST_CASE("shot slices count head and tail links on base train triples") {
  TempDir dir;
  const auto b = load(dir, kTrain, "", kTest);
  const auto s = extract_shot_slices(b);
  const auto& v = b.vocab;
  auto id = [&](const char* n) { return *v.find_entity(n); };
  CHECK(s.entity_degree[id("alpha")] == 3);
  CHECK(s.entity_degree[id("gamma")] == 3);
  CHECK(s.entity_degree[id("iota")] == 0);
  CHECK(std::count(s.entities[3].begin(), s.entities[3].end(), id("alpha")) == 1);
  CHECK(std::count(s.entities[0].begin(), s.entities[0].end(), id("iota")) == 1);

  std::size_t bucketed = 0, higher = 0;
  for (const auto& bucket : s.entities) bucketed += bucket.size();
  for (auto d : s.entity_degree) higher += d > kMaxShot;
  CHECK(bucketed + higher == v.entity_count());

  // iota, kappa and lambda appear only in test: zero-shot triples
  CHECK(s.entity_tests[0].size() == 2);
  CHECK(s.relation_degree[*v.find_relation("likes")] == 3);
  CHECK(s.relation_degree[*v.find_relation("founded")] == 1);
  CHECK(s.relation_tests[1].size() == 1);
  for (const Triple& t : s.few_shot_entity_tests()) {
    const bool touches = (s.entity_degree[t.head] >= 1 && s.entity_degree[t.head] <= 3) ||
                         (s.entity_degree[t.tail] >= 1 && s.entity_degree[t.tail] <= 3);
    CHECK(touches);
  }
}

TEST_CASE("self loops count once toward an entity's degree") {
  TempDir dir;
  const auto b = load(dir, "a\tr\ta\n");
  CHECK(extract_shot_slices(b).entity_degree[0] == 1);
}

TEST_CASE("synonym mining by IDF token overlap") {
  TempDir dir;
  const auto b = load(dir,
                      "NBC-TV\tairs\tfriends\n"
                      "NBC\tairs\tseinfeld\n"
                      "NBC Television\towns\tNBC TV\n"
                      "friends\tis a\tsitcom\n",
                      "", "", "");
  const auto& v = b.vocab;
  const auto table = mine_synonyms(b, nullptr, {});
  table.validate();
  const auto nbctv = *v.find_entity("NBC-TV"), nbc_tv = *v.find_entity("NBC TV");
  const auto sitcom = *v.find_entity("sitcom");
  CHECK(std::count(table.syn_of[nbctv].begin(), table.syn_of[nbctv].end(), nbc_tv) == 1);
  CHECK(table.syn_of[sitcom].empty());

  const IdfWeights idf(v);
  CHECK(idf.overlap(v.entity_surface(nbctv), v.entity_surface(nbc_tv)) == doctest::Approx(1.0));
  CHECK(idf.overlap(v.entity_surface(sitcom), v.entity_surface(nbctv)) == 0.0);

  // hand-computed: df(nbc)=4, df(tv)=2, df(television)=1 over the 7 entity surfaces
  const auto nbc = *v.find_entity("NBC"), nbctel = *v.find_entity("NBC Television");
  const double w_nbc = 1 / std::log(5.0), w_tv = 1 / std::log(3.0), w_tel = 1 / std::log(2.0);
  CHECK(idf.overlap(v.entity_surface(nbc), v.entity_surface(nbctv)) == doctest::Approx(w_nbc / (w_nbc + w_tv)));
  CHECK(idf.overlap(v.entity_surface(nbc), v.entity_surface(nbctel)) == doctest::Approx(w_nbc / (w_nbc + w_tel)));

  // lowering the threshold puts NBC, NBC-TV and NBC Television in one group
  const auto loose = mine_synonyms(b, nullptr, {.idf_threshold = 0.25});
  for (auto [x, y] : {std::pair{nbc, nbctv}, {nbc, nbctel}, {nbctv, nbctel}}) {
    CHECK(std::count(loose.syn_of[x].begin(), loose.syn_of[x].end(), y) == 1);
    CHECK(std::count(loose.syn_of[y].begin(), loose.syn_of[y].end(), x) == 1);
  }
  CHECK_THROWS_AS(mine_synonyms(b, nullptr, {.idf_threshold = 0.8, .sem_threshold = 0.9}), std::invalid_argument);
  CHECK_THROWS_AS(mine_synonyms(b, nullptr, {.idf_threshold = 0.0}), std::invalid_argument);

  TempDir out;
  write_synonyms(out.path() / "syn.txt", loose, v);
  CHECK(read_synonyms(out.path() / "syn.txt", v).syn_of == loose.syn_of);
}

TEST_CASE("semantic matching adds pairs by cosine") {
  TempDir dir;
  const auto b = load(dir, "apple\tr\tpear\nstone\tr\tpebble\n");
  Tensor<float> emb({4, 2}, {1.f, 0.f, 0.f, 1.f, 0.99f, 0.1f, 0.f, 1.f});
  const auto t = mine_synonyms(b, &emb, {.idf_threshold = 0.8, .sem_threshold = 0.95});
  t.validate();
  CHECK(t.syn_of[0] == std::vector<EntityId>{2});
  CHECK(t.syn_of[1] == std::vector<EntityId>{3});
  CHECK(t.pair_count() == 2);
  Tensor<float> bad({3, 2}, 1.f);
  CHECK_THROWS(mine_synonyms(b, &bad, {.idf_threshold = 0.8, .sem_threshold = 0.95}));
}
