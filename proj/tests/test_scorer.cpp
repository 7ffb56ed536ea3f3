#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ternarycl/grad_check.hpp"
#include "ternarycl/ops.hpp"
#include "ternarycl/scorer.hpp"

using namespace ternarycl;

namespace {

Vocabulary toy_vocab() {
  Vocabulary::Builder b;
  for (const char* e : {"barack obama", "hawaii", "honolulu", "michelle", "chicago"}) b.intern_entity(e);
  for (const char* r : {"born in", "married to", "lives in", "born in "}) b.intern_relation(r);
  return std::move(b).build();
}

// D=4 as 2x2, stacked 4x2, two 2x2 filters -> 2x3x1 = 6 features
ModelConfig small_config() { return {.dim = 4, .reshape_rows = 2, .reshape_cols = 2, .conv_filters = 2, .kernel = 2, .word_dim = 3}; }

const Tensor<double>& param(const Model<double>& m, const char* name) { return m.store[*m.store.find(name)].value; }

// Independent reference: bidirectional GRU, conv, linear in plain loops.
std::vector<double> reference_encode(const Model<double>& m, std::span<const WordId> seq) {
  const std::size_t H = m.config.dim / 2, Dw = m.config.word_dim;
  const auto& words = param(m, "word");
  auto run = [&](const std::string& p, bool reversed) {
    std::vector<double> h(H, 0.0);
    for (std::size_t s = 0; s < seq.size(); ++s) {
      const WordId w = seq[reversed ? seq.size() - 1 - s : s];
      auto lin = [&](const char* wn, const char* un, const char* bn, const std::vector<double>& hh) {
        std::vector<double> o(H);
        for (std::size_t i = 0; i < H; ++i) {
          double acc = param(m, (p + bn).c_str())[i];
          for (std::size_t j = 0; j < Dw; ++j) acc += param(m, (p + wn).c_str()).at(i, j) * words.at(w, j);
          for (std::size_t j = 0; j < H; ++j) acc += param(m, (p + un).c_str()).at(i, j) * hh[j];
          o[i] = acc;
        }
        return o;
      };
      auto z = lin("w_update", "u_update", "b_update", h);
      auto r = lin("w_reset", "u_reset", "b_reset", h);
      std::vector<double> rh(H);
      for (std::size_t i = 0; i < H; ++i) rh[i] = h[i] / (1 + std::exp(-r[i]));
      auto n = lin("w_cand", "u_cand", "b_cand", rh);
      for (std::size_t i = 0; i < H; ++i) {
        const double zi = 1 / (1 + std::exp(-z[i]));
        const double ni = std::tanh(n[i]);
        h[i] = (1 - zi) * ni + zi * h[i];
      }
    }
    return h;
  };
  auto out = run("gru.fwd.", false);
  const auto bwd = run("gru.bwd.", true);
  out.insert(out.end(), bwd.begin(), bwd.end());
  return out;
}

std::vector<double> reference_phi(const Model<double>& m, const Vocabulary& v, EntityId h, RelationId r) {
  const auto& c = m.config;
  auto head = reference_encode(m, v.entity_surface(h));
  for (std::size_t i = 0; i < c.dim; ++i) head[i] += param(m, "entity").at(h, i);
  const auto rel = reference_encode(m, v.relation_surface(r));
  std::vector<double> img(head);
  img.insert(img.end(), rel.begin(), rel.end());  // row-major stacking of two reshaped blocks
  const std::size_t Hs = 2 * c.reshape_rows, Ws = c.reshape_cols, K = c.kernel;
  const std::size_t Ho = c.conv_out_rows(), Wo = c.conv_out_cols();
  std::vector<double> feat;
  for (std::size_t f = 0; f < c.conv_filters; ++f)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        double acc = param(m, "conv.bias")[f];
        for (std::size_t u = 0; u < K; ++u)
          for (std::size_t w = 0; w < K; ++w) acc += img[(i + u) * Ws + j + w] * param(m, "conv.filters")[(f * K + u) * K + w];
        feat.push_back(std::max(acc, 0.0));
      }
  (void)Hs;
  std::vector<double> out(c.dim);
  for (std::size_t i = 0; i < c.dim; ++i) {
    double acc = param(m, "linear.bias")[i];
    for (std::size_t j = 0; j < feat.size(); ++j) acc += param(m, "linear.weight").at(i, j) * feat[j];
    out[i] = std::max(acc, 0.0);
  }
  return out;
}

}  // namespace

TEST_CASE("model config validation") {
  CHECK_NOTHROW(ModelConfig{}.validate());
  CHECK(ModelConfig{}.flat_features() == 16128);
  CHECK_THROWS_AS((ModelConfig{.dim = 300, .reshape_rows = 10}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((ModelConfig{.dim = 4, .reshape_rows = 2, .reshape_cols = 2, .kernel = 3}).validate(), std::invalid_argument);
}

TEST_CASE("phi has width D under the default configuration") {
  const auto v = toy_vocab();
  const auto m = init_model<float>(ModelConfig{}, v, 1);
  Tape<float> tape(m.store);
  Scorer<float> s(m, v, tape);
  CHECK(tape.shape(s.phi(0, 1)) == Shape{300});
  CHECK(tape.shape(s.phi(2, v.reverse_of(0))) == Shape{300});
}

TEST_CASE("phi matches the plain-loop reference") {
  const auto v = toy_vocab();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto m = init_model<double>(small_config(), v, seed);
    // larger weights so the ReLUs are exercised on both sides
    for (auto& p : m.store.all()) for (auto& x : p.value.storage()) x *= 8;
    Tape<double> tape(m.store);
    Scorer<double> s(m, v, tape);
    for (EntityId h = 0; h < v.entity_count(); ++h) {
      for (RelationId r = 0; r < v.relation_count(); ++r) {
        const auto ref = reference_phi(m, v, h, r);
        const auto& got = tape.value(s.phi(h, r));
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("zero parameters give phi = 0 and beta = 0") {
  const auto v = toy_vocab();
  auto m = init_model<double>(small_config(), v, 4);
  for (auto& p : m.store.all()) p.value.fill(0.0);
  Tape<double> tape(m.store);
  Scorer<double> s(m, v, tape);
  CHECK(tape.value(s.phi(0, 0)) == Tensor<double>({4}, 0.0));
  CHECK(tape.scalar(s.beta({0, 0, 1}).value) == 0.0);
}

TEST_CASE("beta equals dot(phi, tail row) and is repeatable") {
  const auto v = toy_vocab();
  const auto m = init_model<double>(small_config(), v, 5);
  Tape<double> tape(m.store);
  Scorer<double> s(m, v, tape);
  const auto score = s.beta({0, 0, 1});
  const auto& phi = tape.value(score.phi);
  double expected = 0;
  for (std::size_t i = 0; i < 4; ++i) expected += phi[i] * param(m, "entity").at(1, i);
  CHECK(tape.scalar(score.value) == expected);
  CHECK(tape.scalar(s.beta({0, 0, 1}).value) == tape.scalar(score.value));
  const std::vector<EntityId> tails{1, 3, 1};
  const auto& many = tape.value(s.tail_scores(0, 0, tails));
  CHECK(many[0] == expected);
  CHECK(many[2] == expected);
  const auto& all = tape.value(s.all_logits(0, 0));
  CHECK(all[1] == expected);
  CHECK(all[3] == many[1]);
  const std::vector<RelationId> rels{2, 0};
  CHECK(tape.value(s.relation_scores(0, 1, rels))[1] == expected);
}

TEST_CASE("beta is linear in the tail embedding") {
  const auto v = toy_vocab();
  auto m = init_model<double>(small_config(), v, 6);
  const auto eid = *m.store.find("entity");
  auto score = [&](EntityId t) {
    Tape<double> tape(m.store);
    Scorer<double> s(m, v, tape);
    return tape.scalar(s.beta({0, 1, t}).value);
  };
  const double b1 = score(2), b2 = score(3);
  const double alpha = -1.7;
  auto& table = m.store[eid].value;
  for (std::size_t i = 0; i < 4; ++i) table.at(4, i) = alpha * table.at(2, i) + table.at(3, i);
  CHECK(score(4) == doctest::Approx(alpha * b1 + b2).epsilon(1e-12));
}

TEST_CASE("phi depends on a relation only through its text") {
  const auto v = toy_vocab();
  // "born in" and "born in " tokenize identically
  REQUIRE(std::ranges::equal(v.relation_surface(0), v.relation_surface(3)));
  auto m = init_model<double>(small_config(), v, 7);
  auto& R = m.store[m.scorer.relations].value;
  for (std::size_t i = 0; i < 4; ++i) R.at(3, i) = R.at(0, i);
  Tape<double> tape(m.store);
  Scorer<double> s(m, v, tape);
  CHECK(tape.value(s.phi(1, 0)) == tape.value(s.phi(1, 3)));
  // and the relation table never receives gradient
  Gradients<double> g(m.store);
  tape.backward(s.beta({1, 0, 2}).value, g);
  CHECK(g[m.scorer.relations] == Tensor<double>(R.shape(), 0.0));
}

TEST_CASE("beta gradients match finite differences for every parameter group") {
  const auto v = toy_vocab();
  auto m = init_model<double>(small_config(), v, 8);
  for (auto& p : m.store.all()) for (auto& x : p.value.storage()) x *= 6;
  LossBuilder<double> loss = [&](Tape<double>& t) {
    Scorer<double> s(m, v, t);
    return ops::add(t, s.beta({0, 0, 1}).value, ops::scale(t, s.beta({2, v.reverse_of(1), 0}).value, 0.5));
  };
  Rng rng(9);
  for (const char* group : {"entity", "conv.filters", "conv.bias", "linear.weight", "linear.bias", "word",
                            "gru.fwd.w_update", "gru.bwd.u_cand", "gru.fwd.b_reset"}) {
    CAPTURE(group);
    const auto id = *m.store.find(group);
    std::vector<Coordinate> coords;
    for (std::size_t i = 0; i < m.store[id].value.size(); ++i) coords.push_back({id, i});
    const auto report = finite_diff_check<double>(loss, m.store, coords, 1e-6);
    CHECK(report.checked > 0);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("reverse_triple") {
  const auto v = toy_vocab();
  const Triple t{0, 1, 3};
  const auto r = reverse_triple(t, v);
  CHECK(r == Triple{3, v.reverse_of(1), 0});
  CHECK(v.word(v.relation_surface(r.relation)[0]) == "<rev>");
  CHECK_THROWS_AS(reverse_triple(r, v), std::invalid_argument);
  CHECK_THROWS_AS(reverse_triple({0, v.self_relation(), 0}, v), std::invalid_argument);
}
