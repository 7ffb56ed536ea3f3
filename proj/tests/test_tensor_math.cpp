#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ternarycl/grad_check.hpp"
#include "ternarycl/ops.hpp"

using namespace ternarycl;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& x : t.storage()) x = rng.uniform(lo, hi);
  return t;
}

// Checks every element of every parameter of a small store.
double fd_all(const LossBuilder<double>& build, ParameterStore<double>& store, std::size_t* excluded = nullptr) {
  std::vector<Coordinate> coords;
  for (std::uint32_t p = 0; p < store.size(); ++p) {
    for (std::size_t i = 0; i < store[ParamId{p}].value.size(); ++i) coords.push_back({ParamId{p}, i});
  }
  const auto report = finite_diff_check<double>(build, store, coords, 1e-5);
  if (excluded) *excluded = report.excluded;
  CHECK(report.checked > 0);
  return report.max_rel_error;
}

}  // namespace

TEST_CASE("tensor rejects zero dims and mismatched data") {
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 1.5f);
}

TEST_CASE("reshape twice returns the original data") {
  Rng rng(1);
  ParameterStore<double> store;
  const auto x = store.add("x", random_tensor({3, 4}, rng));
  Tape<double> tape(store);
  const auto a = ops::reshape(tape, tape.param(x), {2, 6});
  const auto b = ops::reshape(tape, a, {3, 4});
  CHECK(tape.value(b) == store[x].value);
  CHECK_THROWS_AS(ops::reshape(tape, a, {5, 5}), ShapeError);
}

TEST_CASE("relu forward and backward at the kink") {
  ParameterStore<double> store;
  const auto x = store.add("x", Tensor<double>({3}, {-1.0, 0.0, 2.0}));
  Tape<double> tape(store);
  const auto y = ops::relu(tape, tape.param(x));
  CHECK(tape.value(y).storage() == std::vector<double>{0.0, 0.0, 2.0});
  Gradients<double> grads(store);
  tape.backward(ops::sum(tape, y), grads);
  CHECK(grads[x].storage() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("conv2d of the default stacked input has shape 32x28x18") {
  Rng rng(2);
  ParameterStore<float> store;
  const auto in = store.add("in", Tensor<float>({30, 20}, 0.1f));
  const auto f = store.add("f", Tensor<float>({32, 1, 3, 3}, 0.2f));
  const auto b = store.add("b", Tensor<float>({32}, 0.0f));
  Tape<float> tape(store);
  const auto y = ops::conv2d(tape, tape.param(in), tape.param(f), tape.param(b));
  CHECK(tape.shape(y) == Shape{32, 28, 18});
}

TEST_CASE("conv2d matches a naive six-loop reference exactly") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t C = 2, H = 4, W = 4, F = 3, K = 3;
    ParameterStore<double> store;
    const auto in = store.add("in", random_tensor({C, H, W}, rng));
    const auto f = store.add("f", random_tensor({F, C, K, K}, rng));
    const auto b = store.add("b", random_tensor({F}, rng));
    Tape<double> tape(store);
    const auto y = ops::conv2d(tape, tape.param(in), tape.param(f), tape.param(b));
    const auto& I = store[in].value;
    const auto& Fw = store[f].value;
    const auto& B = store[b].value;
    const std::size_t Ho = H - K + 1, Wo = W - K + 1;
    Tensor<double> ref({F, Ho, Wo});
    for (std::size_t o = 0; o < F; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = B[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < K; ++u)
              for (std::size_t v = 0; v < K; ++v)
                acc += I[(c * H + i + u) * W + j + v] * Fw[((o * C + c) * K + u) * K + v];
          ref[(o * Ho + i) * Wo + j] = acc;
        }
    CHECK(tape.value(y) == ref);
  }
}

TEST_CASE("logsumexp is stable for large inputs") {
  ParameterStore<double> store;
  const auto x = store.add("x", Tensor<double>({2}, {1000.0, 1000.0}));
  Tape<double> tape(store);
  const auto y = ops::logsumexp(tape, tape.param(x));
  CHECK(tape.scalar(y) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  ParameterStore<float> fstore;
  const auto fx = fstore.add("x", Tensor<float>({3}, {1000.f, 1000.f, -1000.f}));
  Tape<float> ftape(fstore);
  const float v = ftape.scalar(ops::logsumexp(ftape, ftape.param(fx)));
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(4);
  ParameterStore<double> store;
  const auto x = store.add("x", random_tensor({5, 7}, rng, -30, 30));
  Tape<double> tape(store);
  const auto& s = tape.value(ops::softmax_rows(tape, tape.param(x)));
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0;
    for (double v : s.row(r)) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("backward: dot(x, x) has gradient 2x") {
  ParameterStore<double> store;
  const auto x = store.add("x", Tensor<double>({2}, {1.0, 2.0}));
  const auto unused = store.add("unused", Tensor<double>({3, 2}, 7.0));
  Tape<double> tape(store);
  const auto px = tape.param(x);
  const auto loss = ops::dot_rows(tape, px, px);
  Gradients<double> grads(store);
  tape.backward(loss, grads);
  CHECK(grads[x].storage() == std::vector<double>{2.0, 4.0});
  CHECK(grads[unused].shape() == Shape{3, 2});
  CHECK(grads[unused] == Tensor<double>({3, 2}, 0.0));
}

TEST_CASE("backward rejects a non-scalar loss and recording after backward") {
  ParameterStore<double> store;
  const auto x = store.add("x", Tensor<double>({2}, 1.0));
  Tape<double> tape(store);
  const auto px = tape.param(x);
  Gradients<double> grads(store);
  CHECK_THROWS(tape.backward(px, grads));
  tape.backward(ops::sum(tape, px), grads);
  CHECK_THROWS(ops::sum(tape, px));
}

TEST_CASE("shape mismatch errors name the op and both shapes") {
  ParameterStore<double> store;
  const auto a = store.add("a", Tensor<double>({2, 3}, 1.0));
  const auto b = store.add("b", Tensor<double>({4, 5}, 1.0));
  Tape<double> tape(store);
  try {
    ops::matmul(tape, tape.param(a), tape.param(b));
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(tape, tape.param(a), tape.param(b)), ShapeError);
}

TEST_CASE("finite differences: quadratic is exact") {
  Rng rng(5);
  ParameterStore<double> store;
  const auto x = store.add("x", random_tensor({6}, rng));
  const auto m = store.add("m", random_tensor({6, 6}, rng));
  LossBuilder<double> f = [&](Tape<double>& t) {
    const auto y = ops::matmul(t, t.param(m), t.param(x));
    return ops::dot_rows(t, y, y);
  };
  CHECK(fd_all(f, store) < 1e-6);
}

TEST_CASE("finite differences: relu exactly at zero is excluded") {
  ParameterStore<double> store;
  const auto x = store.add("x", Tensor<double>({3}, {-1.0, 0.0, 2.0}));
  LossBuilder<double> f = [&](Tape<double>& t) { return ops::sum(t, ops::relu(t, t.param(x))); };
  std::vector<Coordinate> coords{{x, 0}, {x, 1}, {x, 2}};
  const auto report = finite_diff_check<double>(f, store, coords, 1e-3);
  CHECK(report.excluded == 1);
  CHECK(report.checked == 2);
  CHECK(report.max_rel_error < 1e-9);
  CHECK(store[x].value.storage() == std::vector<double>{-1.0, 0.0, 2.0});
}

TEST_CASE("finite differences agree for every primitive") {
  Rng rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    ParameterStore<double> store;
    const auto a = store.add("a", random_tensor({3, 4}, rng));
    const auto b = store.add("b", random_tensor({3, 4}, rng));
    const auto w = store.add("w", random_tensor({4, 2}, rng));
    const auto img = store.add("img", random_tensor({2, 5, 4}, rng));
    const auto filt = store.add("filt", random_tensor({3, 2, 3, 3}, rng));
    const auto bias = store.add("bias", random_tensor({3}, rng));
    const auto table = store.add("table", random_tensor({5, 4}, rng));
    Tensor<double> targets({3, 2});
    for (auto& v : targets.storage()) v = rng.uniform01();

    const std::vector<std::size_t> ids{4, 1, 4};
    const std::vector<std::size_t> tgt{1, 0, 1};
    const std::vector<std::size_t> picks{0, 5, 11, 5};

    const std::vector<std::pair<const char*, LossBuilder<double>>> cases{
        {"matmul", [&](Tape<double>& t) { return ops::sum(t, ops::mul(t, ops::matmul(t, t.param(a), t.param(w)), ops::matmul(t, t.param(b), t.param(w)))); }},
        {"matvec", [&](Tape<double>& t) {
           const auto v = ops::reshape(t, ops::gather(t, t.param(b), std::vector<std::size_t>{0, 1, 2, 3}), {4});
           const auto y = ops::matmul(t, t.param(a), v);
           return ops::dot_rows(t, y, y);
         }},
        {"add_sub_scale", [&](Tape<double>& t) {
           const auto s = ops::sub(t, ops::add(t, t.param(a), ops::scale(t, t.param(b), 2.5)), t.param(a));
           return ops::sum(t, ops::mul(t, s, s));
         }},
        {"concat", [&](Tape<double>& t) {
           const std::vector<NodeRef> parts{t.param(a), t.param(b), t.param(a)};
           const auto c = ops::concat<double>(t, parts);
           return ops::sum(t, ops::mul(t, c, ops::sigmoid(t, c)));
         }},
        {"relu", [&](Tape<double>& t) { return ops::sum(t, ops::mul(t, ops::relu(t, t.param(a)), t.param(b))); }},
        {"sigmoid_tanh", [&](Tape<double>& t) { return ops::sum(t, ops::mul(t, ops::tanh(t, t.param(a)), ops::sigmoid(t, t.param(b)))); }},
        {"conv2d", [&](Tape<double>& t) {
           const auto y = ops::conv2d(t, t.param(img), t.param(filt), t.param(bias));
           return ops::sum(t, ops::mul(t, y, y));
         }},
        {"embedding_lookup", [&](Tape<double>& t) {
           const auto e = ops::embedding_lookup(t, t.param(table), ids);
           return ops::sum(t, ops::dot_rows(t, e, t.param(a)));
         }},
        {"logsumexp", [&](Tape<double>& t) { return ops::logsumexp(t, ops::scale(t, t.param(a), 3.0)); }},
        {"softmax_rows", [&](Tape<double>& t) { return ops::sum(t, ops::mul(t, ops::softmax_rows(t, t.param(a)), t.param(b))); }},
        {"softmax_cross_rows", [&](Tape<double>& t) { return ops::softmax_cross_rows(t, ops::matmul(t, t.param(a), t.param(w)), tgt); }},
        {"gather_mean", [&](Tape<double>& t) {
           const auto g = ops::gather(t, t.param(a), picks);
           return ops::mean(t, ops::mul(t, g, g));
         }},
        {"bce_with_logits", [&](Tape<double>& t) { return ops::bce_with_logits(t, ops::matmul(t, t.param(b), t.param(w)), targets); }},
    };
    for (const auto& [name, f] : cases) {
      CAPTURE(name);
      CHECK(fd_all(f, store) < 1e-4);
    }
  }
}

TEST_CASE("bce_with_logits matches the direct formula and is stable") {
  ParameterStore<double> store;
  const auto x = store.add("x", Tensor<double>({4}, {-800.0, -1.0, 0.5, 900.0}));
  const Tensor<double> y({4}, {0.0, 1.0, 0.0, 1.0});
  Tape<double> tape(store);
  const double v = tape.scalar(ops::bce_with_logits(tape, tape.param(x), y));
  const double direct = (0.0 + std::log1p(std::exp(1.0)) + std::log1p(std::exp(0.5)) + 0.0) / 4.0;
  CHECK(v == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("rng derivation is deterministic and path-sensitive") {
  auto a = Rng::derive(7, {1, 2});
  auto b = Rng::derive(7, {1, 2});
  auto c = Rng::derive(7, {2, 1});
  const auto va = a.next();
  CHECK(va == b.next());
  CHECK(va != c.next());
  Rng r(9);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) ++counts[r.uniform_index(5)];
  for (int n : counts) CHECK(n > 850);
}
