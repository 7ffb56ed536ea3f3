// SPDX-License-Identifier: Apache-2.0

#include "ternarycl/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace ternarycl {

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

template <typename T>
Probe probe(const LossBuilder<T>& build, const ParameterStore<T>& store) {
  Tape<T> tape(store);
  const NodeRef loss = build(tape);
  return {static_cast<double>(tape.scalar(loss)), tape.activation_signature()};
}

}  // namespace

template <typename T>
FiniteDiffReport finite_diff_check(const LossBuilder<T>& build, ParameterStore<T>& store,
                                   std::span<const Coordinate> coords, double eps) {
  Gradients<T> grads(store);
  std::uint64_t base_signature = 0;
  {
    Tape<T> tape(store);
    const NodeRef loss = build(tape);
    base_signature = tape.activation_signature();
    tape.backward(loss, grads);
  }

  FiniteDiffReport report;
  for (const Coordinate& c : coords) {
    T& slot = store[c.param].value[c.index];
    const T original = slot;
    slot = static_cast<T>(original + eps);
    const auto plus = probe(build, store);
    slot = static_cast<T>(original - eps);
    const auto minus = probe(build, store);
    slot = original;

    if (plus.signature != base_signature || minus.signature != base_signature) {
      ++report.excluded;
      continue;
    }
    const double fd = (plus.value - minus.value) / (2.0 * eps);
    const double tape_grad = static_cast<double>(grads[c.param][c.index]);
    const double err = std::abs(fd - tape_grad) / std::max({1.0, std::abs(fd), std::abs(tape_grad)});
    ++report.checked;
    if (err >= report.max_rel_error) {
      report.max_rel_error = err;
      report.worst = c;
    }
  }
  return report;
}

template <typename T>
std::vector<Coordinate> sample_coordinates(const ParameterStore<T>& store, std::size_t count, Rng& rng) {
  std::vector<Coordinate> out;
  out.reserve(count);
  if (store.size() == 0) return out;
  for (std::size_t i = 0; i < count; ++i) {
    const ParamId id{static_cast<std::uint32_t>(i % store.size())};
    out.push_back({id, static_cast<std::size_t>(rng.uniform_index(store[id].value.size()))});
  }
  return out;
}

template FiniteDiffReport finite_diff_check<float>(const LossBuilder<float>&, ParameterStore<float>&,
                                                   std::span<const Coordinate>, double);
template FiniteDiffReport finite_diff_check<double>(const LossBuilder<double>&, ParameterStore<double>&,
                                                    std::span<const Coordinate>, double);
template std::vector<Coordinate> sample_coordinates<float>(const ParameterStore<float>&, std::size_t, Rng&);
template std::vector<Coordinate> sample_coordinates<double>(const ParameterStore<double>&, std::size_t, Rng&);

}  // namespace ternarycl
