// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ternarycl/rng.hpp"
#include "ternarycl/tape.hpp"

namespace ternarycl {

struct Coordinate {
  ParamId param;
  std::size_t index = 0;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// coordinates skipped because a perturbation flipped a ReLU decision
  std::size_t excluded = 0;
  Coordinate worst{};
};

/// Builds a scalar loss on a fresh tape from the store's current values.
template <typename T>
using LossBuilder = std::function<NodeRef(Tape<T>&)>;

/// Compares tape gradients with central differences
/// (f(p + eps e_i) - f(p - eps e_i)) / (2 eps) on the given coordinates.
/// The error of one coordinate is |g_fd - g_tape| / max(1, |g_fd|, |g_tape|).
/// A coordinate is excluded when the ReLU on/off pattern at p - eps, p or
/// p + eps differ, i.e. the probe straddles a kink. The store is restored
/// exactly before returning.
template <typename T>
FiniteDiffReport finite_diff_check(const LossBuilder<T>& build, ParameterStore<T>& store,
                                   std::span<const Coordinate> coords, double eps = 1e-3);

/// `count` coordinates, cycling over the parameters in store order and
/// drawing a uniform element index within each.
template <typename T>
std::vector<Coordinate> sample_coordinates(const ParameterStore<T>& store, std::size_t count, Rng& rng);

}  // namespace ternarycl
