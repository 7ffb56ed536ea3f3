// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ternarycl/tape.hpp"

// Differentiable primitives. Every op reads its operands from the tape,
// records the forward value and a closure that adds the op's partials into
// its inputs' gradient buffers. Vectors are rank-1 tensors.
namespace ternarycl::ops {

/// [m,k]x[k,n] -> [m,n], or [m,k]x[k] -> [m].
template <typename T>
NodeRef matmul(Tape<T>& tape, NodeRef a, NodeRef b);

template <typename T>
NodeRef add(Tape<T>& tape, NodeRef a, NodeRef b);
template <typename T>
NodeRef sub(Tape<T>& tape, NodeRef a, NodeRef b);
/// Elementwise product.
template <typename T>
NodeRef mul(Tape<T>& tape, NodeRef a, NodeRef b);
template <typename T>
NodeRef scale(Tape<T>& tape, NodeRef a, T factor);

/// Concatenation along the leading axis; trailing dims must agree.
template <typename T>
NodeRef concat(Tape<T>& tape, std::span<const NodeRef> parts);
template <typename T>
NodeRef reshape(Tape<T>& tape, NodeRef a, Shape shape);

/// max(x, 0); the derivative at exactly 0 is taken as 0.
template <typename T>
NodeRef relu(Tape<T>& tape, NodeRef a);
template <typename T>
NodeRef sigmoid(Tape<T>& tape, NodeRef a);
template <typename T>
NodeRef tanh(Tape<T>& tape, NodeRef a);

/// Valid-padding, stride-1 2-D convolution with one bias per filter.
/// input [H,W] or [C,H,W]; filters [F,C,kh,kw]; bias [F] -> [F,H-kh+1,W-kw+1].
template <typename T>
NodeRef conv2d(Tape<T>& tape, NodeRef input, NodeRef filters, NodeRef bias);

/// Rows of `table` ([N,D]) selected by `ids` -> [ids.size(), D].
template <typename T>
NodeRef embedding_lookup(Tape<T>& tape, NodeRef table, std::span<const std::size_t> ids);

/// Row-wise dot products: [n,D]x[n,D] -> [n]; two vectors -> [1].
template <typename T>
NodeRef dot_rows(Tape<T>& tape, NodeRef a, NodeRef b);

/// log(sum(exp(x))) over all elements, max-shifted -> [1].
template <typename T>
NodeRef logsumexp(Tape<T>& tape, NodeRef a);

/// Softmax of each row of a [n,k] tensor (or of a whole vector).
template <typename T>
NodeRef softmax_rows(Tape<T>& tape, NodeRef a);

/// Sum over rows of (logsumexp(row) - row[target]) -> [1].
template <typename T>
NodeRef softmax_cross_rows(Tape<T>& tape, NodeRef logits, std::span<const std::size_t> targets);

/// Elements at flat positions -> [indices.size()].
template <typename T>
NodeRef gather(Tape<T>& tape, NodeRef a, std::span<const std::size_t> indices);

template <typename T>
NodeRef sum(Tape<T>& tape, NodeRef a);
template <typename T>
NodeRef mean(Tape<T>& tape, NodeRef a);

/// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1],
/// evaluated in the log-sum-exp-stable form -> [1].
template <typename T>
NodeRef bce_with_logits(Tape<T>& tape, NodeRef logits, const Tensor<T>& targets);

}  // namespace ternarycl::ops
