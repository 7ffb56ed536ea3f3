// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "ternarycl/kg_data.hpp"
#include "ternarycl/rng.hpp"
#include "ternarycl/tape.hpp"

namespace ternarycl {

/// One GRU direction. Input weights are [H, Dw], recurrent weights [H, H].
struct GruCellIds {
  ParamId w_update, u_update, b_update;
  ParamId w_reset, u_reset, b_reset;
  ParamId w_cand, u_cand, b_cand;
};

struct EncoderIds {
  ParamId words;  // [word_count, Dw]
  GruCellIds forward, backward;
  std::size_t hidden = 0;
  std::size_t word_dim = 0;
};

/// Registers the word table (uniform +-0.05) and both GRU cells (uniform
/// +-1/sqrt(hidden)) under the "word" and "gru.*" names.
template <typename T>
EncoderIds add_encoder_params(ParameterStore<T>& store, std::size_t word_count, std::size_t word_dim,
                              std::size_t hidden, Rng& rng);

/// Bidirectional GRU over the word sequence; returns [2 * hidden], the last
/// forward state followed by the last backward state. Cell:
///   z = sigmoid(Wz x + Uz h + bz),  r = sigmoid(Wr x + Ur h + br)
///   n = tanh(Wn x + Un (r * h) + bn),  h' = n + z * (h - n)
template <typename T>
NodeRef encode_sequence(Tape<T>& tape, const EncoderIds& ids, std::span<const WordId> words);

struct WordVectors {
  Tensor<float> table;  // [word_count, word_dim]
  std::size_t covered = 0;
  double coverage = 0.0;  // covered / word_count
  bool file_empty = false;
};

/// Reads "word v1 ... vD" lines. Vocabulary words found in the file get the
/// file vector; all others are drawn from uniform(-0.05, 0.05) with `seed`.
/// An optional "count dim" header line is skipped. Throws DataError when a
/// vector's width differs from word_dim.
WordVectors load_pretrained_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab,
                                         std::size_t word_dim, std::uint64_t seed);

}  // namespace ternarycl
