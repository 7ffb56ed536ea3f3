// SPDX-License-Identifier: Apache-2.0

#include "ternarycl/encoder.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "ternarycl/ops.hpp"

namespace ternarycl {

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& x : t.storage()) x = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
GruCellIds add_cell(ParameterStore<T>& store, const std::string& prefix, std::size_t word_dim, std::size_t hidden,
                    Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  auto w = [&](const char* n) { return store.add(prefix + n, uniform_tensor<T>({hidden, word_dim}, bound, rng)); };
  auto u = [&](const char* n) { return store.add(prefix + n, uniform_tensor<T>({hidden, hidden}, bound, rng)); };
  auto b = [&](const char* n) { return store.add(prefix + n, uniform_tensor<T>({hidden}, bound, rng)); };
  GruCellIds c;
  c.w_update = w("w_update");
  c.u_update = u("u_update");
  c.b_update = b("b_update");
  c.w_reset = w("w_reset");
  c.u_reset = u("u_reset");
  c.b_reset = b("b_reset");
  c.w_cand = w("w_cand");
  c.u_cand = u("u_cand");
  c.b_cand = b("b_cand");
  return c;
}

template <typename T>
NodeRef gate(Tape<T>& tape, ParamId w, NodeRef x, ParamId u, NodeRef h, ParamId b) {
  return ops::add(tape, ops::add(tape, ops::matmul(tape, tape.param(w), x), ops::matmul(tape, tape.param(u), h)),
                  tape.param(b));
}

template <typename T>
NodeRef run_direction(Tape<T>& tape, const GruCellIds& c, std::span<const NodeRef> inputs, std::size_t hidden,
                      bool reversed) {
  NodeRef h = tape.constant(Tensor<T>({hidden}, T{0}));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const NodeRef x = inputs[reversed ? inputs.size() - 1 - i : i];
    const NodeRef z = ops::sigmoid(tape, gate(tape, c.w_update, x, c.u_update, h, c.b_update));
    const NodeRef r = ops::sigmoid(tape, gate(tape, c.w_reset, x, c.u_reset, h, c.b_reset));
    const NodeRef n = ops::tanh(tape, gate(tape, c.w_cand, x, c.u_cand, ops::mul(tape, r, h), c.b_cand));
    h = ops::add(tape, n, ops::mul(tape, z, ops::sub(tape, h, n)));
  }
  return h;
}

}  // namespace

template <typename T>
EncoderIds add_encoder_params(ParameterStore<T>& store, std::size_t word_count, std::size_t word_dim,
                              std::size_t hidden, Rng& rng) {
  EncoderIds ids;
  ids.hidden = hidden;
  ids.word_dim = word_dim;
  ids.words = store.add("word", uniform_tensor<T>({word_count, word_dim}, 0.05, rng));
  ids.forward = add_cell(store, "gru.fwd.", word_dim, hidden, rng);
  ids.backward = add_cell(store, "gru.bwd.", word_dim, hidden, rng);
  return ids;
}

template <typename T>
NodeRef encode_sequence(Tape<T>& tape, const EncoderIds& ids, std::span<const WordId> words) {
  if (words.empty()) throw std::invalid_argument("encode_sequence: empty word sequence");
  const NodeRef table = tape.param(ids.words);
  std::vector<NodeRef> inputs;
  inputs.reserve(words.size());
  for (WordId w : words) {
    const std::size_t id = w;
    inputs.push_back(ops::reshape(tape, ops::embedding_lookup(tape, table, std::span<const std::size_t>(&id, 1)),
                                  {ids.word_dim}));
  }
  const std::vector<NodeRef> states{run_direction(tape, ids.forward, inputs, ids.hidden, false),
                                    run_direction(tape, ids.backward, inputs, ids.hidden, true)};
  return ops::concat<T>(tape, states);
}

WordVectors load_pretrained_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab,
                                         std::size_t word_dim, std::uint64_t seed) {
  WordVectors out;
  Rng rng(seed);
  out.table = uniform_tensor<float>({vocab.word_count(), word_dim}, 0.05, rng);
  const auto lines = read_lines(path);
  std::size_t non_blank = 0;
  std::vector<bool> seen(vocab.word_count(), false);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::istringstream in(lines[i]);
    std::vector<std::string> fields;
    for (std::string f; in >> f;) fields.push_back(std::move(f));
    if (fields.empty()) continue;
    ++non_blank;
    if (non_blank == 1 && fields.size() == 2 && fields[0].find_first_not_of("0123456789") == std::string::npos &&
        fields[1].find_first_not_of("0123456789") == std::string::npos) {
      continue;
    }
    if (fields.size() - 1 != word_dim) {
      throw DataError(path.string() + ":" + std::to_string(i + 1) + ": vector width " +
                      std::to_string(fields.size() - 1) + " differs from configured word width " +
                      std::to_string(word_dim));
    }
    const auto w = vocab.find_word(fields[0]);
    if (!w || seen[*w]) continue;
    auto row = out.table.row(*w);
    for (std::size_t j = 0; j < word_dim; ++j) {
      const auto& f = fields[j + 1];
      float v = 0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) {
        throw DataError(path.string() + ":" + std::to_string(i + 1) + ": malformed number '" + f + "'");
      }
      row[j] = v;
    }
    seen[*w] = true;
    ++out.covered;
  }
  out.file_empty = non_blank == 0;
  out.coverage = vocab.word_count() ? static_cast<double>(out.covered) / static_cast<double>(vocab.word_count()) : 0.0;
  return out;
}

template EncoderIds add_encoder_params<float>(ParameterStore<float>&, std::size_t, std::size_t, std::size_t, Rng&);
template EncoderIds add_encoder_params<double>(ParameterStore<double>&, std::size_t, std::size_t, std::size_t, Rng&);
template NodeRef encode_sequence<float>(Tape<float>&, const EncoderIds&, std::span<const WordId>);
template NodeRef encode_sequence<double>(Tape<double>&, const EncoderIds&, std::span<const WordId>);

}  // namespace ternarycl
